//! Exact one-dimensional quantum reference.
//!
//! The Hamiltonian is discretized on a uniform grid with Dirichlet edges and a
//! sixth-order central stencil for the kinetic term. Eigenvalue estimates
//! come from Sturm-sequence bisection on the second-order tridiagonal matrix;
//! each one seeds shifted inverse iteration on the sixth-order banded matrix,
//! followed by Rayleigh–Ritz inside clusters of close levels. Time evolution
//! is available both by eigen-expansion and by a fourth-order split-operator
//! scheme whose kinetic symbol matches the same stencil.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jumpseries::TimeSeries;
use crate::model::PotentialSpec;
use crate::units::{HBAR, MASS};

/// Second-derivative stencil `c_0 … c_3` (symmetric), to be divided by `h²`.
const D2: [f64; 4] = [-49.0 / 18.0, 1.5, -0.15, 1.0 / 90.0];
/// First-derivative stencil `c_1 … c_3` (antisymmetric), to be divided by `h`.
const D1: [f64; 3] = [0.75, -0.15, 1.0 / 60.0];
const BAND: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_max > x_min) || n < 16 {
            return Err(Error::invalid("grid needs x_max > x_min and at least 16 points"));
        }
        Ok(Self { x_min, x_max, n })
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }
}

/// Default box for a potential. Double-well and Gaussian-sum boxes span 13
/// widths of the broadest term, wide enough for the slowly decaying levels just
/// below the continuum to reach the edge tolerance; harmonic boxes span 12
/// oscillator lengths.
pub fn default_grid(spec: &PotentialSpec) -> Grid {
    let (half, n) = match spec {
        PotentialSpec::DoubleWell { sigma_tilde, sigma, .. } => (13.0 * sigma_tilde.max(*sigma), 8192),
        PotentialSpec::Harmonic { omega, center } => (center.abs() + 12.0 / omega.sqrt(), 2048),
        PotentialSpec::GaussianSum { terms } => {
            let w = terms.iter().map(|t| t.width).fold(0.0, f64::max);
            let c = terms.iter().map(|t| t.center.abs()).fold(0.0, f64::max);
            (c + 13.0 * w, 8192)
        }
    };
    Grid { x_min: -half, x_max: half, n }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagOptions {
    /// Retain every level below this energy.
    pub e_max: f64,
    /// Retain exactly this many lowest levels instead.
    pub n_states: Option<usize>,
    /// Maximum relative amplitude allowed within three points of either edge.
    pub decay_tol: f64,
    /// Only levels below this energy are checked for edge decay.
    pub decay_check_max_energy: Option<f64>,
}

impl Default for DiagOptions {
    fn default() -> Self {
        Self {
            e_max: 0.0,
            n_states: None,
            decay_tol: 1e-8,
            decay_check_max_energy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenMetadata {
    pub discretization: String,
    pub grid: Grid,
    pub energies: Vec<f64>,
    pub max_orthonormality_error: f64,
    pub max_residual: f64,
}

/// Eigenpairs of the grid Hamiltonian. Vectors are orthonormal in the plain
/// Euclidean sense (`Σ v_i² = 1`); wavefunction values are `v_i / √h`.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub grid: Grid,
    pub energies: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    potential: Vec<f64>,
}

/// Sixth-order banded Hamiltonian: `diag[i]` and off-diagonals `off[k-1]`.
struct BandedH {
    diag: Vec<f64>,
    off: [f64; BAND],
}

impl BandedH {
    fn new(grid: &Grid, v: &[f64]) -> Self {
        let h2 = grid.h() * grid.h();
        let t = -0.5 * HBAR * HBAR / MASS / h2;
        Self {
            diag: v.iter().map(|vi| t * D2[0] + vi).collect(),
            off: [t * D2[1], t * D2[2], t * D2[3]],
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            for k in 1..=BAND {
                if i >= k {
                    s += self.off[k - 1] * x[i - k];
                }
                if i + k < n {
                    s += self.off[k - 1] * x[i + k];
                }
            }
            y[i] = s;
        }
    }
}

/// LU factors of a banded matrix with partial pivoting.
struct BandLu {
    n: usize,
    /// Row `i` holds columns `i - BAND .. i - BAND + WIDTH`.
    rows: Vec<[f64; WIDTH]>,
    lower: Vec<[f64; BAND]>,
    piv: Vec<usize>,
}

const WIDTH: usize = 3 * BAND + 1;

impl BandLu {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let off = j as isize - i as isize + BAND as isize;
        if (0..WIDTH as isize).contains(&off) {
            self.rows[i][off as usize]
        } else {
            0.0
        }
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let off = (j as isize - i as isize + BAND as isize) as usize;
        self.rows[i][off] = v;
    }

    fn factor(h: &BandedH, shift: f64) -> Self {
        let n = h.diag.len();
        let mut lu = BandLu {
            n,
            rows: vec![[0.0; WIDTH]; n],
            lower: vec![[0.0; BAND]; n],
            piv: vec![0; n],
        };
        for i in 0..n {
            lu.set(i, i, h.diag[i] - shift);
            for k in 1..=BAND {
                if i >= k {
                    lu.set(i, i - k, h.off[k - 1]);
                }
                if i + k < n {
                    lu.set(i, i + k, h.off[k - 1]);
                }
            }
        }
        let tiny = 1e-300;
        for k in 0..n {
            let last = (k + BAND).min(n - 1);
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for r in k + 1..=last {
                let v = lu.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            lu.piv[k] = p;
            let hi = (k + 2 * BAND).min(n - 1);
            if p != k {
                for j in k..=hi {
                    let a = lu.get(k, j);
                    let b = lu.get(p, j);
                    lu.set(k, j, b);
                    lu.set(p, j, a);
                }
            }
            if lu.get(k, k) == 0.0 {
                lu.set(k, k, tiny);
            }
            let pivot = lu.get(k, k);
            for r in k + 1..=last {
                let l = lu.get(r, k) / pivot;
                lu.lower[r][r - k - 1] = l;
                lu.set(r, k, 0.0);
                if l != 0.0 {
                    for j in k + 1..=hi {
                        let v = lu.get(r, j) - l * lu.get(k, j);
                        lu.set(r, j, v);
                    }
                }
            }
        }
        lu
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for r in k + 1..=(k + BAND).min(n - 1) {
                b[r] -= self.lower[r][r - k - 1] * bk;
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + 2 * BAND).min(n - 1) {
                s -= self.get(i, j) * b[j];
            }
            b[i] = s / self.get(i, i);
        }
    }
}

/// Number of eigenvalues of the second-order tridiagonal Hamiltonian below `x`.
fn sturm_count(diag: &[f64], off: f64, x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for (i, a) in diag.iter().enumerate() {
        let prev = if i == 0 { 0.0 } else { off * off / d };
        d = a - x - prev;
        if d == 0.0 {
            d = -1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix. Returns
/// eigenvalues ascending with eigenvectors as columns of `vecs[row][col]`.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = a.len();
    let mut v = vec![vec![0.0; m]; m];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = idx.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..m).map(|r| idx.iter().map(|&c| v[r][c]).collect()).collect();
    (vals, vecs)
}

/// Diagonalizes `-ħ²/2m d²/dx² + V` on `grid`.
pub fn diagonalize(v: &dyn Fn(f64) -> f64, grid: Grid, opts: &DiagOptions) -> Result<EigenSystem> {
    let n = grid.n;
    let h = grid.h();
    let pot: Vec<f64> = grid.points().iter().map(|&x| v(x)).collect();
    if pot.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("potential is not finite on the grid"));
    }
    let band = BandedH::new(&grid, &pot);

    // Second-order estimates.
    let t2 = 0.5 * HBAR * HBAR / MASS / (h * h);
    let tri: Vec<f64> = pot.iter().map(|vi| 2.0 * t2 + vi).collect();
    let off = -t2;
    let lo = pot.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = pot.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * t2 + 1.0;
    let count = match opts.n_states {
        Some(k) => k.min(n),
        None => sturm_count(&tri, off, opts.e_max),
    };
    let mut estimates = Vec::with_capacity(count);
    for j in 0..count {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if sturm_count(&tri, off, mid) > j {
                b = mid;
            } else {
                a = mid;
            }
            if b - a <= 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        estimates.push(0.5 * (a + b));
    }

    // Inverse iteration on the sixth-order matrix, one cluster at a time.
    let spread = 1e-3;
    let mut energies = Vec::with_capacity(count);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut j = 0;
    let mut hv = vec![0.0; n];
    while j < count {
        let mut end = j + 1;
        while end < count && estimates[end] - estimates[end - 1] < spread * (1.0 + estimates[end].abs()) {
            end += 1;
        }
        let mut cluster: Vec<Vec<f64>> = Vec::new();
        for &est in &estimates[j..end] {
            let shift = est + 1e-10 * (1.0 + est.abs());
            let lu = BandLu::factor(&band, shift);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            for _ in 0..6 {
                lu.solve(&mut x);
                for _ in 0..2 {
                    for u in &cluster {
                        let c = dot(&x, u);
                        x.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
                    }
                }
                normalize(&mut x);
            }
            cluster.push(x);
        }
        // Rayleigh–Ritz within the cluster.
        let m = cluster.len();
        let mut hm = vec![vec![0.0; m]; m];
        let hx: Vec<Vec<f64>> = cluster
            .iter()
            .map(|u| {
                band.apply(u, &mut hv);
                hv.clone()
            })
            .collect();
        for a in 0..m {
            for b in 0..m {
                hm[a][b] = 0.5 * (dot(&cluster[a], &hx[b]) + dot(&cluster[b], &hx[a]));
            }
        }
        let (vals, rot) = jacobi_eigen(hm);
        for c in 0..m {
            let mut y = vec![0.0; n];
            for (a, u) in cluster.iter().enumerate() {
                let w = rot[a][c];
                y.iter_mut().zip(u).for_each(|(yi, ui)| *yi += w * ui);
            }
            normalize(&mut y);
            // Fix the sign convention: positive at the first significant point.
            let peak = y.iter().cloned().fold(0.0f64, |m, x| m.max(x.abs()));
            if let Some(first) = y.iter().find(|x| x.abs() > 1e-3 * peak) {
                if *first < 0.0 {
                    y.iter_mut().for_each(|x| *x = -*x);
                }
            }
            energies.push(vals[c]);
            vectors.push(y);
        }
        j = end;
    }
    // Global ordering after per-cluster Rayleigh–Ritz.
    let mut idx: Vec<usize> = (0..energies.len()).collect();
    idx.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    let energies: Vec<f64> = idx.iter().map(|&i| energies[i]).collect();
    let vectors: Vec<Vec<f64>> = idx.iter().map(|&i| vectors[i].clone()).collect();

    let sys = EigenSystem {
        grid,
        energies,
        vectors,
        potential: pot,
    };
    let limit = opts.decay_check_max_energy.unwrap_or(f64::INFINITY);
    for (i, (e, v)) in sys.energies.iter().zip(&sys.vectors).enumerate() {
        if *e > limit {
            continue;
        }
        let peak = v.iter().cloned().fold(0.0f64, |m, x| m.max(x.abs()));
        let edge = v[..3].iter().chain(&v[n - 3..]).cloned().fold(0.0f64, |m, x| m.max(x.abs()));
        if edge > opts.decay_tol * peak {
            return Err(Error::GridTooSmall {
                index: i,
                energy: *e,
                edge: edge / peak,
            });
        }
    }
    Ok(sys)
}

/// Sixth-order first derivative of grid values with zero padding.
fn derivative(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let h = grid.h();
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for k in 1..=BAND {
                let plus = if i + k < n { v[i + k] } else { 0.0 };
                let minus = if i >= k { v[i - k] } else { 0.0 };
                s += D1[k - 1] * (plus - minus);
            }
            s / h
        })
        .collect()
}

/// Normalized Lorentzian of half-width `eps`.
pub fn lorentzian(x: f64, eps: f64) -> f64 {
    eps / std::f64::consts::PI / (x * x + eps * eps)
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// Wavefunction values `ψ(x_i)` of state `mu`.
    pub fn wavefunction(&self, mu: usize) -> Vec<f64> {
        let s = 1.0 / self.grid.h().sqrt();
        self.vectors[mu].iter().map(|x| x * s).collect()
    }

    pub fn potential_on_grid(&self) -> &[f64] {
        &self.potential
    }

    pub fn max_orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.len() {
            for b in a..self.len() {
                let d = dot(&self.vectors[a], &self.vectors[b]) - if a == b { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// Largest `‖H v − E v‖` over retained states.
    pub fn max_residual(&self) -> f64 {
        let band = BandedH::new(&self.grid, &self.potential);
        let mut hv = vec![0.0; self.grid.n];
        let mut worst: f64 = 0.0;
        for (e, v) in self.energies.iter().zip(&self.vectors) {
            band.apply(v, &mut hv);
            let r: f64 = hv.iter().zip(v).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(r);
        }
        worst
    }

    pub fn metadata(&self) -> EigenMetadata {
        EigenMetadata {
            discretization: "finite-difference, sixth-order kinetic stencil, Dirichlet edges".into(),
            grid: self.grid,
            energies: self.energies.clone(),
            max_orthonormality_error: self.max_orthonormality_error(),
            max_residual: self.max_residual(),
        }
    }

    /// `⟨μ| f(x) |ν⟩` for a multiplicative operator.
    pub fn multiplicative_element(&self, f: &dyn Fn(f64) -> f64, mu: usize, nu: usize) -> f64 {
        let (a, b) = (&self.vectors[mu], &self.vectors[nu]);
        (0..self.grid.n).map(|i| a[i] * f(self.grid.x(i)) * b[i]).sum()
    }

    /// Dense matrix `⟨μ| f(x) |ν⟩` over retained states.
    pub fn multiplicative_matrix(&self, f: &dyn Fn(f64) -> f64) -> Vec<Vec<f64>> {
        let fx: Vec<f64> = self.grid.points().iter().map(|&x| f(x)).collect();
        let m = self.len();
        let mut out = vec![vec![0.0; m]; m];
        for a in 0..m {
            for b in a..m {
                let v: f64 = (0..self.grid.n).map(|i| self.vectors[a][i] * fx[i] * self.vectors[b][i]).sum();
                out[a][b] = v;
                out[b][a] = v;
            }
        }
        out
    }

    /// Real antisymmetric `f_μν` with `⟨μ|F̂|ν⟩ = i f_μν` for the flux operator
    /// `F̂ = (p̂ g(x̂) + g(x̂) p̂)/2m`, `g` a normalized Gaussian of width `smear`
    /// centered at the origin.
    pub fn flux_matrix(&self, smear: f64) -> Vec<Vec<f64>> {
        let g = |x: f64| (-0.5 * x * x / (smear * smear)).exp() / (smear * (2.0 * std::f64::consts::PI).sqrt());
        let h = self.grid.h();
        let gx: Vec<f64> = self.grid.points().iter().map(|&x| g(x)).collect();
        let psi: Vec<Vec<f64>> = (0..self.len()).map(|m| self.wavefunction(m)).collect();
        let dpsi: Vec<Vec<f64>> = psi.iter().map(|p| derivative(&self.grid, p)).collect();
        let m = self.len();
        let mut out = vec![vec![0.0; m]; m];
        for a in 0..m {
            for b in a + 1..m {
                let s: f64 = (0..self.grid.n)
                    .map(|i| gx[i] * (psi[a][i] * dpsi[b][i] - dpsi[a][i] * psi[b][i]))
                    .sum::<f64>()
                    * h;
                let v = -0.5 * HBAR / MASS * s;
                out[a][b] = v;
                out[b][a] = -v;
            }
        }
        out
    }

    /// Right-half projector `η(x)` with `η(0) = ½`.
    pub fn step_matrix(&self) -> Vec<Vec<f64>> {
        self.multiplicative_matrix(&|x| {
            if x > 0.0 {
                1.0
            } else if x == 0.0 {
                0.5
            } else {
                0.0
            }
        })
    }

    fn shell_weights(&self, energy: f64, eps_e: f64) -> Result<Vec<f64>> {
        if !(eps_e > 0.0) {
            return Err(Error::invalid("energy width must be strictly positive"));
        }
        let highest = *self.energies.last().ok_or_else(|| Error::invalid("empty eigensystem"))?;
        let needed = energy + 5.0 * eps_e;
        if needed > highest {
            return Err(Error::SpectrumTruncated { needed, highest });
        }
        Ok(self.energies.iter().map(|e| lorentzian(energy - e, eps_e)).collect())
    }

    /// Lorentzian-weighted average `Σ L_μ ⟨μ|f|μ⟩ / Σ L_μ`.
    pub fn microcanonical_average(&self, f: &dyn Fn(f64) -> f64, energy: f64, eps_e: f64) -> Result<f64> {
        let l = self.shell_weights(energy, eps_e)?;
        let z: f64 = l.iter().sum();
        Ok((0..self.len()).map(|m| l[m] * self.multiplicative_element(f, m, m)).sum::<f64>() / z)
    }

    /// Amplitudes `a_k` and frequencies `Δ_k` of
    /// `C(t) = Re Tr(A e^{iHt} B e^{-iHt} δ_ε(E − H)) / Tr δ_ε(E − H)`
    /// written as `Σ a_k cos(Δ_k t) + b_k sin(Δ_k t)`, for `A = i·a` (a real
    /// antisymmetric) or `A` real symmetric.
    fn correlation_terms(
        &self,
        a: &[Vec<f64>],
        a_is_imaginary: bool,
        b: &[Vec<f64>],
        energy: f64,
        eps_e: f64,
    ) -> Result<Vec<(f64, f64, f64)>> {
        let l = self.shell_weights(energy, eps_e)?;
        let z: f64 = l.iter().sum();
        let m = self.len();
        let mut terms = Vec::new();
        for mu in 0..m {
            let w = l[mu] / z;
            for nu in 0..m {
                let ab = a[mu][nu] * b[nu][mu] * w;
                if ab == 0.0 {
                    continue;
                }
                let delta = (self.energies[nu] - self.energies[mu]) / HBAR;
                if a_is_imaginary {
                    // Re(i e^{iΔt}) = -sin(Δt).
                    terms.push((delta, 0.0, -ab));
                } else {
                    terms.push((delta, ab, 0.0));
                }
            }
        }
        Ok(terms)
    }

    fn series_from_terms(terms: &[(f64, f64, f64)], t_grid: &[f64]) -> TimeSeries {
        let value = t_grid
            .iter()
            .map(|&t| terms.iter().map(|(d, c, s)| c * (d * t).cos() + s * (d * t).sin()).sum())
            .collect();
        TimeSeries::exact(t_grid.to_vec(), value)
    }

    /// Exact flux–step correlation on `t_grid`.
    pub fn exact_correlation(&self, smear: f64, energy: f64, eps_e: f64, t_grid: &[f64]) -> Result<TimeSeries> {
        let terms = self.correlation_terms(&self.flux_matrix(smear), true, &self.step_matrix(), energy, eps_e)?;
        Ok(Self::series_from_terms(&terms, t_grid))
    }

    /// Exact correlation of two multiplicative operators.
    pub fn exact_correlation_multiplicative(
        &self,
        a: &dyn Fn(f64) -> f64,
        b: &dyn Fn(f64) -> f64,
        energy: f64,
        eps_e: f64,
        t_grid: &[f64],
    ) -> Result<TimeSeries> {
        let terms = self.correlation_terms(
            &self.multiplicative_matrix(a),
            false,
            &self.multiplicative_matrix(b),
            energy,
            eps_e,
        )?;
        Ok(Self::series_from_terms(&terms, t_grid))
    }

    /// Analytic one-sided damped transform of the flux–step correlation:
    /// `k(ω) = ∫₀^∞ e^{-iωt - εt} C(t) dt`.
    pub fn exact_spectrum(
        &self,
        smear: f64,
        energy: f64,
        eps_e: f64,
        omega: &[f64],
        eps: f64,
    ) -> Result<Vec<Complex64>> {
        let terms = self.correlation_terms(&self.flux_matrix(smear), true, &self.step_matrix(), energy, eps_e)?;
        Ok(omega
            .iter()
            .map(|&w| {
                let z = Complex64::new(eps, w);
                terms
                    .iter()
                    .map(|(d, c, s)| {
                        // ∫ e^{-zt} cos(Δt) = z/(z²+Δ²), ∫ e^{-zt} sin(Δt) = Δ/(z²+Δ²).
                        let den = z * z + d * d;
                        (z * *c + *s * *d) / den
                    })
                    .sum()
            })
            .collect())
    }

    /// Projections `⟨μ|ψ⟩` of a grid wavefunction (values `ψ(x_i)`).
    pub fn project(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let s = self.grid.h().sqrt();
        self.vectors
            .iter()
            .map(|v| v.iter().zip(psi).map(|(a, b)| b * (a * s)).sum())
            .collect()
    }

    /// `e^{-iHt/ħ} ψ` by eigen-expansion over retained states.
    pub fn propagate(&self, psi: &[Complex64], t: f64) -> Vec<Complex64> {
        let c = self.project(psi);
        let s = 1.0 / self.grid.h().sqrt();
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.n];
        for (m, v) in self.vectors.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -self.energies[m] * t / HBAR) * c[m];
            for (o, a) in out.iter_mut().zip(v) {
                *o += phase * (a * s);
            }
        }
        out
    }
}

/// `∫|ψ|² dx` on the grid.
pub fn norm_sq(grid: &Grid, psi: &[Complex64]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.h()
}

/// `(∫|a − b|² dx)^{1/2}`.
pub fn l2_distance(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * grid.h()).sqrt()
}

/// Fourth-order split-operator propagator on a periodic copy of the grid.
pub struct SplitOperator {
    grid: Grid,
    potential: Vec<f64>,
    kinetic: Vec<f64>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    ifft: Arc<dyn rustfft::Fft<f64>>,
}

impl SplitOperator {
    pub fn new(v: &dyn Fn(f64) -> f64, grid: Grid) -> Self {
        let n = grid.n;
        let h = grid.h();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let kinetic = (0..n)
            .map(|j| {
                let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                let kh = 2.0 * std::f64::consts::PI * jj / n as f64;
                let sym = D2[0] + 2.0 * (1..=BAND).map(|m| D2[m] * (m as f64 * kh).cos()).sum::<f64>();
                -0.5 * HBAR * HBAR / MASS * sym / (h * h)
            })
            .collect();
        Self {
            grid,
            potential: grid.points().iter().map(|&x| v(x)).collect(),
            kinetic,
            fft,
            ifft,
        }
    }

    fn potential_phase(&self, psi: &mut [Complex64], dt: f64) {
        for (z, v) in psi.iter_mut().zip(&self.potential) {
            *z *= Complex64::from_polar(1.0, -v * dt / HBAR);
        }
    }

    fn kinetic_phase(&self, psi: &mut [Complex64], dt: f64) {
        self.fft.process(psi);
        let inv = 1.0 / self.grid.n as f64;
        for (z, t) in psi.iter_mut().zip(&self.kinetic) {
            *z *= Complex64::from_polar(inv, -t * dt / HBAR);
        }
        self.ifft.process(psi);
    }

    fn strang(&self, psi: &mut [Complex64], dt: f64) {
        self.potential_phase(psi, 0.5 * dt);
        self.kinetic_phase(psi, dt);
        self.potential_phase(psi, 0.5 * dt);
    }

    /// Advances `psi` by `t` with steps of at most `dt`.
    pub fn propagate(&self, psi: &mut [Complex64], t: f64, dt: f64) {
        if t == 0.0 {
            return;
        }
        let n = ((t.abs() / dt).ceil() as usize).max(1);
        let step = t / n as f64;
        let cbrt2 = 2f64.powf(1.0 / 3.0);
        let w1 = 1.0 / (2.0 - cbrt2);
        let w0 = -cbrt2 / (2.0 - cbrt2);
        for _ in 0..n {
            self.strang(psi, w1 * step);
            self.strang(psi, w0 * step);
            self.strang(psi, w1 * step);
        }
    }
}

/// Convenience wrapper around [`SplitOperator`].
pub fn split_operator_propagate(
    v: &dyn Fn(f64) -> f64,
    grid: Grid,
    psi0: &[Complex64],
    t: f64,
    dt: f64,
) -> Vec<Complex64> {
    let mut psi = psi0.to_vec();
    SplitOperator::new(v, grid).propagate(&mut psi, t, dt);
    psi
}

/// Normalized Gaussian packet `ψ(x) ∝ exp(-(x-x0)²/(2 s²) + i p0 x / ħ)`.
pub fn gaussian_packet(grid: &Grid, x0: f64, p0: f64, s: f64) -> Vec<Complex64> {
    let mut psi: Vec<Complex64> = grid
        .points()
        .iter()
        .map(|&x| Complex64::from_polar((-(x - x0).powi(2) / (2.0 * s * s)).exp(), p0 * x / HBAR))
        .collect();
    let norm = norm_sq(grid, &psi).sqrt();
    psi.iter_mut().for_each(|z| *z /= norm);
    psi
}

/// `⟨f(x)⟩` in state `psi`.
pub fn expectation(grid: &Grid, psi: &[Complex64], f: &dyn Fn(f64) -> f64) -> f64 {
    psi.iter().enumerate().map(|(i, z)| z.norm_sqr() * f(grid.x(i))).sum::<f64>() * grid.h()
}

/// `⟨f(p)⟩` in state `psi`, from the discrete Fourier transform of the grid
/// values (periodic extension of the box).
pub fn momentum_expectation(grid: &Grid, psi: &[Complex64], f: &dyn Fn(f64) -> f64) -> f64 {
    let n = psi.len();
    let mut buf = psi.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let total: f64 = buf.iter().map(|z| z.norm_sqr()).sum();
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * grid.h());
    buf.iter()
        .enumerate()
        .map(|(j, z)| {
            let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            z.norm_sqr() * f(HBAR * jj * dk)
        })
        .sum::<f64>()
        / total
}
