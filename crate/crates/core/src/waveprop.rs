//! Paraxial beam propagation with a Wigner ray ensemble.
//!
//! The parabolic wave equation in units where the wavenumber is one is a
//! Schrödinger equation with `z` as time and potential `V = −ε̃(R)`. Rays obey
//! `dQ/dz = P`, `dP/dz = ∇ε̃`. Gaussian-index media may additionally scatter
//! rays with the same kernel machinery used for the pair series.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jumpseries::{JumpSchedule, SeriesConfig};
use crate::kernel::JumpKernel;
use crate::model::{GaussianTerm, HarmonicTerm, PhasePoint, Potential};
use crate::pairdyn::{substeps, verlet_step};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MediumProfile {
    Free {
        dims: usize,
    },
    /// `ε̃ = −½ α² |Q − R_c|²`.
    ParabolicIndex {
        alpha: f64,
        center: Vec<f64>,
    },
    /// `ε̃ = ε₀ exp(−|Q − R_c|² / w²)`.
    GaussianIndex {
        eps0: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl MediumProfile {
    pub fn dims(&self) -> usize {
        match self {
            Self::Free { dims } => *dims,
            Self::ParabolicIndex { center, .. } | Self::GaussianIndex { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if !(d == 1 || d == 2) {
            return Err(Error::invalid("medium must have one or two transverse dimensions"));
        }
        match self {
            Self::Free { .. } => Ok(()),
            Self::ParabolicIndex { alpha, center } => {
                if !(*alpha > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    Err(Error::invalid("parabolic index needs alpha > 0 and a finite center"))
                } else {
                    Ok(())
                }
            }
            Self::GaussianIndex { eps0, center, width } => {
                if !(*width > 0.0) || !eps0.is_finite() || center.iter().any(|c| !c.is_finite()) {
                    Err(Error::invalid("gaussian index needs width > 0 and finite parameters"))
                } else {
                    Ok(())
                }
            }
        }
    }

    fn center<const D: usize>(c: &[f64]) -> [f64; D] {
        let mut out = [0.0; D];
        out.copy_from_slice(c);
        out
    }

    /// Equivalent potential `V = −ε̃`.
    pub fn potential<const D: usize>(&self) -> Result<Potential<D>> {
        self.validate()?;
        if self.dims() != D {
            return Err(Error::invalid(format!("medium has {} dimensions, expected {D}", self.dims())));
        }
        Ok(match self {
            Self::Free { .. } => Potential::free(),
            Self::ParabolicIndex { alpha, center } => Potential {
                gaussians: Vec::new(),
                harmonic: Some(HarmonicTerm {
                    omega: *alpha,
                    center: Self::center(center),
                }),
            },
            Self::GaussianIndex { eps0, center, width } => Potential {
                gaussians: vec![GaussianTerm {
                    amplitude: -eps0,
                    width: *width,
                    center: Self::center(center),
                }],
                harmonic: None,
            },
        })
    }

    /// `ε̃(Q)`.
    pub fn permittivity<const D: usize>(&self, q: &[f64; D]) -> Result<f64> {
        Ok(-self.potential::<D>()?.value(q))
    }
}

/// Regular part of the scattering kernel. Quadratic and free media carry no
/// regular part.
pub fn scatter_kernel_regular<const D: usize>(profile: &MediumProfile, s: &[f64; D], q: &[f64; D]) -> Result<f64> {
    Ok(profile.potential::<D>()?.omega_regular(s, q))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamState<const D: usize> {
    pub rays: Vec<PhasePoint<D>>,
    pub z: f64,
    /// Frequency tag, carried as metadata only.
    pub omega: Option<f64>,
}

impl<const D: usize> BeamState<D> {
    pub fn total_weight(&self) -> f64 {
        self.rays.iter().map(|r| r.weight).sum()
    }
}

/// Samples the Wigner function of a Gaussian beam: `Q ~ N(R0, w0²/2)` and
/// `P ~ N(P0, 1/(2 w0²))` per axis, unit weights.
pub fn gaussian_beam_wigner<const D: usize>(
    w0: f64,
    r0: [f64; D],
    p0: [f64; D],
    n_rays: usize,
    seed: u64,
) -> Result<BeamState<D>> {
    if !(w0 > 0.0) {
        return Err(Error::invalid("beam waist must be strictly positive"));
    }
    if n_rays == 0 {
        return Err(Error::invalid("beam needs at least one ray"));
    }
    let nq = Normal::new(0.0, w0 / 2f64.sqrt()).expect("positive width");
    let np = Normal::new(0.0, 1.0 / (w0 * 2f64.sqrt())).expect("positive width");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rays = (0..n_rays)
        .map(|_| {
            let mut p = [0.0; D];
            let mut q = [0.0; D];
            for k in 0..D {
                q[k] = r0[k] + nq.sample(&mut rng);
                p[k] = p0[k] + np.sample(&mut rng);
            }
            PhasePoint::new(p, q)
        })
        .collect();
    Ok(BeamState { rays, z: 0.0, omega: None })
}

/// Fourth-order symplectic step built from three Verlet steps.
pub fn ray_step<const D: usize>(potential: &Potential<D>, ray: &mut PhasePoint<D>, dz: f64) {
    let cbrt2 = 2f64.powf(1.0 / 3.0);
    let w1 = 1.0 / (2.0 - cbrt2);
    let w0 = -cbrt2 / (2.0 - cbrt2);
    verlet_step(potential, ray, w1 * dz);
    verlet_step(potential, ray, w0 * dz);
    verlet_step(potential, ray, w1 * dz);
}

fn advance_ray<const D: usize>(potential: &Potential<D>, ray: &mut PhasePoint<D>, span: f64, dz: f64) {
    let n = substeps(span, dz);
    if n == 0 {
        return;
    }
    let h = span / n as f64;
    for _ in 0..n {
        ray_step(potential, ray, h);
    }
}

/// Advances every ray from `z_from` to `z_to` (either direction).
pub fn propagate_rays<const D: usize>(
    profile: &MediumProfile,
    state: &BeamState<D>,
    z_to: f64,
    dz: f64,
) -> Result<BeamState<D>> {
    if !(dz > 0.0) {
        return Err(Error::invalid("dz must be strictly positive"));
    }
    let potential = profile.potential::<D>()?;
    let span = z_to - state.z;
    let rays: Vec<PhasePoint<D>> = state
        .rays
        .par_iter()
        .map(|r| {
            let mut r = *r;
            advance_ray(&potential, &mut r, span, dz);
            r
        })
        .collect();
    if rays.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFiniteState { tau: z_to });
    }
    Ok(BeamState {
        rays,
        z: z_to,
        omega: state.omega,
    })
}

/// Ray Hamiltonian `P²/2 − ε̃(Q)`.
pub fn ray_hamiltonian<const D: usize>(potential: &Potential<D>, ray: &PhasePoint<D>) -> f64 {
    potential.hamiltonian(ray)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamMoments {
    pub z: f64,
    pub centroid: Vec<f64>,
    pub centroid_stderr: Vec<f64>,
    /// `mean |R|² − |mean R|²`.
    pub beta: f64,
    pub beta_stderr: f64,
}

/// Mergeable sums of `u = (w0, ω Q_1 … ω Q_D, ω |Q|²)` and their products.
#[derive(Clone, Debug)]
struct MomentAcc {
    m: usize,
    n: usize,
    sum: Vec<f64>,
    prod: Vec<f64>,
}

impl MomentAcc {
    fn new(dims: usize) -> Self {
        let m = dims + 2;
        Self {
            m,
            n: 0,
            sum: vec![0.0; m],
            prod: vec![0.0; m * m],
        }
    }

    fn add(&mut self, w0: f64, omega: f64, q: &[f64]) {
        let d = self.m - 2;
        let mut u = vec![0.0; self.m];
        u[0] = w0;
        for k in 0..d {
            u[1 + k] = omega * q[k];
        }
        u[d + 1] = omega * q.iter().map(|x| x * x).sum::<f64>();
        self.n += 1;
        for a in 0..self.m {
            self.sum[a] += u[a];
            for b in 0..self.m {
                self.prod[a * self.m + b] += u[a] * u[b];
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.prod.iter_mut().zip(&other.prod).for_each(|(a, b)| *a += b);
    }

    fn moments(&self, z: f64) -> BeamMoments {
        let d = self.m - 2;
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let cov = |a: usize, b: usize| (self.prod[a * self.m + b] / n - mean[a] * mean[b]) / (n - 1.0).max(1.0);
        let m0 = mean[0];
        let quad = |g: &[f64]| -> f64 {
            let mut v = 0.0;
            for a in 0..self.m {
                for b in 0..self.m {
                    v += g[a] * g[b] * cov(a, b);
                }
            }
            v.max(0.0).sqrt()
        };
        let mut centroid = Vec::with_capacity(d);
        let mut centroid_stderr = Vec::with_capacity(d);
        for k in 0..d {
            let mut g = vec![0.0; self.m];
            g[0] = -mean[1 + k] / (m0 * m0);
            g[1 + k] = 1.0 / m0;
            centroid.push(mean[1 + k] / m0);
            centroid_stderr.push(quad(&g));
        }
        let r2 = mean[d + 1] / m0;
        let beta = r2 - centroid.iter().map(|c| c * c).sum::<f64>();
        let mut g = vec![0.0; self.m];
        g[0] = -mean[d + 1] / (m0 * m0) + 2.0 * (0..d).map(|k| mean[1 + k].powi(2)).sum::<f64>() / m0.powi(3);
        for k in 0..d {
            g[1 + k] = -2.0 * mean[1 + k] / (m0 * m0);
        }
        g[d + 1] = 1.0 / m0;
        BeamMoments {
            z,
            centroid,
            centroid_stderr,
            beta,
            beta_stderr: quad(&g),
        }
    }
}

/// Moments of a beam state with its own ray weights.
pub fn beam_moments<const D: usize>(state: &BeamState<D>) -> Result<BeamMoments> {
    if state.rays.is_empty() {
        return Err(Error::invalid("empty ray ensemble"));
    }
    let mut acc = MomentAcc::new(D);
    for r in &state.rays {
        acc.add(r.weight, r.weight, &r.q);
    }
    Ok(acc.moments(state.z))
}

fn check_z_grid(z0: f64, z_grid: &[f64]) -> Result<()> {
    if z_grid.is_empty() || z_grid.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("z grid must be nonempty and finite"));
    }
    if z_grid[0] < z0 || z_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("z grid must be ascending and start at or after the beam"));
    }
    Ok(())
}

/// Deterministic moments along `z_grid`.
pub fn scan<const D: usize>(
    profile: &MediumProfile,
    beam: &BeamState<D>,
    z_grid: &[f64],
    dz: f64,
) -> Result<Vec<BeamMoments>> {
    run_scan(profile, beam, z_grid, dz, None)
}

/// Moments along `z_grid` with scattering jumps drawn from the medium kernel.
/// Only the series settings of `cfg` (orders, kernel proposal, seed) are used.
pub fn scan_with_scattering<const D: usize>(
    profile: &MediumProfile,
    beam: &BeamState<D>,
    z_grid: &[f64],
    dz: f64,
    cfg: &SeriesConfig,
) -> Result<Vec<BeamMoments>> {
    cfg.validate()?;
    run_scan(profile, beam, z_grid, dz, Some(cfg))
}

fn run_scan<const D: usize>(
    profile: &MediumProfile,
    beam: &BeamState<D>,
    z_grid: &[f64],
    dz: f64,
    cfg: Option<&SeriesConfig>,
) -> Result<Vec<BeamMoments>> {
    if !(dz > 0.0) {
        return Err(Error::invalid("dz must be strictly positive"));
    }
    if beam.rays.is_empty() {
        return Err(Error::invalid("empty ray ensemble"));
    }
    check_z_grid(beam.z, z_grid)?;
    let potential = profile.potential::<D>()?;
    let jumps = match cfg {
        Some(c) => {
            let kernel = JumpKernel::new(&potential, c.compensator_fraction, c.jump_scale);
            (!kernel.is_trivial()).then(|| (kernel, c.order_probabilities(), c.seed))
        }
        None => None,
    };
    let jumps = match jumps {
        Some((k, probs, seed)) => Some((k, probs?, seed)),
        None => None,
    };
    let z0 = beam.z;
    let z_max = *z_grid.last().expect("nonempty grid");
    let n_z = z_grid.len();
    const CHUNK: usize = 256;

    let run_chunk = |chunk: usize| -> Result<Vec<MomentAcc>> {
        let mut accs: Vec<MomentAcc> = (0..n_z).map(|_| MomentAcc::new(D)).collect();
        let lo = chunk * CHUNK;
        let hi = (lo + CHUNK).min(beam.rays.len());
        for index in lo..hi {
            let mut ray = beam.rays[index];
            let w0 = ray.weight;
            let mut z = z0;
            match &jumps {
                None => {
                    for (zi, &zt) in z_grid.iter().enumerate() {
                        advance_ray(&potential, &mut ray, zt - z, dz);
                        z = zt;
                        if !ray.is_finite() {
                            return Err(Error::NonFiniteState { tau: z });
                        }
                        accs[zi].add(w0, w0, &ray.q);
                    }
                }
                Some((kernel, probs, seed)) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                    rng.set_stream(index as u64);
                    let sched = JumpSchedule::draw(probs, z_max - z0, &mut rng);
                    let mut factor = 1.0;
                    let mut next = 0;
                    for (zi, &zt) in z_grid.iter().enumerate() {
                        while next < sched.times.len() && z0 + sched.times[next] <= zt && factor != 0.0 {
                            let zj = z0 + sched.times[next];
                            advance_ray(&potential, &mut ray, zj - z, dz);
                            z = zj;
                            let draw = kernel.sample(&ray.q, &mut rng);
                            for k in 0..D {
                                ray.p[k] += draw.s[k];
                            }
                            factor *= draw.weight;
                            next += 1;
                        }
                        if factor == 0.0 {
                            // Later grid points see a zero contribution.
                            for acc in &mut accs[zi..] {
                                acc.add(w0, 0.0, &ray.q);
                            }
                            break;
                        }
                        advance_ray(&potential, &mut ray, zt - z, dz);
                        z = zt;
                        if !ray.is_finite() {
                            return Err(Error::NonFiniteState { tau: z });
                        }
                        let omega = w0 * factor * sched.weight_at(next, zt - z0);
                        accs[zi].add(w0, omega, &ray.q);
                    }
                }
            }
        }
        Ok(accs)
    };

    let n_chunks = beam.rays.len().div_ceil(CHUNK);
    let parts: Vec<Result<Vec<MomentAcc>>> = (0..n_chunks).into_par_iter().map(run_chunk).collect();
    let mut total: Vec<MomentAcc> = (0..n_z).map(|_| MomentAcc::new(D)).collect();
    for p in parts {
        for (t, a) in total.iter_mut().zip(&p?) {
            t.merge(a);
        }
    }
    Ok(total.iter().zip(z_grid).map(|(a, &z)| a.moments(z)).collect())
}

/// Interior local minima of `β` along the scan.
pub fn foci(moments: &[BeamMoments]) -> Vec<(f64, f64)> {
    if moments.len() < 3 {
        return Vec::new();
    }
    (1..moments.len() - 1)
        .filter(|&i| moments[i].beta < moments[i - 1].beta && moments[i].beta <= moments[i + 1].beta)
        .map(|i| (moments[i].z, moments[i].beta))
        .collect()
}
