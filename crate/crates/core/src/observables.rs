//! Concrete functionals: barrier flux × right-step correlation, position and
//! momentum dispersions, the damped one-sided spectrum, peak extraction and
//! Bohr–Sommerfeld level estimates.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jumpseries::{estimate_functional, Estimate, FnFunctional, SeriesConfig, ShellEnsemble, TimeSeries};
use crate::kernel::JumpKernel;
use crate::model::{PhasePoint, Potential, PotentialSpec};
use crate::numeric::{bisect, midpoint};
use crate::units::{HBAR, MASS};

/// Right-half step `η(q)` with `η(0) = ½`.
pub fn step_right(q: f64) -> f64 {
    if q > 0.0 {
        1.0
    } else if q == 0.0 {
        0.5
    } else {
        0.0
    }
}

/// Normalized Gaussian of width `smear` standing in for `δ(q)`.
pub fn smeared_delta(q: f64, smear: f64) -> f64 {
    (-0.5 * q * q / (smear * smear)).exp() / (smear * (2.0 * std::f64::consts::PI).sqrt())
}

/// Weyl symbol of the barrier flux, `(p/m) δ(q)`.
pub fn flux_symbol(point: &PhasePoint<1>, smear: f64) -> f64 {
    point.p[0] / MASS * smeared_delta(point.q[0], smear)
}

/// Flux smearing width used when none is configured: `0.05 σ` for the double
/// well, `0.05` of the narrowest Gaussian width otherwise.
pub fn default_smear(spec: &PotentialSpec) -> f64 {
    0.05 * spec.narrowest_width().unwrap_or(1.0)
}

#[derive(Clone)]
pub enum ObservableSymbol {
    FluxAtBarrier { smear: f64 },
    StepRight,
    Position,
    PositionSq,
    Momentum,
    MomentumSq,
    Hamiltonian,
    Custom(Arc<dyn Fn(&PhasePoint<1>) -> f64 + Send + Sync>),
}

impl fmt::Debug for ObservableSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FluxAtBarrier { smear } => write!(f, "FluxAtBarrier {{ smear: {smear} }}"),
            Self::StepRight => f.write_str("StepRight"),
            Self::Position => f.write_str("Position"),
            Self::PositionSq => f.write_str("PositionSq"),
            Self::Momentum => f.write_str("Momentum"),
            Self::MomentumSq => f.write_str("MomentumSq"),
            Self::Hamiltonian => f.write_str("Hamiltonian"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl ObservableSymbol {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FluxAtBarrier { smear } if !(*smear > 0.0) => {
                Err(Error::invalid("flux smearing width must be strictly positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, potential: &Potential<1>, x: &PhasePoint<1>) -> f64 {
        match self {
            Self::FluxAtBarrier { smear } => flux_symbol(x, *smear),
            Self::StepRight => step_right(x.q[0]),
            Self::Position => x.q[0],
            Self::PositionSq => x.q[0] * x.q[0],
            Self::Momentum => x.p[0],
            Self::MomentumSq => x.p[0] * x.p[0],
            Self::Hamiltonian => potential.hamiltonian(x),
            Self::Custom(f) => f(x),
        }
    }
}

/// `½(F(bar) η(tilde) + F(tilde) η(bar))`.
pub fn flux_eta_phi(bar: &PhasePoint<1>, tilde: &PhasePoint<1>, smear: f64) -> f64 {
    0.5 * (flux_symbol(bar, smear) * step_right(tilde.q[0]) + flux_symbol(tilde, smear) * step_right(bar.q[0]))
}

/// Estimates the flux–step correlation on `t_grid`.
pub fn corr_flux_eta_estimate(
    potential: &Potential<1>,
    kernel: &JumpKernel<1>,
    shell: &ShellEnsemble<'_, 1>,
    t_grid: &[f64],
    smear: f64,
    cfg: &SeriesConfig,
) -> Result<Estimate> {
    ObservableSymbol::FluxAtBarrier { smear }.validate()?;
    let phi = FnFunctional::new(1, move |b: &PhasePoint<1>, t: &PhasePoint<1>, out: &mut [f64]| {
        out[0] = flux_eta_phi(b, t, smear);
    });
    estimate_functional(potential, kernel, &phi, t_grid, shell, cfg)
}

pub fn corr_flux_eta(
    potential: &Potential<1>,
    kernel: &JumpKernel<1>,
    shell: &ShellEnsemble<'_, 1>,
    t_grid: &[f64],
    smear: f64,
    cfg: &SeriesConfig,
) -> Result<TimeSeries> {
    Ok(corr_flux_eta_estimate(potential, kernel, shell, t_grid, smear, cfg)?.series(0))
}

/// Position and momentum dispersion series.
#[derive(Clone, Debug)]
pub struct Dispersions {
    pub position: TimeSeries,
    pub momentum: TimeSeries,
    /// Underlying estimate of `(q, q², p, p²)`.
    pub estimate: Estimate,
}

pub fn dispersions(
    potential: &Potential<1>,
    kernel: &JumpKernel<1>,
    shell: &ShellEnsemble<'_, 1>,
    t_grid: &[f64],
    cfg: &SeriesConfig,
) -> Result<Dispersions> {
    let phi = FnFunctional::new(4, |b: &PhasePoint<1>, t: &PhasePoint<1>, out: &mut [f64]| {
        out[0] = 0.5 * (b.q[0] + t.q[0]);
        out[1] = 0.5 * (b.q[0] * b.q[0] + t.q[0] * t.q[0]);
        out[2] = 0.5 * (b.p[0] + t.p[0]);
        out[3] = 0.5 * (b.p[0] * b.p[0] + t.p[0] * t.p[0]);
    });
    let estimate = estimate_functional(potential, kernel, &phi, t_grid, shell, cfg)?;
    Ok(Dispersions {
        position: estimate.dispersion(0, 1),
        momentum: estimate.dispersion(2, 3),
        estimate,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSeries {
    pub omega: Vec<f64>,
    pub k: Vec<Complex64>,
    pub power: Vec<f64>,
    pub stderr: Vec<f64>,
    pub eps: f64,
}

impl SpectrumSeries {
    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn bin(&self) -> f64 {
        if self.omega.len() < 2 {
            0.0
        } else {
            self.omega[1] - self.omega[0]
        }
    }
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// `k(ω) = ∫₀^{t_max} e^{-iωt - εt} C(t) dt` by the trapezoid rule on the
/// series' own grid. Errors are propagated treating grid points as
/// independent, which understates them when the series is correlated in t.
pub fn spectrum_of(series: &TimeSeries, eps: f64, omega: &[f64]) -> Result<SpectrumSeries> {
    if !(eps > 0.0) {
        return Err(Error::invalid("damping must be strictly positive"));
    }
    if omega.len() > 2 {
        let step = omega[1] - omega[0];
        if omega.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * (1.0 + step.abs())) {
            return Err(Error::invalid("frequency grid must be uniform"));
        }
    }
    let t = &series.t;
    let t_max = *t.last().ok_or_else(|| Error::invalid("empty series"))?;
    let residual = (-eps * t_max).exp();
    if residual >= 1e-3 {
        return Err(Error::InsufficientDamping { residual });
    }
    let n = t.len();
    let trap: Vec<f64> = (0..n)
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { 0.0 };
            let right = if i + 1 < n { t[i + 1] - t[i] } else { 0.0 };
            0.5 * (left + right) * (-eps * t[i]).exp()
        })
        .collect();
    let mut k = Vec::with_capacity(omega.len());
    let mut power = Vec::with_capacity(omega.len());
    let mut stderr = Vec::with_capacity(omega.len());
    for &w in omega {
        let mut z = Complex64::new(0.0, 0.0);
        let (mut vr, mut vi) = (0.0, 0.0);
        for i in 0..n {
            let (s, c) = (w * t[i]).sin_cos();
            let a = trap[i] * series.value[i];
            z += Complex64::new(a * c, -a * s);
            let se = trap[i] * series.stderr[i];
            vr += (se * c).powi(2);
            vi += (se * s).powi(2);
        }
        let pw = z.norm_sqr();
        // d|k|² = 2 Re k dRe + 2 Im k dIm.
        let sp = 2.0 * (z.re * z.re * vr + z.im * z.im * vi).sqrt();
        k.push(z);
        power.push(pw);
        stderr.push(sp);
    }
    Ok(SpectrumSeries {
        omega: omega.to_vec(),
        k,
        power,
        stderr,
        eps,
    })
}

/// Default damping so that `ε t_max = 7`.
pub fn default_eps(t_max: f64) -> f64 {
    7.0 / t_max
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub height: f64,
}

/// Local maxima of `|k|²` exceeding five times the median.
pub fn find_peaks(spectrum: &SpectrumSeries) -> Vec<Peak> {
    let p = &spectrum.power;
    if p.len() < 3 {
        return Vec::new();
    }
    let mut sorted = p.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let floor = 5.0 * median;
    (1..p.len() - 1)
        .filter(|&i| p[i] > p[i - 1] && p[i] >= p[i + 1] && p[i] > floor)
        .map(|i| Peak {
            omega: spectrum.omega[i],
            height: p[i],
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub omega: f64,
    pub height: f64,
    pub nearest: Option<f64>,
    pub deviation: Option<f64>,
}

/// Pairs every peak with the nearest of `references`.
pub fn annotate_peaks(peaks: &[Peak], references: &[f64]) -> Vec<PeakReport> {
    peaks
        .iter()
        .map(|pk| {
            let nearest = references
                .iter()
                .cloned()
                .min_by(|a, b| (a - pk.omega).abs().total_cmp(&(b - pk.omega).abs()));
            PeakReport {
                omega: pk.omega,
                height: pk.height,
                nearest,
                deviation: nearest.map(|r| (pk.omega - r).abs()),
            }
        })
        .collect()
}

/// All `±(E_μ − E_ν)/ħ` for the given levels, including zero.
pub fn level_differences(levels: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(levels.len() * levels.len());
    for a in levels {
        for b in levels {
            out.push((a - b) / HBAR);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelRegion {
    /// Below the barrier top, quantized in the left well alone.
    LeftWell,
    /// Above the barrier top (or without a barrier), over the whole well.
    FullWell,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalLevel {
    pub n: usize,
    pub energy: f64,
    pub region: LevelRegion,
}

/// Action `∮ p dq` of the orbit through `q_start` at energy `e`.
pub fn action(potential: &Potential<1>, e: f64, q_start: f64) -> Result<f64> {
    let (a, b) = potential.turning_points(e, q_start)?;
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let integrand = |th: f64| {
        let q = mid - half * th.cos();
        half * th.sin() * (2.0 * MASS * (e - potential.v(q)).max(0.0)).sqrt()
    };
    Ok(2.0 * midpoint(integrand, 0.0, std::f64::consts::PI, 4000))
}

/// Bohr–Sommerfeld levels `∮ p dq = 2πħ(n + ½)` below `e_max`.
pub fn semiclassical_levels(potential: &Potential<1>, e_max: f64) -> Result<Vec<SemiclassicalLevel>> {
    let g = potential.geometry();
    let (q_left, v_left) = g.left_min;
    let (q_glob, v_glob) = g.global_min();
    if !(e_max > v_glob) || e_max >= g.asymptote {
        return Err(Error::NoTurningPoints { energy: e_max });
    }
    let quantum = |e: f64, q: f64| -> f64 {
        action(potential, e, q).map(|s| s / (2.0 * std::f64::consts::PI * HBAR) - 0.5).unwrap_or(f64::NAN)
    };
    let tol = 1e-13;
    let mut out = Vec::new();
    // Solves `quantum(e) = n` for consecutive n on (lo, hi).
    let fill = |lo: f64, hi: f64, q: f64, region: LevelRegion, out: &mut Vec<SemiclassicalLevel>| {
        let lo_e = lo + 1e-12 * (1.0 + lo.abs());
        let hi_e = hi - 1e-12 * (1.0 + hi.abs());
        if !(hi_e > lo_e) {
            return;
        }
        let n_lo = quantum(lo_e, q);
        let n_hi = quantum(hi_e, q);
        if !(n_lo.is_finite() && n_hi.is_finite()) {
            return;
        }
        let first = n_lo.max(0.0).ceil() as usize;
        let mut n = first;
        while (n as f64) <= n_hi {
            if let Some(e) = bisect(|e| quantum(e, q) - n as f64, lo_e, hi_e, tol) {
                out.push(SemiclassicalLevel { n, energy: e, region });
            }
            n += 1;
        }
    };
    match g.barrier_energy() {
        Some(top) => {
            fill(v_left, e_max.min(top), q_left, LevelRegion::LeftWell, &mut out);
            if e_max > top {
                let (qb, _) = g.barrier.expect("barrier energy implies a barrier");
                fill(top, e_max, qb, LevelRegion::FullWell, &mut out);
            }
        }
        None => fill(v_glob, e_max, q_glob, LevelRegion::FullWell, &mut out),
    }
    Ok(out)
}
