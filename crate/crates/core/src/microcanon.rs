//! Energy-shell samples from a single long classical trajectory.
//!
//! Points are emitted along one velocity-Verlet trajectory at energy `E` after
//! a burn-in, with a randomly jittered stride so that periodic motion is not
//! aliased. Each emitted point is projected back onto `H = E` by rescaling its
//! momentum. Time sampling along the trajectory already realizes the
//! `δ(E − H)` measure; `|∇H|` is stored with every sample and can be used as
//! an alternative weight through [`ShellMeasure::GradientNorm`].

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PhasePoint, Potential};
use crate::numeric::midpoint;
use crate::pairdyn::verlet_step;
use crate::units::MASS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellSample<const D: usize> {
    pub point: PhasePoint<D>,
    /// `|∇H|` at the point.
    pub weight: f64,
    pub shell_energy: f64,
}

/// Which half of space the initial density lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    /// `q^x < 0` only.
    #[default]
    Left,
    Full,
}

impl Support {
    pub fn contains(self, q0: f64) -> bool {
        match self {
            Support::Left => q0 < 0.0,
            Support::Full => true,
        }
    }
}

/// Statistical weight attached to each shell sample by estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShellMeasure {
    /// Uniform weights: the time average along the trajectory.
    #[default]
    Liouville,
    /// Weights `|∇H|`.
    GradientNorm,
}

impl ShellMeasure {
    pub fn weight<const D: usize>(self, s: &ShellSample<D>) -> f64 {
        match self {
            ShellMeasure::Liouville => 1.0,
            ShellMeasure::GradientNorm => s.weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShellConfig {
    pub energy: f64,
    pub n_samples: usize,
    /// Defaults to ten oscillation periods.
    pub burn_in: Option<f64>,
    /// Defaults to a quarter period.
    pub stride: Option<f64>,
    /// Relative `|H − E| / |E|` bound on emitted samples.
    pub energy_tol: f64,
    /// Relative bound on the raw trajectory energy error before projection.
    pub drift_tol: f64,
    pub dt: f64,
    pub support: Support,
    pub seed: u64,
}

impl Default for ShellConfig {
    fn default() -> Self {
        Self {
            energy: -0.92,
            n_samples: 10_000,
            burn_in: None,
            stride: None,
            energy_tol: 1e-8,
            drift_tol: 1e-3,
            dt: 1e-3,
            support: Support::Left,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShellDiagnostics {
    pub period: f64,
    pub stride: f64,
    pub burn_in: f64,
    /// Largest relative energy error of the raw trajectory.
    pub max_raw_drift: f64,
    /// Samples whose `|∇H|` fell below 1e-14.
    pub small_weight: usize,
    /// Emission attempts discarded (outside support or past a turning point).
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct ShellRun {
    pub samples: Vec<ShellSample<1>>,
    pub diagnostics: ShellDiagnostics,
}

fn relative_error(h: f64, e: f64) -> f64 {
    (h - e).abs() / e.abs().max(f64::MIN_POSITIVE)
}

/// Starting point at the left-well minimum (or the global minimum for
/// [`Support::Full`]) with positive momentum on the shell.
pub fn seed_point_on_shell(potential: &Potential<1>, energy: f64, support: Support) -> Result<PhasePoint<1>> {
    let g = potential.geometry();
    let (q, v) = match support {
        Support::Left => g.left_min,
        Support::Full => g.global_min(),
    };
    if energy < v {
        return Err(Error::ShellUnreachable {
            energy,
            reason: format!("below the well bottom V = {v}"),
        });
    }
    if energy >= g.asymptote {
        return Err(Error::ShellUnreachable {
            energy,
            reason: "not a bound orbit".into(),
        });
    }
    Ok(PhasePoint::scalar((2.0 * MASS * (energy - v)).sqrt(), q))
}

/// Classical period of the orbit through `q_start` at energy `e`.
pub fn orbit_period(potential: &Potential<1>, e: f64, q_start: f64) -> Result<f64> {
    let (a, b) = potential.turning_points(e, q_start)?;
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    // q = mid - half cos θ removes the inverse-square-root endpoint behavior.
    let integrand = |th: f64| {
        let q = mid - half * th.cos();
        let ke = (e - potential.v(q)).max(0.0);
        if ke == 0.0 {
            0.0
        } else {
            half * th.sin() * MASS / (2.0 * MASS * ke).sqrt()
        }
    };
    let t = 2.0 * midpoint(integrand, 0.0, std::f64::consts::PI, 4000);
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::NoTurningPoints { energy: e });
    }
    Ok(t)
}

/// Emits `cfg.n_samples` shell points along one trajectory.
pub fn sample_shell(potential: &Potential<1>, cfg: &ShellConfig) -> Result<ShellRun> {
    if !(cfg.dt > 0.0) {
        return Err(Error::invalid("shell dt must be strictly positive"));
    }
    let e = cfg.energy;
    let mut point = seed_point_on_shell(potential, e, cfg.support)?;
    let g = potential.geometry();
    if cfg.support == Support::Left {
        if let Some(top) = g.barrier_energy() {
            if (e - top).abs() <= 1e-9 * top.abs().max(1.0) {
                return Err(Error::TolExceeded {
                    drift: f64::INFINITY,
                    tol: cfg.energy_tol,
                });
            }
        }
    }
    let period = if point.p[0] == 0.0 {
        // Degenerate shell at the well bottom: small-oscillation period.
        let h = 1e-4;
        let k = (potential.v(point.q[0] + h) - 2.0 * potential.v(point.q[0]) + potential.v(point.q[0] - h)) / (h * h);
        2.0 * std::f64::consts::PI * (MASS / k.max(f64::MIN_POSITIVE)).sqrt()
    } else {
        orbit_period(potential, e, point.q[0])?
    };
    let stride = cfg.stride.unwrap_or(0.25 * period);
    let burn_in = cfg.burn_in.unwrap_or(10.0 * period);
    if !(stride > 0.0) || !(burn_in >= 0.0) {
        return Err(Error::invalid("stride must be positive and burn-in nonnegative"));
    }
    let mut diag = ShellDiagnostics {
        period,
        stride,
        burn_in,
        ..Default::default()
    };
    let mut samples = Vec::with_capacity(cfg.n_samples);
    if cfg.n_samples == 0 {
        return Ok(ShellRun {
            samples,
            diagnostics: diag,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let advance = |point: &mut PhasePoint<1>, span: f64, diag: &mut ShellDiagnostics| -> Result<()> {
        let n = ((span / cfg.dt).ceil() as usize).max(1);
        let delta = span / n as f64;
        for _ in 0..n {
            verlet_step(potential, point, delta);
        }
        if !point.is_finite() {
            return Err(Error::NonFiniteState { tau: span });
        }
        let drift = relative_error(potential.hamiltonian(point), e);
        diag.max_raw_drift = diag.max_raw_drift.max(drift);
        if drift > cfg.drift_tol {
            return Err(Error::TolExceeded {
                drift,
                tol: cfg.drift_tol,
            });
        }
        Ok(())
    };
    if burn_in > 0.0 {
        advance(&mut point, burn_in, &mut diag)?;
    }
    let max_attempts = 4 * cfg.n_samples + 1000;
    let mut attempts = 0;
    while samples.len() < cfg.n_samples {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::ShellUnreachable {
                energy: e,
                reason: "trajectory does not visit the requested support".into(),
            });
        }
        let jitter: f64 = rng.random_range(0.5..1.5);
        advance(&mut point, stride * jitter, &mut diag)?;
        let q = point.q[0];
        let ke = e - potential.v(q);
        if !cfg.support.contains(q) || ke < 0.0 || point.p[0] == 0.0 && ke > 0.0 {
            diag.skipped += 1;
            continue;
        }
        let mut proj = point;
        proj.p[0] = point.p[0].signum() * (2.0 * MASS * ke).sqrt();
        proj.weight = 1.0;
        let drift = relative_error(potential.hamiltonian(&proj), e);
        if drift > cfg.energy_tol {
            return Err(Error::TolExceeded {
                drift,
                tol: cfg.energy_tol,
            });
        }
        let w = potential.grad_h_norm(&proj);
        if w < 1e-14 {
            diag.small_weight += 1;
        }
        samples.push(ShellSample {
            point: proj,
            weight: w,
            shell_energy: e,
        });
    }
    Ok(ShellRun {
        samples,
        diagnostics: diag,
    })
}

/// Writes one sample per line: momentum components, position components,
/// weight, `H`. Lines starting with `#` are comments.
pub fn write_samples<const D: usize, W: Write>(
    mut out: W,
    potential: &Potential<D>,
    samples: &[ShellSample<D>],
    header: &[String],
) -> Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    for s in samples {
        let mut line = String::new();
        for x in s.point.p.iter().chain(s.point.q.iter()) {
            line.push_str(&format!("{x:.16e} "));
        }
        line.push_str(&format!("{:.16e} {:.16e}", s.weight, potential.hamiltonian(&s.point)));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads samples written by [`write_samples`]. The shell energy of each sample
/// is taken from its stored `H`.
pub fn read_samples<const D: usize, R: BufRead>(input: R) -> Result<Vec<ShellSample<D>>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("sample line {}: {e}", lineno + 1)))?;
        if vals.len() != 2 * D + 2 {
            return Err(Error::invalid(format!(
                "sample line {}: expected {} columns, found {}",
                lineno + 1,
                2 * D + 2,
                vals.len()
            )));
        }
        let mut p = [0.0; D];
        let mut q = [0.0; D];
        p.copy_from_slice(&vals[..D]);
        q.copy_from_slice(&vals[D..2 * D]);
        out.push(ShellSample {
            point: PhasePoint::new(p, q),
            weight: vals[2 * D],
            shell_energy: vals[2 * D + 1],
        });
    }
    Ok(out)
}
