//! Potentials, forces, the classical Hamiltonian and the regular part of the
//! Wigner kernel.
//!
//! A [`Potential`] is a sum of radial Gaussian terms plus an optional isotropic
//! harmonic term. The Gaussian form is what makes the nonlocal kernel
//! `ω(s, q) = 2/(ħ(πħ)^ν) ∫dq' V(q - q') sin(2 s·q'/ħ)` available in closed
//! form; the harmonic term only contributes classical drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{bisect, scan_min};
use crate::units::{HBAR, MASS};

/// One point of ν-dimensional phase space with a signed statistical weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint<const D: usize> {
    pub p: [f64; D],
    pub q: [f64; D],
    pub weight: f64,
}

impl<const D: usize> PhasePoint<D> {
    pub fn new(p: [f64; D], q: [f64; D]) -> Self {
        Self { p, q, weight: 1.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|x| x.is_finite()) && !self.weight.is_nan()
    }
}

impl PhasePoint<1> {
    pub fn scalar(p: f64, q: f64) -> Self {
        Self::new([p], [q])
    }
}

/// `amplitude · exp(-|q - center|² / width²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianTerm<const D: usize> {
    pub amplitude: f64,
    pub width: f64,
    pub center: [f64; D],
}

/// `½ m ω² |q - center|²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarmonicTerm<const D: usize> {
    pub omega: f64,
    pub center: [f64; D],
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Potential<const D: usize> {
    pub gaussians: Vec<GaussianTerm<D>>,
    pub harmonic: Option<HarmonicTerm<D>>,
}

#[inline]
fn dist2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl<const D: usize> Potential<D> {
    pub fn free() -> Self {
        Self::default()
    }

    pub fn value(&self, q: &[f64; D]) -> f64 {
        let mut v = 0.0;
        for g in &self.gaussians {
            v += g.amplitude * (-dist2(q, &g.center) / (g.width * g.width)).exp();
        }
        if let Some(h) = &self.harmonic {
            v += 0.5 * MASS * h.omega * h.omega * dist2(q, &h.center);
        }
        v
    }

    /// `F = -∇V`.
    pub fn force(&self, q: &[f64; D]) -> [f64; D] {
        let mut f = [0.0; D];
        for g in &self.gaussians {
            let w2 = g.width * g.width;
            let e = g.amplitude * (-dist2(q, &g.center) / w2).exp();
            for k in 0..D {
                f[k] += 2.0 * (q[k] - g.center[k]) / w2 * e;
            }
        }
        if let Some(h) = &self.harmonic {
            let c = MASS * h.omega * h.omega;
            for k in 0..D {
                f[k] -= c * (q[k] - h.center[k]);
            }
        }
        f
    }

    /// Force contributed by Gaussian term `i` alone.
    pub fn term_force(&self, i: usize, q: &[f64; D]) -> [f64; D] {
        let g = &self.gaussians[i];
        let w2 = g.width * g.width;
        let e = g.amplitude * (-dist2(q, &g.center) / w2).exp();
        let mut f = [0.0; D];
        for k in 0..D {
            f[k] = 2.0 * (q[k] - g.center[k]) / w2 * e;
        }
        f
    }

    pub fn hamiltonian(&self, point: &PhasePoint<D>) -> f64 {
        let p2: f64 = point.p.iter().map(|p| p * p).sum();
        p2 / (2.0 * MASS) + self.value(&point.q)
    }

    /// Euclidean norm of `(∂H/∂p, ∂H/∂q)`.
    pub fn grad_h_norm(&self, point: &PhasePoint<D>) -> f64 {
        let f = self.force(&point.q);
        let a: f64 = point.p.iter().map(|p| (p / MASS) * (p / MASS)).sum();
        let b: f64 = f.iter().map(|x| x * x).sum();
        (a + b).sqrt()
    }

    /// Prefactor `2 a w^ν / (ħ^{ν+1} π^{ν/2})` of Gaussian term `i` in the
    /// closed-form kernel.
    pub fn kernel_coefficient(&self, i: usize) -> f64 {
        let g = &self.gaussians[i];
        let nu = D as i32;
        2.0 * g.amplitude * g.width.powi(nu) / (HBAR.powi(nu + 1) * std::f64::consts::PI.powf(0.5 * nu as f64))
    }

    /// Regular (nonlocal) part of the Wigner kernel, summed over the Gaussian
    /// terms. Odd in `s`; the harmonic term contributes nothing here.
    pub fn omega_regular(&self, s: &[f64; D], q: &[f64; D]) -> f64 {
        let s2: f64 = s.iter().map(|x| x * x).sum();
        let mut acc = 0.0;
        for (i, g) in self.gaussians.iter().enumerate() {
            let phase: f64 = (0..D).map(|k| s[k] * (q[k] - g.center[k])).sum::<f64>() * 2.0 / HBAR;
            acc += self.kernel_coefficient(i) * (-s2 * g.width * g.width / (HBAR * HBAR)).exp() * phase.sin();
        }
        acc
    }

    /// True when the kernel has no nonlocal part, i.e. the Wigner dynamics is
    /// exactly classical.
    pub fn is_classical(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Half-width of a box that contains all structure of the potential.
    pub fn extent(&self) -> f64 {
        let mut ext: f64 = 1.0;
        for g in &self.gaussians {
            let c = g.center.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            ext = ext.max(c + 6.0 * g.width);
        }
        if let Some(h) = &self.harmonic {
            let c = h.center.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            ext = ext.max(c + 10.0 / h.omega.abs().sqrt().max(1e-3));
        }
        ext
    }
}

/// Serializable description of a 1D potential, as it appears in run
/// configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `V0' exp(-q²/σ²) - V0 exp(-q²/σ̃²)`.
    DoubleWell {
        #[serde(default = "one")]
        v0: f64,
        #[serde(default = "default_v0_prime")]
        v0_prime: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_sigma_tilde")]
        sigma_tilde: f64,
    },
    Harmonic {
        #[serde(default = "one")]
        omega: f64,
        #[serde(default)]
        center: f64,
    },
    GaussianSum { terms: Vec<GaussianTermSpec> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianTermSpec {
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub center: f64,
}

fn one() -> f64 {
    1.0
}
fn default_v0_prime() -> f64 {
    0.12
}
fn default_sigma() -> f64 {
    0.26
}
fn default_sigma_tilde() -> f64 {
    2.23
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self::double_well(0.26, 2.23)
    }
}

impl PotentialSpec {
    /// Double well with `V0 = 1`, `V0'/V0 = 0.12`.
    pub fn double_well(sigma: f64, sigma_tilde: f64) -> Self {
        PotentialSpec::DoubleWell {
            v0: 1.0,
            v0_prime: 0.12,
            sigma,
            sigma_tilde,
        }
    }

    pub fn harmonic(omega: f64) -> Self {
        PotentialSpec::Harmonic { omega, center: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::DoubleWell {
                v0,
                v0_prime,
                sigma,
                sigma_tilde,
            } => {
                if !(*sigma > 0.0 && *sigma_tilde > 0.0) {
                    return Err(Error::invalid("double-well widths must be strictly positive"));
                }
                if sigma_tilde <= sigma {
                    return Err(Error::invalid("double well requires sigma_tilde > sigma"));
                }
                if !(v0.is_finite() && v0_prime.is_finite()) {
                    return Err(Error::invalid("double-well amplitudes must be finite"));
                }
            }
            PotentialSpec::Harmonic { omega, center } => {
                if !(*omega > 0.0) || !center.is_finite() {
                    return Err(Error::invalid("harmonic omega must be strictly positive"));
                }
            }
            PotentialSpec::GaussianSum { terms } => {
                if terms.iter().any(|t| !(t.width > 0.0) || !t.amplitude.is_finite()) {
                    return Err(Error::invalid("all Gaussian widths must be strictly positive"));
                }
            }
        }
        Ok(())
    }

    /// Radial version of the potential in `D` dimensions. Centers of the 1D
    /// description are placed on the first axis.
    pub fn build<const D: usize>(&self) -> Result<Potential<D>> {
        self.validate()?;
        let on_axis = |c: f64| {
            let mut v = [0.0; D];
            if D > 0 {
                v[0] = c;
            }
            v
        };
        Ok(match self {
            PotentialSpec::DoubleWell {
                v0,
                v0_prime,
                sigma,
                sigma_tilde,
            } => Potential {
                gaussians: vec![
                    GaussianTerm {
                        amplitude: *v0_prime,
                        width: *sigma,
                        center: [0.0; D],
                    },
                    GaussianTerm {
                        amplitude: -*v0,
                        width: *sigma_tilde,
                        center: [0.0; D],
                    },
                ],
                harmonic: None,
            },
            PotentialSpec::Harmonic { omega, center } => Potential {
                gaussians: vec![],
                harmonic: Some(HarmonicTerm {
                    omega: *omega,
                    center: on_axis(*center),
                }),
            },
            PotentialSpec::GaussianSum { terms } => Potential {
                gaussians: terms
                    .iter()
                    .map(|t| GaussianTerm {
                        amplitude: t.amplitude,
                        width: t.width,
                        center: on_axis(t.center),
                    })
                    .collect(),
                harmonic: None,
            },
        })
    }

    /// Narrowest Gaussian width, the scale that sets the jump momenta.
    pub fn narrowest_width(&self) -> Option<f64> {
        match self {
            PotentialSpec::DoubleWell { sigma, .. } => Some(*sigma),
            PotentialSpec::Harmonic { .. } => None,
            PotentialSpec::GaussianSum { terms } => terms.iter().map(|t| t.width).reduce(f64::min),
        }
    }
}

/// Extremal structure of a 1D potential: the left-well minimum, an optional
/// barrier separating it from the right half, and the value at infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WellGeometry {
    pub left_min: (f64, f64),
    pub right_min: (f64, f64),
    /// `(q, V)` of the barrier top, when one exists.
    pub barrier: Option<(f64, f64)>,
    /// Limit of `V` as `|q| → ∞` (`+∞` when confining).
    pub asymptote: f64,
}

impl WellGeometry {
    pub fn global_min(&self) -> (f64, f64) {
        if self.left_min.1 <= self.right_min.1 {
            self.left_min
        } else {
            self.right_min
        }
    }

    pub fn barrier_energy(&self) -> Option<f64> {
        self.barrier.map(|b| b.1)
    }
}

impl Potential<1> {
    pub fn v(&self, q: f64) -> f64 {
        self.value(&[q])
    }

    pub fn f(&self, q: f64) -> f64 {
        self.force(&[q])[0]
    }

    pub fn geometry(&self) -> WellGeometry {
        let ext = self.extent();
        let n = 20_000;
        let left_min = scan_min(|q| self.v(q), -ext, 0.0, n);
        let right_min = scan_min(|q| self.v(q), 0.0, ext, n);
        let (a, b) = (left_min.0, right_min.0);
        let barrier = if b - a > 1e-9 {
            let (qm, neg) = scan_min(|q| -self.v(q), a, b, n);
            let top = -neg;
            let clearance = 1e-12 * (1.0 + top.abs());
            (top > left_min.1 + clearance && top > right_min.1 + clearance).then_some((qm, top))
        } else {
            None
        };
        let asymptote = if self.harmonic.is_some() { f64::INFINITY } else { 0.0 };
        WellGeometry {
            left_min,
            right_min,
            barrier,
            asymptote,
        }
    }

    /// Classical turning points of the well around `q_start` at energy `e`:
    /// the nearest points left and right of `q_start` where `V(q) = e`.
    pub fn turning_points(&self, e: f64, q_start: f64) -> Result<(f64, f64)> {
        if self.v(q_start) > e {
            return Err(Error::NoTurningPoints { energy: e });
        }
        let ext = 4.0 * self.extent() + q_start.abs();
        let find = |dir: f64| -> Option<f64> {
            let mut step = 1e-3 * self.extent();
            let mut inner = q_start;
            loop {
                let outer = inner + dir * step;
                if (outer - q_start).abs() > ext {
                    return None;
                }
                if self.v(outer) > e {
                    return bisect(|q| self.v(q) - e, inner, outer, 1e-14 * (1.0 + outer.abs()));
                }
                inner = outer;
                step *= 1.05;
            }
        };
        match (find(-1.0), find(1.0)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::NoTurningPoints { energy: e }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dw() -> Potential<1> {
        PotentialSpec::double_well(0.26, 2.23).build().unwrap()
    }

    #[test]
    fn double_well_value_at_origin_and_infinity() {
        let v = dw();
        assert!((v.v(0.0) - (-0.88)).abs() < 1e-15);
        assert!(v.v(60.0).abs() < 1e-12);
        assert!(v.v(-60.0).abs() < 1e-12);
    }

    #[test]
    fn double_well_is_even_force_is_odd() {
        let v = dw();
        for &q in &[0.01, 0.2, 0.39, 1.3, 4.0] {
            assert_eq!(v.v(q), v.v(-q));
            assert_eq!(v.f(q), -v.f(-q));
        }
        assert_eq!(v.f(0.0), 0.0);
    }

    #[test]
    fn force_pushes_off_barrier_top() {
        let v = dw();
        assert!(v.f(0.05) > 0.0);
        assert!(v.f(-0.05) < 0.0);
    }

    #[test]
    fn force_matches_central_difference() {
        let v = dw();
        let h = 1e-5;
        for i in 0..200 {
            let q = -5.0 + 0.05 * i as f64 + 0.0123;
            let fd = -(v.v(q + h) - v.v(q - h)) / (2.0 * h);
            let f = v.f(q);
            assert!((fd - f).abs() <= 1e-8 * (1.0 + f.abs()), "q={q} fd={fd} f={f}");
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let v = dw();
        assert!((v.hamiltonian(&PhasePoint::scalar(0.0, 0.0)) + 0.88).abs() < 1e-15);
        let h = PotentialSpec::harmonic(1.0).build::<1>().unwrap();
        let pt = PhasePoint::scalar(1.0, 0.0);
        assert!((h.hamiltonian(&pt) - 0.5).abs() < 1e-15);
        assert!((h.grad_h_norm(&pt) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grad_norm_identity() {
        let v = dw();
        for i in 0..50 {
            let p = -1.0 + 0.04 * i as f64;
            let q = 0.7 - 0.03 * i as f64;
            let pt = PhasePoint::scalar(p, q);
            let g = v.grad_h_norm(&pt);
            let expect = p * p + v.f(q).powi(2);
            assert!((g * g - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_regular_is_odd_and_vanishes_at_zero() {
        let v = dw();
        for &(s, q) in &[(0.3, -0.4), (2.0, 0.1), (5.0, -1.7), (0.01, 3.0)] {
            assert_eq!(v.omega_regular(&[-s], &[q]), -v.omega_regular(&[s], &[q]));
        }
        assert_eq!(v.omega_regular(&[0.0], &[-0.4]), 0.0);
    }

    #[test]
    fn omega_regular_decays_beyond_six_inverse_widths() {
        let v = dw();
        for &q in &[-0.9, -0.4, -0.1, 0.3] {
            let max = (0..20_000)
                .map(|i| v.omega_regular(&[i as f64 * 1e-3], &[q]).abs())
                .fold(0.0, f64::max);
            let tail = v.omega_regular(&[6.0 / 0.26], &[q]).abs();
            assert!(tail < 1e-10 * max, "q={q} tail={tail} max={max}");
        }
    }

    #[test]
    fn geometry_of_default_double_well() {
        let g = dw().geometry();
        let (qb, vb) = g.barrier.unwrap();
        assert!(qb.abs() < 1e-6);
        assert!((vb + 0.88).abs() < 1e-10);
        assert!(g.left_min.0 < 0.0);
        assert!(g.left_min.1 < -0.92, "shell -0.92 must be reachable");
        assert!((g.left_min.0 + g.right_min.0).abs() < 1e-6);
        assert_eq!(g.asymptote, 0.0);
    }

    #[test]
    fn harmonic_has_no_barrier() {
        let g = PotentialSpec::harmonic(1.0).build::<1>().unwrap().geometry();
        assert!(g.barrier.is_none());
        assert!(g.global_min().1.abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(PotentialSpec::double_well(0.3, 0.2).build::<1>().is_err());
        assert!(PotentialSpec::double_well(0.0, 0.2).build::<1>().is_err());
        assert!(PotentialSpec::harmonic(-1.0).build::<1>().is_err());
        let bad = PotentialSpec::GaussianSum {
            terms: vec![GaussianTermSpec { amplitude: 1.0, width: -1.0, center: 0.0 }],
        };
        assert!(bad.build::<1>().is_err());
    }

    #[test]
    fn turning_points_bracket_left_well() {
        let v = dw();
        let g = v.geometry();
        let (a, b) = v.turning_points(-0.92, g.left_min.0).unwrap();
        assert!(a < g.left_min.0 && g.left_min.0 < b && b < 0.0);
        assert!((v.v(a) + 0.92).abs() < 1e-12);
        assert!((v.v(b) + 0.92).abs() < 1e-12);
        assert!(v.turning_points(-0.99, g.left_min.0).is_err());
    }

    #[test]
    fn spec_deserializes_with_kind_tag() {
        let s: PotentialSpec = serde_json::from_str(r#"{"kind": "double-well"}"#).unwrap();
        assert_eq!(s, PotentialSpec::double_well(0.26, 2.23));
        let h: PotentialSpec = serde_json::from_str(r#"{"kind": "harmonic", "omega": 2.0}"#).unwrap();
        assert_eq!(h, PotentialSpec::harmonic(2.0));
    }
}
