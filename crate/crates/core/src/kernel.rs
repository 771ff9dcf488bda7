//! Sampling of the Wigner jump kernel `ω(s, q) = K(s, q) + F(q)·∇δ(s)`.
//!
//! `K` is the closed-form nonlocal part of a Gaussian-sum potential. The
//! singular `F·∇δ` part is represented per Gaussian term by a pair of atoms at
//! `±h_i e_k` with weights `∓F_ik / (2 h_i)`, so that trajectories carrying the
//! full classical force are not double-counted. For quadratic potentials the
//! two parts cancel exactly and the kernel is identically zero.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::Potential;
use crate::units::HBAR;

/// One draw from the kernel: jump vector and signed weight `ω / density`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpDraw<const D: usize> {
    pub s: [f64; D],
    pub weight: f64,
    /// True when the draw came from the force-compensating atoms.
    pub atom: bool,
}

#[derive(Clone, Debug)]
struct Term<const D: usize> {
    coefficient: f64,
    width: f64,
    center: [f64; D],
    spread: f64,
    step: f64,
    mass: f64,
}

#[derive(Clone, Debug)]
pub struct JumpKernel<const D: usize> {
    terms: Vec<Term<D>>,
    continuous_mass: f64,
    jump_scale: Option<f64>,
}

fn normal_density(x2: f64, sd: f64, dims: usize) -> f64 {
    let norm = (2.0 * std::f64::consts::PI * sd * sd).powf(0.5 * dims as f64);
    (-0.5 * x2 / (sd * sd)).exp() / norm
}

impl<const D: usize> JumpKernel<D> {
    /// `compensator_fraction` sets the atom offset `h_i = fraction · ħ / w_i`.
    /// `jump_scale`, when given, replaces the per-term Gaussian mixture with a
    /// single isotropic Gaussian proposal of that width.
    pub fn new(potential: &Potential<D>, compensator_fraction: f64, jump_scale: Option<f64>) -> Self {
        let nu = D as i32;
        let terms: Vec<Term<D>> = potential
            .gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let coefficient = potential.kernel_coefficient(i);
                let mass = coefficient.abs() * (std::f64::consts::PI.sqrt() * HBAR / g.width).powi(nu);
                Term {
                    coefficient,
                    width: g.width,
                    center: g.center,
                    spread: HBAR / (g.width * std::f64::consts::SQRT_2),
                    step: compensator_fraction * HBAR / g.width,
                    mass,
                }
            })
            .collect();
        let continuous_mass = terms.iter().map(|t| t.mass).sum();
        Self {
            terms,
            continuous_mass,
            jump_scale,
        }
    }

    /// No Gaussian terms: the series truncates exactly at order zero.
    pub fn is_trivial(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn jump_scale(&self) -> Option<f64> {
        self.jump_scale
    }

    /// Compensator offsets `h_i`, one per Gaussian term.
    pub fn compensator_steps(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t.step).collect()
    }

    /// Continuous part `K(s, q)`.
    pub fn regular(&self, s: &[f64; D], q: &[f64; D]) -> f64 {
        let s2: f64 = s.iter().map(|x| x * x).sum();
        self.terms
            .iter()
            .map(|t| {
                let phase: f64 = (0..D).map(|k| s[k] * (q[k] - t.center[k])).sum::<f64>() * 2.0 / HBAR;
                t.coefficient * (-s2 * t.width * t.width / (HBAR * HBAR)).exp() * phase.sin()
            })
            .sum()
    }

    fn term_force(&self, t: &Term<D>, q: &[f64; D]) -> [f64; D] {
        // F_i = -∇(a e^{-r²/w²}); the amplitude is recovered from the kernel
        // coefficient so the kernel stays self-contained.
        let nu = D as i32;
        let a = t.coefficient * HBAR.powi(nu + 1) * std::f64::consts::PI.powf(0.5 * nu as f64) / (2.0 * t.width.powi(nu));
        let w2 = t.width * t.width;
        let r2: f64 = (0..D).map(|k| (q[k] - t.center[k]).powi(2)).sum();
        let e = a * (-r2 / w2).exp();
        let mut f = [0.0; D];
        for k in 0..D {
            f[k] = 2.0 * (q[k] - t.center[k]) / w2 * e;
        }
        f
    }

    fn atom_mass(&self, q: &[f64; D]) -> f64 {
        self.terms
            .iter()
            .map(|t| self.term_force(t, q).iter().map(|f| f.abs()).sum::<f64>() / t.step)
            .sum()
    }

    /// Probability of drawing from the continuous part at `q`.
    pub fn continuous_probability(&self, q: &[f64; D]) -> f64 {
        let atoms = self.atom_mass(q);
        if atoms == 0.0 {
            1.0
        } else {
            self.continuous_mass / (self.continuous_mass + atoms)
        }
    }

    /// Proposal density of the continuous part at `s`.
    pub fn proposal_density(&self, s: &[f64; D]) -> f64 {
        let s2: f64 = s.iter().map(|x| x * x).sum();
        match self.jump_scale {
            Some(sd) => normal_density(s2, sd, D),
            None => {
                self.terms.iter().map(|t| t.mass * normal_density(s2, t.spread, D)).sum::<f64>()
                    / self.continuous_mass
            }
        }
    }

    /// Draws `s` and the importance weight `ω(s, q) / proposal(s)`. For a
    /// trivial kernel the draw is `s = 0` with weight 0.
    pub fn sample<R: Rng + ?Sized>(&self, q: &[f64; D], rng: &mut R) -> JumpDraw<D> {
        if self.terms.is_empty() {
            return JumpDraw {
                s: [0.0; D],
                weight: 0.0,
                atom: false,
            };
        }
        let atoms = self.atom_mass(q);
        let pi_k = if atoms == 0.0 {
            1.0
        } else {
            self.continuous_mass / (self.continuous_mass + atoms)
        };
        let u: f64 = rng.random();
        if u < pi_k {
            let sd = match self.jump_scale {
                Some(sd) => sd,
                None => {
                    let mut pick = rng.random::<f64>() * self.continuous_mass;
                    let mut chosen = self.terms.len() - 1;
                    for (i, t) in self.terms.iter().enumerate() {
                        if pick < t.mass {
                            chosen = i;
                            break;
                        }
                        pick -= t.mass;
                    }
                    self.terms[chosen].spread
                }
            };
            let mut s = [0.0; D];
            for x in s.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x = sd * z;
            }
            let weight = self.regular(&s, q) / (pi_k * self.proposal_density(&s));
            JumpDraw { s, weight, atom: false }
        } else {
            let mut pick = rng.random::<f64>() * atoms;
            let mut chosen = None;
            'outer: for t in &self.terms {
                let f = self.term_force(t, q);
                for k in 0..D {
                    let m = f[k].abs() / t.step;
                    if m > 0.0 {
                        chosen = Some((t.step, k, f[k]));
                        if pick < m {
                            break 'outer;
                        }
                    }
                    pick -= m;
                }
            }
            let (step, k, fk) = chosen.expect("nonzero atom mass implies a nonzero force component");
            let plus: bool = rng.random();
            let mut s = [0.0; D];
            s[k] = if plus { step } else { -step };
            // Atom at +h carries -F/(2h), at -h carries +F/(2h).
            let sign = if plus { -1.0 } else { 1.0 } * fk.signum();
            JumpDraw {
                s,
                weight: sign * atoms / (1.0 - pi_k),
                atom: true,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dw() -> Potential<1> {
        PotentialSpec::double_well(0.26, 2.23).build().unwrap()
    }

    #[test]
    fn regular_part_matches_model() {
        let v = dw();
        let k = JumpKernel::new(&v, 0.1, None);
        for &(s, q) in &[(0.7, -0.3), (3.0, 0.2), (-5.0, -1.1)] {
            assert!((k.regular(&[s], &[q]) - v.omega_regular(&[s], &[q])).abs() < 1e-14);
        }
    }

    #[test]
    fn harmonic_kernel_is_trivial() {
        let h = PotentialSpec::harmonic(1.0).build::<1>().unwrap();
        let k = JumpKernel::new(&h, 0.1, None);
        assert!(k.is_trivial());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = k.sample(&[0.4], &mut rng);
        assert_eq!(d.weight, 0.0);
        assert_eq!(d.s, [0.0]);
    }

    #[test]
    fn free_particle_kernel_is_trivial() {
        let k = JumpKernel::new(&Potential::<2>::free(), 0.1, Some(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(k.sample(&[0.0, 1.0], &mut rng).weight, 0.0);
    }

    #[test]
    fn proposal_density_is_normalized() {
        let k = JumpKernel::new(&dw(), 0.1, None);
        let n = 200_000;
        let (a, b) = (-40.0, 40.0);
        let h = (b - a) / n as f64;
        let total: f64 = (0..=n).map(|i| k.proposal_density(&[a + i as f64 * h])).sum::<f64>() * h;
        assert!((total - 1.0).abs() < 1e-9, "{total}");
    }

    #[test]
    fn first_moment_of_regular_part_is_the_force() {
        let v = dw();
        let k = JumpKernel::new(&v, 0.1, None);
        let n = 400_000;
        let (a, b) = (-40.0, 40.0);
        let h = (b - a) / n as f64;
        for &q in &[-0.31, -0.05, 0.4, 1.7] {
            let first: f64 = (0..=n)
                .map(|i| {
                    let s = a + i as f64 * h;
                    k.regular(&[s], &[q]) * s
                })
                .sum::<f64>()
                * h;
            assert!((first - v.f(q)).abs() < 1e-8, "q={q}: {first} vs {}", v.f(q));
        }
    }

    #[test]
    fn sampled_first_moment_matches_force_plus_compensator() {
        // E[weight · s] over the kernel = ∫ s ω(s) ds = F - F = 0 up to
        // Monte Carlo noise, since the atoms cancel the first moment of K.
        let v = dw();
        let k = JumpKernel::new(&v, 0.1, None);
        let q = [-0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400_000;
        let (mut m, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let d = k.sample(&q, &mut rng);
            let x = d.weight * d.s[0];
            m += x;
            m2 += x * x;
        }
        let mean = m / n as f64;
        let se = ((m2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
    }
}
