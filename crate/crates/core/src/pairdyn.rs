//! Paired half-speed classical trajectories and their momentum-jump history.
//!
//! The bar branch follows `dp/dτ = ½F(q)`, `dq/dτ = p/2m`; the tilde branch
//! follows the same equations with the right-hand sides negated. Both are
//! integrated with velocity Verlet on the classical flow with step `±h/2`.

use crate::error::{Error, Result};
use crate::model::{PhasePoint, Potential};
use crate::units::MASS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Bar,
    Tilde,
}

impl Branch {
    /// `+1` for bar, `-1` for tilde.
    pub fn sign(self) -> f64 {
        match self {
            Branch::Bar => 1.0,
            Branch::Tilde => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent<const D: usize> {
    pub tau: f64,
    pub jump: [f64; D],
    pub branch: Branch,
    pub weight_factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPair<const D: usize> {
    pub bar: PhasePoint<D>,
    pub tilde: PhasePoint<D>,
    pub t_anchor: f64,
    pub jumps: Vec<JumpEvent<D>>,
}

impl<const D: usize> TrajectoryPair<D> {
    /// Both branches at the same phase-space point.
    pub fn coincident(point: PhasePoint<D>, t_anchor: f64) -> Self {
        Self {
            bar: point,
            tilde: point,
            t_anchor,
            jumps: Vec::new(),
        }
    }

    pub fn branch(&self, b: Branch) -> &PhasePoint<D> {
        match b {
            Branch::Bar => &self.bar,
            Branch::Tilde => &self.tilde,
        }
    }

    pub fn branch_mut(&mut self, b: Branch) -> &mut PhasePoint<D> {
        match b {
            Branch::Bar => &mut self.bar,
            Branch::Tilde => &mut self.tilde,
        }
    }

    /// Product of the recorded jump weight factors.
    pub fn jump_weight(&self) -> f64 {
        self.jumps.iter().map(|e| e.weight_factor).product()
    }
}

/// One velocity-Verlet step of the full-speed classical flow with signed step
/// `delta`.
#[inline]
pub fn verlet_step<const D: usize>(potential: &Potential<D>, point: &mut PhasePoint<D>, delta: f64) {
    let f = potential.force(&point.q);
    for k in 0..D {
        point.p[k] += 0.5 * delta * f[k];
        point.q[k] += delta * point.p[k] / MASS;
    }
    let f = potential.force(&point.q);
    for k in 0..D {
        point.p[k] += 0.5 * delta * f[k];
    }
}

/// Number of substeps used for a span `|span|` at nominal step `dt`.
#[inline]
pub fn substeps(span: f64, dt: f64) -> usize {
    if span == 0.0 {
        0
    } else {
        ((span.abs() / dt).ceil() as usize).max(1)
    }
}

/// Advances one branch over `Δτ = span` in `substeps(span, dt)` equal steps.
pub fn advance_branch<const D: usize>(
    potential: &Potential<D>,
    point: &mut PhasePoint<D>,
    branch: Branch,
    span: f64,
    dt: f64,
) {
    let n = substeps(span, dt);
    if n == 0 {
        return;
    }
    let delta = 0.5 * branch.sign() * span / n as f64;
    for _ in 0..n {
        verlet_step(potential, point, delta);
    }
}

/// Advances both branches in place over `Δτ = span`.
pub fn advance_pair<const D: usize>(
    potential: &Potential<D>,
    bar: &mut PhasePoint<D>,
    tilde: &mut PhasePoint<D>,
    span: f64,
    dt: f64,
) {
    advance_branch(potential, bar, Branch::Bar, span, dt);
    advance_branch(potential, tilde, Branch::Tilde, span, dt);
}

fn check_finite<const D: usize>(pair: &TrajectoryPair<D>, tau: f64) -> Result<()> {
    if pair.bar.is_finite() && pair.tilde.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteState { tau })
    }
}

/// Evolves both branches from `tau_from` to `tau_to`. Either direction is
/// accepted; the anchor-to-origin convention has `tau_to ≤ tau_from`.
pub fn step_pair<const D: usize>(
    potential: &Potential<D>,
    pair: &TrajectoryPair<D>,
    tau_from: f64,
    tau_to: f64,
    dt: f64,
) -> Result<TrajectoryPair<D>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be strictly positive"));
    }
    let mut out = pair.clone();
    advance_pair(potential, &mut out.bar, &mut out.tilde, tau_to - tau_from, dt);
    check_finite(&out, tau_to)?;
    Ok(out)
}

/// Decrements the selected branch momentum by the jump vector and records the
/// event.
pub fn apply_jump<const D: usize>(pair: &TrajectoryPair<D>, event: JumpEvent<D>) -> TrajectoryPair<D> {
    let mut out = pair.clone();
    let point = out.branch_mut(event.branch);
    for k in 0..D {
        point.p[k] -= event.jump[k];
    }
    out.jumps.push(event);
    out
}

/// Endpoints of one piece of the recurrent trajectory, from `tau_start`
/// (upper end, just after the momentum shift) down to `tau_end`.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece<const D: usize> {
    pub tau_start: f64,
    pub tau_end: f64,
    pub start: (PhasePoint<D>, PhasePoint<D>),
    pub end: (PhasePoint<D>, PhasePoint<D>),
}

/// Walks the pair back from `t_anchor` to `τ = 0`, undoing each recorded jump
/// at its time. The last piece ends at `τ = 0`.
pub fn rebuild_pieces<const D: usize>(
    potential: &Potential<D>,
    anchor: &TrajectoryPair<D>,
    dt: f64,
) -> Result<Vec<Piece<D>>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be strictly positive"));
    }
    let mut events = anchor.jumps.clone();
    if events.windows(2).any(|w| w[0].tau > w[1].tau) {
        return Err(Error::invalid("jump events must be ordered by tau"));
    }
    if events.iter().any(|e| e.tau < 0.0 || e.tau > anchor.t_anchor) {
        return Err(Error::invalid("jump times must lie in [0, t_anchor]"));
    }
    events.reverse();

    let mut bar = anchor.bar;
    let mut tilde = anchor.tilde;
    let mut tau = anchor.t_anchor;
    let mut pieces = Vec::with_capacity(events.len() + 1);
    let mut i = 0;
    loop {
        let start = (bar, tilde);
        let tau_start = tau;
        let target = events.get(i).map_or(0.0, |e| e.tau);
        advance_pair(potential, &mut bar, &mut tilde, target - tau, dt);
        tau = target;
        if !(bar.is_finite() && tilde.is_finite()) {
            return Err(Error::NonFiniteState { tau });
        }
        pieces.push(Piece {
            tau_start,
            tau_end: tau,
            start,
            end: (bar, tilde),
        });
        // Simultaneous jumps share one piece boundary.
        let mut any = false;
        while let Some(e) = events.get(i) {
            if e.tau != tau {
                break;
            }
            let point = match e.branch {
                Branch::Bar => &mut bar,
                Branch::Tilde => &mut tilde,
            };
            for k in 0..D {
                point.p[k] -= e.jump[k];
            }
            i += 1;
            any = true;
        }
        if !any {
            break;
        }
    }
    Ok(pieces)
}
