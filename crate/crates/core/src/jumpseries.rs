//! Monte Carlo evaluation of the iteration series for linear functionals of
//! the two-point spectral density.
//!
//! Each path starts at an initial point drawn at `τ = 0` (both branches
//! coincident for shell samples), is carried forward to `t_max` by the paired
//! half-speed dynamics and receives momentum jumps at times drawn once per
//! path on `[0, t_max]`. At every grid time the functional is evaluated at the
//! current pair; the jumps that already happened define the series order and
//! the schedule weight for that time is the inverse marginal density of those
//! jumps. One path thus serves the whole time grid without bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::JumpKernel;
use crate::microcanon::{ShellMeasure, ShellSample};
use crate::model::{PhasePoint, Potential};
use crate::pairdyn::{advance_pair, rebuild_pieces, Branch, JumpEvent, TrajectoryPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesConfig {
    pub max_order: usize,
    /// Ratio of the truncated geometric order law.
    pub order_ratio: f64,
    /// Explicit order probabilities; overrides `order_ratio`.
    pub order_probs: Option<Vec<f64>>,
    /// Width of a single Gaussian jump proposal; `None` uses a mixture matched
    /// to each Gaussian term of the potential.
    pub jump_scale: Option<f64>,
    /// Compensator atom offset in units of `ħ / w` per term.
    pub compensator_fraction: f64,
    /// Number of paths.
    pub budget: usize,
    pub seed: u64,
    /// Nominal integration step in `τ`.
    pub dt: f64,
    /// Paths per deterministic accumulation block.
    pub block_size: usize,
    /// Stop early once every standard error of the first component is below
    /// this value.
    pub target_stderr: Option<f64>,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self {
            max_order: 4,
            order_ratio: 0.5,
            order_probs: None,
            jump_scale: None,
            compensator_fraction: 0.1,
            budget: 10_000,
            seed: 0,
            dt: 5e-4,
            block_size: 64,
            target_stderr: None,
        }
    }
}

impl SeriesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::invalid("series dt must be strictly positive"));
        }
        if self.block_size == 0 {
            return Err(Error::invalid("block_size must be at least 1"));
        }
        if !(self.compensator_fraction > 0.0) {
            return Err(Error::invalid("compensator_fraction must be strictly positive"));
        }
        if let Some(s) = self.jump_scale {
            if !(s > 0.0) {
                return Err(Error::invalid("jump_scale must be strictly positive"));
            }
        }
        self.order_probabilities().map(|_| ())
    }

    /// Probabilities over `{0, …, max_order}`.
    pub fn order_probabilities(&self) -> Result<Vec<f64>> {
        let probs = match &self.order_probs {
            Some(p) => {
                if p.len() != self.max_order + 1 {
                    return Err(Error::invalid(format!(
                        "order_probs has {} entries, expected max_order + 1 = {}",
                        p.len(),
                        self.max_order + 1
                    )));
                }
                p.clone()
            }
            None => {
                if !(self.order_ratio > 0.0) {
                    return Err(Error::invalid("order_ratio must be strictly positive"));
                }
                let raw: Vec<f64> = (0..=self.max_order).map(|j| self.order_ratio.powi(j as i32)).collect();
                let z: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / z).collect()
            }
        };
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("order probabilities must be strictly positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("order probabilities sum to {total}, not 1")));
        }
        Ok(probs)
    }
}

fn pick_order<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (j, p) in probs.iter().enumerate() {
        if u < *p {
            return j;
        }
        u -= p;
    }
    probs.len() - 1
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Order and jump times for a single anchor time.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderDraw {
    pub order: usize,
    /// Descending: `t ≥ τ_j ≥ … ≥ τ_1 ≥ 0`.
    pub times: Vec<f64>,
    /// `(t^j / j!) / P(j)`.
    pub weight: f64,
}

/// Draws the series order from `probs` and the jump times uniformly on the
/// ordered simplex of `[0, t]`.
pub fn sample_order_and_times<R: Rng + ?Sized>(probs: &[f64], t: f64, rng: &mut R) -> OrderDraw {
    let order = pick_order(probs, rng);
    let mut times: Vec<f64> = (0..order).map(|_| rng.random::<f64>() * t).collect();
    times.sort_by(|a, b| b.total_cmp(a));
    OrderDraw {
        order,
        times,
        weight: t.powi(order as i32) / factorial(order) / probs[order],
    }
}

/// Jump times drawn once per path on `[0, t_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpSchedule {
    /// Ascending.
    pub times: Vec<f64>,
    pub t_max: f64,
    probs: Vec<f64>,
}

impl JumpSchedule {
    pub fn draw<R: Rng + ?Sized>(probs: &[f64], t_max: f64, rng: &mut R) -> Self {
        let order = pick_order(probs, rng);
        let mut times: Vec<f64> = (0..order).map(|_| rng.random::<f64>() * t_max).collect();
        times.sort_by(|a, b| a.total_cmp(b));
        Self {
            times,
            t_max,
            probs: probs.to_vec(),
        }
    }

    /// Inverse density of "exactly these `k` jumps in `[0, t]`", marginalized
    /// over the jumps that fall in `(t, t_max]`.
    pub fn weight_at(&self, k: usize, t: f64) -> f64 {
        let tm = self.t_max;
        if tm == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        let rest = (tm - t).max(0.0);
        let mut density = 0.0;
        for (j, p) in self.probs.iter().enumerate().skip(k) {
            let falling: f64 = ((j - k + 1)..=j).map(|x| x as f64).product();
            density += p * falling * rest.powi((j - k) as i32) / tm.powi(j as i32);
        }
        if density > 0.0 {
            1.0 / density
        } else {
            0.0
        }
    }
}

/// Source of initial pairs at `τ = 0` with their statistical weight.
pub trait InitialSampler<const D: usize>: Sync {
    /// Returns `(bar, tilde, weight)` for path `index`.
    fn draw(&self, index: usize, rng: &mut ChaCha8Rng) -> (PhasePoint<D>, PhasePoint<D>, f64);
}

/// Shell samples used in order, cycling when the budget exceeds their number.
#[derive(Clone, Debug)]
pub struct ShellEnsemble<'a, const D: usize> {
    pub samples: &'a [ShellSample<D>],
    pub measure: ShellMeasure,
}

impl<'a, const D: usize> ShellEnsemble<'a, D> {
    pub fn new(samples: &'a [ShellSample<D>], measure: ShellMeasure) -> Self {
        Self { samples, measure }
    }
}

impl<const D: usize> InitialSampler<D> for ShellEnsemble<'_, D> {
    fn draw(&self, index: usize, _rng: &mut ChaCha8Rng) -> (PhasePoint<D>, PhasePoint<D>, f64) {
        let s = &self.samples[index % self.samples.len()];
        let mut p = s.point;
        p.weight = 1.0;
        (p, p, self.measure.weight(s))
    }
}

/// Vector-valued functional of the pair at the anchor time.
pub trait PairFunctional<const D: usize>: Sync {
    fn arity(&self) -> usize;
    fn eval(&self, bar: &PhasePoint<D>, tilde: &PhasePoint<D>, out: &mut [f64]);
}

/// Closure-backed [`PairFunctional`].
pub struct FnFunctional<F> {
    arity: usize,
    f: F,
}

impl<F> FnFunctional<F> {
    pub fn new(arity: usize, f: F) -> Self {
        Self { arity, f }
    }
}

impl<const D: usize, F> PairFunctional<D> for FnFunctional<F>
where
    F: Fn(&PhasePoint<D>, &PhasePoint<D>, &mut [f64]) + Sync,
{
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval(&self, bar: &PhasePoint<D>, tilde: &PhasePoint<D>, out: &mut [f64]) {
        (self.f)(bar, tilde, out)
    }
}

/// Contribution of one path at one grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedOutcome {
    pub values: Vec<f64>,
    /// Initial weight × schedule weight × product of jump factors.
    pub omega: f64,
    pub order: usize,
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::invalid("time grid must be finite and nonnegative"));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("time grid must be ascending"));
    }
    Ok(())
}

struct Engine<'a, const D: usize> {
    potential: &'a Potential<D>,
    kernel: &'a JumpKernel<D>,
    probs: Vec<f64>,
    t_grid: &'a [f64],
    dt: f64,
    seed: u64,
}

impl<const D: usize> Engine<'_, D> {
    fn new<'a>(
        potential: &'a Potential<D>,
        kernel: &'a JumpKernel<D>,
        t_grid: &'a [f64],
        cfg: &SeriesConfig,
    ) -> Result<Engine<'a, D>> {
        cfg.validate()?;
        check_grid(t_grid)?;
        // With no nonlocal part every jump carries zero weight, so the series
        // is exactly its order-zero term.
        let probs = if kernel.is_trivial() {
            vec![1.0]
        } else {
            cfg.order_probabilities()?
        };
        Ok(Engine {
            potential,
            kernel,
            probs,
            t_grid,
            dt: cfg.dt,
            seed: cfg.seed,
        })
    }

    /// Runs path `index`, calling `visit(t_index, pair, w0, schedule_weight)`
    /// at each grid time. Returns early once the jump weight vanishes.
    fn run<S: InitialSampler<D> + ?Sized>(
        &self,
        initial: &S,
        index: usize,
        mut visit: impl FnMut(usize, &TrajectoryPair<D>, f64, f64),
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let (bar, tilde, w0) = initial.draw(index, &mut rng);
        let t_max = *self.t_grid.last().unwrap();
        let schedule = JumpSchedule::draw(&self.probs, t_max, &mut rng);
        let mut pair = TrajectoryPair {
            bar,
            tilde,
            t_anchor: 0.0,
            jumps: Vec::with_capacity(schedule.times.len()),
        };
        let mut tau = 0.0;
        let mut next_jump = 0;
        for (ti, &t) in self.t_grid.iter().enumerate() {
            while next_jump < schedule.times.len() && schedule.times[next_jump] <= t {
                let tj = schedule.times[next_jump];
                advance_pair(self.potential, &mut pair.bar, &mut pair.tilde, tj - tau, self.dt);
                tau = tj;
                let branch = if rng.random::<bool>() { Branch::Bar } else { Branch::Tilde };
                let draw = self.kernel.sample(&pair.branch(branch).q, &mut rng);
                let point = pair.branch_mut(branch);
                for k in 0..D {
                    point.p[k] += draw.s[k];
                }
                pair.jumps.push(JumpEvent {
                    tau: tj,
                    jump: draw.s,
                    branch,
                    weight_factor: branch.sign() * draw.weight,
                });
                next_jump += 1;
            }
            advance_pair(self.potential, &mut pair.bar, &mut pair.tilde, t - tau, self.dt);
            tau = t;
            pair.t_anchor = t;
            if !(pair.bar.is_finite() && pair.tilde.is_finite()) {
                return Err(Error::NonFiniteState { tau });
            }
            if w0 == 0.0 || pair.jump_weight() == 0.0 {
                return Ok(());
            }
            visit(ti, &pair, w0, schedule.weight_at(pair.jumps.len(), t));
        }
        Ok(())
    }
}

/// Per-grid-time accumulator over `z = (w, c_1, …, c_m)`.
#[derive(Clone, Debug)]
struct Accumulator {
    arity: usize,
    orders: usize,
    n_t: usize,
    n: usize,
    sum_w: f64,
    sum_ww: f64,
    /// `[t][a]` sums of `c_a`.
    sum_c: Vec<f64>,
    /// `[t][(a, b)]` sums of `c_a c_b`.
    sum_cc: Vec<f64>,
    /// `[t][a]` sums of `c_a w`.
    sum_cw: Vec<f64>,
    /// `[t]` sums of `|Ω|` and `Ω²` for the effective sample size.
    sum_abs: Vec<f64>,
    sum_sq: Vec<f64>,
    /// `[order][t][a]` sums of `c_a`, `c_a²`, `c_a w`.
    ord_c: Vec<f64>,
    ord_cc: Vec<f64>,
    ord_cw: Vec<f64>,
}

impl Accumulator {
    fn new(arity: usize, orders: usize, n_t: usize) -> Self {
        Self {
            arity,
            orders,
            n_t,
            n: 0,
            sum_w: 0.0,
            sum_ww: 0.0,
            sum_c: vec![0.0; n_t * arity],
            sum_cc: vec![0.0; n_t * arity * arity],
            sum_cw: vec![0.0; n_t * arity],
            sum_abs: vec![0.0; n_t],
            sum_sq: vec![0.0; n_t],
            ord_c: vec![0.0; orders * n_t * arity],
            ord_cc: vec![0.0; orders * n_t * arity],
            ord_cw: vec![0.0; orders * n_t * arity],
        }
    }

    fn merge(&mut self, o: &Accumulator) {
        self.n += o.n;
        self.sum_w += o.sum_w;
        self.sum_ww += o.sum_ww;
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.sum_c, &o.sum_c);
        add(&mut self.sum_cc, &o.sum_cc);
        add(&mut self.sum_cw, &o.sum_cw);
        add(&mut self.sum_abs, &o.sum_abs);
        add(&mut self.sum_sq, &o.sum_sq);
        add(&mut self.ord_c, &o.ord_c);
        add(&mut self.ord_cc, &o.ord_cc);
        add(&mut self.ord_cw, &o.ord_cw);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorStatus {
    Complete,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_effective: Vec<f64>,
    pub status: EstimatorStatus,
}

impl TimeSeries {
    /// Deterministic series with zero error.
    pub fn exact(t: Vec<f64>, value: Vec<f64>) -> Self {
        let n = t.len();
        Self {
            t,
            value,
            stderr: vec![0.0; n],
            n_effective: vec![f64::INFINITY; n],
            status: EstimatorStatus::Complete,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Contribution of one series order to one functional component.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderBreakdown {
    pub order: usize,
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Result of [`estimate_functional`]: ratio estimates of every functional
/// component together with the moments needed for derived quantities.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub t: Vec<f64>,
    pub status: EstimatorStatus,
    pub paths: usize,
    acc: Accumulator,
}

impl Estimate {
    pub fn arity(&self) -> usize {
        self.acc.arity
    }

    fn means(&self, ti: usize) -> (f64, Vec<f64>) {
        let n = self.acc.n as f64;
        let m = self.acc.arity;
        (
            self.acc.sum_w / n,
            (0..m).map(|a| self.acc.sum_c[ti * m + a] / n).collect(),
        )
    }

    /// Covariance matrix of the sample means of `z = (w, c_1, …, c_m)`.
    fn covariance(&self, ti: usize) -> Vec<Vec<f64>> {
        let n = self.acc.n as f64;
        let m = self.acc.arity;
        let (mw, mc) = self.means(ti);
        let mut cov = vec![vec![0.0; m + 1]; m + 1];
        let denom = (n * (n - 1.0)).max(f64::MIN_POSITIVE);
        cov[0][0] = (self.acc.sum_ww - n * mw * mw) / denom;
        for a in 0..m {
            let cw = (self.acc.sum_cw[ti * m + a] - n * mc[a] * mw) / denom;
            cov[0][a + 1] = cw;
            cov[a + 1][0] = cw;
            for b in 0..m {
                cov[a + 1][b + 1] = (self.acc.sum_cc[(ti * m + a) * m + b] - n * mc[a] * mc[b]) / denom;
            }
        }
        cov
    }

    /// Value and delta-method standard error of `g(mean c / mean w)` at grid
    /// index `ti`, where `g` acts on the vector of ratio estimates.
    pub fn derived_at(&self, ti: usize, g: &dyn Fn(&[f64]) -> f64) -> (f64, f64) {
        let m = self.acc.arity;
        let (mw, mc) = self.means(ti);
        if self.acc.n == 0 || mw == 0.0 {
            return (f64::NAN, f64::NAN);
        }
        let f = |w: f64, c: &[f64]| {
            let r: Vec<f64> = c.iter().map(|x| x / w).collect();
            g(&r)
        };
        let value = f(mw, &mc);
        let mut grad = vec![0.0; m + 1];
        let h0 = 1e-6 * mw.abs();
        grad[0] = (f(mw + h0, &mc) - f(mw - h0, &mc)) / (2.0 * h0);
        for a in 0..m {
            let h = 1e-6 * mc[a].abs().max(1e-6 * mw.abs()).max(1e-300);
            let mut up = mc.clone();
            let mut dn = mc.clone();
            up[a] += h;
            dn[a] -= h;
            grad[a + 1] = (f(mw, &up) - f(mw, &dn)) / (2.0 * h);
        }
        let cov = self.covariance(ti);
        let mut var = 0.0;
        for i in 0..=m {
            for j in 0..=m {
                var += grad[i] * cov[i][j] * grad[j];
            }
        }
        (value, var.max(0.0).sqrt())
    }

    fn n_effective(&self, ti: usize) -> f64 {
        let sq = self.acc.sum_sq[ti];
        if sq == 0.0 {
            0.0
        } else {
            self.acc.sum_abs[ti].powi(2) / sq
        }
    }

    /// Series of a derived quantity.
    pub fn derived(&self, g: &dyn Fn(&[f64]) -> f64) -> TimeSeries {
        let (mut value, mut stderr, mut neff) = (Vec::new(), Vec::new(), Vec::new());
        for ti in 0..self.t.len() {
            let (v, e) = self.derived_at(ti, g);
            value.push(v);
            stderr.push(e);
            neff.push(self.n_effective(ti));
        }
        TimeSeries {
            t: self.t.clone(),
            value,
            stderr,
            n_effective: neff,
            status: self.status,
        }
    }

    /// Ratio estimate of component `a`.
    pub fn series(&self, a: usize) -> TimeSeries {
        self.derived(&|r: &[f64]| r[a])
    }

    /// `⟨second⟩ − ⟨first⟩²` with propagated errors.
    pub fn dispersion(&self, first: usize, second: usize) -> TimeSeries {
        self.derived(&|r: &[f64]| r[second] - r[first] * r[first])
    }

    /// Per-order contributions to component `a`.
    pub fn order_breakdown(&self, a: usize) -> Vec<OrderBreakdown> {
        let m = self.acc.arity;
        let n_t = self.acc.n_t;
        let n = self.acc.n as f64;
        let mw = self.acc.sum_w / n;
        let vw = (self.acc.sum_ww / n - mw * mw).max(0.0);
        (0..self.acc.orders)
            .map(|k| {
                let mut value = Vec::with_capacity(n_t);
                let mut stderr = Vec::with_capacity(n_t);
                for ti in 0..n_t {
                    let idx = (k * n_t + ti) * m + a;
                    let mc = self.acc.ord_c[idx] / n;
                    let r = mc / mw;
                    let vc = (self.acc.ord_cc[idx] / n - mc * mc).max(0.0);
                    let cov = self.acc.ord_cw[idx] / n - mc * mw;
                    let var = (vc - 2.0 * r * cov + r * r * vw).max(0.0) / (mw * mw) / (n - 1.0).max(1.0);
                    value.push(r);
                    stderr.push(var.sqrt());
                }
                OrderBreakdown { order: k, value, stderr }
            })
            .collect()
    }
}

/// Estimates `(φ | W)` on `t_grid` for every component of `phi`.
pub fn estimate_functional<const D: usize, S, F>(
    potential: &Potential<D>,
    kernel: &JumpKernel<D>,
    phi: &F,
    t_grid: &[f64],
    initial: &S,
    cfg: &SeriesConfig,
) -> Result<Estimate>
where
    S: InitialSampler<D> + ?Sized,
    F: PairFunctional<D> + ?Sized,
{
    let engine = Engine::new(potential, kernel, t_grid, cfg)?;
    let m = phi.arity();
    if m == 0 {
        return Err(Error::invalid("functional must have at least one component"));
    }
    let orders = engine.probs.len();
    let n_t = t_grid.len();

    let run_block = |block: usize| -> Result<Accumulator> {
        let mut acc = Accumulator::new(m, orders, n_t);
        let start = block * cfg.block_size;
        let end = (start + cfg.block_size).min(cfg.budget);
        let mut vals = vec![0.0; m];
        for index in start..end {
            let mut w0_seen = 0.0;
            engine.run(initial, index, |ti, pair, w0, sched| {
                w0_seen = w0;
                let omega = w0 * sched * pair.jump_weight();
                phi.eval(&pair.bar, &pair.tilde, &mut vals);
                let k = pair.jumps.len();
                acc.sum_abs[ti] += omega.abs();
                acc.sum_sq[ti] += omega * omega;
                for a in 0..m {
                    let c = omega * vals[a];
                    acc.sum_c[ti * m + a] += c;
                    acc.sum_cw[ti * m + a] += c * w0;
                    for b in 0..m {
                        acc.sum_cc[(ti * m + a) * m + b] += c * omega * vals[b];
                    }
                    let idx = (k * n_t + ti) * m + a;
                    acc.ord_c[idx] += c;
                    acc.ord_cc[idx] += c * c;
                    acc.ord_cw[idx] += c * w0;
                }
            })?;
            if w0_seen == 0.0 {
                // The path ended before any visit; recover its weight.
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(index as u64);
                w0_seen = initial.draw(index, &mut rng).2;
            }
            acc.n += 1;
            acc.sum_w += w0_seen;
            acc.sum_ww += w0_seen * w0_seen;
        }
        Ok(acc)
    };

    let n_blocks = cfg.budget.div_ceil(cfg.block_size);
    let round = match cfg.target_stderr {
        Some(_) => rayon::current_num_threads().max(1) * 4,
        None => n_blocks.max(1),
    };
    let mut total = Accumulator::new(m, orders, n_t);
    let mut status = EstimatorStatus::Complete;
    let mut done = 0;
    while done < n_blocks {
        let hi = (done + round).min(n_blocks);
        let parts: Vec<Result<Accumulator>> = (done..hi).into_par_iter().map(run_block).collect();
        for p in parts {
            total.merge(&p?);
        }
        done = hi;
        if let Some(target) = cfg.target_stderr {
            let est = Estimate {
                t: t_grid.to_vec(),
                status,
                paths: total.n,
                acc: total.clone(),
            };
            let worst = est.series(0).stderr.iter().cloned().fold(0.0, f64::max);
            if worst <= target {
                break;
            }
            if done == n_blocks {
                status = EstimatorStatus::BudgetExhausted;
            }
        }
    }
    Ok(Estimate {
        t: t_grid.to_vec(),
        status,
        paths: total.n,
        acc: total,
    })
}

/// Symmetrized average `½{A(bar) + A(tilde)}` of a phase-space symbol.
pub fn estimate_average_operator<const D: usize, S, A>(
    potential: &Potential<D>,
    kernel: &JumpKernel<D>,
    symbol: A,
    t_grid: &[f64],
    initial: &S,
    cfg: &SeriesConfig,
) -> Result<TimeSeries>
where
    S: InitialSampler<D> + ?Sized,
    A: Fn(&PhasePoint<D>) -> f64 + Sync,
{
    let phi = FnFunctional::new(1, |b: &PhasePoint<D>, t: &PhasePoint<D>, out: &mut [f64]| {
        out[0] = 0.5 * (symbol(b) + symbol(t));
    });
    Ok(estimate_functional(potential, kernel, &phi, t_grid, initial, cfg)?.series(0))
}

/// Full record of one path: the anchored pair at every visited grid time.
#[derive(Clone, Debug)]
pub struct PathTrace<const D: usize> {
    pub index: usize,
    pub start: (PhasePoint<D>, PhasePoint<D>),
    pub initial_weight: f64,
    pub anchors: Vec<(usize, TrajectoryPair<D>, WeightedOutcome)>,
}

/// Re-runs path `index` of an estimate and records every anchor.
pub fn trace_path<const D: usize, S, F>(
    potential: &Potential<D>,
    kernel: &JumpKernel<D>,
    phi: &F,
    t_grid: &[f64],
    initial: &S,
    cfg: &SeriesConfig,
    index: usize,
) -> Result<PathTrace<D>>
where
    S: InitialSampler<D> + ?Sized,
    F: PairFunctional<D> + ?Sized,
{
    let engine = Engine::new(potential, kernel, t_grid, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (bar, tilde, w) = initial.draw(index, &mut rng);
    let mut anchors = Vec::new();
    let mut vals = vec![0.0; phi.arity()];
    engine.run(initial, index, |ti, pair, w0, sched| {
        phi.eval(&pair.bar, &pair.tilde, &mut vals);
        anchors.push((
            ti,
            pair.clone(),
            WeightedOutcome {
                values: vals.clone(),
                omega: w0 * sched * pair.jump_weight(),
                order: pair.jumps.len(),
            },
        ));
    })?;
    Ok(PathTrace {
        index,
        start: (bar, tilde),
        initial_weight: w,
        anchors,
    })
}

/// Outcome of walking a traced anchor back to `τ = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportCheck {
    /// Largest per-component distance between reconstructed and sampled
    /// starting points over both branches.
    pub mismatch: f64,
    /// `|H(bar) − E|` of the reconstructed start.
    pub energy_offset: f64,
    pub inside: bool,
}

/// Rebuilds `anchor` backward and checks the `τ = 0` endpoint against the
/// sampled start: left support, energy within `energy_window` of `energy`,
/// and both branches within `match_window` of the start.
pub fn check_support<const D: usize>(
    potential: &Potential<D>,
    anchor: &TrajectoryPair<D>,
    start: &(PhasePoint<D>, PhasePoint<D>),
    energy: f64,
    energy_window: f64,
    match_window: f64,
    dt: f64,
) -> Result<SupportCheck> {
    let pieces = rebuild_pieces(potential, anchor, dt)?;
    let (b, t) = pieces.last().expect("at least one piece").end;
    let mut mismatch: f64 = 0.0;
    for (x, y) in [(b, start.0), (t, start.1)] {
        for k in 0..D {
            mismatch = mismatch.max((x.p[k] - y.p[k]).abs()).max((x.q[k] - y.q[k]).abs());
        }
    }
    let energy_offset = (potential.hamiltonian(&b) - energy).abs();
    Ok(SupportCheck {
        mismatch,
        energy_offset,
        inside: b.q[0] < 0.0 && energy_offset <= energy_window && mismatch <= match_window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_law_is_normalized() {
        let cfg = SeriesConfig::default();
        let p = cfg.order_probabilities().unwrap();
        assert_eq!(p.len(), 5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[1] / p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bad_order_laws_are_rejected() {
        let cfg = SeriesConfig { order_probs: Some(vec![0.5, 0.5, 0.0]), max_order: 2, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = SeriesConfig { order_probs: Some(vec![0.5, 0.4]), max_order: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = SeriesConfig { order_probs: Some(vec![1.0]), max_order: 2, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn forced_order_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sample_order_and_times(&[1.0], 3.0, &mut rng);
        assert_eq!(d.order, 0);
        assert!(d.times.is_empty());
        assert_eq!(d.weight, 1.0);
    }

    #[test]
    fn order_one_weight_is_interval_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let d = sample_order_and_times(&[1e-300, 1.0 - 1e-300], 2.0, &mut rng);
            if d.order == 1 {
                assert!((d.weight - 2.0 / (1.0 - 1e-300)).abs() < 1e-12);
                assert!(d.times[0] >= 0.0 && d.times[0] <= 2.0);
            }
        }
    }

    #[test]
    fn times_are_descending() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = sample_order_and_times(&[0.1, 0.1, 0.1, 0.7], 5.0, &mut rng);
        assert!(d.times.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn schedule_weight_reduces_to_simplex_at_t_max() {
        let probs = [0.4, 0.3, 0.2, 0.1];
        let s = JumpSchedule { times: vec![], t_max: 3.0, probs: probs.to_vec() };
        for k in 0..4 {
            let expect = 3f64.powi(k as i32) / factorial(k) / probs[k];
            assert!((s.weight_at(k, 3.0) - expect).abs() < 1e-12 * expect);
        }
        assert!((s.weight_at(0, 0.0) - 1.0).abs() < 1e-15);
    }
}
