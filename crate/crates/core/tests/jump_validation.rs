use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wignerflux::jumpseries::{
    estimate_functional, sample_order_and_times, FnFunctional, InitialSampler, JumpSchedule, SeriesConfig,
};
use wignerflux::kernel::JumpKernel;
use wignerflux::model::{PhasePoint, PotentialSpec};
use wignerflux::oracle::{default_grid, expectation, gaussian_packet, momentum_expectation, SplitOperator};

/// Wigner function of a Gaussian packet with zero mean momentum, both
/// branches coincident.
struct Packet {
    x0: f64,
    s: f64,
}

impl InitialSampler<1> for Packet {
    fn draw(&self, _index: usize, rng: &mut ChaCha8Rng) -> (PhasePoint<1>, PhasePoint<1>, f64) {
        let q = self.x0 + Normal::new(0.0, self.s / 2f64.sqrt()).unwrap().sample(rng);
        let p = Normal::new(0.0, 1.0 / (self.s * 2f64.sqrt())).unwrap().sample(rng);
        let x = PhasePoint::scalar(p, q);
        (x, x, 1.0)
    }
}

#[test]
fn order_and_time_draws_reproduce_simplex_volumes() {
    let probs = SeriesConfig::default().order_probabilities().unwrap();
    let t = 1.7;
    let n = 400_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sums = vec![0.0; probs.len()];
    let mut sq = vec![0.0; probs.len()];
    let mut first_time = (0.0, 0usize);
    for _ in 0..n {
        let d = sample_order_and_times(&probs, t, &mut rng);
        assert!(d.times.windows(2).all(|w| w[0] >= w[1]));
        assert!(d.times.iter().all(|x| (0.0..=t).contains(x)));
        sums[d.order] += d.weight;
        sq[d.order] += d.weight * d.weight;
        if d.order == 1 {
            first_time.0 += d.times[0];
            first_time.1 += 1;
        }
    }
    for k in 0..probs.len() {
        // E[weight · 1{order = k}] = t^k / k!.
        let mean = sums[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = t.powi(k as i32) / (1..=k).map(|x| x as f64).product::<f64>();
        assert!((mean - exact).abs() < 3.0 * se + 1e-12, "k={k}: {mean} vs {exact} (se {se})");
    }
    let mean_time = first_time.0 / first_time.1 as f64;
    assert!((mean_time - t / 2.0).abs() < 0.01, "{mean_time}");
}

#[test]
fn schedule_weights_are_unbiased_at_intermediate_times() {
    let probs = SeriesConfig::default().order_probabilities().unwrap();
    let (t_max, t) = (10.0, 3.0);
    let n = 400_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut sums = vec![0.0; probs.len()];
    let mut sq = vec![0.0; probs.len()];
    for _ in 0..n {
        let s = JumpSchedule::draw(&probs, t_max, &mut rng);
        let k = s.times.iter().filter(|&&x| x <= t).count();
        let w = s.weight_at(k, t);
        sums[k] += w;
        sq[k] += w * w;
    }
    for k in 0..probs.len() {
        let mean = sums[k] / n as f64;
        let se = ((sq[k] / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = t.powi(k as i32) / (1..=k).map(|x| x as f64).product::<f64>();
        assert!((mean - exact).abs() < 3.0 * se + 1e-12, "k={k}: {mean} vs {exact} (se {se})");
    }
}

#[test]
fn quadratic_potentials_reduce_to_the_classical_term() {
    let v = PotentialSpec::harmonic(1.0).build::<1>().unwrap();
    let kernel = JumpKernel::new(&v, 0.1, None);
    let phi = FnFunctional::new(2, |b: &PhasePoint<1>, t: &PhasePoint<1>, out: &mut [f64]| {
        out[0] = b.q[0] * t.q[0];
        out[1] = b.p[0];
    });
    let t = [0.0, 0.5, 2.0, 7.0];
    let init = Packet { x0: 0.8, s: 1.0 };
    let full = SeriesConfig { budget: 500, dt: 1e-3, ..Default::default() };
    let classical = SeriesConfig { max_order: 0, ..full.clone() };
    let a = estimate_functional(&v, &kernel, &phi, &t, &init, &full).unwrap();
    let b = estimate_functional(&v, &kernel, &phi, &t, &init, &classical).unwrap();
    assert_eq!(a.series(0), b.series(0));
    assert_eq!(a.series(1), b.series(1));
}

#[test]
fn estimates_do_not_depend_on_the_worker_count() {
    let v = PotentialSpec::default().build::<1>().unwrap();
    let kernel = JumpKernel::new(&v, 0.1, None);
    let phi = FnFunctional::new(1, |b: &PhasePoint<1>, _t: &PhasePoint<1>, out: &mut [f64]| {
        out[0] = b.q[0] * b.q[0];
    });
    let t = [0.0, 0.2, 0.4];
    let cfg = SeriesConfig { budget: 2_000, dt: 2e-3, ..Default::default() };
    let init = Packet { x0: 0.0, s: 0.3 };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_functional(&v, &kernel, &phi, &t, &init, &cfg).unwrap().series(0))
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn short_time_moments_match_wavepacket_propagation() {
    // A packet centered on the narrow barrier, where the nonlocal kernel is
    // strongest. The bar branch runs at half speed, so grid time t compares
    // with the wavefunction at t/2.
    let spec = PotentialSpec::default();
    let v = spec.build::<1>().unwrap();
    let kernel = JumpKernel::new(&v, 0.1, None);
    let (x0, s) = (0.0, 0.3);
    let phi = FnFunctional::new(2, |b: &PhasePoint<1>, _t: &PhasePoint<1>, out: &mut [f64]| {
        out[0] = b.q[0] * b.q[0];
        out[1] = b.p[0] * b.p[0];
    });
    let t = [0.0, 0.1, 0.2, 0.3];
    let cfg = SeriesConfig { budget: 200_000, dt: 2e-3, ..Default::default() };
    let est = estimate_functional(&v, &kernel, &phi, &t, &Packet { x0, s }, &cfg).unwrap();
    let grid = default_grid(&spec);
    let so = SplitOperator::new(&|x| v.v(x), grid);
    let mut psi = gaussian_packet(&grid, x0, 0.0, s);
    let mut now = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        so.propagate(&mut psi, ti / 2.0 - now, 0.002);
        now = ti / 2.0;
        let exact = [expectation(&grid, &psi, &|x| x * x), momentum_expectation(&grid, &psi, &|p| p * p)];
        for a in 0..2 {
            let s = est.series(a);
            assert!(
                (s.value[i] - exact[a]).abs() <= 3.0 * s.stderr[i],
                "t={ti} component {a}: {} ± {} vs {}",
                s.value[i],
                s.stderr[i],
                exact[a]
            );
        }
    }
}
