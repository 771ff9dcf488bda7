use wignerflux::jumpseries::SeriesConfig;
use wignerflux::oracle::{expectation, gaussian_packet, Grid, SplitOperator};
use wignerflux::waveprop::{
    beam_moments, foci, gaussian_beam_wigner, propagate_rays, scan, scan_with_scattering, MediumProfile,
};

fn axis_stats(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.clone().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (mean, var, ((m4 - var * var) / n).sqrt())
}

#[test]
fn sampled_beam_has_the_minimum_uncertainty_widths() {
    let w0 = 1.5;
    let beam = gaussian_beam_wigner::<2>(w0, [21.0, 21.0], [0.0, 0.0], 100_000, 8).unwrap();
    for k in 0..2 {
        let (mq, vq, eq) = axis_stats(beam.rays.iter().map(|r| r.q[k]));
        let (_, vp, ep) = axis_stats(beam.rays.iter().map(|r| r.p[k]));
        assert!((vq - w0 * w0 / 2.0).abs() < 3.0 * eq, "{vq} ± {eq}");
        assert!((vp - 1.0 / (2.0 * w0 * w0)).abs() < 3.0 * ep, "{vp} ± {ep}");
        let se_prod = ((eq * vp).powi(2) + (ep * vq).powi(2)).sqrt();
        assert!((vq * vp - 0.25).abs() < 3.0 * se_prod);
        assert!((mq - 21.0).abs() < 3.0 * (vq / 1e5).sqrt());
    }
    let m = beam_moments(&beam).unwrap();
    for k in 0..2 {
        assert!((m.centroid[k] - 21.0).abs() < 3.0 * m.centroid_stderr[k]);
    }
}

#[test]
fn free_space_width_grows_quadratically() {
    let w0 = 1.0;
    let beam = gaussian_beam_wigner::<2>(w0, [0.0, 0.0], [0.0, 0.0], 20_000, 9).unwrap();
    let z: Vec<f64> = (0..=10).map(|i| i as f64 * 2.0).collect();
    let m = scan(&MediumProfile::Free { dims: 2 }, &beam, &z, 0.05).unwrap();
    // Sample-level exactness: β(z) = β(0) + 2z Cov(Q,P) + z² Var(P), summed over axes.
    let (mut vq, mut c, mut vp) = (0.0, 0.0, 0.0);
    let n = beam.rays.len() as f64;
    for k in 0..2 {
        let mq = beam.rays.iter().map(|r| r.q[k]).sum::<f64>() / n;
        let mp = beam.rays.iter().map(|r| r.p[k]).sum::<f64>() / n;
        vq += beam.rays.iter().map(|r| (r.q[k] - mq).powi(2)).sum::<f64>() / n;
        vp += beam.rays.iter().map(|r| (r.p[k] - mp).powi(2)).sum::<f64>() / n;
        c += beam.rays.iter().map(|r| (r.q[k] - mq) * (r.p[k] - mp)).sum::<f64>() / n;
    }
    for mi in &m {
        let fit = vq + 2.0 * mi.z * c + mi.z * mi.z * vp;
        assert!((mi.beta / fit - 1.0).abs() < 1e-10, "z={}: {} vs {fit}", mi.z, mi.beta);
        let ideal = w0 * w0 + mi.z * mi.z / (w0 * w0);
        assert!((mi.beta / ideal - 1.0).abs() < 0.03, "z={}: {} vs {ideal}", mi.z, mi.beta);
    }
    assert!(foci(&m).is_empty());
}

#[test]
fn parabolic_medium_refocuses_after_one_period() {
    let alpha = 0.5;
    let profile = MediumProfile::ParabolicIndex { alpha, center: vec![0.0, 0.0] };
    // Mismatched waist so the width breathes.
    let beam = gaussian_beam_wigner::<2>(0.7, [0.3, -0.2], [0.0, 0.0], 5_000, 10).unwrap();
    let period = 2.0 * std::f64::consts::PI / alpha;
    let z: Vec<f64> = (0..=40).map(|i| i as f64 * period / 20.0).collect();
    let m = scan(&profile, &beam, &z, 0.01).unwrap();
    assert!((m[20].beta / m[0].beta - 1.0).abs() < 0.01, "{} vs {}", m[20].beta, m[0].beta);
    assert!((m[40].beta / m[0].beta - 1.0).abs() < 0.01);
    // Widths breathe at twice the ray frequency: minima at z = 0, P/2, P, … .
    let interior: Vec<f64> = foci(&m).iter().map(|f| f.0).collect();
    assert!(!interior.is_empty());
    for zf in interior {
        let k = (zf / (period / 2.0)).round();
        assert!((zf - k * period / 2.0).abs() <= period / 20.0 + 1e-12, "{zf}");
    }
}

#[test]
fn ray_weights_are_conserved_without_scattering() {
    let profile = MediumProfile::GaussianIndex { eps0: 0.3, center: vec![0.0], width: 2.0 };
    let beam = gaussian_beam_wigner::<1>(1.0, [0.5], [0.0], 1_000, 11).unwrap();
    let out = propagate_rays(&profile, &beam, 5.0, 0.01).unwrap();
    assert_eq!(out.total_weight(), beam.total_weight());
}

#[test]
fn scattering_beam_tracks_the_paraxial_wave_equation() {
    // A shallow Gaussian index bump; short range keeps the weights tame.
    let (eps0, width) = (0.1, 0.6);
    let profile = MediumProfile::GaussianIndex { eps0, center: vec![0.0], width };
    let (w0, x0) = (0.8, 0.3);
    let beam = gaussian_beam_wigner::<1>(w0, [x0], [0.0], 200_000, 12).unwrap();
    let z = [0.0, 0.5, 1.0, 1.5];
    let cfg = SeriesConfig { seed: 13, ..Default::default() };
    let m = scan_with_scattering(&profile, &beam, &z, 0.005, &cfg).unwrap();

    let grid = Grid::new(-30.0, 30.0, 4096).unwrap();
    let v = move |x: f64| -eps0 * (-(x * x) / (width * width)).exp();
    let so = SplitOperator::new(&v, grid);
    let mut psi = gaussian_packet(&grid, x0, 0.0, w0);
    let mut now = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        so.propagate(&mut psi, zi - now, 0.002);
        now = zi;
        let mean = expectation(&grid, &psi, &|x| x);
        let beta = expectation(&grid, &psi, &|x| x * x) - mean * mean;
        let mi = &m[i];
        assert!(
            (mi.beta - beta).abs() <= 3.0 * mi.beta_stderr + 1e-12,
            "z={zi}: {} ± {} vs {beta}",
            mi.beta,
            mi.beta_stderr
        );
        assert!((mi.centroid[0] - mean).abs() <= 3.0 * mi.centroid_stderr[0] + 1e-12);
    }
}
