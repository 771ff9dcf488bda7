//! Subcommand implementations.

use std::fmt::Write as _;
use std::io::BufReader;

use wignerflux::jumpseries::{estimate_average_operator, trace_path, FnFunctional, ShellEnsemble, TimeSeries};
use wignerflux::kernel::JumpKernel;
use wignerflux::microcanon::{read_samples, sample_shell, write_samples, ShellSample};
use wignerflux::model::{PhasePoint, Potential, PotentialSpec};
use wignerflux::observables::{
    annotate_peaks, corr_flux_eta_estimate, default_eps, default_smear, dispersions, find_peaks, flux_eta_phi,
    level_differences, semiclassical_levels, spectrum_of,
};
use wignerflux::oracle::{diagonalize, EigenSystem};
use wignerflux::waveprop::{foci, gaussian_beam_wigner, scan, scan_with_scattering, BeamMoments};
use wignerflux::Branch;

use crate::config::{Loaded, ObservableKind, ObservableSection, RunConfig};
use crate::error::CliError;
use crate::output::{fmt, read_series, series_csv, Sink};

pub struct Options {
    pub dump_trajectories: usize,
}

fn build(spec: &PotentialSpec) -> Result<Potential<1>, CliError> {
    Ok(spec.build::<1>()?)
}

fn smear_of(obs: &ObservableSection, spec: &PotentialSpec) -> f64 {
    obs.smear.unwrap_or_else(|| default_smear(spec))
}

/// Shell samples from the configured input file, or sampled afresh.
fn shell_samples(cfg: &RunConfig, v: &Potential<1>) -> Result<Vec<ShellSample<1>>, CliError> {
    let sh = cfg.shell()?;
    match &sh.input {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let s = read_samples::<1, _>(BufReader::new(f))?;
            if s.is_empty() {
                return Err(CliError::Config(format!("{}: no shell samples", path.display())));
            }
            Ok(s)
        }
        None => Ok(sample_shell(v, &sh.to_config(cfg.seed))?.samples),
    }
}

pub fn sample(loaded: &Loaded, sink: &mut Sink) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let spec = cfg.potential()?;
    let v = build(spec)?;
    let sh = cfg.shell()?;
    let run = sample_shell(&v, &sh.to_config(cfg.seed))?;
    let mut body = Vec::new();
    let columns = vec!["columns: p q weight H".to_string()];
    write_samples(&mut body, &v, &run.samples, &columns)?;
    let text = String::from_utf8(body).expect("ascii output");
    let path = sink.write("shell.txt", &text)?;
    let n = run.samples.len();
    let left = run.samples.iter().filter(|s| s.point.q[0] < 0.0).count();
    let drift = run
        .samples
        .iter()
        .map(|s| (v.hamiltonian(&s.point) - sh.energy).abs() / sh.energy.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(format!(
        "{n} samples -> {}\n  q < 0: {left}/{n}\n  max |H-E|/|E|: {drift:.3e}\n  period {:.6}, stride {:.6}, burn-in {:.3}, skipped {}",
        path.display(),
        run.diagnostics.period,
        run.diagnostics.stride,
        run.diagnostics.burn_in,
        run.diagnostics.skipped
    ))
}

fn average_symbol(kind: ObservableKind) -> fn(&PhasePoint<1>) -> f64 {
    match kind {
        ObservableKind::Position => |x| x.q[0],
        ObservableKind::PositionSq => |x| x.q[0] * x.q[0],
        ObservableKind::Momentum => |x| x.p[0],
        ObservableKind::MomentumSq => |x| x.p[0] * x.p[0],
        ObservableKind::FluxEta => unreachable!("flux correlation is not a single-point average"),
    }
}

/// Runs the configured estimator and writes its CSV files.
fn estimate_series(loaded: &Loaded, sink: &mut Sink, opts: &Options) -> Result<(TimeSeries, String), CliError> {
    let cfg = &loaded.config;
    let spec = cfg.potential()?;
    let v = build(spec)?;
    let obs = cfg.observable()?;
    let t = obs
        .t_grid
        .ok_or_else(|| CliError::Config("[observable] needs t_grid".into()))?
        .points()?;
    let series_cfg = cfg.series()?;
    let samples = shell_samples(cfg, &v)?;
    let kernel = JumpKernel::new(&v, series_cfg.compensator_fraction, series_cfg.jump_scale);
    let ens = ShellEnsemble::new(&samples, cfg.shell()?.measure);
    let mut notes = String::new();
    let series = match obs.kind {
        ObservableKind::FluxEta => {
            let smear = smear_of(obs, spec);
            let est = corr_flux_eta_estimate(&v, &kernel, &ens, &t, smear, &series_cfg)?;
            let mut orders = String::from("order,t,value,stderr\n");
            for b in est.order_breakdown(0) {
                for i in 0..t.len() {
                    let _ = writeln!(orders, "{},{},{},{}", b.order, fmt(t[i]), fmt(b.value[i]), fmt(b.stderr[i]));
                }
            }
            sink.write("correlation_orders.csv", &orders)?;
            let _ = write!(notes, "{} paths, status {:?}, smear {smear}", est.paths, est.status);
            if opts.dump_trajectories > 0 {
                let phi = FnFunctional::new(1, move |b: &PhasePoint<1>, t: &PhasePoint<1>, out: &mut [f64]| {
                    out[0] = flux_eta_phi(b, t, smear);
                });
                dump_trajectories(sink, &v, &kernel, &phi, &t, &ens, &series_cfg, opts.dump_trajectories)?;
            }
            est.series(0)
        }
        kind => {
            let s = estimate_average_operator(&v, &kernel, average_symbol(kind), &t, &ens, &series_cfg)?;
            let _ = write!(notes, "{} shell samples, status {:?}", samples.len(), s.status);
            s
        }
    };
    sink.write("correlation.csv", &series_csv(&series))?;
    Ok((series, notes))
}

#[allow(clippy::too_many_arguments)]
fn dump_trajectories(
    sink: &mut Sink,
    v: &Potential<1>,
    kernel: &JumpKernel<1>,
    phi: &(dyn wignerflux::jumpseries::PairFunctional<1> + Sync),
    t: &[f64],
    ens: &ShellEnsemble<'_, 1>,
    series_cfg: &wignerflux::SeriesConfig,
    count: usize,
) -> Result<(), CliError> {
    let mut out = String::from("path,t,order,omega,value,bar_p,bar_q,tilde_p,tilde_q,jumps\n");
    for index in 0..count.min(series_cfg.budget) {
        let trace = trace_path(v, kernel, phi, t, ens, series_cfg, index)?;
        for (ti, pair, outcome) in &trace.anchors {
            let jumps: Vec<String> = pair
                .jumps
                .iter()
                .map(|j| {
                    let b = if j.branch == Branch::Bar { "bar" } else { "tilde" };
                    format!("{b}@{:.6e}:{:.6e}", j.tau, j.jump[0])
                })
                .collect();
            let _ = writeln!(
                out,
                "{index},{},{},{},{},{},{},{},{},{}",
                fmt(t[*ti]),
                outcome.order,
                fmt(outcome.omega),
                fmt(outcome.values[0]),
                fmt(pair.bar.p[0]),
                fmt(pair.bar.q[0]),
                fmt(pair.tilde.p[0]),
                fmt(pair.tilde.q[0]),
                jumps.join(" ")
            );
        }
    }
    sink.write("trajectories.csv", &out)?;
    Ok(())
}

pub fn correlate(loaded: &Loaded, sink: &mut Sink, opts: &Options) -> Result<String, CliError> {
    let (s, notes) = estimate_series(loaded, sink, opts)?;
    let worst = (0..s.len())
        .filter(|&i| s.stderr[i] > 0.0)
        .map(|i| s.value[i].abs() / s.stderr[i])
        .fold(0.0, f64::max);
    Ok(format!("{} time points; {notes}; max |value|/SE {worst:.2}", s.len()))
}

fn oracle_system(cfg: &RunConfig, spec: &PotentialSpec, v: &Potential<1>) -> Result<EigenSystem, CliError> {
    let o = cfg.oracle()?;
    Ok(diagonalize(&|x| v.v(x), o.grid(spec)?, &o.options())?)
}

pub fn spectrum(loaded: &Loaded, sink: &mut Sink, opts: &Options) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let obs = cfg.observable()?;
    let omega = obs
        .omega_grid
        .ok_or_else(|| CliError::Config("[observable] needs omega_grid".into()))?
        .points()?;
    let series = match &obs.input {
        Some(path) => read_series(path)?,
        None => estimate_series(loaded, sink, opts)?.0,
    };
    let t_max = *series.t.last().ok_or_else(|| CliError::Config("empty time series".into()))?;
    let eps = obs.eps.unwrap_or_else(|| default_eps(t_max));
    let k = spectrum_of(&series, eps, &omega)?;
    let mut csv = String::from("omega,re,im,power,stderr\n");
    for i in 0..k.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            fmt(k.omega[i]),
            fmt(k.k[i].re),
            fmt(k.k[i].im),
            fmt(k.power[i]),
            fmt(k.stderr[i])
        );
    }
    sink.write("spectrum.csv", &csv)?;
    let peaks = find_peaks(&k);
    let references = match &cfg.oracle {
        Some(_) => {
            let spec = cfg.potential()?;
            let eig = oracle_system(cfg, spec, &build(spec)?)?;
            Some(level_differences(&eig.energies))
        }
        None => None,
    };
    let mut report = format!("eps: {eps}\nbin: {}\npeaks: {}\n", k.bin(), peaks.len());
    match &references {
        Some(r) => {
            for p in annotate_peaks(&peaks, r) {
                let _ = writeln!(
                    report,
                    "omega {} height {} nearest_level_difference {} deviation {}",
                    fmt(p.omega),
                    fmt(p.height),
                    p.nearest.map(fmt).unwrap_or_else(|| "none".into()),
                    p.deviation.map(fmt).unwrap_or_else(|| "none".into())
                );
            }
        }
        None => {
            for p in &peaks {
                let _ = writeln!(report, "omega {} height {}", fmt(p.omega), fmt(p.height));
            }
        }
    }
    sink.write("peaks.txt", &report)?;
    Ok(format!("{} frequencies, {} peaks, eps {eps:.4e}", k.len(), peaks.len()))
}

pub fn disperse(loaded: &Loaded, sink: &mut Sink) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let spec = cfg.potential()?;
    let v = build(spec)?;
    let t = cfg
        .observable()?
        .t_grid
        .ok_or_else(|| CliError::Config("[observable] needs t_grid".into()))?
        .points()?;
    let series_cfg = cfg.series()?;
    let samples = shell_samples(cfg, &v)?;
    let kernel = JumpKernel::new(&v, series_cfg.compensator_fraction, series_cfg.jump_scale);
    let ens = ShellEnsemble::new(&samples, cfg.shell()?.measure);
    let d = dispersions(&v, &kernel, &ens, &t, &series_cfg)?;
    sink.write("position_dispersion.csv", &series_csv(&d.position))?;
    sink.write("momentum_dispersion.csv", &series_csv(&d.momentum))?;
    let (lo, hi) = d
        .position
        .value
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(format!("{} time points, {} paths; position dispersion in [{lo:.4e}, {hi:.4e}]", t.len(), d.estimate.paths))
}

pub fn oracle(loaded: &Loaded, sink: &mut Sink) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let spec = cfg.potential()?;
    let v = build(spec)?;
    let eig = oracle_system(cfg, spec, &v)?;
    let mut levels = String::from("index,energy\n");
    for (i, e) in eig.energies.iter().enumerate() {
        let _ = writeln!(levels, "{i},{}", fmt(*e));
    }
    sink.write("levels.csv", &levels)?;
    let mut summary = format!(
        "{} levels, orthonormality error {:.2e}, residual {:.2e}",
        eig.len(),
        eig.max_orthonormality_error(),
        eig.max_residual()
    );
    if let Some(top) = eig.energies.last() {
        if let Ok(sc) = semiclassical_levels(&v, *top) {
            let mut text = String::from("n,energy,region\n");
            for l in &sc {
                let _ = writeln!(text, "{},{},{:?}", l.n, fmt(l.energy), l.region);
            }
            sink.write("semiclassical.csv", &text)?;
            let _ = write!(summary, "; {} semiclassical levels", sc.len());
        }
    }
    let o = cfg.oracle()?;
    if let (Some(obs), Some(energy)) = (&cfg.observable, o.energy) {
        if let Some(grid) = obs.t_grid {
            let t = grid.points()?;
            let series = match obs.kind {
                ObservableKind::FluxEta => eig.exact_correlation(smear_of(obs, spec), energy, o.eps_e, &t)?,
                ObservableKind::Position => {
                    let m = eig.microcanonical_average(&|x| x, energy, o.eps_e)?;
                    TimeSeries::exact(t.clone(), vec![m; t.len()])
                }
                ObservableKind::PositionSq => {
                    let m = eig.microcanonical_average(&|x| x * x, energy, o.eps_e)?;
                    TimeSeries::exact(t.clone(), vec![m; t.len()])
                }
                _ => return Err(CliError::Config("oracle series supports flux-eta, position and position-sq".into())),
            };
            sink.write("exact_correlation.csv", &series_csv(&series))?;
            let _ = write!(summary, "; exact series at E = {energy}");
        }
        if let (ObservableKind::FluxEta, Some(grid)) = (obs.kind, obs.omega_grid) {
            let omega = grid.points()?;
            let t_max = obs.t_grid.map(|g| g.stop).unwrap_or(100.0);
            let eps = obs.eps.unwrap_or_else(|| default_eps(t_max));
            let k = eig.exact_spectrum(smear_of(obs, spec), energy, o.eps_e, &omega, eps)?;
            let mut csv = String::from("omega,re,im,power\n");
            for (w, z) in omega.iter().zip(&k) {
                let _ = writeln!(csv, "{},{},{},{}", fmt(*w), fmt(z.re), fmt(z.im), fmt(z.norm_sqr()));
            }
            sink.write("exact_spectrum.csv", &csv)?;
        }
    }
    Ok(summary)
}

fn moments_csv(m: &[BeamMoments]) -> String {
    let d = m.first().map(|x| x.centroid.len()).unwrap_or(0);
    let mut out = String::from("z");
    for k in 0..d {
        let _ = write!(out, ",centroid_{k}");
    }
    for k in 0..d {
        let _ = write!(out, ",centroid_{k}_stderr");
    }
    out.push_str(",beta,beta_stderr\n");
    for x in m {
        out.push_str(&fmt(x.z));
        for c in x.centroid.iter().chain(&x.centroid_stderr) {
            out.push(',');
            out.push_str(&fmt(*c));
        }
        let _ = writeln!(out, ",{},{}", fmt(x.beta), fmt(x.beta_stderr));
    }
    out
}

fn run_beam<const D: usize>(cfg: &RunConfig) -> Result<Vec<BeamMoments>, CliError> {
    let b = cfg.beam()?;
    b.profile.validate()?;
    let arr = |v: &[f64], what: &str| -> Result<[f64; D], CliError> {
        v.try_into()
            .map_err(|_| CliError::Config(format!("beam {what} needs {D} components")))
    };
    let center = arr(&b.center, "center")?;
    let tilt = match &b.tilt {
        Some(t) => arr(t, "tilt")?,
        None => [0.0; D],
    };
    let beam = gaussian_beam_wigner::<D>(b.waist, center, tilt, b.n_rays, cfg.seed)?;
    let z = b.z_grid.points()?;
    Ok(if b.scatter {
        scan_with_scattering(&b.profile, &beam, &z, b.dz, &cfg.series()?)?
    } else {
        scan(&b.profile, &beam, &z, b.dz)?
    })
}

pub fn beam(loaded: &Loaded, sink: &mut Sink) -> Result<String, CliError> {
    let cfg = &loaded.config;
    let m = match cfg.beam()?.profile.dims() {
        1 => run_beam::<1>(cfg)?,
        2 => run_beam::<2>(cfg)?,
        d => return Err(CliError::Config(format!("beam profiles support 1 or 2 transverse dimensions, got {d}"))),
    };
    sink.write("moments.csv", &moments_csv(&m))?;
    let f = foci(&m);
    let mut report = format!("foci: {}\n", f.len());
    for (z, beta) in &f {
        let _ = writeln!(report, "z {} beta {}", fmt(*z), fmt(*beta));
    }
    sink.write("foci.txt", &report)?;
    Ok(format!("{} planes, {} foci", m.len(), f.len()))
}
