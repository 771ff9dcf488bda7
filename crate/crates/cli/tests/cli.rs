use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wignerflux"));
    c.env_remove("WIGNERFLUX_OUTPUT_DIR").env_remove("WIGNERFLUX_WORKERS");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip_while(|l| l.chars().next().is_some_and(|c| c.is_ascii_alphabetic()))
        .map(|l| {
            l.split([',', ' '])
                .filter(|c| !c.is_empty())
                .map(|c| c.parse().unwrap())
                .collect()
        })
        .collect()
}

const SHELL: &str = r#"
seed = 11
[potential]
kind = "double-well"
[shell]
energy = -0.92
n_samples = 500
"#;

#[test]
fn sample_is_left_supported_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SHELL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["sample", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let fa = std::fs::read(a.join("shell.txt")).unwrap();
    assert_eq!(fa, std::fs::read(b.join("shell.txt")).unwrap());
    let rows = data_rows(&a.join("shell.txt"));
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().all(|r| r[1] < 0.0));
    let text = String::from_utf8(fa).unwrap();
    assert!(text.contains("# seed: 11\n"));
    assert!(text.contains("# config-sha256: "));
}

#[test]
fn zero_samples_give_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", &SHELL.replace("n_samples = 500", "n_samples = 0"));
    let o = run(&["sample", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    assert!(data_rows(&dir.path().join("out/shell.txt")).is_empty());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SHELL);
    let target = dir.path().join("from_env");
    let o = bin()
        .args(["sample", cfg.to_str().unwrap()])
        .env("WIGNERFLUX_OUTPUT_DIR", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let names: Vec<_> = std::fs::read_dir(&target).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("shell.txt")]);
}

fn correlate_config(order: usize) -> String {
    format!(
        r#"{SHELL}
[series]
max_order = {order}
budget = 500
dt = 2e-3
[observable]
kind = "flux-eta"
t_grid = {{ start = 0.0, stop = 5.0, n = 11 }}
"#
    )
}

#[test]
fn classical_correlation_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &correlate_config(0));
    let o = run(&["correlate", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for r in data_rows(&dir.path().join("out/correlation.csv")) {
        assert!(r[1].abs() <= 3.0 * r[2], "{r:?}");
    }
}

#[test]
fn correlation_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &correlate_config(4).replace("stop = 5.0", "stop = 0.5"));
    let mut files = Vec::new();
    for w in ["1", "2"] {
        let out = dir.path().join(format!("w{w}"));
        let o = run(
            &["correlate", cfg.to_str().unwrap(), "--workers", w, "--output-dir", out.to_str().unwrap(), "--dump-trajectories", "3"],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        files.push(std::fs::read(out.join("correlation.csv")).unwrap());
        assert!(out.join("trajectories.csv").exists());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn spectrum_of_oracle_series_annotates_level_differences() {
    let dir = tempfile::tempdir().unwrap();
    let oracle = write_config(
        dir.path(),
        "o.toml",
        r#"
[potential]
kind = "double-well"
[oracle]
e_max = 0.0
decay_check_max_energy = -0.05
energy = -0.92
[observable]
t_grid = { start = 0.0, stop = 100.0, n = 2001 }
[output]
directory = "oracle"
"#,
    );
    assert!(run(&["oracle", oracle.to_str().unwrap()], dir.path()).status.success());
    let levels = data_rows(&dir.path().join("oracle/levels.csv"));
    assert!(levels.len() >= 2 && levels[0][1] < levels[1][1]);
    let spec = write_config(
        dir.path(),
        "s.toml",
        r#"
[potential]
kind = "double-well"
[oracle]
e_max = 0.0
decay_check_max_energy = -0.05
[observable]
input = "oracle/exact_correlation.csv"
omega_grid = { start = -1.0, stop = 1.0, n = 401 }
[output]
directory = "spectrum"
"#,
    );
    let o = run(&["spectrum", spec.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("spectrum/peaks.txt")).unwrap();
    let peaks: Vec<&str> = report.lines().filter(|l| l.starts_with("omega")).collect();
    assert!(!peaks.is_empty());
    for p in peaks {
        let dev: f64 = p.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(dev <= 0.07, "{p}");
    }
}

#[test]
fn free_beam_width_follows_the_ballistic_law() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.toml",
        r#"
seed = 3
[beam]
waist = 1.0
center = [0.0, 0.0]
n_rays = 20000
dz = 0.05
z_grid = { start = 0.0, stop = 10.0, n = 21 }
[beam.profile]
kind = "free"
dims = 2
"#,
    );
    let o = run(&["beam", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&dir.path().join("out/moments.csv"));
    // columns: z, c0, c1, se0, se1, beta, beta_se
    let (z, beta): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r[0], r[5])).unzip();
    let x: Vec<f64> = z.iter().map(|z| z * z).collect();
    // Least squares on relative residuals, weights 1/β².
    let (mut s0, mut s1, mut s2, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(&beta) {
        let w = 1.0 / (b * b);
        s0 += w;
        s1 += w * a;
        s2 += w * a * a;
        r0 += w * b;
        r1 += w * a * b;
    }
    let det = s0 * s2 - s1 * s1;
    let (icept, slope) = ((r0 * s2 - r1 * s1) / det, (s0 * r1 - s1 * r0) / det);
    for (a, b) in x.iter().zip(&beta) {
        assert!(((icept + slope * a) / b - 1.0).abs() < 0.01, "{icept} + {slope} z² vs {b} at z² = {a}");
    }
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["sample", "does-not-exist.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(3));

    let bad = write_config(dir.path(), "bad.toml", "seed = \"x\"");
    assert_eq!(run(&["sample", bad.to_str().unwrap()], dir.path()).status.code(), Some(1));

    let no_shell = write_config(dir.path(), "ns.toml", "[potential]\nkind = \"double-well\"");
    let o = run(&["sample", no_shell.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[shell]"));

    let below = write_config(dir.path(), "low.toml", &SHELL.replace("energy = -0.92", "energy = -2.0"));
    assert_eq!(run(&["sample", below.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn example_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(root).unwrap() {
        let text = std::fs::read_to_string(e.unwrap().path()).unwrap();
        let v: toml::Table = toml::from_str(&text).unwrap();
        assert!(v.contains_key("output"));
        n += 1;
    }
    assert_eq!(n, 6);
}
