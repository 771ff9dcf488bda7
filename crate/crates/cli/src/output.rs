//! Output files: provenance headers and atomic writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;
use wignerflux::jumpseries::TimeSeries;

use crate::error::CliError;

/// Where and how a run writes its files.
pub struct Sink {
    pub dir: PathBuf,
    pub prefix: String,
    pub header: Vec<String>,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: PathBuf, prefix: String, command: &str, seed: u64, hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            prefix,
            header: vec![
                format!("wignerflux {}", env!("CARGO_PKG_VERSION")),
                format!("command: {command}"),
                format!("seed: {seed}"),
                format!("config-sha256: {hash}"),
            ],
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{}{name}", self.prefix))
    }

    /// Writes `body` under `name` via a temporary file in the same directory,
    /// so the final name only ever holds complete content.
    pub fn write(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = String::new();
        for h in &self.header {
            let _ = writeln!(text, "# {h}");
        }
        text.push_str(body);
        atomic_write(&path, text.as_bytes())?;
        self.written.push(path.clone());
        Ok(path)
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn series_csv(s: &TimeSeries) -> String {
    let mut out = String::from("t,value,stderr,n_effective\n");
    for i in 0..s.len() {
        let _ = writeln!(out, "{},{},{},{}", fmt(s.t[i]), fmt(s.value[i]), fmt(s.stderr[i]), fmt(s.n_effective[i]));
    }
    out
}

/// Reads a time series CSV: comment lines start with `#`, the first other
/// line is a header naming at least `t` and `value`.
pub fn read_series(path: &Path) -> Result<TimeSeries, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty series file", path.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| head.iter().position(|h| *h == name);
    let (ti, vi) = match (col("t"), col("value")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Config(format!("{}: header needs t and value columns", path.display()))),
    };
    let si = col("stderr");
    let (mut t, mut v, mut se) = (Vec::new(), Vec::new(), Vec::new());
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| -> Result<f64, CliError> {
            cells
                .get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| CliError::Config(format!("{}: bad row {}", path.display(), k + 2)))
        };
        t.push(get(ti)?);
        v.push(get(vi)?);
        se.push(match si {
            Some(i) => get(i)?,
            None => 0.0,
        });
    }
    let mut s = TimeSeries::exact(t, v);
    s.stderr = se;
    Ok(s)
}
