//! Experiment orchestration: configs, seeds, artifacts and run manifests.
//!
//! Every experiment writes its data files plus `manifest.json` into the
//! output directory. Data files are byte-identical across re-runs of the same
//! config; the manifest additionally records wall-clock timing.

pub mod config;
mod experiments;
pub mod seed;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::{load_config, parse_config, ExperimentConfig, ExperimentId, OutputFormat};
pub use seed::derive_seed;

use crate::error::{Error, Result};

pub const DEFAULT_OUTPUT_DIR: &str = "branchlab-out";
pub const OUTPUT_ENV: &str = "BRANCHLAB_OUT";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured value; `None` if it is not finite.
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub name: String,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    pub checks: Vec<Check>,
    pub observations: Vec<Observation>,
    pub files: Vec<String>,
    pub passed: bool,
}

impl RunManifest {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Collects checks, observations and files while an experiment runs.
pub(crate) struct Recorder {
    out: PathBuf,
    format: OutputFormat,
    checks: Vec<Check>,
    observations: Vec<Observation>,
    files: Vec<String>,
}

pub(crate) fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl Recorder {
    fn new(out: PathBuf, format: OutputFormat) -> Self {
        Recorder { out, format, checks: Vec::new(), observations: Vec::new(), files: Vec::new() }
    }

    pub(crate) fn check(
        &mut self,
        name: &str,
        passed: bool,
        value: f64,
        tolerance: Option<f64>,
        detail: impl Into<String>,
    ) -> Result<()> {
        if self.checks.iter().any(|c| c.name == name) {
            return Err(Error::InvalidArgument(format!("check {name} recorded twice")));
        }
        self.checks.push(Check {
            name: name.into(),
            passed,
            value: value.is_finite().then_some(value),
            tolerance,
            detail: detail.into(),
        });
        Ok(())
    }

    pub(crate) fn observe<T: Serialize>(&mut self, name: &str, value: T) -> Result<()> {
        self.observations.push(Observation { name: name.into(), value: serde_json::to_value(value)? });
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.out.join(name), contents)?;
        self.files.push(name.into());
        Ok(())
    }

    /// Write a CSV file when the format includes CSV.
    pub(crate) fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        if !self.format.csv() {
            return Ok(());
        }
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        self.write(name, &s)
    }

    /// Write a JSON file when the format includes JSON.
    pub(crate) fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if !self.format.json() {
            return Ok(());
        }
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }
}

/// Resolve the output directory: explicit override, then `BRANCHLAB_OUT`, then
/// the config, then [`DEFAULT_OUTPUT_DIR`].
pub fn resolve_output_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|p| !p.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Run `config` with output in `config.output_dir` (or the default), honoring `config.serial`.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let out = config.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    run_in(config, &out)
}

pub fn run_in(config: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let started_unix_seconds = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let mut rec = Recorder::new(out.to_path_buf(), config.format);
    let body = |rec: &mut Recorder| experiments::dispatch(config, rec);
    if config.serial {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| body(&mut rec))?;
    } else {
        body(&mut rec)?;
    }
    let passed = rec.checks.iter().all(|c| c.passed);
    let mut files = rec.files;
    files.push(MANIFEST_FILE.into());
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        output_dir: out.to_path_buf(),
        started_unix_seconds,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        checks: rec.checks,
        observations: rec.observations,
        files,
        passed,
    };
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    std::fs::write(out.join(MANIFEST_FILE), s)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&text)).map_err(|e| Error::Config {
        path: format!("{}: {}", path.display(), e.path()),
        message: e.inner().to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub check: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub failed: Vec<String>,
    pub warning: Option<String>,
    pub exit_code: i32,
}

impl Summary {
    pub fn table(&self) -> String {
        let mut s = String::new();
        if let Some(w) = &self.warning {
            let _ = writeln!(s, "warning: {w}");
        }
        for r in &self.rows {
            let fmt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{} {}/{} value={} tolerance={}",
                if r.passed { "PASS" } else { "FAIL" },
                r.experiment,
                r.check,
                fmt(r.value),
                fmt(r.tolerance)
            );
        }
        s
    }
}

/// One row per check across all manifests; exit code 1 iff any check failed.
pub fn report_summary(manifests: &[RunManifest]) -> Summary {
    let rows: Vec<SummaryRow> = manifests
        .iter()
        .flat_map(|m| {
            m.checks.iter().map(move |c| SummaryRow {
                experiment: m.config.experiment.name().into(),
                check: c.name.clone(),
                passed: c.passed,
                value: c.value,
                tolerance: c.tolerance,
            })
        })
        .collect();
    let failed: Vec<String> = rows.iter().filter(|r| !r.passed).map(|r| format!("{}/{}", r.experiment, r.check)).collect();
    Summary {
        warning: manifests.is_empty().then(|| "no manifests given".to_string()),
        exit_code: if failed.is_empty() { 0 } else { 1 },
        rows,
        failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(checks: Vec<(&str, bool)>) -> RunManifest {
        RunManifest {
            artifact: "branchlab".into(),
            version: "0".into(),
            config: ExperimentConfig::new(ExperimentId::Finegrain),
            output_dir: PathBuf::from("x"),
            started_unix_seconds: 0,
            wall_clock_seconds: 0.0,
            passed: checks.iter().all(|c| c.1),
            checks: checks
                .into_iter()
                .map(|(n, p)| Check { name: n.into(), passed: p, value: Some(1.0), tolerance: None, detail: String::new() })
                .collect(),
            observations: vec![],
            files: vec![],
        }
    }

    #[test]
    fn summary_exit_codes() {
        let ok = report_summary(&[manifest(vec![("a", true), ("b", true)])]);
        assert_eq!(ok.exit_code, 0);
        assert_eq!(ok.rows.len(), 2);
        let bad = report_summary(&[manifest(vec![("a", true)]), manifest(vec![("b", false)])]);
        assert_eq!(bad.exit_code, 1);
        assert_eq!(bad.failed, vec!["finegrain/b".to_string()]);
        assert!(bad.table().contains("FAIL finegrain/b"));
        let empty = report_summary(&[]);
        assert_eq!(empty.exit_code, 0);
        assert!(empty.warning.is_some());
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Finegrain);
        cfg.output_dir = Some(PathBuf::from("from-config"));
        assert_eq!(resolve_output_dir(Some(Path::new("cli")), &cfg), PathBuf::from("cli"));
        if std::env::var_os(OUTPUT_ENV).is_none() {
            assert_eq!(resolve_output_dir(None, &cfg), PathBuf::from("from-config"));
        }
    }

    #[test]
    fn csv_numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 9.0e-300, -2.5e17, std::f64::consts::PI] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
