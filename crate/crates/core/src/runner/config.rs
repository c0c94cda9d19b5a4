//! Experiment configuration files (TOML or JSON).

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::born::LawSpec;
use crate::bohm::InitialDensity;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    BranchDemo,
    BornDerive,
    LargeN,
    Collapse,
    Finegrain,
    Bohm,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::BranchDemo,
        ExperimentId::BornDerive,
        ExperimentId::LargeN,
        ExperimentId::Collapse,
        ExperimentId::Finegrain,
        ExperimentId::Bohm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::BranchDemo => "branch-demo",
            ExperimentId::BornDerive => "born-derive",
            ExperimentId::LargeN => "large-n",
            ExperimentId::Collapse => "collapse",
            ExperimentId::Finegrain => "finegrain",
            ExperimentId::Bohm => "bohm",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub serial: bool,
    /// Experiment-specific table; missing keys take their defaults.
    #[serde(default)]
    pub params: Value,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        ExperimentConfig {
            experiment,
            master_seed: 0,
            output_dir: None,
            format: OutputFormat::Both,
            serial: false,
            params: Value::Null,
        }
    }

    /// Typed parameters for this experiment, with field paths in errors.
    pub fn params<T: DeserializeOwned + Default>(&self) -> Result<T> {
        if self.params.is_null() {
            return Ok(T::default());
        }
        serde_path_to_error::deserialize(&self.params).map_err(|e| Error::Config {
            path: format!("params.{}", e.path()),
            message: e.inner().to_string(),
        })
    }

    /// Check that `params` matches the schema of `experiment`.
    pub fn validate(&self) -> Result<()> {
        match self.experiment {
            ExperimentId::BranchDemo => self.params::<BranchDemoParams>().map(drop),
            ExperimentId::BornDerive => self.params::<BornDeriveParams>().map(drop),
            ExperimentId::LargeN => self.params::<LargeNParams>().map(drop),
            ExperimentId::Collapse => self.params::<CollapseExperimentParams>().map(drop),
            ExperimentId::Finegrain => self.params::<FinegrainParams>().map(drop),
            ExperimentId::Bohm => self.params::<BohmParams>().map(drop),
        }
    }
}

fn parse_document(text: &str, path: &Path) -> Result<Value> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let config_err = |message: String| Error::Config { path: path.display().to_string(), message };
    if is_json {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }
}

/// Parse a config document. A missing `experiment` key is filled from `default`.
pub fn parse_config(text: &str, path: &Path, default: Option<ExperimentId>) -> Result<ExperimentConfig> {
    let mut doc = parse_document(text, path)?;
    if let (Some(obj), Some(id)) = (doc.as_object_mut(), default) {
        obj.entry("experiment").or_insert_with(|| Value::String(id.name().into()));
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&doc).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, default: Option<ExperimentId>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path, default)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchDemoParams {
    /// Real branch amplitudes, normalized.
    pub amplitudes: Vec<f64>,
    pub hamiltonians: usize,
    pub rotations: usize,
    pub evolve_time: f64,
    /// Detector-overlap values for the misrecord sweep.
    pub overlap_epsilons: Vec<f64>,
}

impl Default for BranchDemoParams {
    fn default() -> Self {
        BranchDemoParams {
            amplitudes: vec![0.6, 0.8],
            hamiltonians: 50,
            rotations: 100,
            evolve_time: 1.0,
            overlap_epsilons: vec![0.0, 0.01, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BornDeriveParams {
    pub law: LawSpec,
    pub sizes: Vec<usize>,
    pub samples: usize,
    pub fd_step: f64,
    /// Auxiliary probes for the affine-family solve.
    pub probes: usize,
    pub aux_outcomes: usize,
    /// Amplitudes at which the Lagrange condition is evaluated.
    pub lagrange_point: Vec<f64>,
    /// Base and auxiliary amplitudes for the composition check.
    pub composition_a: Vec<f64>,
    pub composition_b: Vec<Vec<f64>>,
}

impl Default for BornDeriveParams {
    fn default() -> Self {
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        BornDeriveParams {
            law: LawSpec::Born,
            sizes: vec![2, 3, 5, 8],
            samples: 2000,
            fd_step: crate::born::DEFAULT_FD_STEP,
            probes: 6,
            aux_outcomes: 3,
            lagrange_point: vec![0.5f64.sqrt(), 0.3f64.sqrt(), 0.2f64.sqrt()],
            composition_a: vec![0.9f64.sqrt(), 0.1f64.sqrt()],
            composition_b: vec![vec![s2, s2], vec![s2, s2]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LargeNParams {
    pub big_n: u64,
    pub p: f64,
    /// Micro-law for the induced distribution and the run-by-run experiment.
    pub law: LawSpec,
    pub runs: u64,
    pub ratio_n1: u64,
    pub ratio_n2: u64,
    /// A quoted order of magnitude for the branch-count ratio, compared against the exact value.
    pub quoted_log10_ratio: f64,
    pub quoted_tolerance: f64,
    /// Size for the exact rational cross-check of the log-space weights.
    pub exact_check_n: u64,
}

impl Default for LargeNParams {
    fn default() -> Self {
        LargeNParams {
            big_n: 10_000,
            p: 0.9,
            law: LawSpec::Born,
            runs: 10_000,
            ratio_n1: 5_000,
            ratio_n2: 9_000,
            quoted_log10_ratio: 800.0,
            quoted_tolerance: 0.1,
            exact_check_n: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseExperimentParams {
    /// Real amplitude lists for the stochastic surrogate.
    pub amplitudes: Vec<Vec<f64>>,
    pub runs: u64,
    pub sigma: f64,
    pub dt: f64,
    pub max_steps: u64,
    pub record_every: u64,
    /// Random linear block families for the linearity theorem.
    pub families: usize,
    pub family_runs: usize,
    pub family_times: Vec<f64>,
    /// Distinct amplitude lists tried against each family.
    pub amplitude_lists: usize,
}

impl Default for CollapseExperimentParams {
    fn default() -> Self {
        let d = crate::collapse::CollapseParams::default();
        CollapseExperimentParams {
            amplitudes: vec![
                vec![0.9f64.sqrt(), 0.1f64.sqrt()],
                vec![0.5f64.sqrt(), 0.5f64.sqrt()],
                vec![0.5f64.sqrt(), 0.3f64.sqrt(), 0.2f64.sqrt()],
            ],
            runs: 10_000,
            sigma: d.sigma,
            dt: d.dt,
            max_steps: d.max_steps,
            record_every: d.record_every,
            families: 100,
            family_runs: 5,
            family_times: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            amplitude_lists: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinegrainParams {
    /// Rational weights written as `"p/q"`.
    pub weights: Vec<String>,
    /// 0-based branch pairs to test for swap admissibility.
    pub swaps: Vec<[usize; 2]>,
}

impl Default for FinegrainParams {
    fn default() -> Self {
        FinegrainParams { weights: vec!["3/5".into(), "2/5".into()], swaps: vec![[2, 3], [0, 1]] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BohmParams {
    /// `|a_1|²` values to test; amplitudes are real.
    pub weights: Vec<f64>,
    pub width: f64,
    pub velocity: f64,
    pub samples: usize,
    pub pairs: usize,
    pub dt: f64,
    /// Deliberately wrong initial density for the Born-violation check.
    pub nonequilibrium: InitialDensity,
    pub transport_bins: usize,
    pub transport_time: f64,
    pub probe_delta: f64,
}

impl Default for BohmParams {
    fn default() -> Self {
        BohmParams {
            weights: vec![0.9, 0.5],
            width: 1.0,
            velocity: 5.0,
            samples: 10_000,
            pairs: 1_000,
            dt: 0.05,
            nonequilibrium: InitialDensity::Shifted { shift: 1.0 },
            transport_bins: 50,
            transport_time: 1.0,
            probe_delta: 1e-3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults() {
        let cfg = parse_config("master_seed = 7\n[params]\nbig_n = 100\n", Path::new("x.toml"), Some(ExperimentId::LargeN))
            .unwrap();
        assert_eq!(cfg.experiment, ExperimentId::LargeN);
        let p: LargeNParams = cfg.params().unwrap();
        assert_eq!(p.big_n, 100);
        assert_eq!(p.p, 0.9);
    }

    #[test]
    fn json_with_law() {
        let text = r#"{"experiment": "born-derive", "params": {"law": {"kind": "odd_counterexample", "epsilon": 0.05}}}"#;
        let cfg = parse_config(text, Path::new("c.json"), None).unwrap();
        let p: BornDeriveParams = cfg.params().unwrap();
        assert_eq!(p.law, LawSpec::OddCounterexample { epsilon: 0.05 });
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse_config("[params]\nbig_n = \"many\"\n", Path::new("x.toml"), Some(ExperimentId::LargeN)).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "params.big_n"),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_config("[params]\nbogus = 1\n", Path::new("x.toml"), Some(ExperimentId::Bohm)).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        let err = parse_config("experiment = \"nope\"\n", Path::new("x.toml"), None).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "experiment"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trips() {
        let mut cfg = ExperimentConfig::new(ExperimentId::Collapse);
        cfg.params = serde_json::to_value(CollapseExperimentParams::default()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text, Path::new("c.json"), None).unwrap(), cfg);
    }
}
