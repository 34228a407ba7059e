//! TOML experiment configuration and its mapping onto library types.

use serde::{Deserialize, Serialize};

use rowfed::datagen::{IngestOptions, ScenarioSpec};
use rowfed::{PenaltyFamily, RunConfig, SamplingMode};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub tuning: TuningSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub realdata: Option<RealDataSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub clients: usize,
    pub samples: usize,
    pub covariates: usize,
    pub responses: usize,
    /// AR(1) parameter of the design covariance.
    pub sigma_x: f64,
    /// Error scale; the error rows carry a fixed AR(1) correlation of 0.5.
    pub sigma_e: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            clients: 10,
            samples: 100,
            covariates: 50,
            responses: 20,
            sigma_x: 0.5,
            sigma_e: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub penalty: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub rho0: f64,
    pub alpha: f64,
    pub tau: f64,
    pub rounds: usize,
    pub participation: f64,
    pub sampling: String,
    pub early_stop: bool,
    pub seed: u64,
    #[serde(default)]
    pub cluster_tol: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunConfig::default();
        Self {
            penalty: "mcp".into(),
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            gamma: d.gamma,
            rho0: d.rho0,
            alpha: d.alpha,
            tau: d.tau,
            rounds: d.rounds,
            participation: d.participation,
            sampling: "bernoulli".into(),
            early_stop: d.early_stop,
            seed: 0,
            cluster_tol: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    pub lambda1_grid: Vec<f64>,
    pub lambda2_grid: Vec<f64>,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self {
            lambda1_grid: vec![0.05, 0.2],
            lambda2_grid: vec![0.3, 0.5, 0.8],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub methods: Vec<String>,
    pub replications: usize,
    /// When set, the rowfed fit is tuned on the lambda grids per replication;
    /// otherwise `[run]`'s lambdas are used directly.
    #[serde(default = "default_true")]
    pub tune: bool,
    pub workers: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            methods: vec![
                "rowfed".into(),
                "nonfed".into(),
                "fedavg".into(),
                "oracle".into(),
            ],
            replications: 1,
            tune: true,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RealDataSection {
    pub path: String,
    pub client_key: String,
    pub responses: Vec<String>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default = "default_min_rows")]
    pub min_rows: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Write the scaled, imputed pooled table next to the other outputs.
    #[serde(default)]
    pub dump_normalized: bool,
}

fn default_knn_k() -> usize {
    5
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_min_rows() -> usize {
    3
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn scenario_spec(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            m: self.scenario.clients,
            n: self.scenario.samples,
            p: self.scenario.covariates,
            q: self.scenario.responses,
            seed,
            sigma_x: self.scenario.sigma_x,
            sigma_e: self.scenario.sigma_e,
        }
    }

    pub fn run_config(&self, seed: u64) -> anyhow::Result<RunConfig> {
        let penalty = match self.run.penalty.to_lowercase().as_str() {
            "l1" => PenaltyFamily::L1,
            "mcp" => PenaltyFamily::Mcp,
            "scad" => PenaltyFamily::Scad,
            other => anyhow::bail!("unknown penalty family '{other}' (expected l1|mcp|scad)"),
        };
        let sampling = match self.run.sampling.to_lowercase().as_str() {
            "bernoulli" => SamplingMode::Bernoulli,
            "fixed" | "fixed_size" => SamplingMode::FixedSize,
            other => anyhow::bail!("unknown sampling mode '{other}' (expected bernoulli|fixed)"),
        };
        let config = RunConfig {
            penalty,
            lambda1: self.run.lambda1,
            lambda2: self.run.lambda2,
            gamma: self.run.gamma,
            rho0: self.run.rho0,
            alpha: self.run.alpha,
            tau: self.run.tau,
            rounds: self.run.rounds,
            participation: self.run.participation,
            seed,
            sampling,
            early_stop: self.run.early_stop,
            cluster_tol: self.run.cluster_tol,
            ..RunConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn penalty_family(&self) -> anyhow::Result<PenaltyFamily> {
        Ok(self.run_config(0)?.penalty)
    }

    pub fn ingest_options(&self) -> anyhow::Result<IngestOptions> {
        let section = self
            .realdata
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("config has no [realdata] section"))?;
        let delim = section.delimiter.as_bytes();
        if delim.len() != 1 {
            anyhow::bail!("delimiter must be a single byte, got '{}'", section.delimiter);
        }
        Ok(IngestOptions {
            delimiter: delim[0],
            knn_k: section.knn_k,
            min_rows: section.min_rows,
        })
    }
}
