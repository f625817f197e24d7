//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use particle_gp::covfunc::Smoothness;
use particle_gp::gp::ModelSpec;
use particle_gp::systems::{builtin_system, SystemSpec};
use particle_gp::trainer::Backend;
use serde::{Deserialize, Serialize};

/// Bumped whenever the meaning of an existing key changes.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "current_version")]
    pub version: u32,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestConfig>,
}

fn current_version() -> u32 {
    CONFIG_VERSION
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            system: SystemConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            backend: Backend::Exact,
            output: OutputConfig::default(),
            predict: PredictConfig::default(),
            verify: VerifyConfig::default(),
            bench: BenchConfig::default(),
            ingest: None,
        }
    }
}

/// A built-in system by name (optionally with a different agent count) or a
/// fully specified custom one.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<SystemSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub m: usize,
    pub l: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { m: 3, l: 3, sigma: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Matérn smoothness of the energy prior (0.5 or 1.5).
    pub nu_e: f64,
    /// Matérn smoothness of the alignment prior (0.5 or 1.5).
    pub nu_a: f64,
    /// Train on the equations of these agents only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<usize>>,
    /// Learn the noise level; defaults to `data.sigma > 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_sigma: Option<bool>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { nu_e: 1.5, nu_a: 1.5, agents: None, train_sigma: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub max_evals: usize,
    pub restarts: usize,
    pub random_init: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { max_evals: 400, restarts: 1, random_init: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Points of the kernel evaluation grid on `[0, R]`.
    pub grid_size: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), grid_size: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Prediction horizon; the system's `T_f` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub n_times: usize,
    /// Posterior kernel draws per UQ ensemble.
    pub uq_samples: usize,
    /// Initial conditions (from the front of the dataset) that get an ensemble.
    pub uq_trajectories: usize,
    /// Also simulate the configured system and report errors against it.
    pub compare_truth: bool,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { horizon: None, n_times: 101, uq_samples: 20, uq_trajectories: 1, compare_truth: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub gradient_tol: f64,
    /// Noise floor for the gradient and GP/KRR checks.
    pub krr_sigma: f64,
    pub krr_tol: f64,
    pub krr_grid_size: usize,
    pub identity_tol: f64,
    /// Monte-Carlo configurations; about 10⁶ pairs when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coercivity_samples: Option<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-5,
            krr_sigma: 0.1,
            krr_tol: 1e-8,
            krr_grid_size: 50,
            identity_tol: 1e-10,
            coercivity_samples: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub system: String,
    pub n: usize,
    pub l: usize,
    pub ms: Vec<usize>,
    pub sigma: f64,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { system: "FM".into(), n: 20, l: 6, ms: vec![2, 4, 8, 10], sigma: 0.1, repeats: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub csv: PathBuf,
    pub d: usize,
    pub window: usize,
    pub dt: f64,
    #[serde(default)]
    pub normalize: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("config version {} is not supported (expected {CONFIG_VERSION})", self.version);
        }
        if self.output.grid_size < 2 {
            bail!("output.grid_size must be >= 2");
        }
        if self.system.name.is_some() && self.system.custom.is_some() {
            bail!("system.name and system.custom are mutually exclusive");
        }
        Smoothness::from_nu(self.model.nu_e)?;
        Smoothness::from_nu(self.model.nu_a)?;
        if let Some(ing) = &self.ingest {
            if !ing.csv.exists() {
                bail!("ingest.csv {} does not exist", ing.csv.display());
            }
        }
        Ok(())
    }

    pub fn system(&self) -> anyhow::Result<SystemSpec> {
        let mut spec = match (&self.system.name, &self.system.custom) {
            (Some(name), None) => builtin_system(name)?,
            (None, Some(spec)) => spec.clone(),
            _ => bail!("the config needs system.name or system.custom"),
        };
        if let Some(n) = self.system.n {
            spec.n = n;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn model_spec(&self, spec: &SystemSpec) -> ModelSpec {
        ModelSpec { agents: self.model.agents.clone(), ..ModelSpec::for_system(spec) }
    }

    pub fn train_sigma(&self) -> bool {
        self.model.train_sigma.unwrap_or(self.data.sigma > 0.0)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
