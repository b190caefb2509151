//! The run configuration: one TOML document, overridden by command-line
//! flags, echoed fully resolved into every run directory.

use std::path::{Path, PathBuf};

use saliency_forge::ensembles::{EnsembleConfig, EnsembleMethod, FlipPolicy, DEFAULT_EPSILON, DEFAULT_FLIP_FRACTION};
use saliency_forge::metrics::{Baseline, MetricKind, MetricSpec, ScoreMode};
use saliency_forge::oracle::OracleEndpoint;
use saliency_forge::rbm::TrainConfig;
use saliency_forge::superpixels::{DEFAULT_COMPACTNESS, DEFAULT_SEGMENTS};
use saliency_forge::RngSeed;
use serde::{Deserialize, Serialize};

use crate::InvalidInput;

/// Consulted when neither the flag nor the config file sets a seed.
pub const SEED_ENV: &str = "SALIENCY_FORGE_SEED";

/// Noise maps added with `--add-noise` when no count is given.
pub const DEFAULT_NOISE_MAPS: usize = 15;

/// Named RBM training settings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Mnist,
    #[default]
    Cifar,
    Imagenet,
}

impl Preset {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Mnist => TrainConfig::mnist(),
            Preset::Cifar | Preset::Imagenet => TrainConfig::cifar(),
        }
    }
}

/// Field-by-field overrides of the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cd_steps: Option<usize>,
}

fn default_methods() -> Vec<EnsembleMethod> {
    vec![EnsembleMethod::Mean, EnsembleMethod::Variance, EnsembleMethod::Rbm]
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_flip_fraction() -> f64 {
    DEFAULT_FLIP_FRACTION
}

fn default_flip_metric() -> MetricKind {
    MetricKind::Deletion
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSection {
    #[serde(default = "default_methods")]
    pub methods: Vec<EnsembleMethod>,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub rbm: RbmOverrides,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub flip_policy: FlipPolicy,
    #[serde(default = "default_flip_fraction")]
    pub flip_fraction: f64,
    /// Metric optimized by the `metric_optimization` policy; evaluated with
    /// the `[evaluate]` settings.
    #[serde(default = "default_flip_metric")]
    pub flip_metric: MetricKind,
    /// Standard-normal maps appended to every stack.
    #[serde(default)]
    pub add_noise: usize,
    #[serde(default)]
    pub include_original_image: bool,
}

impl Default for AggregateSection {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            preset: Preset::default(),
            rbm: RbmOverrides::default(),
            epsilon: DEFAULT_EPSILON,
            flip_policy: FlipPolicy::default(),
            flip_fraction: DEFAULT_FLIP_FRACTION,
            flip_metric: default_flip_metric(),
            add_noise: 0,
            include_original_image: false,
        }
    }
}

fn default_metrics() -> Vec<MetricKind> {
    MetricKind::ALL.to_vec()
}

fn default_step() -> f64 {
    0.01
}

fn default_segments() -> usize {
    DEFAULT_SEGMENTS
}

fn default_compactness() -> f64 {
    DEFAULT_COMPACTNESS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_step")]
    pub step_fraction: f64,
    #[serde(default)]
    pub baseline: Baseline,
    #[serde(default)]
    pub score_mode: ScoreMode,
    #[serde(default = "default_segments")]
    pub irof_segments: usize,
    #[serde(default = "default_compactness")]
    pub irof_compactness: f64,
    /// Per-channel fill for the `dataset_mean` baseline; computed from the
    /// dataset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_mean: Option<Vec<f64>>,
    /// Write every perturbation curve to `curves.json`.
    #[serde(default)]
    pub dump_curves: bool,
    /// Write SVG summaries under `plots/`.
    #[serde(default)]
    pub plots: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            metrics: default_metrics(),
            step_fraction: default_step(),
            baseline: Baseline::default(),
            score_mode: ScoreMode::default(),
            irof_segments: DEFAULT_SEGMENTS,
            irof_compactness: DEFAULT_COMPACTNESS,
            dataset_mean: None,
            dump_curves: false,
            plots: false,
        }
    }
}

impl EvaluateSection {
    pub fn spec(&self, kind: MetricKind, seed: RngSeed) -> MetricSpec {
        MetricSpec {
            kind,
            step_fraction: self.step_fraction,
            baseline: self.baseline,
            irof_segments: self.irof_segments,
            irof_compactness: self.irof_compactness,
            score_mode: self.score_mode,
            dataset_mean: self.dataset_mean.clone(),
            seed,
        }
    }

    pub fn specs(&self, seed: RngSeed) -> Vec<MetricSpec> {
        self.metrics.iter().map(|&k| self.spec(k, seed)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Dataset manifest listing stack manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub aggregate: AggregateSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleEndpoint>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, InvalidInput> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| InvalidInput(format!("invalid config {}: {e}", path.display())))
    }

    /// Flag, then config file, then `SALIENCY_FORGE_SEED`, then 0.
    pub fn resolve_seed(&mut self) -> Result<u64, InvalidInput> {
        if self.seed.is_none() {
            self.seed = Some(match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| InvalidInput(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?,
                Err(_) => 0,
            });
        }
        Ok(self.seed.unwrap_or_default())
    }

    pub fn resolve_workers(&mut self) -> Result<usize, InvalidInput> {
        let n = match self.workers {
            Some(0) => return Err(InvalidInput("workers must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        self.workers = Some(n);
        Ok(n)
    }

    pub fn dataset(&self) -> Result<&Path, InvalidInput> {
        self.dataset
            .as_deref()
            .ok_or_else(|| InvalidInput("no dataset manifest given (--dataset or `dataset`)".into()))
    }

    pub fn output_dir(&self) -> Result<&Path, InvalidInput> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| InvalidInput("no output directory given (--output-dir or `output_dir`)".into()))
    }

    pub fn train_config(&self, seed: RngSeed) -> TrainConfig {
        let o = &self.aggregate.rbm;
        let base = self.aggregate.preset.train_config();
        TrainConfig {
            learning_rate: o.learning_rate.unwrap_or(base.learning_rate),
            batch_size: o.batch_size.unwrap_or(base.batch_size),
            n_iterations: o.n_iterations.unwrap_or(base.n_iterations),
            cd_steps: o.cd_steps.unwrap_or(base.cd_steps),
            seed,
        }
    }

    /// Ensemble settings for one image. `metric_seed` must match the one
    /// used for evaluation so metric optimization scores what is reported.
    pub fn ensemble_config(&self, method: EnsembleMethod, train_seed: RngSeed, metric_seed: RngSeed) -> EnsembleConfig {
        let a = &self.aggregate;
        EnsembleConfig {
            method,
            epsilon: a.epsilon,
            rbm_train: self.train_config(train_seed),
            flip_policy: a.flip_policy,
            flip_fraction: a.flip_fraction,
            flip_metric: self.evaluate.spec(a.flip_metric, metric_seed),
            include_original_image: a.include_original_image,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}
