//! One JSON document drives every subcommand. Each section is fully
//! defaulted, so a bare invocation runs the standard desk problem; a config
//! file replaces sections wholesale and dotted flags (`--unlearn.eta 0.01`)
//! replace single leaves. The resolved document is stamped into every output
//! directory as `config.json`, which is all that is needed to reproduce a
//! run.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use unlearn_lab::markov::CaseStudyConfig;
use unlearn_lab::model::{safe_learning_rate, ExtractorSpec, TrainConfig};
use unlearn_lab::synth::SplitMode;
use unlearn_lab::unlearn::{Method, UnlearnConfig};
use unlearn_lab::{Error, Result};

pub const SEED_ENV: &str = "UNLEARN_LAB_SEED";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// When set, copied over every per-section seed before the run starts.
    /// The UNLEARN_LAB_SEED environment variable sets this field last, so it
    /// wins over both the config file and the flags.
    pub seed: Option<u64>,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub unlearn: UnlearnConfig,
    pub oracle: OracleConfig,
    pub divergence: DivergenceConfig,
    pub markov: MarkovSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            unlearn: UnlearnConfig::new(Method::Imu, 0.1, 150),
            oracle: OracleConfig::default(),
            divergence: DivergenceConfig::default(),
            markov: MarkovSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub class_count: usize,
    pub d_in: usize,
    pub n_per_class: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            class_count: 3,
            d_in: 8,
            n_per_class: 60,
            spread: 0.4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// "class" forgets every training sample of `target`; "random" forgets a
    /// seeded `fraction` of the training samples.
    pub mode: String,
    pub target: usize,
    pub fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: "class".into(),
            target: 2,
            fraction: 0.1,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn to_mode(&self) -> Result<SplitMode> {
        match self.mode.as_str() {
            "class" => Ok(SplitMode::ClassWise {
                target: self.target,
            }),
            "random" => Ok(SplitMode::SampleRandom {
                fraction: self.fraction,
                seed: self.seed,
            }),
            other => Err(Error::parameter(format!(
                "unknown split mode '{other}' (expected 'class' or 'random')"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// "relu" is the frozen random-ReLU lift; "identity" feeds raw features.
    pub extractor: String,
    pub d_feat: usize,
    /// Extractor seed; derived from the dataset seed when absent.
    pub seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            extractor: "relu".into(),
            d_feat: 16,
            seed: None,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, d_in: usize, fallback_seed: u64) -> Result<ExtractorSpec> {
        match self.extractor.as_str() {
            "identity" => Ok(ExtractorSpec::identity(d_in)),
            "relu" => Ok(ExtractorSpec::random_relu(
                d_in,
                self.d_feat,
                self.seed.unwrap_or(fallback_seed),
            )),
            other => Err(Error::parameter(format!(
                "unknown extractor '{other}' (expected 'relu' or 'identity')"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// 0 picks the safe step size for the feature matrix automatically.
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub l2: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 0.0,
            max_epochs: 200_000,
            tol: 1e-6,
            l2: 1e-3,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, z: &Array2<f64>) -> TrainConfig {
        let learning_rate = if self.learning_rate > 0.0 {
            self.learning_rate
        } else {
            safe_learning_rate(z, self.l2)
        };
        TrainConfig {
            learning_rate,
            max_epochs: self.max_epochs,
            tol: self.tol,
            l2: self.l2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Forget samples probed by the leave-one-out retraining oracle.
    pub probes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { probes: 40 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceConfig {
    /// Replay problem size: n samples in d dimensions with a fixed offset.
    pub n: usize,
    pub d: usize,
    pub offset: f64,
    pub eta: f64,
    /// Total replay steps; a row is emitted every `stride` steps.
    pub steps: usize,
    pub stride: usize,
    /// Live warm-up steps that move θ off the origin before the measured
    /// replay starts, so the preference and influence weights are non-trivial.
    pub warmup: usize,
    /// Independent trials: seeds seed, seed+1, ..., seed+seeds-1.
    pub seeds: u64,
    pub seed: u64,
    /// "frozen", "live", or "both".
    pub mode: String,
    pub beta: f64,
    pub damping: f64,
    pub top_ratio: f64,
    pub percentile: f64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            n: 24,
            d: 6,
            offset: 0.3,
            eta: 0.05,
            steps: 400,
            stride: 100,
            warmup: 150,
            seeds: 20,
            seed: 11,
            mode: "both".into(),
            beta: 1.0,
            damping: 1e-3,
            top_ratio: 1.0,
            percentile: 95.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkovSection {
    pub walks_per_source: usize,
    pub walk_len: usize,
    pub seed: u64,
    pub l2: f64,
    pub max_epochs: usize,
    pub tol: f64,
    /// Step size and epoch budget shared by every method row of the table.
    pub eta: f64,
    pub epochs: usize,
}

impl Default for MarkovSection {
    fn default() -> Self {
        let base = CaseStudyConfig::default();
        MarkovSection {
            walks_per_source: base.walks_per_source,
            walk_len: base.walk_len,
            seed: base.seed,
            l2: base.l2,
            max_epochs: base.max_epochs,
            tol: base.tol,
            eta: 1.0,
            epochs: 120,
        }
    }
}

impl MarkovSection {
    pub fn to_case_study(&self) -> CaseStudyConfig {
        CaseStudyConfig {
            walks_per_source: self.walks_per_source,
            walk_len: self.walk_len,
            seed: self.seed,
            l2: self.l2,
            max_epochs: self.max_epochs,
            tol: self.tol,
        }
    }

    pub fn method_grid(&self) -> Vec<UnlearnConfig> {
        [Method::Ga, Method::Npo, Method::Simnpo, Method::Imu]
            .into_iter()
            .map(|m| UnlearnConfig::new(m, self.eta, self.epochs))
            .collect()
    }
}

impl ExperimentConfig {
    /// Config file (when given) → dotted overrides → env seed → seed fan-out.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::parameter(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::format(format!("bad config {}: {e}", p.display())))?
            }
        };
        cfg.apply_overrides(overrides)?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            let v = s.trim().parse::<u64>().map_err(|_| {
                Error::parameter(format!("{SEED_ENV} must be an unsigned integer, got '{s}'"))
            })?;
            cfg.seed = Some(v);
        }
        if let Some(s) = cfg.seed {
            cfg.dataset.seed = s;
            cfg.split.seed = s;
            cfg.unlearn.seed = s;
            cfg.divergence.seed = s;
            cfg.markov.seed = s;
        }
        Ok(cfg)
    }

    /// Round-trips through the JSON tree so every key is checked against the
    /// real schema: unknown keys and type mismatches are caller errors.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut tree =
            serde_json::to_value(&*self).map_err(|e| Error::format(e.to_string()))?;
        for (key, raw) in overrides {
            set_leaf(&mut tree, key, raw)?;
        }
        *self = serde_json::from_value(tree)
            .map_err(|e| Error::parameter(format!("override rejected: {e}")))?;
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))?;
        std::fs::write(dir.join("config.json"), text + "\n")?;
        Ok(())
    }
}

/// Numbers, booleans, and null pass through as JSON scalars; anything else
/// becomes a string, so `--unlearn.method ga` needs no quoting.
fn parse_scalar(raw: &str) -> Value {
    match serde_json::from_str::<Value>(raw) {
        Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::Null | Value::String(_))) => v,
        _ => Value::String(raw.to_string()),
    }
}

fn set_leaf(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = tree;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::parameter(format!("config key '{key}' descends into a scalar at '{seg}'"))
        })?;
        if i + 1 == segments.len() {
            if !obj.contains_key(*seg) {
                return Err(Error::parameter(format!("unknown config key '{key}'")));
            }
            obj.insert((*seg).to_string(), parse_scalar(raw));
            return Ok(());
        }
        node = obj.get_mut(*seg).ok_or_else(|| {
            Error::parameter(format!("unknown config key '{key}' (no section '{seg}')"))
        })?;
    }
    Err(Error::parameter(format!("empty config key '{key}'")))
}
