//! Experiment configuration: one JSON document, canonicalized (sorted keys,
//! compact encoding) before hashing so the hash is stable across
//! formatting differences.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use refine_core::losses::LossWeights;
use refine_core::synthdata::DataConfig;
use refine_core::trainer::{ModelConfig, TeacherParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[serde(default = "default_stage1")]
    pub stage1_steps: usize,
    #[serde(default = "default_stage2")]
    pub stage2_steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weights: LossWeights,
}

fn default_stage1() -> usize {
    3000
}
fn default_stage2() -> usize {
    1000
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            stage1_steps: default_stage1(),
            stage2_steps: default_stage2(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            weights: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    #[serde(default = "default_steps")]
    pub sample_steps: usize,
}

fn default_steps() -> usize {
    16
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            sample_steps: default_steps(),
        }
    }
}

/// The experiment document. `seed` (dataset seed) is the only required
/// field; everything else carries the published defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub teacher: TeacherParams,
    #[serde(default)]
    pub eval: EvalParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainParams::default(),
            teacher: TeacherParams::default(),
            eval: EvalParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("config schema violation in {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Err(e) = self.data.validate() {
            bail!("config field `data`: {e}");
        }
        if let Err(e) = self.train.weights.validate() {
            bail!("config field `train.weights`: {e}");
        }
        if self.train.batch_size == 0 {
            bail!("config field `train.batch_size`: must be positive");
        }
        if self.eval.sample_steps == 0 {
            bail!("config field `eval.sample_steps`: must be positive");
        }
        let m = &self.model;
        if m.teacher_layers != 2 * m.student_layers && m.teacher_layers != 2 * m.student_layers - 1
        {
            bail!(
                "config field `model`: teacher_layers {} must be 2S or 2S-1 for student_layers {}",
                m.teacher_layers,
                m.student_layers
            );
        }
        Ok(())
    }

    /// Canonical form: serde_json::Value maps are ordered (BTreeMap), so a
    /// compact re-serialization yields sorted keys and normalized numbers.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn config_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        format!("{:x}", hasher.finalize())
    }

    pub fn hash8(&self) -> String {
        self.config_hash()[..8].to_string()
    }
}
