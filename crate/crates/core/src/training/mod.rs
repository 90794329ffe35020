//! Teacher pretraining and consistency-regularized student training.
//!
//! The teacher is a standard run of the acoustic model on FP-included data.
//! The student starts from the teacher's weights and is trained with an extra
//! consistency term: the mean-L1 distance between the *linguistic* (non-FP)
//! module representations of its FP-included passes and the frozen teacher's
//! FP-removed passes, evaluated per module with configurable weights. A
//! second term does the same for pseudo-FP sentences sampled from the FP
//! predictor.

mod cache;
mod evaluate;
mod trainer;

pub use cache::{cache_teacher_bundles, TeacherBundleCache};
pub use evaluate::{evaluate, EvalCondition, EvalMetrics, GroupStats};
pub use trainer::{
    build_random_pseudo_bank, pretrain_teacher, regularization_term, train_student, RegTermSides,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModuleId};
use crate::numerics::{Checkpoint, Params};

/// Per-module weight map for a consistency term; absent modules weigh 0.
pub type ModuleWeights = BTreeMap<ModuleId, f64>;

pub fn energy_only_weights() -> ModuleWeights {
    let mut w = ModuleWeights::new();
    w.insert(ModuleId::Energy, 1.0);
    w
}

/// How pseudo-FP sentences are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoMode {
    /// Sampled from the FP predictor's per-slot probabilities.
    Probabilistic,
    /// One uniformly random FP word at a uniformly random slot per sentence.
    Random,
    Off,
}

/// Consistency-regularization configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    /// Weight of the whole consistency term.
    pub alpha: f64,
    /// Ratio of the pseudo-FP term to the ground-truth term.
    pub beta: f64,
    /// Per-module weights for the ground-truth-FP term.
    pub k: ModuleWeights,
    /// Per-module weights for the pseudo-FP term.
    pub l: ModuleWeights,
    pub pseudo_mode: PseudoMode,
}

impl RegularizationConfig {
    /// The configuration used by the proposed training recipe.
    pub fn proposed() -> Self {
        RegularizationConfig {
            alpha: 1.0,
            beta: 4.0,
            k: energy_only_weights(),
            l: energy_only_weights(),
            pseudo_mode: PseudoMode::Probabilistic,
        }
    }

    /// Plain TTS training (the conventional recipe).
    pub fn conventional() -> Self {
        RegularizationConfig {
            alpha: 0.0,
            beta: 0.0,
            k: ModuleWeights::new(),
            l: ModuleWeights::new(),
            pseudo_mode: PseudoMode::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be >= 0".into()));
        }
        for (name, weights) in [("k", &self.k), ("l", &self.l)] {
            if weights.values().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} weights must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn uses_pseudo(&self) -> bool {
        self.alpha > 0.0 && self.beta > 0.0 && self.pseudo_mode != PseudoMode::Off
    }
}

/// Optimization loop parameters shared by teacher and student runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub bank_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 8,
            lr: 1e-3,
            bank_size: 128,
        }
    }
}

/// One row of the per-step loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub mel_l1: f64,
    pub dur_mse: f64,
    pub pitch_mse: f64,
    pub energy_mse: f64,
    pub r_gt: f64,
    pub r_pseudo: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,mel_l1,dur_mse,pitch_mse,energy_mse,r_gt,r_pseudo,total\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.mel_l1, r.dur_mse, r.pitch_mse, r.energy_mse, r.r_gt, r.r_pseudo, r.total
            ));
        }
        crate::numerics::checkpoint::write_atomic(path, out.as_bytes())
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }
}

/// Checkpoint metadata identifying the model kind and its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    pub model_config: ModelConfig,
    pub model_config_hash: String,
    pub corpus_config_hash: String,
    pub reg: Option<RegularizationConfig>,
    /// Distance convention of the consistency terms.
    pub norm_convention: String,
}

/// Write a model checkpoint (numerics checkpoint plus a model-config block).
pub fn save_model_checkpoint(
    path: &Path,
    params: &Params,
    step: u64,
    meta: &ModelMeta,
) -> Result<()> {
    let mut ckpt = Checkpoint::new(params.clone());
    ckpt.step = step;
    ckpt.meta = serde_json::to_value(meta)?;
    ckpt.save(path)
}

/// Load a model checkpoint, verifying the model-config hash.
pub fn load_model_checkpoint(path: &Path) -> Result<(Params, ModelMeta, u64)> {
    let ckpt = Checkpoint::load(path)?;
    let meta: ModelMeta = serde_json::from_value(ckpt.meta.clone())?;
    let expected = meta.model_config.config_hash();
    if meta.model_config_hash != expected {
        return Err(Error::ConfigHashMismatch {
            artifact: path.display().to_string(),
            expected,
            found: meta.model_config_hash.clone(),
        });
    }
    Ok((ckpt.params, meta, ckpt.step))
}
