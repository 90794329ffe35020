//! Miniature non-autoregressive acoustic model.
//!
//! Pipeline: phoneme embedding → convolutional encoder (+ per-speaker bias) →
//! duration predictor → pitch predictor → energy predictor → length regulator
//! → convolutional decoder → mel projection. Pitch and energy predictions are
//! injected back into the representation stream through differentiable soft
//! bin embeddings, and every module's output representation is exposed in an
//! [`IntermediateBundle`] for regularization and analysis.

mod forward;
mod ops;
mod synth;

pub use forward::{
    bind_params, collect_grads, decode_stage, duration_from_log, encode_stage, forward,
    predictor_net, resid_stage, tts_loss, BoundParams, ForcedValues, Forcing, ForwardOut,
    IntermediateBundle, PredVars, TtsLossTargets, TtsLossVars,
};
pub use ops::{
    extract_linguistic, extract_linguistic_values, frame_ranges, length_regulate,
    split_fp_linguistic_audio, BundleValues,
};
pub use synth::{synthesize, SynthOutput, SynthesisMode};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::numerics::{Array, Params};

/// The five analyzable modules of the acoustic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleId {
    Encoder,
    Duration,
    Pitch,
    Energy,
    Decoder,
}

impl ModuleId {
    pub const ALL: [ModuleId; 5] = [
        ModuleId::Encoder,
        ModuleId::Duration,
        ModuleId::Pitch,
        ModuleId::Energy,
        ModuleId::Decoder,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModuleId::Encoder => "encoder",
            ModuleId::Duration => "duration",
            ModuleId::Pitch => "pitch",
            ModuleId::Energy => "energy",
            ModuleId::Decoder => "decoder",
        }
    }
}

impl std::fmt::Display for ModuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(ModuleId::Encoder),
            "duration" => Ok(ModuleId::Duration),
            "pitch" => Ok(ModuleId::Pitch),
            "energy" => Ok(ModuleId::Energy),
            "decoder" => Ok(ModuleId::Decoder),
            other => Err(Error::Config(format!("unknown module {:?}", other))),
        }
    }
}

/// Acoustic model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub kernel: usize,
    pub predictor_hidden: usize,
    /// Quantization bins for pitch/energy bin embeddings.
    pub bins: usize,
    /// Value range covered by the bin centers.
    pub value_min: f64,
    pub value_max: f64,
    /// Soft-bin width multiplier: tau = tau_scale * bin_width.
    pub tau_scale: f64,
    pub n_mels: usize,
    pub n_phonemes: usize,
    pub n_speakers: usize,
    pub ln_eps: f64,
    pub init_scale: f64,
    /// Cap on inference-time durations (teacher forcing is never capped).
    pub max_duration: u32,
    /// Regularize the decoder on the mel output instead of the pre-projection
    /// hidden state.
    pub decoder_reg_on_mel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            enc_blocks: 2,
            dec_blocks: 2,
            kernel: 3,
            predictor_hidden: 32,
            bins: 16,
            value_min: -3.0,
            value_max: 3.0,
            tau_scale: 1.0,
            n_mels: 20,
            n_phonemes: 30,
            n_speakers: 2,
            ln_eps: 1e-5,
            init_scale: 0.3,
            max_duration: 64,
            decoder_reg_on_mel: false,
        }
    }
}

impl ModelConfig {
    /// Default config sized to a corpus manifest.
    pub fn for_manifest(manifest: &CorpusManifest) -> Self {
        ModelConfig {
            n_mels: manifest.config.n_mels,
            n_phonemes: manifest.n_phonemes(),
            n_speakers: manifest.config.speakers.len(),
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.predictor_hidden == 0 || self.n_mels == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("need at least 2 quantization bins".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("kernel must be odd".into()));
        }
        if !(self.value_min < self.value_max) {
            return Err(Error::Config("invalid bin value range".into()));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.value_max - self.value_min) / self.bins as f64
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.bins)
            .map(|i| self.value_min + w * (i as f64 + 0.5))
            .collect()
    }

    pub fn tau(&self) -> f64 {
        self.tau_scale * self.bin_width()
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialize");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{:02x}", b))
            .collect()
    }
}

fn normal_array(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Array {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * std
        })
        .collect();
    Array::new(shape.to_vec(), data).expect("shape")
}

fn conv_block_params(
    params: &mut Params,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    k: usize,
    dim: usize,
) {
    let std = (2.0 / (k * dim) as f64).sqrt();
    params.insert(&format!("{prefix}.conv.w"), normal_array(rng, &[k, dim, dim], std));
    params.insert(&format!("{prefix}.conv.b"), Array::zeros(&[dim]));
    params.insert(
        &format!("{prefix}.ln.g"),
        Array::vector(vec![1.0; dim]),
    );
    params.insert(&format!("{prefix}.ln.b"), Array::zeros(&[dim]));
}

fn predictor_params(
    params: &mut Params,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    k: usize,
    dim: usize,
    hidden: usize,
) {
    let std0 = (2.0 / (k * dim) as f64).sqrt();
    let std1 = (2.0 / (k * hidden) as f64).sqrt();
    params.insert(&format!("{prefix}.conv0.w"), normal_array(rng, &[k, dim, hidden], std0));
    params.insert(&format!("{prefix}.conv0.b"), Array::zeros(&[hidden]));
    params.insert(&format!("{prefix}.conv1.w"), normal_array(rng, &[k, hidden, hidden], std1));
    params.insert(&format!("{prefix}.conv1.b"), Array::zeros(&[hidden]));
    params.insert(
        &format!("{prefix}.out.w"),
        normal_array(rng, &[hidden, 1], (1.0 / hidden as f64).sqrt()),
    );
    params.insert(&format!("{prefix}.out.b"), Array::zeros(&[1]));
}

/// Fresh parameter set for a model configuration.
pub fn init_params(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Params> {
    config.validate()?;
    let d = config.embed_dim;
    let k = config.kernel;
    let mut params = Params::new();
    params.insert(
        "embed.phoneme",
        normal_array(rng, &[config.n_phonemes, d], config.init_scale),
    );
    params.insert(
        "embed.speaker",
        normal_array(rng, &[config.n_speakers, d], 0.1 * config.init_scale),
    );
    for i in 0..config.enc_blocks {
        conv_block_params(&mut params, rng, &format!("enc{i}"), k, d);
    }
    for name in ["dur", "pitch", "energy"] {
        predictor_params(&mut params, rng, name, k, d, config.predictor_hidden);
    }
    params.insert(
        "bins.pitch",
        normal_array(rng, &[config.bins, d], config.init_scale),
    );
    params.insert(
        "bins.energy",
        normal_array(rng, &[config.bins, d], config.init_scale),
    );
    for i in 0..config.dec_blocks {
        conv_block_params(&mut params, rng, &format!("dec{i}"), k, d);
    }
    params.insert(
        "mel.w",
        normal_array(rng, &[d, config.n_mels], (1.0 / d as f64).sqrt()),
    );
    params.insert("mel.b", Array::zeros(&[config.n_mels]));
    Ok(params)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    /// Small config + params for fast unit tests.
    pub fn tiny_setup(seed: u64) -> (ModelConfig, Params) {
        let config = ModelConfig {
            embed_dim: 8,
            predictor_hidden: 8,
            bins: 4,
            n_mels: 5,
            n_phonemes: 12,
            n_speakers: 2,
            ..ModelConfig::default()
        };
        let params = init_params(&config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (config, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn bin_centers_cover_the_range() {
        let cfg = ModelConfig::default();
        let centers = cfg.bin_centers();
        assert_eq!(centers.len(), 16);
        assert!((centers[0] - (-2.8125)).abs() < 1e-12);
        assert!((centers[15] - 2.8125).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic_given_seed() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn config_hash_tracks_fields() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        b.bins = 8;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
