//! Synthetic FP-annotated speech-feature corpus.
//!
//! Stands in for a recorded spontaneous-speech corpus at desk scale: an
//! invented token vocabulary with a table-driven pronunciation front end, a
//! deterministic feature oracle (durations, pitch, energy, mel), and JSONL
//! persistence. The oracle deliberately perturbs the pitch/energy features of
//! phonemes next to an FP so that FP insertion has a measurable, learnable
//! effect on neighboring prosody.

mod io;
mod oracle;

pub use io::{
    load_corpus, read_utterance_line, save_corpus, utterance_line, CorpusHandle, CountingReader,
    UtteranceIter,
};
pub use oracle::{oracle_synthesize, OracleFeatures};

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{
    insert_fp_words, to_phonemes, AnnotatedSentence, FpLexicon, FpWord, Origin, PhonemeId,
    PhonemeSequence, PronunciationTable, TokenId, FP_WORD_COUNT,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Identifier of a synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeakerId(pub u8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerParams {
    pub id: SpeakerId,
    pub name: String,
    pub pitch_offset: f64,
    pub energy_offset: f64,
}

/// One stored utterance: annotation, phonemes, and oracle features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: u32,
    pub speaker: SpeakerId,
    pub sentence: AnnotatedSentence,
    pub seq: PhonemeSequence,
    /// Frame count per phoneme, all >= 1.
    pub durations: Vec<u32>,
    /// Normalized log-F0 scale, one value per phoneme.
    pub pitch: Vec<f64>,
    /// Normalized energy scale, one value per phoneme.
    pub energy: Vec<f64>,
    /// frames x n_mels, row-major by frame.
    pub mel: Vec<Vec<f64>>,
}

impl Utterance {
    pub fn validate(&self, n_mels: usize) -> Result<()> {
        let n = self.seq.len();
        if self.durations.len() != n || self.pitch.len() != n || self.energy.len() != n {
            return Err(Error::Corpus(format!(
                "utterance {}: feature lengths disagree with {} phonemes",
                self.id, n
            )));
        }
        if self.durations.iter().any(|&d| d == 0) {
            return Err(Error::Corpus(format!(
                "utterance {}: zero duration",
                self.id
            )));
        }
        let frames: u32 = self.durations.iter().sum();
        if frames as usize != self.mel.len() {
            return Err(Error::Corpus(format!(
                "utterance {}: {} mel frames but durations sum to {}",
                self.id,
                self.mel.len(),
                frames
            )));
        }
        if self.mel.iter().any(|row| row.len() != n_mels) {
            return Err(Error::Corpus(format!(
                "utterance {}: mel width != {}",
                self.id, n_mels
            )));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.mel.len()
    }
}

/// Deterministic per-phoneme feature templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeProfile {
    pub base_duration: u32,
    pub base_pitch: f64,
    pub base_energy: f64,
    pub mel_template: Vec<f64>,
}

/// Per-FP-word prosody perturbation factors (applied to neighbors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpWordEffect {
    pub pitch_factor: f64,
    pub energy_factor: f64,
}

/// Oracle knobs and tables; stored in the manifest for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub profiles: Vec<PhonemeProfile>,
    pub fp_effects: Vec<FpWordEffect>,
    /// Pitch shift of a linguistic phoneme at distance 1 / 2 from an FP.
    pub fp_pitch_offsets: [f64; 2],
    /// Energy shift of a linguistic phoneme at distance 1 / 2 from an FP.
    pub fp_energy_offsets: [f64; 2],
    pub pitch_noise: f64,
    pub energy_noise: f64,
    pub mel_noise: f64,
    pub duration_jitter: u32,
    /// How strongly canonical pitch/energy shape the mel rows.
    pub mel_pitch_coupling: f64,
    pub mel_energy_coupling: f64,
    pub n_mels: usize,
}

/// Generation configuration; hashed into every downstream artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Fraction of sentences that carry at least one ground-truth FP.
    pub fp_sentence_fraction: f64,
    /// Zipf exponent for the FP word frequency skew.
    pub zipf_exponent: f64,
    /// Probability that a sentence position is a hesitation-prone token.
    pub trigger_rate: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub n_ordinary_tokens: usize,
    pub n_linguistic_phonemes: usize,
    pub n_fp_phonemes: usize,
    pub max_pron_len: usize,
    pub speakers: Vec<SpeakerParams>,
    pub fp_pitch_offsets: [f64; 2],
    pub fp_energy_offsets: [f64; 2],
    pub pitch_noise: f64,
    pub energy_noise: f64,
    pub mel_noise: f64,
    pub mel_pitch_coupling: f64,
    pub mel_energy_coupling: f64,
    pub n_mels: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            n_train: 500,
            n_dev: 50,
            n_test: 97,
            fp_sentence_fraction: 0.6,
            zipf_exponent: 1.0,
            trigger_rate: 0.15,
            min_tokens: 5,
            max_tokens: 12,
            n_ordinary_tokens: 27,
            n_linguistic_phonemes: 24,
            n_fp_phonemes: 6,
            max_pron_len: 4,
            speakers: vec![
                SpeakerParams {
                    id: SpeakerId(0),
                    name: "spk_a".into(),
                    pitch_offset: -0.3,
                    energy_offset: -0.2,
                },
                SpeakerParams {
                    id: SpeakerId(1),
                    name: "spk_b".into(),
                    pitch_offset: 0.3,
                    energy_offset: 0.2,
                },
            ],
            fp_pitch_offsets: [0.5, 0.25],
            fp_energy_offsets: [0.5, 0.25],
            pitch_noise: 0.12,
            energy_noise: 0.12,
            mel_noise: 0.04,
            mel_pitch_coupling: 0.5,
            mel_energy_coupling: 0.5,
            n_mels: 20,
        }
    }
}

impl CorpusConfig {
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

    pub fn validate(&self) -> Result<()> {
        if self.min_tokens == 0 || self.max_tokens < self.min_tokens {
            return Err(Error::Config("invalid sentence length range".into()));
        }
        if !(0.0..=1.0).contains(&self.fp_sentence_fraction) {
            return Err(Error::Config("fp_sentence_fraction must be in [0,1]".into()));
        }
        if self.speakers.is_empty() {
            return Err(Error::Config("at least one speaker required".into()));
        }
        if self.n_ordinary_tokens == 0 || self.n_linguistic_phonemes == 0 || self.n_fp_phonemes == 0
        {
            return Err(Error::Config("vocabulary sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn total_utterances(&self) -> usize {
        self.n_train + self.n_dev + self.n_test
    }

    /// Token vocabulary size: ordinary tokens plus one hesitation-prone
    /// trigger token per FP word.
    pub fn n_tokens(&self) -> usize {
        self.n_ordinary_tokens + FP_WORD_COUNT
    }
}

/// Split name constants.
pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<u32>,
    pub dev: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitLists {
    pub fn get(&self, split: &str) -> Result<&[u32]> {
        match split {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::Corpus(format!("unknown split {:?}", other))),
        }
    }

    fn disjoint(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .all(|id| seen.insert(*id))
    }
}

/// Corpus description: vocabulary tables, oracle parameters, and splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub config: CorpusConfig,
    pub config_hash: String,
    pub token_names: Vec<String>,
    pub phoneme_names: Vec<String>,
    pub lexicon: FpLexicon,
    pub pron_table: PronunciationTable,
    pub oracle: OracleParams,
    pub splits: SplitLists,
    /// Conventions of the feature scales, recorded for consumers.
    pub normalization_notes: String,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: MANIFEST_SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        if !self.splits.disjoint() {
            return Err(Error::Corpus("split lists are not disjoint".into()));
        }
        self.lexicon.validate(&self.token_names)?;
        Ok(())
    }

    /// Total phoneme id space (linguistic + FP phonemes).
    pub fn n_phonemes(&self) -> usize {
        self.phoneme_names.len()
    }

    pub fn speaker(&self, id: SpeakerId) -> Result<&SpeakerParams> {
        self.config
            .speakers
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Corpus(format!("unknown speaker {}", id.0)))
    }
}

/// Zipf weights over the 13 FP words: `w_k ∝ 1/(k+1)^s`, normalized.
pub fn zipf_weights(exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=FP_WORD_COUNT)
        .map(|k| 1.0 / (k as f64).powf(exponent))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Build the vocabulary tables (token names, pronunciations, FP lexicon,
/// phoneme profiles, FP word effects) from the table RNG stream.
fn build_tables(config: &CorpusConfig, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>, FpLexicon, PronunciationTable, OracleParams) {
    let n_ling = config.n_linguistic_phonemes;
    let n_fp = config.n_fp_phonemes;

    let mut phoneme_names: Vec<String> = (0..n_ling).map(|i| format!("p{:02}", i)).collect();
    phoneme_names.extend((0..n_fp).map(|i| format!("q{}", i)));

    let mut token_names: Vec<String> = (0..config.n_ordinary_tokens)
        .map(|i| format!("w{:02}", i))
        .collect();
    token_names.extend((1..=FP_WORD_COUNT).map(|i| format!("h{:02}", i)));

    // Pronunciations: 1..=max_pron_len linguistic phonemes per token.
    let mut entries = BTreeMap::new();
    for t in 0..config.n_tokens() {
        let len = rng.random_range(1..=config.max_pron_len);
        let phs = (0..len)
            .map(|_| PhonemeId(rng.random_range(0..n_ling) as u32))
            .collect();
        entries.insert(TokenId(t as u32), phs);
    }
    let pron_table = PronunciationTable { entries };

    // FP expansions: distinct sequences of 1..=3 FP phonemes.
    let mut expansions: Vec<Vec<PhonemeId>> = Vec::new();
    while expansions.len() < FP_WORD_COUNT {
        let len = rng.random_range(1..=3);
        let cand: Vec<PhonemeId> = (0..len)
            .map(|_| PhonemeId((n_ling + rng.random_range(0..n_fp)) as u32))
            .collect();
        if !expansions.contains(&cand) {
            expansions.push(cand);
        }
    }
    let lexicon = FpLexicon {
        words: (1..=FP_WORD_COUNT).map(|i| format!("fp{:02}", i)).collect(),
        expansions,
        none_marker: "none".to_string(),
    };

    let profiles = (0..n_ling + n_fp)
        .map(|_| PhonemeProfile {
            base_duration: rng.random_range(2..=8),
            base_pitch: rng.random_range(-1.5..1.5),
            base_energy: rng.random_range(-1.5..1.5),
            mel_template: (0..config.n_mels)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        })
        .collect();

    let fp_effects = (0..FP_WORD_COUNT)
        .map(|_| {
            let sign = |r: &mut ChaCha8Rng| if r.random_bool(0.5) { 1.0 } else { -1.0 };
            FpWordEffect {
                pitch_factor: sign(rng) * rng.random_range(0.7..1.3),
                energy_factor: sign(rng) * rng.random_range(0.7..1.3),
            }
        })
        .collect();

    let oracle = OracleParams {
        profiles,
        fp_effects,
        fp_pitch_offsets: config.fp_pitch_offsets,
        fp_energy_offsets: config.fp_energy_offsets,
        pitch_noise: config.pitch_noise,
        energy_noise: config.energy_noise,
        mel_noise: config.mel_noise,
        duration_jitter: 1,
        mel_pitch_coupling: config.mel_pitch_coupling,
        mel_energy_coupling: config.mel_energy_coupling,
        n_mels: config.n_mels,
    };

    (token_names, phoneme_names, lexicon, pron_table, oracle)
}

/// Draw one annotated sentence. FP sentences carry one FP word after every
/// hesitation-prone token; the FP word is the one that token prefers, so FP
/// occurrence is skewed (Zipf over trigger identity) yet context-predictable.
fn generate_sentence(
    config: &CorpusConfig,
    lexicon: &FpLexicon,
    zipf: &[f64],
    rng: &mut ChaCha8Rng,
) -> AnnotatedSentence {
    let len = rng.random_range(config.min_tokens..=config.max_tokens);
    let mut tokens: Vec<TokenId> = Vec::with_capacity(len);
    for _ in 0..len {
        if rng.random_bool(config.trigger_rate) {
            let word = sample_weighted(rng, zipf);
            tokens.push(TokenId((config.n_ordinary_tokens + word) as u32));
        } else {
            tokens.push(TokenId(rng.random_range(0..config.n_ordinary_tokens) as u32));
        }
    }
    let is_fp_sentence = rng.random_bool(config.fp_sentence_fraction);
    let mut insertions: BTreeMap<usize, FpWord> = BTreeMap::new();
    if is_fp_sentence {
        let has_trigger = tokens
            .iter()
            .any(|t| t.0 as usize >= config.n_ordinary_tokens);
        if !has_trigger {
            let pos = rng.random_range(0..tokens.len());
            let word = sample_weighted(rng, zipf);
            tokens[pos] = TokenId((config.n_ordinary_tokens + word) as u32);
        }
        for (pos, t) in tokens.iter().enumerate() {
            if t.0 as usize >= config.n_ordinary_tokens {
                let word = FpWord((t.0 as usize - config.n_ordinary_tokens) as u8);
                insertions.insert(pos + 1, word);
            }
        }
    }
    let mut ann = insert_fp_words(&tokens, &insertions, lexicon).expect("generated slots valid");
    ann.origin = Origin::GroundTruth;
    ann
}

/// Generate the whole corpus in memory.
pub fn generate_utterances(config: &CorpusConfig) -> Result<(CorpusManifest, Vec<Utterance>)> {
    config.validate()?;
    let mut table_rng = ChaCha8Rng::seed_from_u64(config.seed);
    table_rng.set_stream(1);
    let mut sentence_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sentence_rng.set_stream(2);
    let mut feature_rng = ChaCha8Rng::seed_from_u64(config.seed);
    feature_rng.set_stream(3);

    let (token_names, phoneme_names, lexicon, pron_table, oracle) =
        build_tables(config, &mut table_rng);
    let zipf = zipf_weights(config.zipf_exponent);

    let total = config.total_utterances();
    let mut utterances = Vec::with_capacity(total);
    for id in 0..total as u32 {
        let sentence = generate_sentence(config, &lexicon, &zipf, &mut sentence_rng);
        let seq = to_phonemes(&sentence, &lexicon, &pron_table)?;
        let speaker = &config.speakers[id as usize % config.speakers.len()];
        let feats = oracle_synthesize(&seq, &sentence.insertions, speaker, &oracle, &mut feature_rng)?;
        let utt = Utterance {
            id,
            speaker: speaker.id,
            sentence,
            seq,
            durations: feats.durations,
            pitch: feats.pitch,
            energy: feats.energy,
            mel: feats.mel,
        };
        utt.validate(config.n_mels)?;
        utterances.push(utt);
    }

    let ids: Vec<u32> = (0..total as u32).collect();
    let splits = SplitLists {
        train: ids[..config.n_train].to_vec(),
        dev: ids[config.n_train..config.n_train + config.n_dev].to_vec(),
        test: ids[config.n_train + config.n_dev..].to_vec(),
    };

    let manifest = CorpusManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        config_hash: config.config_hash(),
        config: config.clone(),
        token_names,
        phoneme_names,
        lexicon,
        pron_table,
        oracle,
        splits,
        normalization_notes: concat!(
            "pitch/energy are unitless normalized scales roughly in [-3,3]; ",
            "stored pitch/energy track the measured contour including FP-induced ",
            "perturbation of neighbors at distance 1-2, while mel rows follow the ",
            "canonical (unperturbed) prosody plus templates and noise; ",
            "durations are integer frame counts >= 1; mel rows are frames x n_mels."
        )
        .to_string(),
    };
    manifest.validate()?;
    Ok((manifest, utterances))
}

/// Generate and persist a corpus under `dir`.
pub fn generate_corpus(config: &CorpusConfig, dir: &std::path::Path) -> Result<CorpusManifest> {
    let (manifest, utterances) = generate_utterances(config)?;
    save_corpus(dir, &manifest, &utterances)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::distance_to_nearest_fp;

    fn small_config() -> CorpusConfig {
        CorpusConfig {
            seed: 11,
            n_train: 30,
            n_dev: 5,
            n_test: 8,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        let (m1, u1) = generate_utterances(&cfg).unwrap();
        let (m2, u2) = generate_utterances(&cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(u1, u2);
    }

    #[test]
    fn durations_match_mel_frames_everywhere() {
        let (_m, utts) = generate_utterances(&small_config()).unwrap();
        for u in &utts {
            let frames: u32 = u.durations.iter().sum();
            assert_eq!(frames as usize, u.mel.len());
            assert!(u.durations.iter().all(|&d| d >= 1));
            assert_eq!(u.pitch.len(), u.seq.len());
            assert_eq!(u.energy.len(), u.seq.len());
        }
    }

    #[test]
    fn splits_partition_ids() {
        let cfg = small_config();
        let (m, utts) = generate_utterances(&cfg).unwrap();
        assert_eq!(m.splits.train.len(), cfg.n_train);
        assert_eq!(m.splits.dev.len(), cfg.n_dev);
        assert_eq!(m.splits.test.len(), cfg.n_test);
        let mut all: Vec<u32> = m
            .splits
            .train
            .iter()
            .chain(&m.splits.dev)
            .chain(&m.splits.test)
            .copied()
            .collect();
        all.sort_unstable();
        let expect: Vec<u32> = (0..utts.len() as u32).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn fp_fraction_is_near_target() {
        let cfg = CorpusConfig {
            seed: 3,
            n_train: 1500,
            n_dev: 0,
            n_test: 0,
            ..CorpusConfig::default()
        };
        let (_m, utts) = generate_utterances(&cfg).unwrap();
        let with_fp = utts.iter().filter(|u| u.sentence.has_fp()).count();
        let frac = with_fp as f64 / utts.len() as f64;
        assert!((frac - cfg.fp_sentence_fraction).abs() < 0.05, "fraction {frac}");
    }

    #[test]
    fn fp_word_histogram_matches_zipf_weights() {
        // TV distance <= 0.05 against the configured skew at >= 5000 insertions.
        let cfg = CorpusConfig {
            seed: 5,
            n_train: 6500,
            n_dev: 0,
            n_test: 0,
            ..CorpusConfig::default()
        };
        let (_m, utts) = generate_utterances(&cfg).unwrap();
        let mut counts = [0usize; FP_WORD_COUNT];
        let mut total = 0usize;
        for u in &utts {
            for w in u.sentence.insertions.values() {
                counts[w.0 as usize] += 1;
                total += 1;
            }
        }
        assert!(total >= 5000, "only {total} insertions");
        let zipf = zipf_weights(cfg.zipf_exponent);
        let tv: f64 = counts
            .iter()
            .zip(&zipf)
            .map(|(&c, &w)| (c as f64 / total as f64 - w).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.05, "TV distance {tv}");
    }

    #[test]
    fn oracle_perturbs_fp_neighbors_more_than_distant_phonemes() {
        // Render the same sentence with and without an FP; the pitch feature of
        // phonemes within distance 2 must move more than those at distance >= 4.
        let cfg = small_config();
        let (m, _) = generate_utterances(&cfg).unwrap();
        let tokens: Vec<TokenId> = (0..8).map(TokenId).collect();
        let mut ins = BTreeMap::new();
        ins.insert(4usize, FpWord(0));
        let with_fp = insert_fp_words(&tokens, &ins, &m.lexicon).unwrap();
        let without = insert_fp_words(&tokens, &BTreeMap::new(), &m.lexicon).unwrap();
        let seq_fp = to_phonemes(&with_fp, &m.lexicon, &m.pron_table).unwrap();
        let seq_no = to_phonemes(&without, &m.lexicon, &m.pron_table).unwrap();
        let speaker = &m.config.speakers[0];

        let mut near = Vec::new();
        let mut far = Vec::new();
        for trial in 0..40u64 {
            let mut r1 = ChaCha8Rng::seed_from_u64(1000 + trial);
            let mut r2 = ChaCha8Rng::seed_from_u64(5000 + trial);
            let f_fp =
                oracle_synthesize(&seq_fp, &with_fp.insertions, speaker, &m.oracle, &mut r1)
                    .unwrap();
            let f_no =
                oracle_synthesize(&seq_no, &without.insertions, speaker, &m.oracle, &mut r2)
                    .unwrap();
            let map = crate::text::build_index_map(&seq_fp);
            let dist = distance_to_nearest_fp(&seq_fp);
            for (j, &pos) in map.phone_map.iter().enumerate() {
                let diff = (f_fp.pitch[pos] - f_no.pitch[j]).abs();
                match dist[pos] {
                    Some(d) if d <= 2 => near.push(diff),
                    Some(d) if d >= 4 => far.push(diff),
                    _ => {}
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&near) > mean(&far),
            "near {} <= far {}",
            mean(&near),
            mean(&far)
        );
    }

    #[test]
    fn manifest_rejects_overlapping_splits() {
        let (mut m, _) = generate_utterances(&small_config()).unwrap();
        m.splits.dev.push(m.splits.train[0]);
        assert!(m.validate().is_err());
    }
}
