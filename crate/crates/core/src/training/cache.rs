//! Frozen-teacher bundle cache.
//!
//! The teacher's FP-removed pass for an utterance depends only on the teacher
//! parameters and the utterance itself, so bundles are computed once and
//! reused every step. Cached values are injected into student graphs as
//! constants, which is also what guarantees no gradient can reach the teacher.

use std::collections::BTreeMap;

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::model::{bind_params, forward, BundleValues, ForcedValues, Forcing, ModelConfig};
use crate::numerics::{Graph, Params};
use crate::text::PhonemeSequence;

/// Ground-truth prosody of an utterance restricted to linguistic phonemes,
/// in linguistic order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticTruth {
    pub durations: Vec<u32>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

impl LinguisticTruth {
    pub fn of(utt: &Utterance) -> Self {
        let keep = |i: &usize| !utt.seq.fp_mask[*i];
        let idx: Vec<usize> = (0..utt.seq.len()).filter(keep).collect();
        LinguisticTruth {
            durations: idx.iter().map(|&i| utt.durations[i]).collect(),
            pitch: idx.iter().map(|&i| utt.pitch[i]).collect(),
            energy: idx.iter().map(|&i| utt.energy[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedBundle {
    /// Teacher bundle of the FP-removed pass (all positions linguistic).
    pub values: BundleValues,
    /// The linguistic ground truth that was teacher-forced into the pass.
    pub truth: LinguisticTruth,
    pub speaker: usize,
}

/// Teacher bundles keyed by utterance id.
pub struct TeacherBundleCache {
    /// Hash binding the cache to (teacher params, model config).
    pub source_hash: String,
    entries: BTreeMap<u32, CachedBundle>,
}

/// Identity of a (params, config) pair for cache guarding.
pub fn teacher_source_hash(params: &Params, config: &ModelConfig) -> String {
    format!("{}:{}", params.content_hash(), config.config_hash())
}

/// Run the teacher's FP-removed pass for one utterance.
pub fn teacher_nofp_bundle(
    teacher: &Params,
    config: &ModelConfig,
    utt: &Utterance,
) -> Result<(BundleValues, LinguisticTruth)> {
    let nofp: PhonemeSequence = utt.seq.without_fp();
    if nofp.is_empty() {
        return Err(Error::Corpus(format!(
            "utterance {} has no linguistic phonemes",
            utt.id
        )));
    }
    let truth = LinguisticTruth::of(utt);
    let forced = ForcedValues {
        durations: truth.durations.clone(),
        pitch: truth.pitch.clone(),
        energy: truth.energy.clone(),
    };
    let mut g = Graph::new();
    let bound = bind_params(&mut g, teacher, false);
    let out = forward(
        &mut g,
        &bound,
        config,
        &nofp,
        utt.speaker.0 as usize,
        Forcing::Full(&forced),
    )?;
    Ok((BundleValues::capture(&g, &out), truth))
}

/// Precompute teacher bundles for a set of utterances.
pub fn cache_teacher_bundles(
    teacher: &Params,
    config: &ModelConfig,
    utterances: &[Utterance],
) -> Result<TeacherBundleCache> {
    let mut entries = BTreeMap::new();
    for utt in utterances {
        let (values, truth) = teacher_nofp_bundle(teacher, config, utt)?;
        entries.insert(
            utt.id,
            CachedBundle {
                values,
                truth,
                speaker: utt.speaker.0 as usize,
            },
        );
    }
    Ok(TeacherBundleCache {
        source_hash: teacher_source_hash(teacher, config),
        entries,
    })
}

impl TeacherBundleCache {
    pub fn get(&self, id: u32) -> Result<&CachedBundle> {
        self.entries
            .get(&id)
            .ok_or_else(|| Error::UpstreamMissing(format!("no cached teacher bundle for {id}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Guard against stale caches.
    pub fn verify(&self, teacher: &Params, config: &ModelConfig) -> Result<()> {
        let expected = teacher_source_hash(teacher, config);
        if self.source_hash != expected {
            return Err(Error::ConfigHashMismatch {
                artifact: "teacher bundle cache".into(),
                expected,
                found: self.source_hash.clone(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_utterances, CorpusConfig};
    use crate::model::init_params;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cached_bundles_match_recomputation_bitwise() {
        let (manifest, utts) = generate_utterances(&CorpusConfig {
            seed: 8,
            n_train: 5,
            n_dev: 0,
            n_test: 1,
            ..CorpusConfig::default()
        })
        .unwrap();
        let cfg = crate::model::ModelConfig::for_manifest(&manifest);
        let teacher = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cache = cache_teacher_bundles(&teacher, &cfg, &utts[..5]).unwrap();
        assert_eq!(cache.len(), 5);
        cache.verify(&teacher, &cfg).unwrap();
        for utt in &utts[..5] {
            let (fresh, truth) = teacher_nofp_bundle(&teacher, &cfg, utt).unwrap();
            let cached = cache.get(utt.id).unwrap();
            assert_eq!(cached.values, fresh);
            assert_eq!(cached.truth, truth);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let (manifest, utts) = generate_utterances(&CorpusConfig {
            seed: 9,
            n_train: 2,
            n_dev: 0,
            n_test: 1,
            ..CorpusConfig::default()
        })
        .unwrap();
        let cfg = crate::model::ModelConfig::for_manifest(&manifest);
        let teacher = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cache = cache_teacher_bundles(&teacher, &cfg, &utts[..2]).unwrap();
        let other = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(cache.verify(&other, &cfg).is_err());
    }
}
