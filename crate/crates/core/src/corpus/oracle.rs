//! Deterministic feature oracle: the stand-in for recorded speech.
//!
//! Every phoneme id has base duration/pitch/energy and a mel template; small
//! seeded noise is layered on top. Pitch and energy of linguistic phonemes at
//! distance 1-2 from an FP phoneme are additionally shifted by an
//! FP-word-dependent offset, so FP insertion measurably perturbs neighboring
//! prosody. The mel rows follow the *canonical* (unshifted) prosody: the
//! perturbation lives in the prosody feature channel, not in the spectral
//! target.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{OracleParams, SpeakerParams};
use crate::error::{Error, Result};
use crate::text::{distance_to_nearest_fp, nearest_fp_index, FpWord, PhonemeSequence};

/// Output of one oracle rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFeatures {
    pub durations: Vec<u32>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub mel: Vec<Vec<f64>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fixed spectral directions through which prosody shapes the mel rows.
fn tilt_vector(n_mels: usize) -> Vec<f64> {
    (0..n_mels)
        .map(|j| (std::f64::consts::PI * j as f64 / (n_mels - 1).max(1) as f64).cos())
        .collect()
}

fn gain_vector(n_mels: usize) -> Vec<f64> {
    vec![1.0; n_mels]
}

/// Render features for one phoneme sequence. Deterministic given the RNG
/// state; draw order is fixed (per phoneme: duration, pitch, energy; then per
/// frame: mel noise).
pub fn oracle_synthesize(
    seq: &PhonemeSequence,
    insertions: &BTreeMap<usize, FpWord>,
    speaker: &SpeakerParams,
    params: &OracleParams,
    rng: &mut ChaCha8Rng,
) -> Result<OracleFeatures> {
    if seq.is_empty() {
        return Err(Error::Input("oracle_synthesize: empty sequence".into()));
    }
    let n = seq.len();
    for &ph in &seq.phonemes {
        if ph.0 as usize >= params.profiles.len() {
            return Err(Error::Corpus(format!(
                "unknown phoneme id {} (profiles cover {})",
                ph.0,
                params.profiles.len()
            )));
        }
    }

    let dist = distance_to_nearest_fp(seq);
    let nearest = nearest_fp_index(seq);

    let mut durations = Vec::with_capacity(n);
    let mut pitch = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    let mut canonical_pitch = Vec::with_capacity(n);
    let mut canonical_energy = Vec::with_capacity(n);

    for (i, &ph) in seq.phonemes.iter().enumerate() {
        let profile = &params.profiles[ph.0 as usize];
        let jitter = params.duration_jitter as i64;
        let dj: i64 = if jitter > 0 {
            // Uniform over {-jitter .. jitter} from one normal draw's sign+magnitude
            // would bias; use the rng directly.
            use rand::Rng;
            rng.random_range(-jitter..=jitter)
        } else {
            0
        };
        let d = (profile.base_duration as i64 + dj).max(1) as u32;
        durations.push(d);

        let nat_p = profile.base_pitch + speaker.pitch_offset + params.pitch_noise * normal(rng);
        let nat_e = profile.base_energy + speaker.energy_offset + params.energy_noise * normal(rng);

        let (mut shift_p, mut shift_e) = (0.0, 0.0);
        if !seq.fp_mask[i] {
            if let (Some(d), Some(src)) = (dist[i], nearest[i]) {
                if d >= 1 && d <= 2 {
                    if let Some(slot) = seq.fp_group[src] {
                        if let Some(&word) = insertions.get(&slot) {
                            let effect = &params.fp_effects[word.0 as usize];
                            shift_p = params.fp_pitch_offsets[(d - 1) as usize] * effect.pitch_factor;
                            shift_e =
                                params.fp_energy_offsets[(d - 1) as usize] * effect.energy_factor;
                        }
                    }
                }
            }
        }

        canonical_pitch.push(nat_p);
        canonical_energy.push(nat_e);
        pitch.push(nat_p + shift_p);
        energy.push(nat_e + shift_e);
    }

    let tilt = tilt_vector(params.n_mels);
    let gain = gain_vector(params.n_mels);
    let total_frames: u32 = durations.iter().sum();
    let mut mel = Vec::with_capacity(total_frames as usize);
    for (i, &ph) in seq.phonemes.iter().enumerate() {
        let profile = &params.profiles[ph.0 as usize];
        for _ in 0..durations[i] {
            let row: Vec<f64> = (0..params.n_mels)
                .map(|j| {
                    profile.mel_template[j]
                        + params.mel_pitch_coupling * canonical_pitch[i] * tilt[j]
                        + params.mel_energy_coupling * canonical_energy[i] * gain[j]
                        + params.mel_noise * normal(rng)
                })
                .collect();
            mel.push(row);
        }
    }

    Ok(OracleFeatures {
        durations,
        pitch,
        energy,
        mel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_utterances, CorpusConfig};
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn oracle_is_deterministic_given_seed() {
        let cfg = CorpusConfig {
            seed: 2,
            n_train: 3,
            n_dev: 0,
            n_test: 1,
            ..CorpusConfig::default()
        };
        let (m, utts) = generate_utterances(&cfg).unwrap();
        let u = &utts[0];
        let speaker = m.speaker(u.speaker).unwrap();
        let a = oracle_synthesize(
            &u.seq,
            &u.sentence.insertions,
            speaker,
            &m.oracle,
            &mut ChaCha8Rng::seed_from_u64(99),
        )
        .unwrap();
        let b = oracle_synthesize(
            &u.seq,
            &u.sentence.insertions,
            speaker,
            &m.oracle,
            &mut ChaCha8Rng::seed_from_u64(99),
        )
        .unwrap();
        assert_eq!(a, b);
        let frames: u32 = a.durations.iter().sum();
        assert_eq!(frames as usize, a.mel.len());
    }

    #[test]
    fn empty_sequence_is_an_input_error() {
        let cfg = CorpusConfig {
            seed: 2,
            n_train: 1,
            n_dev: 0,
            n_test: 1,
            ..CorpusConfig::default()
        };
        let (m, _) = generate_utterances(&cfg).unwrap();
        let empty = PhonemeSequence {
            phonemes: vec![],
            fp_mask: vec![],
            fp_group: vec![],
        };
        let r = oracle_synthesize(
            &empty,
            &BTreeMap::new(),
            &m.config.speakers[0],
            &m.oracle,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(r.is_err());
    }
}
