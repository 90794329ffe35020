//! Objective evaluation on a corpus split.
//!
//! Mel quality is measured on linguistic frames only, with frame alignment
//! obtained by forcing groundized-truth durations on linguistic phonemes
//! (pitch/energy stay predicted, so prosody errors do reach the decoder and
//! the mel). FP phonemes (true or predicted) keep predicted durations; frame
//! index maps keep both sides aligned.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, Utterance};
use crate::error::{Error, Result};
use crate::model::{bind_params, forward, Forcing, ModelConfig};
use crate::numerics::{Graph, Params};
use crate::predictor::FpPredictorModel;
use crate::text::{
    build_index_map, distance_to_nearest_fp, remove_fp_words, to_phonemes, AnnotatedSentence,
};

/// Input condition of an evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalCondition {
    NoFp,
    TrueFp,
    PredFp,
}

impl EvalCondition {
    pub fn name(&self) -> &'static str {
        match self {
            EvalCondition::NoFp => "no-fp",
            EvalCondition::TrueFp => "true-fp",
            EvalCondition::PredFp => "pred-fp",
        }
    }
}

/// Aggregated error statistics for one FP-distance group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n_phonemes: usize,
    pub n_frames: usize,
    pub mel_l1: f64,
    pub dur_mse: f64,
    pub pitch_mse: f64,
    pub energy_mse: f64,
}

#[derive(Debug, Clone, Default)]
struct GroupAccum {
    n_phonemes: usize,
    n_frames: usize,
    mel_abs_sum: f64,
    mel_count: usize,
    dur_sq_sum: f64,
    pitch_sq_sum: f64,
    energy_sq_sum: f64,
}

impl GroupAccum {
    fn finish(&self) -> GroupStats {
        let div = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        GroupStats {
            n_phonemes: self.n_phonemes,
            n_frames: self.n_frames,
            mel_l1: div(self.mel_abs_sum, self.mel_count),
            dur_mse: div(self.dur_sq_sum, self.n_phonemes),
            pitch_mse: div(self.pitch_sq_sum, self.n_phonemes),
            energy_mse: div(self.energy_sq_sum, self.n_phonemes),
        }
    }
}

/// Evaluation record for one condition over one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub condition: EvalCondition,
    pub n_utterances: usize,
    /// Mean absolute mel error over linguistic frames.
    pub mel_l1_linguistic: f64,
    /// MSE of predicted log-durations on linguistic phonemes.
    pub dur_mse: f64,
    pub pitch_mse: f64,
    pub energy_mse: f64,
    /// Breakdown by distance to the nearest FP in the input sequence:
    /// `d1`, `d2`, `far` (>= 3), `no_fp` (FP-free inputs).
    pub by_distance: BTreeMap<String, GroupStats>,
}

fn group_key(distance: Option<u32>) -> &'static str {
    match distance {
        Some(1) => "d1",
        Some(2) => "d2",
        Some(_) => "far",
        None => "no_fp",
    }
}

/// Evaluate one checkpoint on a set of utterances under one input condition.
pub fn evaluate(
    params: &Params,
    config: &ModelConfig,
    manifest: &CorpusManifest,
    utterances: &[Utterance],
    condition: EvalCondition,
    predictor: Option<&FpPredictorModel>,
) -> Result<EvalMetrics> {
    if utterances.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    let mut total = GroupAccum::default();
    let mut groups: BTreeMap<&'static str, GroupAccum> = BTreeMap::new();

    for utt in utterances {
        let (tokens, _) = remove_fp_words(&utt.sentence);
        let annotated: AnnotatedSentence = match condition {
            EvalCondition::NoFp => {
                crate::text::insert_fp_words(&tokens, &BTreeMap::new(), &manifest.lexicon)?
            }
            EvalCondition::TrueFp => utt.sentence.clone(),
            EvalCondition::PredFp => {
                let model = predictor.ok_or_else(|| {
                    Error::Input("PredFp evaluation requires an FP predictor".into())
                })?;
                model.argmax_insertion(&tokens, &manifest.lexicon)?
            }
        };
        let seq = to_phonemes(&annotated, &manifest.lexicon, &manifest.pron_table)?;
        let n = seq.len();

        // Linguistic ground truth of the source utterance, in order.
        let gt_ling_idx: Vec<usize> =
            (0..utt.seq.len()).filter(|&i| !utt.seq.fp_mask[i]).collect();
        let n_ling = seq.linguistic_len();
        if n_ling != gt_ling_idx.len() {
            return Err(Error::Analysis(format!(
                "utterance {}: input has {} linguistic phonemes, ground truth {}",
                utt.id,
                n_ling,
                gt_ling_idx.len()
            )));
        }

        // Force ground-truth durations on linguistic phonemes.
        let mut forced_durations = vec![1u32; n];
        let forced_mask: Vec<bool> = seq.fp_mask.iter().map(|&m| !m).collect();
        let mut ling = 0usize;
        for i in 0..n {
            if !seq.fp_mask[i] {
                forced_durations[i] = utt.durations[gt_ling_idx[ling]];
                ling += 1;
            }
        }

        let mut g = Graph::new();
        let bound = bind_params(&mut g, params, false);
        let out = forward(
            &mut g,
            &bound,
            config,
            &seq,
            utt.speaker.0 as usize,
            Forcing::DurationsPartial(&forced_durations, &forced_mask),
        )?;

        // Align frames: prediction via the input's frame map, ground truth via
        // the stored utterance's frame map.
        let map = build_index_map(&seq).with_frames(&seq.fp_mask, &out.durations_used)?;
        let gt_map = build_index_map(&utt.seq).with_frames(&utt.seq.fp_mask, &utt.durations)?;
        if map.frame_map.len() != gt_map.frame_map.len() {
            return Err(Error::Analysis(format!(
                "utterance {}: linguistic frame counts disagree ({} vs {})",
                utt.id,
                map.frame_map.len(),
                gt_map.frame_map.len()
            )));
        }

        let mel = g.value(out.mel);
        let log_dur = g.value(out.bundle.h_duration).data();
        let pitch_pred = g.value(out.pred.pitch).data();
        let energy_pred = g.value(out.pred.energy).data();
        let dist = distance_to_nearest_fp(&seq);

        // Per-phoneme errors.
        for (j, &pos) in map.phone_map.iter().enumerate() {
            let gt = gt_ling_idx[j];
            let dur_err = log_dur[pos] - (utt.durations[gt] as f64).ln();
            let pitch_err = pitch_pred[pos] - utt.pitch[gt];
            let energy_err = energy_pred[pos] - utt.energy[gt];
            let key = group_key(dist[pos]);
            for acc in [&mut total, groups.entry(key).or_default()] {
                acc.n_phonemes += 1;
                acc.dur_sq_sum += dur_err * dur_err;
                acc.pitch_sq_sum += pitch_err * pitch_err;
                acc.energy_sq_sum += energy_err * energy_err;
            }
        }

        // Per-frame mel errors; frames inherit the phoneme's distance group.
        let frame_dist: Vec<Option<u32>> = {
            let mut v = Vec::with_capacity(map.frame_map.len());
            for (p, range) in out.frame_ranges.iter().enumerate() {
                if !seq.fp_mask[p] {
                    for _ in range.clone() {
                        v.push(dist[p]);
                    }
                }
            }
            v
        };
        for (f, (&pf, &gf)) in map
            .frame_map
            .iter()
            .zip(&gt_map.frame_map)
            .enumerate()
        {
            let pred_row = mel.row(pf);
            let gt_row = &utt.mel[gf];
            let key = group_key(frame_dist[f]);
            for acc in [&mut total, groups.entry(key).or_default()] {
                acc.n_frames += 1;
                acc.mel_count += pred_row.len();
                for (a, b) in pred_row.iter().zip(gt_row) {
                    acc.mel_abs_sum += (a - b).abs();
                }
            }
        }
    }

    let overall = total.finish();
    Ok(EvalMetrics {
        condition,
        n_utterances: utterances.len(),
        mel_l1_linguistic: overall.mel_l1,
        dur_mse: overall.dur_mse,
        pitch_mse: overall.pitch_mse,
        energy_mse: overall.energy_mse,
        by_distance: groups
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.finish()))
            .collect(),
    })
}
