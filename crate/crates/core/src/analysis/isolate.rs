//! Module-isolation forward passes.
//!
//! To attribute FP-insertion effects to a single module, the FP-inserted
//! run's inputs *to that module* are replaced, at linguistic positions, with
//! the representations of an FP-removed run; FP positions keep the FP run's
//! own representations. Upstream of the target boundary the two runs then
//! agree bitwise on linguistic positions, so any output difference at those
//! positions is caused by the target module reacting to the FP elements in
//! its input.

use crate::error::{Error, Result};
use crate::model::{
    bind_params, decode_stage, duration_from_log, encode_stage, frame_ranges, predictor_net,
    resid_stage, BoundParams, ModelConfig, ModuleId,
};
use crate::numerics::{Array, Graph, Params, Var};
use crate::text::{build_index_map, distance_to_nearest_fp, PhonemeSequence};

/// Result of one isolated comparison: target-module outputs restricted to
/// linguistic positions under both runs, plus the substituted upstream pair
/// for bitwise verification.
#[derive(Debug, Clone)]
pub struct IsolatedOutputs {
    pub target: ModuleId,
    /// Target outputs under the (substituted) FP-inserted input.
    pub fp_outputs: Array,
    /// Target outputs under the FP-removed input.
    pub nofp_outputs: Array,
    /// Raw predictor scalars at linguistic positions (pitch/energy targets).
    pub fp_scalars: Option<Array>,
    pub nofp_scalars: Option<Array>,
    /// Upstream (target-input) representations at linguistic positions for
    /// the FP run after substitution and for the no-FP run; bitwise equal by
    /// construction. `None` for the encoder, which has no upstream module.
    pub upstream_fp: Option<Array>,
    pub upstream_nofp: Option<Array>,
    /// Distance to the nearest FP phoneme per output row (`None` = no FP in
    /// the utterance). For the decoder this is per frame, inherited from the
    /// frame's source phoneme.
    pub fp_distance: Vec<Option<u32>>,
}

/// Replace rows of `fp_full` at `positions` with the rows of `nofp` (row `j`
/// of `nofp` goes to `positions[j]`).
fn substitute_rows(fp_full: &Array, nofp: &Array, positions: &[usize]) -> Result<Array> {
    if nofp.rows() != positions.len() || fp_full.row_width() != nofp.row_width() {
        return Err(Error::Analysis(format!(
            "substitution shape mismatch: {:?} vs {:?} at {} positions",
            fp_full.shape(),
            nofp.shape(),
            positions.len()
        )));
    }
    let mut out = fp_full.clone();
    let w = fp_full.row_width();
    for (j, &pos) in positions.iter().enumerate() {
        let src = nofp.row(j);
        out.data_mut()[pos * w..pos * w + w].copy_from_slice(src);
    }
    Ok(out)
}

/// Shared inference pieces of the no-FP run.
struct NofpRun {
    enc: Array,
    durations_real: Vec<f64>,
    durations_used: Vec<u32>,
    pitch_resid: Array,
    energy_resid: Array,
    pitch_scalars: Array,
    energy_scalars: Array,
    decoder: Array,
}

fn inference_stages(
    g: &mut Graph,
    bound: &BoundParams,
    config: &ModelConfig,
    seq: &PhonemeSequence,
    speaker: usize,
) -> Result<(Var, Var, Var, Var, Var, Var)> {
    let ids: Vec<usize> = seq.phonemes.iter().map(|p| p.0 as usize).collect();
    let enc = encode_stage(g, bound, config, &ids, speaker)?;
    let log_dur = predictor_net(g, bound, "dur", enc)?;
    let pitch_hat = predictor_net(g, bound, "pitch", enc)?;
    let pitch_resid = resid_stage(g, bound, config, "bins.pitch", enc, pitch_hat)?;
    let energy_hat = predictor_net(g, bound, "energy", pitch_resid)?;
    let energy_resid = resid_stage(g, bound, config, "bins.energy", pitch_resid, energy_hat)?;
    Ok((enc, log_dur, pitch_hat, pitch_resid, energy_hat, energy_resid))
}

fn run_nofp(
    params: &Params,
    config: &ModelConfig,
    seq: &PhonemeSequence,
    speaker: usize,
) -> Result<NofpRun> {
    let mut g = Graph::new();
    let bound = bind_params(&mut g, params, false);
    let (enc, log_dur, pitch_hat, pitch_resid, energy_hat, energy_resid) =
        inference_stages(&mut g, &bound, config, seq, speaker)?;
    let durations_real: Vec<f64> = g.value(log_dur).data().iter().map(|v| v.exp()).collect();
    let durations_used: Vec<u32> = g
        .value(log_dur)
        .data()
        .iter()
        .map(|&v| duration_from_log(v, config))
        .collect();
    let counts: Vec<usize> = durations_used.iter().map(|&d| d as usize).collect();
    let frames = g.repeat_rows(energy_resid, &counts)?;
    let decoder = decode_stage(&mut g, &bound, config, frames)?;
    Ok(NofpRun {
        enc: g.value(enc).clone(),
        durations_real,
        durations_used,
        pitch_resid: g.value(pitch_resid).clone(),
        energy_resid: g.value(energy_resid).clone(),
        pitch_scalars: g.value(pitch_hat).clone(),
        energy_scalars: g.value(energy_hat).clone(),
        decoder: g.value(decoder).clone(),
    })
}

/// Compare one target module's outputs between an FP-inserted sequence and
/// its FP-removed counterpart, substituting no-FP representations at the
/// target's input boundary (inference mode throughout).
pub fn isolated_forward(
    params: &Params,
    config: &ModelConfig,
    fp_seq: &PhonemeSequence,
    nofp_seq: &PhonemeSequence,
    speaker: usize,
    target: ModuleId,
) -> Result<IsolatedOutputs> {
    // Precondition: nofp_seq is exactly the FP-removed fp_seq.
    if nofp_seq.has_fp() {
        return Err(Error::Analysis("no-FP sequence contains FP phonemes".into()));
    }
    let map = build_index_map(fp_seq);
    let filtered: Vec<_> = map.phone_map.iter().map(|&i| fp_seq.phonemes[i]).collect();
    if filtered != nofp_seq.phonemes {
        return Err(Error::Analysis(
            "no-FP sequence is not the FP-removed input".into(),
        ));
    }
    if nofp_seq.is_empty() {
        return Err(Error::Analysis("no linguistic phonemes to compare".into()));
    }

    let nofp = run_nofp(params, config, nofp_seq, speaker)?;
    let dist_all = distance_to_nearest_fp(fp_seq);
    let phoneme_dist: Vec<Option<u32>> =
        map.phone_map.iter().map(|&pos| dist_all[pos]).collect();

    let mut g = Graph::new();
    let bound = bind_params(&mut g, params, false);
    let ids: Vec<usize> = fp_seq.phonemes.iter().map(|p| p.0 as usize).collect();

    match target {
        ModuleId::Encoder => {
            // First module: nothing upstream to substitute.
            let enc_fp = encode_stage(&mut g, &bound, config, &ids, speaker)?;
            let fp_outputs = g.value(enc_fp).gather_rows(&map.phone_map);
            Ok(IsolatedOutputs {
                target,
                fp_outputs,
                nofp_outputs: nofp.enc,
                fp_scalars: None,
                nofp_scalars: None,
                upstream_fp: None,
                upstream_nofp: None,
                fp_distance: phoneme_dist,
            })
        }
        ModuleId::Duration | ModuleId::Pitch => {
            // Boundary: encoder output.
            let enc_fp = encode_stage(&mut g, &bound, config, &ids, speaker)?;
            let substituted = substitute_rows(g.value(enc_fp), &nofp.enc, &map.phone_map)?;
            let upstream_fp = substituted.gather_rows(&map.phone_map);
            let sub = g.constant(substituted);
            if target == ModuleId::Duration {
                let log_dur = predictor_net(&mut g, &bound, "dur", sub)?;
                let real: Vec<f64> = g
                    .value(log_dur)
                    .data()
                    .iter()
                    .map(|v| v.exp())
                    .collect();
                let fp_outputs =
                    Array::vector(map.phone_map.iter().map(|&i| real[i]).collect());
                Ok(IsolatedOutputs {
                    target,
                    fp_outputs,
                    nofp_outputs: Array::vector(nofp.durations_real.clone()),
                    fp_scalars: None,
                    nofp_scalars: None,
                    upstream_fp: Some(upstream_fp),
                    upstream_nofp: Some(nofp.enc),
                    fp_distance: phoneme_dist,
                })
            } else {
                let pitch_hat = predictor_net(&mut g, &bound, "pitch", sub)?;
                let resid = resid_stage(&mut g, &bound, config, "bins.pitch", sub, pitch_hat)?;
                Ok(IsolatedOutputs {
                    target,
                    fp_outputs: g.value(resid).gather_rows(&map.phone_map),
                    nofp_outputs: nofp.pitch_resid,
                    fp_scalars: Some(g.value(pitch_hat).gather_rows(&map.phone_map)),
                    nofp_scalars: Some(nofp.pitch_scalars),
                    upstream_fp: Some(upstream_fp),
                    upstream_nofp: Some(nofp.enc),
                    fp_distance: phoneme_dist,
                })
            }
        }
        ModuleId::Energy => {
            // Boundary: pitch-module output (residual-added representation).
            let (_enc, _logd, _phat, pitch_resid_fp, _ehat, _eres) =
                inference_stages(&mut g, &bound, config, fp_seq, speaker)?;
            let substituted =
                substitute_rows(g.value(pitch_resid_fp), &nofp.pitch_resid, &map.phone_map)?;
            let upstream_fp = substituted.gather_rows(&map.phone_map);
            let sub = g.constant(substituted);
            let energy_hat = predictor_net(&mut g, &bound, "energy", sub)?;
            let resid = resid_stage(&mut g, &bound, config, "bins.energy", sub, energy_hat)?;
            Ok(IsolatedOutputs {
                target,
                fp_outputs: g.value(resid).gather_rows(&map.phone_map),
                nofp_outputs: nofp.energy_resid,
                fp_scalars: Some(g.value(energy_hat).gather_rows(&map.phone_map)),
                nofp_scalars: Some(nofp.energy_scalars),
                upstream_fp: Some(upstream_fp),
                upstream_nofp: Some(nofp.pitch_resid),
                fp_distance: phoneme_dist,
            })
        }
        ModuleId::Decoder => {
            // Boundary: frame-level decoder input. Linguistic phonemes take
            // the no-FP run's durations so linguistic frames pair up 1:1.
            let (_enc, log_dur, _phat, _presid, _ehat, energy_resid_fp) =
                inference_stages(&mut g, &bound, config, fp_seq, speaker)?;
            let n = fp_seq.len();
            let mut durations = vec![0u32; n];
            for (j, &pos) in map.phone_map.iter().enumerate() {
                durations[pos] = nofp.durations_used[j];
            }
            let logd = g.value(log_dur).data();
            for i in 0..n {
                if fp_seq.fp_mask[i] {
                    durations[i] = duration_from_log(logd[i], config);
                }
            }
            let counts: Vec<usize> = durations.iter().map(|&d| d as usize).collect();
            let frames_fp = g.repeat_rows(energy_resid_fp, &counts)?;
            // Frame-resolution linguistic index map.
            let fmap = build_index_map(fp_seq)
                .with_frames(&fp_seq.fp_mask, &durations)?
                .frame_map;
            let nofp_frames = {
                // Reconstruct the no-FP run's decoder *input* frames.
                let (arr, _) =
                    crate::model::length_regulate(&nofp.energy_resid, &nofp.durations_used)?;
                arr
            };
            let substituted = substitute_rows(g.value(frames_fp), &nofp_frames, &fmap)?;
            let upstream_fp = substituted.gather_rows(&fmap);
            let sub = g.constant(substituted);
            let decoder = decode_stage(&mut g, &bound, config, sub)?;
            let fp_outputs = g.value(decoder).gather_rows(&fmap);
            // Frame-level distances inherit the source phoneme's distance.
            let mut frame_dist = Vec::with_capacity(fmap.len());
            for (p, range) in frame_ranges(&durations).iter().enumerate() {
                if !fp_seq.fp_mask[p] {
                    for _ in range.clone() {
                        frame_dist.push(dist_all[p]);
                    }
                }
            }
            Ok(IsolatedOutputs {
                target,
                fp_outputs,
                nofp_outputs: nofp.decoder,
                fp_scalars: None,
                nofp_scalars: None,
                upstream_fp: Some(upstream_fp),
                upstream_nofp: Some(nofp_frames),
                fp_distance: frame_dist,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_utterances, CorpusConfig, CorpusManifest, Utterance};
    use crate::model::init_params;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> (CorpusManifest, Vec<Utterance>, ModelConfig, Params) {
        let (manifest, utts) = generate_utterances(&CorpusConfig {
            seed: 81,
            n_train: 10,
            n_dev: 0,
            n_test: 4,
            ..CorpusConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig {
            embed_dim: 8,
            predictor_hidden: 8,
            bins: 4,
            n_mels: manifest.config.n_mels,
            n_phonemes: manifest.n_phonemes(),
            n_speakers: manifest.config.speakers.len(),
            ..ModelConfig::default()
        };
        let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(31)).unwrap();
        (manifest, utts, cfg, params)
    }

    #[test]
    fn fp_free_input_gives_identical_outputs_for_every_target() {
        let (_m, utts, cfg, params) = world();
        let utt = utts.iter().find(|u| !u.sentence.has_fp()).unwrap();
        let nofp = utt.seq.without_fp();
        for target in ModuleId::ALL {
            let iso =
                isolated_forward(&params, &cfg, &utt.seq, &nofp, 0, target).unwrap();
            assert_eq!(
                iso.fp_outputs.data(),
                iso.nofp_outputs.data(),
                "target {target}"
            );
            assert!(iso.fp_distance.iter().all(|d| d.is_none()));
        }
    }

    #[test]
    fn upstream_linguistic_rows_are_bitwise_equal_after_substitution() {
        let (_m, utts, cfg, params) = world();
        let utt = utts.iter().find(|u| u.sentence.has_fp()).unwrap();
        let nofp = utt.seq.without_fp();
        for target in [
            ModuleId::Duration,
            ModuleId::Pitch,
            ModuleId::Energy,
            ModuleId::Decoder,
        ] {
            let iso = isolated_forward(&params, &cfg, &utt.seq, &nofp, 0, target).unwrap();
            let up_fp = iso.upstream_fp.expect("upstream");
            let up_no = iso.upstream_nofp.expect("upstream");
            assert_eq!(up_fp.data(), up_no.data(), "target {target}");
        }
    }

    #[test]
    fn encoder_target_needs_no_substitution_but_differs_contextually() {
        let (_m, utts, cfg, params) = world();
        let utt = utts.iter().find(|u| u.sentence.has_fp()).unwrap();
        let nofp = utt.seq.without_fp();
        let iso = isolated_forward(&params, &cfg, &utt.seq, &nofp, 0, ModuleId::Encoder).unwrap();
        assert!(iso.upstream_fp.is_none());
        // FP tokens sit inside the conv receptive field of some linguistic
        // phoneme, so outputs differ somewhere.
        assert_ne!(iso.fp_outputs.data(), iso.nofp_outputs.data());
    }

    #[test]
    fn energy_outputs_at_far_positions_are_bitwise_equal() {
        // Beyond the energy predictor's receptive field, substituted inputs
        // are identical, so outputs there must match exactly.
        let (_m, utts, cfg, params) = world();
        for utt in utts.iter().filter(|u| u.sentence.has_fp()) {
            let nofp = utt.seq.without_fp();
            let iso =
                isolated_forward(&params, &cfg, &utt.seq, &nofp, 0, ModuleId::Energy).unwrap();
            let w = iso.fp_outputs.row_width();
            for (j, d) in iso.fp_distance.iter().enumerate() {
                if d.map_or(false, |d| d >= 5) {
                    assert_eq!(
                        &iso.fp_outputs.data()[j * w..(j + 1) * w],
                        &iso.nofp_outputs.data()[j * w..(j + 1) * w],
                        "utterance {} row {}",
                        utt.id,
                        j
                    );
                }
            }
        }
    }

    #[test]
    fn inconsistent_sequences_are_rejected() {
        let (_m, utts, cfg, params) = world();
        let a = &utts[0];
        let b = utts.iter().find(|u| u.id != a.id && u.seq.phonemes != a.seq.phonemes).unwrap();
        let r = isolated_forward(
            &params,
            &cfg,
            &a.seq,
            &b.seq.without_fp(),
            0,
            ModuleId::Pitch,
        );
        assert!(r.is_err());
    }

    #[test]
    fn decoder_target_aligns_linguistic_frames() {
        let (_m, utts, cfg, params) = world();
        let utt = utts.iter().find(|u| u.sentence.has_fp()).unwrap();
        let nofp = utt.seq.without_fp();
        let iso = isolated_forward(&params, &cfg, &utt.seq, &nofp, 0, ModuleId::Decoder).unwrap();
        assert_eq!(iso.fp_outputs.rows(), iso.nofp_outputs.rows());
        assert_eq!(iso.fp_distance.len(), iso.fp_outputs.rows());
    }
}
