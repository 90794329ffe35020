//! Training loops.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusManifest, Utterance};
use crate::error::{Error, Result};
use crate::model::{
    bind_params, collect_grads, extract_linguistic, forward, tts_loss, BoundParams, BundleValues,
    ForcedValues, Forcing, ForwardOut, IntermediateBundle, ModelConfig, ModuleId, TtsLossTargets,
};
use crate::numerics::{Adam, Array, Graph, Params, Var};
use crate::predictor::PseudoEntry;
use crate::text::{build_index_map, remove_fp_words, random_fp_insertion, to_phonemes, FpLexicon};
use crate::training::cache::{cache_teacher_bundles, TeacherBundleCache};
use crate::training::{
    HistoryRow, ModuleWeights, RegularizationConfig, TrainConfig, TrainHistory,
};

/// RNG stream tags so that independent decisions never share a stream.
const STREAM_INIT: u64 = 20;
const STREAM_BATCH: u64 = 21;
const STREAM_PSEUDO: u64 = 22;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Both sides of one consistency comparison, restricted to linguistic
/// elements and shape-aligned per module.
pub struct RegTermSides<'a> {
    pub student: &'a IntermediateBundle,
    /// Linguistic rows of the student mel (only consulted when the decoder
    /// term targets the mel output).
    pub student_mel: Option<Var>,
    pub teacher: &'a BundleValues,
}

/// Weighted sum over modules of the mean absolute difference between student
/// and teacher linguistic representations. Differentiable with respect to the
/// student side only (the teacher enters as constants).
pub fn regularization_term(
    g: &mut Graph,
    sides: RegTermSides<'_>,
    weights: &ModuleWeights,
    decoder_on_mel: bool,
) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (&module, &w) in weights {
        if w == 0.0 {
            continue;
        }
        let (student_var, teacher_arr): (Var, &Array) = match module {
            ModuleId::Encoder => (sides.student.h_encoder, &sides.teacher.h_encoder),
            ModuleId::Duration => (sides.student.h_duration, &sides.teacher.h_duration),
            ModuleId::Pitch => (sides.student.h_pitch_resid, &sides.teacher.h_pitch_resid),
            ModuleId::Energy => (sides.student.h_energy_resid, &sides.teacher.h_energy_resid),
            ModuleId::Decoder => {
                if decoder_on_mel {
                    let mel = sides.student_mel.ok_or_else(|| {
                        Error::Config("decoder term targets mel but no mel was extracted".into())
                    })?;
                    (mel, &sides.teacher.mel)
                } else {
                    (sides.student.h_decoder, &sides.teacher.h_decoder)
                }
            }
        };
        let t = g.constant(teacher_arr.clone());
        let l1 = g.l1_loss(student_var, t)?;
        let scaled = g.scale(l1, w);
        acc = Some(match acc {
            None => scaled,
            Some(a) => g.add(a, scaled)?,
        });
    }
    Ok(acc.unwrap_or_else(|| g.constant_scalar(0.0)))
}

/// Pseudo bank for the `random` mode: one uniformly placed, uniformly chosen
/// FP word per sentence.
pub fn build_random_pseudo_bank(
    base: &[Utterance],
    lexicon: &FpLexicon,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PseudoEntry>> {
    if base.is_empty() {
        return Err(Error::Input("pseudo bank: empty base sentence set".into()));
    }
    let mut bank = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.random_range(0..base.len());
        let utt = &base[pick];
        let (tokens, _) = remove_fp_words(&utt.sentence);
        let annotated = random_fp_insertion(&tokens, lexicon, rng)?;
        bank.push(PseudoEntry {
            source_id: utt.id,
            annotated,
        });
    }
    Ok(bank)
}

struct BatchLoss {
    total: Var,
    mel_l1: f64,
    dur_mse: f64,
    pitch_mse: f64,
    energy_mse: f64,
}

/// Mean TTS loss over a batch of teacher-forced passes; returns the per-pass
/// forward outputs for reuse by the consistency terms.
fn tts_batch(
    g: &mut Graph,
    bound: &BoundParams,
    config: &ModelConfig,
    batch: &[&Utterance],
) -> Result<(BatchLoss, Vec<ForwardOut>)> {
    let mut outs = Vec::with_capacity(batch.len());
    let mut totals: Option<Var> = None;
    let mut mel_l1 = 0.0;
    let mut dur_mse = 0.0;
    let mut pitch_mse = 0.0;
    let mut energy_mse = 0.0;
    for utt in batch {
        let forced = ForcedValues {
            durations: utt.durations.clone(),
            pitch: utt.pitch.clone(),
            energy: utt.energy.clone(),
        };
        let out = forward(
            g,
            bound,
            config,
            &utt.seq,
            utt.speaker.0 as usize,
            Forcing::Full(&forced),
        )?;
        let targets = TtsLossTargets::from_utterance(utt)?;
        let losses = tts_loss(g, &out, &targets)?;
        mel_l1 += g.value(losses.mel_l1).item();
        dur_mse += g.value(losses.dur_mse).item();
        pitch_mse += g.value(losses.pitch_mse).item();
        energy_mse += g.value(losses.energy_mse).item();
        totals = Some(match totals {
            None => losses.total,
            Some(acc) => g.add(acc, losses.total)?,
        });
        outs.push(out);
    }
    let b = batch.len() as f64;
    let sum = totals.expect("non-empty batch");
    let total = g.scale(sum, 1.0 / b);
    Ok((
        BatchLoss {
            total,
            mel_l1: mel_l1 / b,
            dur_mse: dur_mse / b,
            pitch_mse: pitch_mse / b,
            energy_mse: energy_mse / b,
        },
        outs,
    ))
}

fn sample_batch<'a>(
    train: &'a [Utterance],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a Utterance> {
    (0..batch_size)
        .map(|_| &train[rng.random_range(0..train.len())])
        .collect()
}

/// Pretrain a model on FP-included data with the plain TTS loss.
pub fn pretrain_teacher(
    config: &ModelConfig,
    train: &[Utterance],
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(Params, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::Input("train split is empty".into()));
    }
    let mut params = crate::model::init_params(config, &mut stream_rng(seed, STREAM_INIT))?;
    let mut opt = Adam::new(train_cfg.lr);
    let mut batch_rng = stream_rng(seed, STREAM_BATCH);
    let mut history = TrainHistory::default();
    for step in 1..=train_cfg.steps {
        let batch = sample_batch(train, train_cfg.batch_size, &mut batch_rng);
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &params, true);
        let (loss, _outs) = tts_batch(&mut g, &bound, config, &batch)?;
        let total = g.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::Divergence { step, loss: total });
        }
        g.backward(loss.total)?;
        let grads = collect_grads(&g, &bound);
        opt.step(&mut params, &grads)?;
        history.rows.push(HistoryRow {
            step,
            mel_l1: loss.mel_l1,
            dur_mse: loss.dur_mse,
            pitch_mse: loss.pitch_mse,
            energy_mse: loss.energy_mse,
            r_gt: 0.0,
            r_pseudo: 0.0,
            total,
        });
    }
    Ok((params, history))
}

/// Consistency term of one ground-truth-FP pass against the cached teacher.
fn gt_reg_term(
    g: &mut Graph,
    config: &ModelConfig,
    utt: &Utterance,
    out: &ForwardOut,
    cache: &TeacherBundleCache,
    weights: &ModuleWeights,
) -> Result<Var> {
    let map = build_index_map(&utt.seq).with_frames(&utt.seq.fp_mask, &out.durations_used)?;
    let extracted = extract_linguistic(g, &out.bundle, &out.durations_used, &map)?;
    let student_mel = if config.decoder_reg_on_mel {
        Some(g.gather_rows(out.mel, &map.frame_map)?)
    } else {
        None
    };
    let teacher = &cache.get(utt.id)?.values;
    regularization_term(
        g,
        RegTermSides {
            student: &extracted,
            student_mel,
            teacher,
        },
        weights,
        config.decoder_reg_on_mel,
    )
}

/// Consistency term of one pseudo-FP pass: linguistic phonemes teacher-forced
/// from the source utterance's ground truth, pseudo-FP phonemes driven by the
/// student's own predictions.
fn pseudo_reg_term(
    g: &mut Graph,
    bound: &BoundParams,
    config: &ModelConfig,
    manifest: &CorpusManifest,
    entry: &PseudoEntry,
    cache: &TeacherBundleCache,
    weights: &ModuleWeights,
) -> Result<Var> {
    let seq = to_phonemes(&entry.annotated, &manifest.lexicon, &manifest.pron_table)?;
    let cached = cache.get(entry.source_id)?;
    let n = seq.len();
    let n_ling = seq.linguistic_len();
    if n_ling != cached.truth.durations.len() {
        return Err(Error::Corpus(format!(
            "pseudo entry for {} has {} linguistic phonemes, source has {}",
            entry.source_id,
            n_ling,
            cached.truth.durations.len()
        )));
    }
    let forced_mask: Vec<bool> = seq.fp_mask.iter().map(|&m| !m).collect();
    let mut durations = vec![1u32; n];
    let mut pitch = vec![0.0; n];
    let mut energy = vec![0.0; n];
    let mut ling = 0usize;
    for i in 0..n {
        if !seq.fp_mask[i] {
            durations[i] = cached.truth.durations[ling];
            pitch[i] = cached.truth.pitch[ling];
            energy[i] = cached.truth.energy[ling];
            ling += 1;
        }
    }
    let forced = ForcedValues {
        durations,
        pitch,
        energy,
    };
    let out = forward(
        g,
        bound,
        config,
        &seq,
        cached.speaker,
        Forcing::Partial(&forced, &forced_mask),
    )?;
    let map = build_index_map(&seq).with_frames(&seq.fp_mask, &out.durations_used)?;
    let extracted = extract_linguistic(g, &out.bundle, &out.durations_used, &map)?;
    let student_mel = if config.decoder_reg_on_mel {
        Some(g.gather_rows(out.mel, &map.frame_map)?)
    } else {
        None
    };
    regularization_term(
        g,
        RegTermSides {
            student: &extracted,
            student_mel,
            teacher: &cached.values,
        },
        weights,
        config.decoder_reg_on_mel,
    )
}

/// Train a student against a frozen teacher.
///
/// Per step: a batch of ground-truth-FP passes contributes the mean TTS loss
/// and the mean ground-truth consistency term; one pseudo-bank entry (when
/// enabled) contributes the pseudo consistency term. The student starts from
/// a copy of the teacher weights.
pub fn train_student(
    teacher: &Params,
    config: &ModelConfig,
    manifest: &CorpusManifest,
    train: &[Utterance],
    bank: &[PseudoEntry],
    reg: &RegularizationConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(Params, TrainHistory)> {
    reg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("train split is empty".into()));
    }
    if reg.uses_pseudo() && bank.is_empty() {
        return Err(Error::Input(
            "pseudo regularization enabled but the pseudo bank is empty".into(),
        ));
    }
    let cache = if reg.alpha > 0.0 {
        Some(cache_teacher_bundles(teacher, config, train)?)
    } else {
        None
    };

    let mut params = teacher.clone();
    let mut opt = Adam::new(train_cfg.lr);
    let mut batch_rng = stream_rng(seed, STREAM_BATCH);
    let mut pseudo_rng = stream_rng(seed, STREAM_PSEUDO);
    let mut history = TrainHistory::default();

    for step in 1..=train_cfg.steps {
        let batch = sample_batch(train, train_cfg.batch_size, &mut batch_rng);
        let mut g = Graph::new();
        let bound = bind_params(&mut g, &params, true);
        let (tts, outs) = tts_batch(&mut g, &bound, config, &batch)?;

        let mut total = tts.total;
        let mut r_gt_value = 0.0;
        let mut r_pseudo_value = 0.0;
        if reg.alpha > 0.0 {
            let cache = cache.as_ref().expect("cache built when alpha > 0");
            let mut r_sum: Option<Var> = None;
            for (utt, out) in batch.iter().zip(&outs) {
                let r = gt_reg_term(&mut g, config, utt, out, cache, &reg.k)?;
                r_sum = Some(match r_sum {
                    None => r,
                    Some(acc) => g.add(acc, r)?,
                });
            }
            let r_gt = g.scale(r_sum.expect("non-empty batch"), 1.0 / batch.len() as f64);
            r_gt_value = g.value(r_gt).item();
            let mut reg_total = r_gt;
            if reg.uses_pseudo() {
                let entry = &bank[pseudo_rng.random_range(0..bank.len())];
                let r_pseudo =
                    pseudo_reg_term(&mut g, &bound, config, manifest, entry, cache, &reg.l)?;
                r_pseudo_value = g.value(r_pseudo).item();
                let scaled = g.scale(r_pseudo, reg.beta);
                reg_total = g.add(reg_total, scaled)?;
            }
            let weighted = g.scale(reg_total, reg.alpha);
            total = g.add(total, weighted)?;
        }

        let total_value = g.value(total).item();
        if !total_value.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: total_value,
            });
        }
        g.backward(total)?;
        let grads = collect_grads(&g, &bound);
        opt.step(&mut params, &grads)?;
        history.rows.push(HistoryRow {
            step,
            mel_l1: tts.mel_l1,
            dur_mse: tts.dur_mse,
            pitch_mse: tts.pitch_mse,
            energy_mse: tts.energy_mse,
            r_gt: r_gt_value,
            r_pseudo: r_pseudo_value,
            total: total_value,
        });
    }
    Ok((params, history))
}
