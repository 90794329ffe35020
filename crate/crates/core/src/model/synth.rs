//! Inference-mode synthesis under the three input conditions.

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::model::forward::{bind_params, forward, Forcing};
use crate::model::ops::BundleValues;
use crate::model::ModelConfig;
use crate::numerics::{Array, Graph, Params};
use crate::predictor::FpPredictorModel;
use crate::text::{
    insert_fp_words, remove_fp_words, to_phonemes, AnnotatedSentence, PhonemeSequence, TokenId,
};

/// Input condition for synthesis.
pub enum SynthesisMode<'a> {
    /// FP-removed text.
    NoFp,
    /// Ground-truth FP annotations.
    TrueFp,
    /// FP words inserted by the prediction model (argmax).
    PredFp(&'a FpPredictorModel),
}

pub struct SynthOutput {
    pub mel: Array,
    pub bundle: BundleValues,
    pub durations: Vec<u32>,
    pub annotated: AnnotatedSentence,
    pub seq: PhonemeSequence,
}

/// Synthesize one sentence in inference mode (no teacher forcing).
///
/// `tokens` is the FP-removed token sequence; `ground_truth` supplies the
/// annotations used by `TrueFp`.
pub fn synthesize(
    params: &Params,
    config: &ModelConfig,
    manifest: &CorpusManifest,
    tokens: &[TokenId],
    ground_truth: Option<&AnnotatedSentence>,
    speaker: usize,
    mode: SynthesisMode<'_>,
) -> Result<SynthOutput> {
    let annotated = match mode {
        SynthesisMode::NoFp => {
            insert_fp_words(tokens, &std::collections::BTreeMap::new(), &manifest.lexicon)?
        }
        SynthesisMode::TrueFp => {
            let gt = ground_truth.ok_or_else(|| {
                Error::Input("TrueFp synthesis requires ground-truth annotations".into())
            })?;
            let (gt_tokens, _) = remove_fp_words(gt);
            if gt_tokens != tokens {
                return Err(Error::Input(
                    "ground-truth annotation does not match the token sequence".into(),
                ));
            }
            gt.clone()
        }
        SynthesisMode::PredFp(model) => model.argmax_insertion(tokens, &manifest.lexicon)?,
    };
    let seq = to_phonemes(&annotated, &manifest.lexicon, &manifest.pron_table)?;
    let mut g = Graph::new();
    let bound = bind_params(&mut g, params, false);
    let out = forward(&mut g, &bound, config, &seq, speaker, Forcing::Inference)?;
    Ok(SynthOutput {
        mel: g.value(out.mel).clone(),
        bundle: BundleValues::capture(&g, &out),
        durations: out.durations_used,
        annotated,
        seq,
    })
}
