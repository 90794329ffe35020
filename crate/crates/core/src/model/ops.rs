//! Frame-level utilities: length regulation, restriction of bundles to
//! linguistic (non-FP) positions, and FP/linguistic frame splitting.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::forward::IntermediateBundle;
use crate::numerics::{Array, Graph};
use crate::text::LinguisticIndexMap;

/// Contiguous frame range per phoneme; ranges partition `0..total_frames`.
pub fn frame_ranges(durations: &[u32]) -> Vec<Range<usize>> {
    let mut ranges = Vec::with_capacity(durations.len());
    let mut start = 0usize;
    for &d in durations {
        ranges.push(start..start + d as usize);
        start += d as usize;
    }
    ranges
}

/// Repeat each phoneme representation by its duration (plain-array variant).
pub fn length_regulate(reps: &Array, durations: &[u32]) -> Result<(Array, Vec<Range<usize>>)> {
    if reps.rows() != durations.len() {
        return Err(Error::Dimension {
            op: "length_regulate",
            msg: format!("{} rows vs {} durations", reps.rows(), durations.len()),
            shape: reps.shape().to_vec(),
        });
    }
    if let Some(p) = durations.iter().position(|&d| d == 0) {
        return Err(Error::Input(format!(
            "length_regulate: zero duration at phoneme {}",
            p
        )));
    }
    let w = reps.row_width();
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    let mut data = Vec::with_capacity(total * w);
    for (p, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            data.extend_from_slice(reps.row(p));
        }
    }
    let shape = if reps.rank() == 1 {
        vec![total]
    } else {
        vec![total, w]
    };
    Ok((Array::new(shape, data)?, frame_ranges(durations)))
}

/// Restrict a bundle to linguistic positions: phoneme-level arrays filtered
/// by `phone_map`, the decoder by `frame_map`. The map's `frame_map` must
/// have been populated for the bundle's `durations_used`.
pub fn extract_linguistic(
    g: &mut Graph,
    bundle: &IntermediateBundle,
    durations_used: &[u32],
    map: &LinguisticIndexMap,
) -> Result<IntermediateBundle> {
    let n = g.value(bundle.h_encoder).rows();
    if durations_used.len() != n {
        return Err(Error::Analysis(format!(
            "durations length {} != {} phonemes",
            durations_used.len(),
            n
        )));
    }
    if map.phone_map.iter().any(|&i| i >= n) {
        return Err(Error::Analysis(format!(
            "phone map exceeds {} phonemes",
            n
        )));
    }
    let frames = g.value(bundle.h_decoder).rows();
    if map.frame_map.is_empty() && !map.phone_map.is_empty() && frames > 0 {
        return Err(Error::Analysis(
            "frame_map not populated; call with_frames first".into(),
        ));
    }
    if map.frame_map.iter().any(|&f| f >= frames) {
        return Err(Error::Analysis(format!("frame map exceeds {} frames", frames)));
    }
    Ok(IntermediateBundle {
        h_encoder: g.gather_rows(bundle.h_encoder, &map.phone_map)?,
        h_duration: g.gather_rows(bundle.h_duration, &map.phone_map)?,
        h_pitch_resid: g.gather_rows(bundle.h_pitch_resid, &map.phone_map)?,
        h_energy_resid: g.gather_rows(bundle.h_energy_resid, &map.phone_map)?,
        h_decoder: g.gather_rows(bundle.h_decoder, &map.frame_map)?,
    })
}

/// Plain-array snapshot of a bundle (plus the mel output, which the decoder
/// consistency term can target instead of the hidden state).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BundleValues {
    pub h_encoder: Array,
    pub h_duration: Array,
    pub h_pitch_resid: Array,
    pub h_energy_resid: Array,
    pub h_decoder: Array,
    pub mel: Array,
    pub durations_used: Vec<u32>,
}

impl BundleValues {
    pub fn capture(g: &Graph, out: &crate::model::forward::ForwardOut) -> Self {
        BundleValues {
            h_encoder: g.value(out.bundle.h_encoder).clone(),
            h_duration: g.value(out.bundle.h_duration).clone(),
            h_pitch_resid: g.value(out.bundle.h_pitch_resid).clone(),
            h_energy_resid: g.value(out.bundle.h_energy_resid).clone(),
            h_decoder: g.value(out.bundle.h_decoder).clone(),
            mel: g.value(out.mel).clone(),
            durations_used: out.durations_used.clone(),
        }
    }
}

/// Value-level counterpart of [`extract_linguistic`].
pub fn extract_linguistic_values(
    bundle: &BundleValues,
    map: &LinguisticIndexMap,
) -> Result<BundleValues> {
    let n = bundle.h_encoder.rows();
    if map.phone_map.iter().any(|&i| i >= n) {
        return Err(Error::Analysis(format!("phone map exceeds {} phonemes", n)));
    }
    if map.frame_map.iter().any(|&f| f >= bundle.h_decoder.rows()) {
        return Err(Error::Analysis("frame map exceeds decoder frames".into()));
    }
    Ok(BundleValues {
        h_encoder: bundle.h_encoder.gather_rows(&map.phone_map),
        h_duration: bundle.h_duration.gather_rows(&map.phone_map),
        h_pitch_resid: bundle.h_pitch_resid.gather_rows(&map.phone_map),
        h_energy_resid: bundle.h_energy_resid.gather_rows(&map.phone_map),
        h_decoder: bundle.h_decoder.gather_rows(&map.frame_map),
        mel: bundle.mel.gather_rows(&map.frame_map),
        durations_used: map
            .phone_map
            .iter()
            .map(|&i| bundle.durations_used[i])
            .collect(),
    })
}

/// Partition mel frames into (FP-only, linguistic-only), preserving order
/// within each part.
pub fn split_fp_linguistic_audio(
    mel: &Array,
    durations: &[u32],
    fp_mask: &[bool],
) -> Result<(Array, Array)> {
    if durations.len() != fp_mask.len() {
        return Err(Error::Input(format!(
            "durations {} vs mask {}",
            durations.len(),
            fp_mask.len()
        )));
    }
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    if total != mel.rows() {
        return Err(Error::ShapeMismatch {
            op: "split_fp_linguistic_audio",
            left: mel.shape().to_vec(),
            right: vec![total, mel.row_width()],
        });
    }
    let mut fp_idx = Vec::new();
    let mut ling_idx = Vec::new();
    for (p, range) in frame_ranges(durations).into_iter().enumerate() {
        let target = if fp_mask[p] { &mut fp_idx } else { &mut ling_idx };
        target.extend(range);
    }
    Ok((mel.gather_rows(&fp_idx), mel.gather_rows(&ling_idx)))
}
