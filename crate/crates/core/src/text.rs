//! FP lexicon, sentence annotation, phoneme conversion, and the index maps
//! that align FP-inserted sequences with their FP-removed counterparts.
//!
//! Filled pauses attach to inter-token slots: a sentence of `n` tokens has
//! `n + 1` slots (slot `s` sits immediately before token `s`; slot `n` is the
//! sentence-final slot). Everything that is not part of an FP word is a
//! "linguistic" element.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FP_WORD_COUNT: usize = 13;

/// Index of an FP word in the lexicon (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FpWord(pub u8);

/// Linguistic token id; names live in the corpus manifest's side table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

/// Phoneme id; names live in the corpus manifest's side table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PhonemeId(pub u32);

/// The 13-word FP vocabulary plus the reserved "no insertion" marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpLexicon {
    /// Word names in class order (`fp01` .. `fp13`).
    pub words: Vec<String>,
    /// Phoneme expansion per word, parallel to `words`.
    pub expansions: Vec<Vec<PhonemeId>>,
    /// Reserved class name meaning "no insertion".
    pub none_marker: String,
}

impl FpLexicon {
    /// Validate the lexicon invariants; `token_names` is the linguistic
    /// vocabulary the FP names must not collide with.
    pub fn validate(&self, token_names: &[String]) -> Result<()> {
        if self.words.len() != FP_WORD_COUNT {
            return Err(Error::Lexicon(format!(
                "expected {} FP words, found {}",
                FP_WORD_COUNT,
                self.words.len()
            )));
        }
        if self.expansions.len() != self.words.len() {
            return Err(Error::Lexicon("expansion table length mismatch".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (w, exp) in self.words.iter().zip(&self.expansions) {
            if !seen.insert(w.clone()) {
                return Err(Error::Lexicon(format!("duplicate FP word {:?}", w)));
            }
            if w == &self.none_marker {
                return Err(Error::Lexicon(format!(
                    "FP word {:?} collides with the none marker",
                    w
                )));
            }
            if token_names.iter().any(|t| t == w) {
                return Err(Error::Lexicon(format!(
                    "FP word {:?} collides with a linguistic token",
                    w
                )));
            }
            if exp.is_empty() {
                return Err(Error::Lexicon(format!("FP word {:?} has no phonemes", w)));
            }
        }
        Ok(())
    }

    pub fn word_index(&self, name: &str) -> Option<FpWord> {
        self.words
            .iter()
            .position(|w| w == name)
            .map(|i| FpWord(i as u8))
    }

    pub fn word_name(&self, w: FpWord) -> &str {
        &self.words[w.0 as usize]
    }

    pub fn expansion(&self, w: FpWord) -> &[PhonemeId] {
        &self.expansions[w.0 as usize]
    }

    fn check_word(&self, w: FpWord) -> Result<()> {
        if (w.0 as usize) < self.words.len() {
            Ok(())
        } else {
            Err(Error::Lexicon(format!(
                "FP word index {} out of range {}",
                w.0,
                self.words.len()
            )))
        }
    }
}

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    GroundTruth,
    PredictedArgmax,
    Sampled,
    Random,
    None,
}

/// A token sequence with at most one FP word per inter-token slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<TokenId>,
    /// slot index → FP word; slots are the `|tokens| + 1` inter-token gaps.
    pub insertions: BTreeMap<usize, FpWord>,
    pub origin: Origin,
}

impl AnnotatedSentence {
    pub fn slot_count(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn has_fp(&self) -> bool {
        !self.insertions.is_empty()
    }
}

/// Phoneme sequence with per-phoneme FP bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub phonemes: Vec<PhonemeId>,
    /// True exactly on phonemes expanded from FP words.
    pub fp_mask: Vec<bool>,
    /// Originating insertion slot for FP phonemes; phonemes sharing a slot
    /// are contiguous.
    pub fp_group: Vec<Option<usize>>,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn linguistic_len(&self) -> usize {
        self.fp_mask.iter().filter(|&&m| !m).count()
    }

    pub fn has_fp(&self) -> bool {
        self.fp_mask.iter().any(|&m| m)
    }

    /// Keep only non-FP phonemes.
    pub fn without_fp(&self) -> PhonemeSequence {
        let phonemes = self
            .phonemes
            .iter()
            .zip(&self.fp_mask)
            .filter(|(_, &m)| !m)
            .map(|(&p, _)| p)
            .collect::<Vec<_>>();
        let n = phonemes.len();
        PhonemeSequence {
            phonemes,
            fp_mask: vec![false; n],
            fp_group: vec![None; n],
        }
    }
}

/// Token → phoneme expansion table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PronunciationTable {
    pub entries: BTreeMap<TokenId, Vec<PhonemeId>>,
}

impl PronunciationTable {
    pub fn get(&self, token: TokenId) -> Result<&[PhonemeId]> {
        self.entries
            .get(&token)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::FrontEnd(format!("no pronunciation for token {}", token.0)))
    }
}

/// Order-preserving map from FP-removed positions to FP-inserted positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinguisticIndexMap {
    /// One entry per non-FP phoneme: its index in the FP-inserted sequence.
    pub phone_map: Vec<usize>,
    /// Same at frame resolution; empty until durations are known.
    pub frame_map: Vec<usize>,
}

impl LinguisticIndexMap {
    /// Populate `frame_map` from per-phoneme frame counts of the FP-inserted
    /// sequence.
    pub fn with_frames(mut self, fp_mask: &[bool], durations: &[u32]) -> Result<Self> {
        if fp_mask.len() != durations.len() {
            return Err(Error::Input(format!(
                "mask length {} != durations length {}",
                fp_mask.len(),
                durations.len()
            )));
        }
        let mut frame_map = Vec::new();
        let mut frame = 0usize;
        for (&m, &d) in fp_mask.iter().zip(durations) {
            for f in frame..frame + d as usize {
                if !m {
                    frame_map.push(f);
                }
            }
            frame += d as usize;
        }
        self.frame_map = frame_map;
        Ok(self)
    }
}

/// Attach FP words to slots of a sentence.
pub fn insert_fp_words(
    tokens: &[TokenId],
    insertions: &BTreeMap<usize, FpWord>,
    lexicon: &FpLexicon,
) -> Result<AnnotatedSentence> {
    let n_slots = tokens.len() + 1;
    for (&slot, &word) in insertions {
        if slot >= n_slots {
            return Err(Error::SlotOutOfRange {
                slot,
                n_tokens: tokens.len(),
                n_slots,
            });
        }
        lexicon.check_word(word)?;
    }
    Ok(AnnotatedSentence {
        tokens: tokens.to_vec(),
        insertions: insertions.clone(),
        origin: Origin::None,
    })
}

/// Inverse of [`insert_fp_words`].
pub fn remove_fp_words(annotated: &AnnotatedSentence) -> (Vec<TokenId>, BTreeMap<usize, FpWord>) {
    (annotated.tokens.clone(), annotated.insertions.clone())
}

/// Expand an annotated sentence to phonemes, marking FP phonemes.
pub fn to_phonemes(
    annotated: &AnnotatedSentence,
    lexicon: &FpLexicon,
    pron: &PronunciationTable,
) -> Result<PhonemeSequence> {
    let mut seq = PhonemeSequence {
        phonemes: Vec::new(),
        fp_mask: Vec::new(),
        fp_group: Vec::new(),
    };
    for slot in 0..=annotated.tokens.len() {
        if let Some(&word) = annotated.insertions.get(&slot) {
            lexicon.check_word(word)?;
            for &ph in lexicon.expansion(word) {
                seq.phonemes.push(ph);
                seq.fp_mask.push(true);
                seq.fp_group.push(Some(slot));
            }
        }
        if slot < annotated.tokens.len() {
            for &ph in pron.get(annotated.tokens[slot])? {
                seq.phonemes.push(ph);
                seq.fp_mask.push(false);
                seq.fp_group.push(None);
            }
        }
    }
    Ok(seq)
}

/// Enumerate the non-FP positions of a sequence, in order.
pub fn build_index_map(seq: &PhonemeSequence) -> LinguisticIndexMap {
    let phone_map = seq
        .fp_mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .map(|(i, _)| i)
        .collect();
    LinguisticIndexMap {
        phone_map,
        frame_map: Vec::new(),
    }
}

/// Insert exactly one FP word: slot uniform over `|tokens| + 1` slots, word
/// uniform over the lexicon.
pub fn random_fp_insertion(
    tokens: &[TokenId],
    lexicon: &FpLexicon,
    rng: &mut ChaCha8Rng,
) -> Result<AnnotatedSentence> {
    if tokens.is_empty() {
        return Err(Error::Input("cannot insert an FP into an empty sentence".into()));
    }
    let slot = rng.random_range(0..=tokens.len());
    let word = FpWord(rng.random_range(0..lexicon.words.len()) as u8);
    let mut insertions = BTreeMap::new();
    insertions.insert(slot, word);
    let mut annotated = insert_fp_words(tokens, &insertions, lexicon)?;
    annotated.origin = Origin::Random;
    Ok(annotated)
}

/// Per-position distance to the nearest FP phoneme: 0 on FP phonemes, `None`
/// when the sequence contains no FP at all.
pub fn distance_to_nearest_fp(seq: &PhonemeSequence) -> Vec<Option<u32>> {
    let n = seq.len();
    if !seq.has_fp() {
        return vec![None; n];
    }
    let mut dist = vec![u32::MAX; n];
    let mut last_fp: Option<usize> = None;
    for i in 0..n {
        if seq.fp_mask[i] {
            last_fp = Some(i);
        }
        if let Some(j) = last_fp {
            dist[i] = (i - j) as u32;
        }
    }
    let mut next_fp: Option<usize> = None;
    for i in (0..n).rev() {
        if seq.fp_mask[i] {
            next_fp = Some(i);
        }
        if let Some(j) = next_fp {
            dist[i] = dist[i].min((j - i) as u32);
        }
    }
    dist.into_iter().map(Some).collect()
}

/// Index of the nearest FP phoneme per position (ties break toward the left),
/// used by the corpus oracle to attribute perturbations to an FP word.
pub fn nearest_fp_index(seq: &PhonemeSequence) -> Vec<Option<usize>> {
    let n = seq.len();
    let fp_positions: Vec<usize> = (0..n).filter(|&i| seq.fp_mask[i]).collect();
    if fp_positions.is_empty() {
        return vec![None; n];
    }
    (0..n)
        .map(|i| {
            let best = fp_positions
                .iter()
                .min_by_key(|&&j| (i.abs_diff(j), j))
                .copied();
            best.map(Some).unwrap_or(None)
        })
        .collect()
}

/// Small fixed lexicon shared by unit tests across modules.
#[cfg(test)]
pub(crate) fn test_lexicon() -> FpLexicon {
    FpLexicon {
        words: (1..=13).map(|i| format!("fp{:02}", i)).collect(),
        expansions: (0..13u32)
            .map(|i| {
                let len = 1 + (i as usize % 3);
                (0..len)
                    .map(|k| PhonemeId(100 + (i + k as u32) % 6))
                    .collect()
            })
            .collect(),
        none_marker: "none".to_string(),
    }
}
