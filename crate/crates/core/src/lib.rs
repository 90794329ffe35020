//! Desk-scale spontaneous speech synthesis testbed.
//!
//! This crate trains and analyzes a miniature non-autoregressive TTS model on a
//! synthetic speech-feature corpus with filled pauses (FPs): hesitation words such
//! as "uh"/"um" inserted between ordinary tokens. It covers the full loop:
//!
//! * [`text`] — FP lexicon, sentence annotation, phoneme conversion, and the index
//!   maps that align FP-inserted and FP-removed sequences.
//! * [`corpus`] — a deterministic synthetic corpus generator whose prosody features
//!   are measurably perturbed around FPs, plus JSONL persistence.
//! * [`predictor`] — a per-slot FP word prediction model used for inference-time
//!   insertion and for sampling pseudo-FP sentences.
//! * [`numerics`] — a small reverse-mode autodiff core (dense f64 arrays, tape,
//!   Adam, finite-difference gradient checking).
//! * [`model`] — the acoustic model: encoder, duration/pitch/energy predictors,
//!   length regulator, decoder; every module's representation is exposed.
//! * [`training`] — teacher pretraining and student training with a consistency
//!   regularizer that ties the non-FP (linguistic) representations of FP-inserted
//!   synthesis to a frozen teacher's FP-free synthesis.
//! * [`analysis`] — module-isolation analysis of how FP insertion perturbs each
//!   module, via representation substitution, with cosine/error profiles grouped
//!   by distance to the nearest FP.
//! * [`experiment`] — reproducible end-to-end experiment pipeline with config
//!   hashing and stage skipping.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod predictor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
