//! Decoding and evaluation metrics.

mod beam;
mod bleu;
mod coherence;

pub use beam::{beam_decode, beam_search, length_penalty, BeamConfig, BeamResult, Hypothesis, ModelScorer, StepScorer};
pub use bleu::{corpus_bleu, corpus_bleu_with, BleuMode, BleuReport, Smoothing};
pub use coherence::{coherence, coherence_by_distance, VectorSource, WordVectorTable};
