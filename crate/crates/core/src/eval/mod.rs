//! Decoding and error-rate metrics.

mod decode;
mod metrics;

pub use decode::{
    beam_decode, beam_search, greedy_decode, greedy_search, Hypothesis, ModelScorer, StepScorer,
};
pub use metrics::{
    cer, char_edits, levenshtein, oov_rate, relative_reduction, wer, word_edits, words, EditDistance,
    MetricsReport, OovMode,
};

use crate::error::Result;
use crate::model::{MultimodalModel, Source};
use crate::synthlang::Utterance;
use crate::tensor::{Scalar, Tensor};
use crate::vocab::Vocab;

/// How hypotheses are produced during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 1, max_len: 100 }
    }
}

pub fn transcribe<T: Scalar>(
    model: &MultimodalModel<T>,
    vocab: &Vocab,
    frames: &Tensor<f32>,
    decode: DecodeConfig,
) -> Result<String> {
    let frames: Tensor<T> = frames.cast();
    let ids = beam_decode(model, Source::Speech(&frames), decode.beam, decode.max_len)?;
    Ok(vocab.decode(&ids))
}

/// Transcribes every utterance and scores the result against its
/// reference transcript.
pub fn evaluate_asr<T: Scalar>(
    model: &MultimodalModel<T>,
    vocab: &Vocab,
    utterances: &[Utterance],
    decode: DecodeConfig,
) -> Result<(MetricsReport, Vec<String>)> {
    let hyps = utterances
        .iter()
        .map(|u| transcribe(model, vocab, &u.frames, decode))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&str> = utterances.iter().map(|u| u.transcript.as_str()).collect();
    Ok((MetricsReport::compute(&refs, &hyps)?, hyps))
}

#[cfg(test)]
mod tests;
