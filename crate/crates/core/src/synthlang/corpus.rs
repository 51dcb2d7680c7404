use std::collections::HashSet;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::language::{render_utterance, LanguageSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Sizes and rendering settings of one language's corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// Parallel sentences without speech.
    #[serde(default)]
    pub n_text: usize,
    pub sentence_len: (usize, usize),
    pub noise_sigma: f64,
    /// Share of concepts that never occur in train or valid speech.
    #[serde(default)]
    pub held_out_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: 200,
            n_valid: 50,
            n_test: 100,
            n_text: 2000,
            sentence_len: (3, 10),
            noise_sigma: 0.5,
            held_out_fraction: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub concepts: Vec<usize>,
    pub frames: Tensor<f32>,
    pub transcript: String,
    pub source_text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextPair {
    pub concepts: Vec<usize>,
    pub source_text: String,
    pub target_text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub language_id: String,
    pub seed: u64,
    pub config: CorpusConfig,
    pub train: Vec<Utterance>,
    pub valid: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub text: Vec<TextPair>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Generates speech splits and parallel text for `spec`, with source-side
/// sentences rendered in `source`. Concept sequences never repeat across
/// the speech splits, and the parallel text avoids the valid and test
/// sequences.
pub fn generate_corpus(
    spec: &LanguageSpec,
    source: &LanguageSpec,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<Corpus> {
    let (lo, hi) = cfg.sentence_len;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid sentence length range {lo}..={hi}")));
    }
    if !(0.0..1.0).contains(&cfg.held_out_fraction) {
        return Err(Error::Config("held_out_fraction must be in [0, 1)".into()));
    }
    let n_concepts = spec.lexicon.len();
    if source.lexicon.len() < n_concepts {
        return Err(Error::Config("source lexicon is smaller than the target lexicon".into()));
    }
    let mut r = rng::rng(rng::split_label(seed, "sentences"));
    let n_held = (cfg.held_out_fraction * n_concepts as f64).round() as usize;
    let held: HashSet<usize> = index::sample(&mut r, n_concepts, n_held).into_iter().collect();
    let seen: Vec<usize> = (0..n_concepts).filter(|c| !held.contains(c)).collect();
    let all: Vec<usize> = (0..n_concepts).collect();

    let mut used = HashSet::new();
    let mut draw = |pool: &[usize], n: usize, used: &mut HashSet<Vec<usize>>| -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            attempts += 1;
            if attempts > 100 * n + 1000 {
                return Err(Error::Corpus("could not draw enough distinct sentences".into()));
            }
            let len = r.random_range(lo..=hi);
            let s: Vec<usize> = (0..len).map(|_| pool[r.random_range(0..pool.len())]).collect();
            if used.insert(s.clone()) {
                out.push(s);
            }
        }
        Ok(out)
    };
    let test = draw(&all, cfg.n_test, &mut used)?;
    let valid = draw(&seen, cfg.n_valid, &mut used)?;
    let train = draw(&seen, cfg.n_train, &mut used)?;
    let mut text_used: HashSet<Vec<usize>> = test.iter().chain(&valid).cloned().collect();
    let text = draw(&all, cfg.n_text, &mut text_used)?;

    let render = |split: Split, seqs: Vec<Vec<usize>>| -> Result<Vec<Utterance>> {
        let base = rng::split_label(seed, split.as_str());
        seqs.into_iter()
            .enumerate()
            .map(|(i, concepts)| {
                let (frames, transcript) =
                    render_utterance(spec, &concepts, cfg.noise_sigma, rng::split(base, i as u64))?;
                Ok(Utterance {
                    source_text: source.transcribe(&concepts)?,
                    concepts,
                    frames,
                    transcript,
                })
            })
            .collect()
    };
    Ok(Corpus {
        language_id: spec.language_id.clone(),
        seed,
        config: cfg.clone(),
        train: render(Split::Train, train)?,
        valid: render(Split::Valid, valid)?,
        test: render(Split::Test, test)?,
        text: text
            .into_iter()
            .map(|concepts| {
                Ok(TextPair {
                    source_text: source.transcribe(&concepts)?,
                    target_text: spec.transcribe(&concepts)?,
                    concepts,
                })
            })
            .collect::<Result<_>>()?,
    })
}
