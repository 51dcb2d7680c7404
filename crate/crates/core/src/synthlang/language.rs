use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Knobs of the language generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageParams {
    pub num_phonemes: usize,
    pub feature_dim: usize,
    pub lexicon_size: usize,
    pub word_len: (usize, usize),
    pub duration_range: (f64, f64),
    pub max_duration_jitter: f64,
    /// Standard deviation of a language's offset from the universal
    /// phoneme prototypes.
    pub accent_scale: f64,
}

impl Default for LanguageParams {
    fn default() -> Self {
        LanguageParams {
            num_phonemes: 24,
            feature_dim: 16,
            lexicon_size: 120,
            word_len: (2, 3),
            duration_range: (3.0, 9.0),
            max_duration_jitter: 1.0,
            accent_scale: 0.3,
        }
    }
}

impl LanguageParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_phonemes < 2 || self.num_phonemes > 26 {
            return bad("num_phonemes must be in 2..=26");
        }
        if self.feature_dim == 0 || self.lexicon_size == 0 {
            return bad("feature_dim and lexicon_size must be positive");
        }
        if self.word_len.0 == 0 || self.word_len.0 > self.word_len.1 {
            return bad("word_len must be a non-empty range starting at 1 or more");
        }
        let (lo, hi) = self.duration_range;
        if !(lo >= 1.0 && lo <= hi) {
            return bad("duration_range must satisfy 1 <= lo <= hi");
        }
        if self.max_duration_jitter.is_nan() || self.max_duration_jitter < 0.0 || self.accent_scale.is_nan() || self.accent_scale < 0.0 {
            return bad("jitter and accent scale must be non-negative");
        }
        let p = self.num_phonemes as f64;
        let words: f64 = (self.word_len.0..=self.word_len.1)
            .map(|n| p * (p - 1.0).powi(n as i32 - 1))
            .sum();
        if words < 2.0 * self.lexicon_size as f64 {
            return bad("too few distinct words for the lexicon size");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phoneme {
    pub prototype: Vec<f64>,
    pub mean_duration: f64,
    pub duration_jitter: f64,
}

/// A synthetic language: acoustics per phoneme, a lexicon of phoneme strings
/// indexed by concept, and a word order applied to consecutive triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub language_id: String,
    pub params: LanguageParams,
    pub universe_seed: u64,
    pub phonemes: Vec<Phoneme>,
    pub lexicon: Vec<Vec<usize>>,
    pub word_order: [usize; 3],
}

/// Orthography of phoneme `i`.
pub fn phoneme_char(i: usize) -> char {
    (b'a' + i as u8) as char
}

/// Characters used by languages with `num_phonemes` phonemes.
pub fn alphabet(num_phonemes: usize) -> Vec<char> {
    (0..num_phonemes).map(phoneme_char).collect()
}

fn universal_prototypes(params: &LanguageParams, universe_seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::rng(universe_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..params.num_phonemes)
        .map(|_| (0..params.feature_dim).map(|_| normal.sample(&mut r)).collect())
        .collect()
}

fn sample_phoneme(params: &LanguageParams, universal: &[f64], r: &mut Rng) -> Phoneme {
    let accent = Normal::new(0.0, params.accent_scale).expect("valid accent scale");
    let (lo, hi) = params.duration_range;
    Phoneme {
        prototype: universal.iter().map(|&u| u + accent.sample(r)).collect(),
        mean_duration: if hi > lo { r.random_range(lo..hi) } else { lo },
        duration_jitter: if params.max_duration_jitter > 0.0 {
            r.random_range(0.0..params.max_duration_jitter)
        } else {
            0.0
        },
    }
}

fn sample_word(params: &LanguageParams, r: &mut Rng) -> Vec<usize> {
    let len = r.random_range(params.word_len.0..=params.word_len.1);
    let mut word: Vec<usize> = Vec::with_capacity(len);
    while word.len() < len {
        let p = r.random_range(0..params.num_phonemes);
        if word.last() != Some(&p) {
            word.push(p);
        }
    }
    word
}

fn random_order(r: &mut Rng) -> [usize; 3] {
    let mut order = [0, 1, 2];
    order.shuffle(r);
    order
}

impl LanguageSpec {
    /// An independent language over the universal phoneme set of `universe_seed`.
    pub fn generate(id: &str, params: &LanguageParams, universe_seed: u64, seed: u64) -> Result<Self> {
        params.validate()?;
        let universal = universal_prototypes(params, universe_seed);
        let mut r = rng::rng(seed);
        let phonemes = universal.iter().map(|u| sample_phoneme(params, u, &mut r)).collect();
        let mut lexicon: Vec<Vec<usize>> = Vec::with_capacity(params.lexicon_size);
        while lexicon.len() < params.lexicon_size {
            let w = sample_word(params, &mut r);
            if !lexicon.contains(&w) {
                lexicon.push(w);
            }
        }
        Ok(LanguageSpec {
            language_id: id.to_string(),
            params: params.clone(),
            universe_seed,
            phonemes,
            lexicon,
            word_order: random_order(&mut r),
        })
    }

    pub fn word(&self, concept: usize) -> Result<&[usize]> {
        self.lexicon.get(concept).map(Vec::as_slice).ok_or(Error::UnknownConcept(concept))
    }

    pub fn spell(&self, concept: usize) -> Result<String> {
        Ok(self.word(concept)?.iter().map(|&p| phoneme_char(p)).collect())
    }

    /// Concepts in spoken order: each run of three is permuted by the word
    /// order, and a shorter tail keeps the relative order the permutation
    /// gives its positions.
    pub fn order(&self, concepts: &[usize]) -> Vec<usize> {
        concepts
            .chunks(3)
            .flat_map(|chunk| {
                self.word_order
                    .iter()
                    .filter(|&&j| j < chunk.len())
                    .map(move |&j| chunk[j])
            })
            .collect()
    }

    /// Space-joined orthography of a concept sequence.
    pub fn transcribe(&self, concepts: &[usize]) -> Result<String> {
        let words = self
            .order(concepts)
            .into_iter()
            .map(|c| self.spell(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    /// Number of concepts whose words coincide in both languages.
    pub fn shared_lexicon(&self, other: &LanguageSpec) -> usize {
        self.lexicon.iter().zip(&other.lexicon).filter(|(a, b)| a == b).count()
    }

    /// Fraction of the lexicon two languages share; symmetric, 1 for a
    /// language with itself.
    pub fn relatedness(&self, other: &LanguageSpec) -> f64 {
        let n = self.lexicon.len().max(other.lexicon.len());
        if n == 0 {
            return 1.0;
        }
        self.shared_lexicon(other) as f64 / n as f64
    }
}

/// A relative of `base` sharing `round(r·|lexicon|)` words and
/// `round(r·P)` phonemes' acoustics; the rest is resampled from `seed`.
/// The word order is inherited when `r ≥ 0.5`.
pub fn derive_language(base: &LanguageSpec, r: f64, seed: u64, id: &str) -> Result<LanguageSpec> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("relatedness {r} outside [0, 1]")));
    }
    let params = &base.params;
    let mut g = rng::rng(seed);
    let n_lex = base.lexicon.len();
    let n_ph = base.phonemes.len();
    let keep_lex = mark(index::sample(&mut g, n_lex, (r * n_lex as f64).round() as usize), n_lex);
    let keep_ph = mark(index::sample(&mut g, n_ph, (r * n_ph as f64).round() as usize), n_ph);

    let universal = universal_prototypes(params, base.universe_seed);
    let phonemes = base
        .phonemes
        .iter()
        .enumerate()
        .map(|(i, p)| if keep_ph[i] { p.clone() } else { sample_phoneme(params, &universal[i], &mut g) })
        .collect();

    let mut lexicon: Vec<Option<Vec<usize>>> =
        base.lexicon.iter().enumerate().map(|(i, w)| keep_lex[i].then(|| w.clone())).collect();
    for i in 0..n_lex {
        if lexicon[i].is_some() {
            continue;
        }
        loop {
            let w = sample_word(params, &mut g);
            if w != base.lexicon[i] && !lexicon.iter().flatten().any(|x| *x == w) {
                lexicon[i] = Some(w);
                break;
            }
        }
    }
    Ok(LanguageSpec {
        language_id: id.to_string(),
        params: params.clone(),
        universe_seed: base.universe_seed,
        phonemes,
        lexicon: lexicon.into_iter().map(|w| w.expect("filled")).collect(),
        word_order: if r >= 0.5 { base.word_order } else { random_order(&mut g) },
    })
}

fn mark(chosen: index::IndexVec, n: usize) -> Vec<bool> {
    let mut m = vec![false; n];
    for i in chosen {
        m[i] = true;
    }
    m
}

/// Frames and transcript of one utterance. Each phoneme lasts
/// `max(1, round(N(μ, σ)))` frames of its prototype plus `N(0, noise²)`.
pub fn render_utterance(
    spec: &LanguageSpec,
    concepts: &[usize],
    noise_sigma: f64,
    seed: u64,
) -> Result<(Tensor<f32>, String)> {
    if concepts.is_empty() {
        return Err(Error::InvalidArgument("empty concept sequence".into()));
    }
    if noise_sigma.is_nan() || noise_sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("noise sigma {noise_sigma} is negative")));
    }
    let transcript = spec.transcribe(concepts)?;
    let f = spec.params.feature_dim;
    let mut r = rng::rng(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("checked sigma");
    let mut data = Vec::new();
    for c in spec.order(concepts) {
        for &p in spec.word(c)? {
            let ph = &spec.phonemes[p];
            let dur = Normal::new(ph.mean_duration, ph.duration_jitter)
                .map_err(|e| Error::InvalidArgument(format!("phoneme {p} duration: {e}")))?;
            let d = dur.sample(&mut r).round().max(1.0) as usize;
            for _ in 0..d {
                data.extend(ph.prototype.iter().map(|&x| (x + noise.sample(&mut r)) as f32));
            }
        }
    }
    let rows = data.len() / f;
    Ok((Tensor::new([rows, f], data)?, transcript))
}
