use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit counts of a minimal unit-cost alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditDistance {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_length: usize,
}

impl EditDistance {
    pub fn cost(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Errors per reference symbol; may exceed 1.
    pub fn rate(&self) -> f64 {
        self.cost() as f64 / self.reference_length as f64
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Cell {
    cost: usize,
    s: usize,
    i: usize,
    d: usize,
}

/// Levenshtein alignment in linear space. Among equal-cost alignments the
/// last edit is chosen in the order substitution, insertion, deletion.
pub fn levenshtein<S: PartialEq>(reference: &[S], hypothesis: &[S]) -> Result<EditDistance> {
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    let n = hypothesis.len();
    let mut prev: Vec<Cell> = (0..=n).map(|j| Cell { cost: j, s: 0, i: j, d: 0 }).collect();
    let mut cur = prev.clone();
    for (ri, r) in reference.iter().enumerate() {
        cur[0] = Cell { cost: ri + 1, s: 0, i: 0, d: ri + 1 };
        for j in 1..=n {
            let diag = prev[j - 1];
            let same = *r == hypothesis[j - 1];
            let sub = Cell {
                cost: diag.cost + usize::from(!same),
                s: diag.s + usize::from(!same),
                ..diag
            };
            let left = cur[j - 1];
            let ins = Cell { cost: left.cost + 1, i: left.i + 1, ..left };
            let up = prev[j];
            let del = Cell { cost: up.cost + 1, d: up.d + 1, ..up };
            let mut best = sub;
            if ins.cost < best.cost {
                best = ins;
            }
            if del.cost < best.cost {
                best = del;
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let last = prev[n];
    Ok(EditDistance {
        substitutions: last.s,
        insertions: last.i,
        deletions: last.d,
        reference_length: reference.len(),
    })
}

pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn pooled<'a, S: PartialEq + 'a>(
    refs: &[Vec<S>],
    hyps: &[Vec<S>],
) -> Result<EditDistance> {
    if refs.len() != hyps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut total = EditDistance::default();
    for (r, h) in refs.iter().zip(hyps) {
        let e = levenshtein(r, h)?;
        total.substitutions += e.substitutions;
        total.insertions += e.insertions;
        total.deletions += e.deletions;
        total.reference_length += e.reference_length;
    }
    if total.reference_length == 0 {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    Ok(total)
}

/// Corpus word edits: pooled over all pairs, words split on whitespace.
pub fn word_edits<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<EditDistance> {
    let r: Vec<Vec<&str>> = refs.iter().map(|s| words(s.as_ref())).collect();
    let h: Vec<Vec<&str>> = hyps.iter().map(|s| words(s.as_ref())).collect();
    pooled(&r, &h)
}

/// Corpus character edits, spaces included.
pub fn char_edits<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<EditDistance> {
    let r: Vec<Vec<char>> = refs.iter().map(|s| s.as_ref().chars().collect()).collect();
    let h: Vec<Vec<char>> = hyps.iter().map(|s| s.as_ref().chars().collect()).collect();
    pooled(&r, &h)
}

/// Corpus word error rate in percent.
pub fn wer<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<f64> {
    Ok(100.0 * word_edits(refs, hyps)?.rate())
}

/// Corpus character error rate in percent.
pub fn cer<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<f64> {
    Ok(100.0 * char_edits(refs, hyps)?.rate())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovMode {
    /// Share of test word tokens.
    #[default]
    Token,
    /// Share of distinct test word types.
    Type,
}

impl std::str::FromStr for OovMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(OovMode::Token),
            "type" => Ok(OovMode::Type),
            _ => Err(Error::InvalidArgument(format!("unknown OOV mode {s:?} (expected token or type)"))),
        }
    }
}

/// Percentage of test words whose type never occurs in the training
/// transcripts.
pub fn oov_rate<R: AsRef<str>, H: AsRef<str>>(train: &[R], test: &[H], mode: OovMode) -> Result<f64> {
    let known: HashSet<&str> = train.iter().flat_map(|s| words(s.as_ref())).collect();
    let mut tokens: Vec<&str> = test.iter().flat_map(|s| words(s.as_ref())).collect();
    if mode == OovMode::Type {
        tokens.sort_unstable();
        tokens.dedup();
    }
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let unseen = tokens.iter().filter(|w| !known.contains(*w)).count();
    Ok(100.0 * unseen as f64 / tokens.len() as f64)
}

/// `(base − system) / base`; zero when the base rate is zero.
pub fn relative_reduction(base: f64, system: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (base - system) / base
    }
}

/// Rates of one system on one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wer: f64,
    pub cer: f64,
    pub n_utterances: usize,
    pub word_edits: EditDistance,
    pub char_edits: EditDistance,
}

impl MetricsReport {
    pub fn compute<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<Self> {
        let w = word_edits(refs, hyps)?;
        let c = char_edits(refs, hyps)?;
        Ok(MetricsReport {
            wer: 100.0 * w.rate(),
            cer: 100.0 * c.rate(),
            n_utterances: refs.len(),
            word_edits: w,
            char_edits: c,
        })
    }
}
