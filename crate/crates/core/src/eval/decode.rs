use crate::error::{Error, Result};
use crate::model::{MultimodalModel, Source};
use crate::tensor::{Scalar, Tensor};
use crate::vocab::{BOS, EOS};

/// Next-token log-probabilities for a decoder prefix (starting with BOS).
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// Scores continuations with a model whose encoder output is computed once.
pub struct ModelScorer<'m, T: Scalar> {
    model: &'m MultimodalModel<T>,
    memory: Tensor<T>,
}

impl<'m, T: Scalar> ModelScorer<'m, T> {
    pub fn new(model: &'m MultimodalModel<T>, source: Source<'_, T>) -> Result<Self> {
        let memory = model.infer(|m, cx| m.encode(cx, source))?;
        Ok(ModelScorer { model, memory })
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let logits = self.model.logits(Source::Memory(&self.memory), prefix)?;
        let v = logits.cols();
        let last = &logits.data()[logits.len() - v..];
        Ok(log_softmax(last))
    }
}

fn log_softmax<T: Scalar>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x.as_f64() - lse).collect()
}

/// A decoded token sequence (without BOS or EOS) and its length-normalized
/// log-probability, where the length counts EOS when it was emitted.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub steps: usize,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.log_prob / self.steps as f64
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Repeated argmax from BOS until EOS or `max_len` steps.
pub fn greedy_search(scorer: &mut impl StepScorer, max_len: usize) -> Result<Hypothesis> {
    let mut prefix = vec![BOS];
    let mut log_prob = 0.0;
    let mut steps = 0;
    while steps < max_len {
        let lp = scorer.log_probs(&prefix)?;
        let t = argmax(&lp);
        log_prob += lp[t];
        steps += 1;
        if t == EOS {
            break;
        }
        prefix.push(t);
    }
    Ok(Hypothesis {
        tokens: prefix[1..].to_vec(),
        log_prob,
        steps,
    })
}

/// Beam search over length-normalized log-probability. The greedy path is
/// always among the candidates, so the result never scores below it; with
/// `beam = 1` the result is the greedy output.
pub fn beam_search(scorer: &mut impl StepScorer, beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam < 1 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let greedy = greedy_search(scorer, max_len)?;
    if beam == 1 {
        return Ok(greedy);
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        steps: 0,
    }];
    let mut finished: Vec<Hypothesis> = vec![greedy];
    for _ in 0..max_len {
        let mut candidates: Vec<(Hypothesis, bool)> = Vec::new();
        for h in &live {
            let mut prefix = Vec::with_capacity(h.tokens.len() + 1);
            prefix.push(BOS);
            prefix.extend_from_slice(&h.tokens);
            let lp = scorer.log_probs(&prefix)?;
            for (t, &l) in lp.iter().enumerate() {
                let mut tokens = h.tokens.clone();
                let done = t == EOS;
                if !done {
                    tokens.push(t);
                }
                candidates.push((
                    Hypothesis {
                        tokens,
                        log_prob: h.log_prob + l,
                        steps: h.steps + 1,
                    },
                    done,
                ));
            }
        }
        candidates.sort_by(|a, b| b.0.score().total_cmp(&a.0.score()));
        candidates.truncate(beam);
        live.clear();
        for (h, done) in candidates {
            if done {
                finished.push(h);
            } else {
                live.push(h);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live);
    let mut best = 0;
    for (i, h) in finished.iter().enumerate() {
        if h.score() > finished[best].score() {
            best = i;
        }
    }
    Ok(finished.swap_remove(best))
}

/// Greedy transcription of one source.
pub fn greedy_decode<T: Scalar>(
    model: &MultimodalModel<T>,
    source: Source<'_, T>,
    max_len: usize,
) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let mut scorer = ModelScorer::new(model, source)?;
    Ok(greedy_search(&mut scorer, max_len)?.tokens)
}

pub fn beam_decode<T: Scalar>(
    model: &MultimodalModel<T>,
    source: Source<'_, T>,
    beam: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    if beam < 1 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let mut scorer = ModelScorer::new(model, source)?;
    Ok(beam_search(&mut scorer, beam, max_len)?.tokens)
}
