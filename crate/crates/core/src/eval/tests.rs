use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::error::Error;
use crate::model::{ModelConfig, MultimodalModel, Source};
use crate::nn::PoolGeometry;
use crate::rng;
use crate::tensor::Tensor;
use crate::vocab::{BOS, EOS};

/// Full-matrix DP with an explicit backtrace; same tie-break as the
/// library (substitution, then insertion, then deletion).
fn dp_oracle<S: PartialEq>(r: &[S], h: &[S]) -> EditDistance {
    let (m, n) = (r.len(), h.len());
    let mut c = vec![vec![0usize; n + 1]; m + 1];
    for (i, row) in c.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in c[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = c[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            c[i][j] = sub.min(c[i][j - 1] + 1).min(c[i - 1][j] + 1);
        }
    }
    let mut e = EditDistance { reference_length: m, ..Default::default() };
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && c[i][j] == c[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            e.substitutions += usize::from(r[i - 1] != h[j - 1]);
            i -= 1;
            j -= 1;
        } else if j > 0 && c[i][j] == c[i][j - 1] + 1 {
            e.insertions += 1;
            j -= 1;
        } else {
            e.deletions += 1;
            i -= 1;
        }
    }
    e
}

/// Minimum cost over every edit script, by plain recursion.
fn exhaustive_cost<S: PartialEq>(r: &[S], h: &[S]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, _) => h.len(),
        (_, None) => r.len(),
        (Some((a, rr)), Some((b, hh))) => {
            let sub = exhaustive_cost(rr, hh) + usize::from(a != b);
            let ins = exhaustive_cost(r, hh) + 1;
            let del = exhaustive_cost(rr, h) + 1;
            sub.min(ins).min(del)
        }
    }
}

fn seq(len: std::ops::Range<usize>, alphabet: u8) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0..alphabet, len)
}

#[test]
fn identical_sequences_have_no_edits() {
    let e = levenshtein(&["a", "b"], &["a", "b"]).unwrap();
    assert_eq!(e, EditDistance { reference_length: 2, ..Default::default() });
    assert_eq!(wer(&["a b c"], &["a b c"]).unwrap(), 0.0);
    assert_eq!(cer(&["a b c"], &["a b c"]).unwrap(), 0.0);
}

#[test]
fn worked_word_example() {
    let r = words("a b c d");
    let h = words("a x c");
    let e = levenshtein(&r, &h).unwrap();
    assert_eq!((e.substitutions, e.insertions, e.deletions), (1, 0, 1));
    assert_eq!(exhaustive_cost(&r, &h), 2);
    assert_eq!(wer(&["a b c d"], &["a x c"]).unwrap(), 50.0);
}

#[test]
fn worked_character_example() {
    let r: Vec<char> = "kitten".chars().collect();
    let h: Vec<char> = "sitting".chars().collect();
    assert_eq!(levenshtein(&r, &h).unwrap().cost(), 3);
    assert_eq!(exhaustive_cost(&r, &h), 3);
    assert_eq!(cer(&["kitten"], &["sitting"]).unwrap(), 50.0);
}

#[test]
fn tie_break_prefers_substitution_then_insertion() {
    let e = levenshtein(&['a'], &['b']).unwrap();
    assert_eq!((e.substitutions, e.insertions, e.deletions), (1, 0, 0));
    let e = levenshtein(&['a', 'b'], &['b', 'a']).unwrap();
    assert_eq!(e, dp_oracle(&['a', 'b'], &['b', 'a']));
    assert_eq!(e.cost(), 2);
}

#[test]
fn empty_inputs() {
    assert!(matches!(levenshtein::<u8>(&[], &[1]), Err(Error::InvalidArgument(_))));
    let e = levenshtein(&[1, 2, 3], &[]).unwrap();
    assert_eq!((e.deletions, e.rate()), (3, 1.0));
    assert!(wer(&[""], &["a"]).is_err());
    assert!(wer(&["a"], &["a", "b"]).is_err());
    let e = levenshtein(&[1], &[2, 3, 4]).unwrap();
    assert!(e.rate() > 1.0);
}

#[test]
fn corpus_rate_pools_edits() {
    // One error in a 1-word reference, none in a 9-word reference.
    let refs = ["a", "b c d e f g h i j"];
    let hyps = ["x", "b c d e f g h i j"];
    assert_eq!(wer(&refs, &hyps).unwrap(), 10.0);
    let mean: f64 = refs
        .iter()
        .zip(&hyps)
        .map(|(r, h)| wer(&[r], &[h]).unwrap())
        .sum::<f64>()
        / 2.0;
    assert_eq!(mean, 50.0);
    let m = MetricsReport::compute(&refs, &hyps).unwrap();
    assert_eq!((m.wer, m.n_utterances, m.word_edits.reference_length), (10.0, 2, 10));
}

#[test]
fn oov_examples() {
    assert_eq!(oov_rate(&["a b c"], &["c b", "a"], OovMode::Token).unwrap(), 0.0);
    assert_eq!(oov_rate::<&str, &str>(&[], &["a b"], OovMode::Token).unwrap(), 100.0);
    let r = oov_rate(&["a b"], &["a c c"], OovMode::Token).unwrap();
    assert!((r - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(oov_rate(&["a b"], &["a c c"], OovMode::Type).unwrap(), 50.0);
    assert!(oov_rate(&["a"], &[""], OovMode::Token).is_err());
    assert_eq!("type".parse::<OovMode>().unwrap(), OovMode::Type);
    assert!("words".parse::<OovMode>().is_err());
}

#[test]
fn relative_reduction_examples() {
    assert_eq!(relative_reduction(40.0, 40.0), 0.0);
    assert_eq!(relative_reduction(50.0, 40.0), 0.2);
    assert_eq!(relative_reduction(0.0, 10.0), 0.0);
    assert!(relative_reduction(40.0, 50.0) < 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn linear_space_matches_backtrace_oracle(r in seq(1..12, 4), h in seq(0..12, 4)) {
        prop_assert_eq!(levenshtein(&r, &h).unwrap(), dp_oracle(&r, &h));
    }

    #[test]
    fn cost_is_the_exhaustive_minimum(r in seq(1..6, 3), h in seq(0..6, 3)) {
        prop_assert_eq!(levenshtein(&r, &h).unwrap().cost(), exhaustive_cost(&r, &h));
    }

    #[test]
    fn distance_is_symmetric(r in seq(1..10, 3), h in seq(1..10, 3)) {
        let a = levenshtein(&r, &h).unwrap();
        let b = levenshtein(&h, &r).unwrap();
        prop_assert_eq!(a.cost(), b.cost());
        prop_assert_eq!(a.insertions as isize - a.deletions as isize, b.deletions as isize - b.insertions as isize);
    }

    #[test]
    fn triangle_inequality(a in seq(1..8, 3), b in seq(1..8, 3), c in seq(1..8, 3)) {
        let d = |x: &[u8], y: &[u8]| levenshtein(x, y).unwrap().cost();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
    }

    #[test]
    fn relative_reduction_is_scale_invariant(base in 0.1f64..200.0, sys in 0.0f64..200.0, k in 0.01f64..100.0) {
        prop_assert_eq!(relative_reduction(base, base), 0.0);
        let a = relative_reduction(base, sys);
        let b = relative_reduction(k * base, k * sys);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn beam_never_scores_below_greedy(seed: u64, max_len in 1usize..6) {
        let mut s = HashScorer { vocab: 5, seed };
        let g = greedy_search(&mut s, max_len).unwrap();
        let b = beam_search(&mut s, 4, max_len).unwrap();
        prop_assert!(b.score() >= g.score());
    }

    #[test]
    fn beam_one_is_greedy(seed: u64, max_len in 0usize..8) {
        let mut s = HashScorer { vocab: 6, seed };
        prop_assert_eq!(beam_search(&mut s, 1, max_len).unwrap(), greedy_search(&mut s, max_len).unwrap());
    }
}

/// Deterministic pseudo-random next-token distributions keyed on the prefix.
struct HashScorer {
    vocab: usize,
    seed: u64,
}

impl StepScorer for HashScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&mut self, prefix: &[usize]) -> crate::Result<Vec<f64>> {
        let key = prefix.iter().fold(self.seed, |h, &t| rng::split(h, t as u64 + 1));
        let mut r = rng::rng(key);
        let logits: Vec<f64> = (0..self.vocab).map(|_| r.random_range(-3.0..3.0)).collect();
        let lse = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
        Ok(logits.iter().map(|x| x - lse).collect())
    }
}

fn brute_force_best(s: &mut HashScorer, max_len: usize) -> Hypothesis {
    // Tokens other than BOS/EOS are the searchable alphabet; every finished
    // sequence ends in EOS, unfinished ones stop at max_len.
    let alphabet: Vec<usize> = (0..s.vocab).filter(|&t| t != EOS).collect();
    let mut best: Option<Hypothesis> = None;
    let mut frontier = vec![Hypothesis { tokens: vec![], log_prob: 0.0, steps: 0 }];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for h in &frontier {
            let mut prefix = vec![BOS];
            prefix.extend(&h.tokens);
            let lp = s.log_probs(&prefix).unwrap();
            let done = Hypothesis { tokens: h.tokens.clone(), log_prob: h.log_prob + lp[EOS], steps: h.steps + 1 };
            if best.as_ref().is_none_or(|b| done.score() > b.score()) {
                best = Some(done);
            }
            for &t in &alphabet {
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                next.push(Hypothesis { tokens, log_prob: h.log_prob + lp[t], steps: h.steps + 1 });
            }
        }
        frontier = next;
    }
    for h in frontier {
        if best.as_ref().is_none_or(|b| h.score() > b.score()) {
            best = Some(h);
        }
    }
    best.unwrap()
}

#[test]
fn wide_beam_matches_enumeration() {
    // Two real tokens plus EOS; a beam of 3^3 keeps every path alive.
    for seed in 0..200 {
        let mut s = HashScorer { vocab: 3, seed };
        let beam = beam_search(&mut s, 27, 3).unwrap();
        let oracle = brute_force_best(&mut s, 3);
        assert_eq!(beam.tokens, oracle.tokens, "seed {seed}");
        assert!((beam.score() - oracle.score()).abs() < 1e-12);
    }
}

#[test]
fn beam_rejects_zero_width() {
    let mut s = HashScorer { vocab: 3, seed: 1 };
    assert!(beam_search(&mut s, 0, 3).is_err());
}

fn tiny_model() -> MultimodalModel<f32> {
    let cfg = ModelConfig {
        model_dim: 8,
        adapter_dim: 2,
        num_encoder_layers: 1,
        num_decoder_layers: 1,
        num_text_encoder_layers: 1,
        num_heads: 2,
        ff_dim: 8,
        feature_dim: 4,
        vocab_size: 9,
        length_adapter: vec![PoolGeometry::new(3, 2, 1)],
        max_frames: 64,
        max_source_len: 16,
        max_target_len: 16,
        adapters: true,
    };
    MultimodalModel::build(&cfg, 5).unwrap()
}

fn random_frames(seed: u64) -> Tensor<f32> {
    let mut r = rng::rng(seed);
    let len = r.random_range(3..30);
    Tensor::new([len, 4], (0..len * 4).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn model_decoding_basics() {
    let model = tiny_model();
    let x = random_frames(1);
    assert!(greedy_decode(&model, Source::Speech(&x), 0).unwrap().is_empty());
    let a = greedy_decode(&model, Source::Speech(&x), 10).unwrap();
    assert_eq!(a, greedy_decode(&model, Source::Speech(&x), 10).unwrap());
    assert!(a.len() <= 10);
    assert!(beam_decode(&model, Source::Speech(&x), 0, 10).is_err());
    for seed in 0..10 {
        let x = random_frames(seed);
        assert_eq!(
            beam_decode(&model, Source::Speech(&x), 1, 12).unwrap(),
            greedy_decode(&model, Source::Speech(&x), 12).unwrap()
        );
    }
}

#[test]
fn decode_config_and_evaluation() {
    let model = tiny_model();
    let vocab = crate::vocab::Vocab::new(&['a', 'b', 'c', 'd']);
    let d = DecodeConfig::default();
    assert_eq!((d.beam, d.max_len), (1, 100));
    let x = random_frames(3);
    let text = transcribe(&model, &vocab, &x, DecodeConfig { beam: 1, max_len: 6 }).unwrap();
    assert!(text.chars().count() <= 6);
    let utts: Vec<crate::synthlang::Utterance> = (0..3)
        .map(|i| crate::synthlang::Utterance {
            concepts: vec![i],
            frames: random_frames(10 + i as u64),
            transcript: "ab cd".into(),
            source_text: "x".into(),
        })
        .collect();
    let (m, hyps) = evaluate_asr(&model, &vocab, &utts, DecodeConfig { beam: 2, max_len: 8 }).unwrap();
    assert_eq!(hyps.len(), 3);
    let refs = vec!["ab cd"; 3];
    assert_eq!(m, MetricsReport::compute(&refs, &hyps).unwrap());
}
