use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::eval::{DecodeConfig, MetricsReport};
use crate::model::{MultimodalModel, Source};
use crate::params::{Ctx, Group};
use crate::rng;
use crate::synthlang::{Corpus, Utterance};
use crate::tensor::{Graph, Scalar, Tensor};
use crate::vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Asr,
    Mt,
}

#[derive(Clone, Debug)]
pub struct AsrItem<T> {
    pub frames: Tensor<T>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct MtItem {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Training data of one objective.
#[derive(Clone, Debug)]
pub enum Dataset<T> {
    Asr(Vec<AsrItem<T>>),
    Mt(Vec<MtItem>),
}

impl<T: Scalar> Dataset<T> {
    pub fn objective(&self) -> Objective {
        match self {
            Dataset::Asr(_) => Objective::Asr,
            Dataset::Mt(_) => Objective::Mt,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Asr(v) => v.len(),
            Dataset::Mt(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn speech(utts: &[Utterance], vocab: &Vocab) -> Self {
        Dataset::Asr(
            utts.iter()
                .map(|u| AsrItem {
                    frames: u.frames.cast(),
                    target: vocab.encode(&u.transcript),
                })
                .collect(),
        )
    }

    pub fn parallel_text(corpus: &Corpus, vocab: &Vocab) -> Self {
        Dataset::Mt(
            corpus
                .text
                .iter()
                .map(|t| MtItem {
                    source: vocab.encode(&t.source_text),
                    target: vocab.encode(&t.target_text),
                })
                .collect(),
        )
    }
}

/// Named datasets a recipe can refer to.
pub type Datasets<T> = BTreeMap<String, Dataset<T>>;

/// One training stage: which data, which groups learn, for how long.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub name: String,
    pub objective: Objective,
    /// Dataset keys; every one must match `objective` unless the phase
    /// mixes objectives on purpose (see [`Phase::mixed`]).
    pub data: Vec<String>,
    pub groups: BTreeSet<Group>,
    pub epochs: usize,
    /// Speech utterances scored for best-epoch selection.
    #[serde(default)]
    pub valid: Option<String>,
    #[serde(default)]
    pub mixed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    /// Validation interval in epochs for best-epoch selection; 0 disables it.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub decode: DecodeConfig,
}

impl TrainOptions {
    pub fn new(lr: f64) -> Self {
        TrainOptions {
            optimizer: AdamConfig::with_lr(lr),
            batch_size: 16,
            eval_every: 0,
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub name: String,
    pub objective: Objective,
    pub groups: BTreeSet<Group>,
    pub trainable_parameters: usize,
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    /// `(epoch, WER)` at each validation point; epoch 0 is before training.
    pub valid_wer: Vec<(usize, f64)>,
    pub selected_epoch: Option<usize>,
}

/// Digest of every frozen tensor, used to prove training left it alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenSnapshot(Vec<(usize, String, u64)>);

fn digest<T: Scalar>(t: &Tensor<T>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut buf = Vec::with_capacity(8);
    for &x in t.data() {
        buf.clear();
        x.write_le(&mut buf);
        for &b in &buf {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h ^ t.shape().iter().fold(0u64, |a, &d| a.wrapping_mul(31).wrapping_add(d as u64))
}

impl FrozenSnapshot {
    pub fn capture<T: Scalar>(model: &MultimodalModel<T>) -> Self {
        FrozenSnapshot(
            model
                .store
                .iter()
                .filter(|(_, p)| !p.trainable)
                .map(|(id, p)| (id.index(), p.name.clone(), digest(&p.value)))
                .collect(),
        )
    }

    /// Errors naming the first frozen tensor whose bits changed.
    pub fn verify<T: Scalar>(&self, model: &MultimodalModel<T>) -> Result<()> {
        let params: Vec<_> = model.store.iter().collect();
        for (index, name, hash) in &self.0 {
            let (_, p) = params[*index];
            if digest(&p.value) != *hash {
                return Err(Error::Consistency(format!("frozen tensor {name} changed during training")));
            }
        }
        Ok(())
    }
}

enum Cached<T> {
    Raw,
    Hidden(Vec<Tensor<T>>),
    Memory(Vec<Tensor<T>>),
}

fn cache_dataset<T: Scalar>(model: &MultimodalModel<T>, data: &Dataset<T>, groups: &BTreeSet<Group>) -> Result<Cached<T>> {
    let any = |gs: &[Group]| gs.iter().any(|g| groups.contains(g));
    match data {
        Dataset::Asr(items) => {
            if any(&[Group::SpeechEncoder, Group::EncoderAdapters]) {
                return Ok(Cached::Raw);
            }
            let memory = !any(&[Group::LengthAdapter]);
            let out = items
                .iter()
                .map(|it| {
                    model.infer(|m, cx| {
                        if memory {
                            m.encode_speech(cx, &it.frames)
                        } else {
                            m.speech_encoder_forward(cx, &it.frames)
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(if memory { Cached::Memory(out) } else { Cached::Hidden(out) })
        }
        Dataset::Mt(items) => {
            if any(&[Group::TextEncoder, Group::Embeddings]) {
                return Ok(Cached::Raw);
            }
            let out = items
                .iter()
                .map(|it| model.infer(|m, cx| m.encode_text(cx, &it.source)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Cached::Memory(out))
        }
    }
}

fn source<'a, T: Scalar>(data: &'a Dataset<T>, cache: &'a Cached<T>, i: usize) -> (Source<'a, T>, &'a [usize]) {
    let target = match data {
        Dataset::Asr(v) => v[i].target.as_slice(),
        Dataset::Mt(v) => v[i].target.as_slice(),
    };
    let src = match (cache, data) {
        (Cached::Memory(c), _) => Source::Memory(&c[i]),
        (Cached::Hidden(c), _) => Source::SpeechHidden(&c[i]),
        (Cached::Raw, Dataset::Asr(v)) => Source::Speech(&v[i].frames),
        (Cached::Raw, Dataset::Mt(v)) => Source::Text(&v[i].source),
    };
    (src, target)
}

/// Scores greedy (or beam) transcriptions of a speech dataset.
pub fn evaluate_items<T: Scalar>(
    model: &MultimodalModel<T>,
    vocab: &Vocab,
    items: &[AsrItem<T>],
    decode: DecodeConfig,
) -> Result<MetricsReport> {
    let refs: Vec<String> = items.iter().map(|it| vocab.decode(&it.target)).collect();
    let hyps = items
        .iter()
        .map(|it| {
            let ids = crate::eval::beam_decode(model, Source::Speech(&it.frames), decode.beam, decode.max_len)?;
            Ok(vocab.decode(&ids))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::compute(&refs, &hyps)
}

fn lookup<'d, T>(datasets: &'d Datasets<T>, key: &str) -> Result<&'d Dataset<T>> {
    datasets
        .get(key)
        .ok_or_else(|| Error::Config(format!("dataset {key:?} is not available")))
}

/// Trains `phase.groups` for `phase.epochs` epochs of shuffled mini-batches,
/// keeping the best validated epoch when a validation set is given, and
/// verifies that frozen tensors are bitwise unchanged.
pub fn run_phase<T: Scalar>(
    model: &mut MultimodalModel<T>,
    phase: &Phase,
    datasets: &Datasets<T>,
    vocab: &Vocab,
    opts: &TrainOptions,
    seed: u64,
) -> Result<PhaseLog> {
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let data: Vec<&Dataset<T>> = phase.data.iter().map(|k| lookup(datasets, k)).collect::<Result<_>>()?;
    for (k, d) in phase.data.iter().zip(&data) {
        if !phase.mixed && d.objective() != phase.objective {
            return Err(Error::Config(format!(
                "phase {} expects {:?} data but {k:?} is {:?}",
                phase.name,
                phase.objective,
                d.objective()
            )));
        }
    }
    let total: usize = data.iter().map(|d| d.len()).sum();
    if total == 0 && phase.epochs > 0 {
        return Err(Error::Config(format!("phase {} has no training data", phase.name)));
    }
    let valid = match &phase.valid {
        Some(k) if opts.eval_every > 0 => match lookup(datasets, k)? {
            Dataset::Asr(v) if !v.is_empty() => Some(v.as_slice()),
            Dataset::Asr(_) => None,
            Dataset::Mt(_) => return Err(Error::Config(format!("validation set {k:?} holds no speech"))),
        },
        _ => None,
    };

    model.set_trainable(&phase.groups);
    let mut log = PhaseLog {
        name: phase.name.clone(),
        objective: phase.objective,
        groups: phase.groups.clone(),
        trainable_parameters: model.trainable_parameters(),
        epoch_losses: Vec::new(),
        steps: 0,
        valid_wer: Vec::new(),
        selected_epoch: None,
    };
    if phase.epochs == 0 {
        return Ok(log);
    }
    let frozen = FrozenSnapshot::capture(model);
    let caches = data
        .iter()
        .map(|d| cache_dataset(model, d, &phase.groups))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<(usize, usize)> =
        data.iter().enumerate().flat_map(|(di, d)| (0..d.len()).map(move |i| (di, i))).collect();
    let mut shuffle = rng::rng(seed);
    let mut adam = Adam::new(opts.optimizer);

    // (valid WER, epoch, trainable values)
    type Best<T> = (f64, usize, Vec<(usize, Tensor<T>)>);
    let mut best: Option<Best<T>> = None;
    let mut consider = |model: &MultimodalModel<T>, epoch: usize, log: &mut PhaseLog| -> Result<()> {
        let Some(v) = valid else { return Ok(()) };
        let w = evaluate_items(model, vocab, v, opts.decode)?.wer;
        log.valid_wer.push((epoch, w));
        if best.as_ref().is_none_or(|(bw, _, _)| w < *bw) {
            let snapshot = model
                .store
                .iter()
                .filter(|(_, p)| p.trainable)
                .map(|(id, p)| (id.index(), p.value.clone()))
                .collect();
            best = Some((w, epoch, snapshot));
        }
        Ok(())
    };
    consider(model, 0, &mut log)?;

    for epoch in 1..=phase.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let items: Vec<(Source<'_, T>, &[usize])> =
                batch.iter().map(|&(di, i)| source(data[di], &caches[di], i)).collect();
            let n: usize = items.iter().map(|(_, t)| t.len() + 1).sum();
            let mut g = Graph::new();
            let loss = {
                let mut cx = Ctx::new(&mut g, &model.store);
                model.batch_loss(&mut cx, &items)?
            };
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Consistency(format!("non-finite loss in phase {}", phase.name)));
            }
            g.backward(loss)?;
            model.store.accumulate_grads(&g);
            if phase.mixed {
                adam.step_available(&mut model.store);
            } else {
                adam.step(&mut model.store)?;
            }
            loss_sum += value * n as f64;
            tokens += n;
        }
        log.epoch_losses.push(loss_sum / tokens as f64);
        if opts.eval_every > 0 && (epoch % opts.eval_every == 0 || epoch == phase.epochs) {
            consider(model, epoch, &mut log)?;
        }
    }
    log.steps = adam.steps();
    if let Some((_, epoch, snapshot)) = best {
        for (index, value) in snapshot {
            let id = model.store.iter().nth(index).map(|(id, _)| id).expect("index from this store");
            model.store.get_mut(id).value = value;
        }
        log.selected_epoch = Some(epoch);
    }
    frozen.verify(model)?;
    Ok(log)
}
