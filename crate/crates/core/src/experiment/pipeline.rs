use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Role, RunSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_asr, oov_rate, MetricsReport, OovMode};
use crate::model::MultimodalModel;
use crate::params::Group;
use crate::rng;
use crate::synthlang::{alphabet, derive_language, generate_corpus, Corpus, LanguageSpec, Split};
use crate::trainer::{
    run_phase, run_recipe, speech_key, text_key, valid_key, Dataset, Datasets, Objective, Phase,
    PhaseLog, Recipe, RecipeReport, TrainOptions,
};
use crate::vocab::Vocab;

/// Generated languages and corpora of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub source: LanguageSpec,
    pub languages: BTreeMap<String, LanguageSpec>,
    pub corpora: BTreeMap<String, Corpus>,
}

pub fn language_seed(cfg: &ExperimentConfig, name: &str) -> u64 {
    rng::split_label(cfg.seed, &format!("language:{name}"))
}

pub fn corpus_seed(cfg: &ExperimentConfig, name: &str) -> u64 {
    rng::split_label(cfg.seed, &format!("corpus:{name}"))
}

pub fn model_seed(cfg: &ExperimentConfig) -> u64 {
    rng::split_label(cfg.seed, "model")
}

pub fn vocab(cfg: &ExperimentConfig) -> Vocab {
    Vocab::new(&alphabet(cfg.language.num_phonemes))
}

/// Builds every language and renders its corpus; a pure function of the
/// config.
pub fn generate_world(cfg: &ExperimentConfig) -> Result<World> {
    cfg.validate()?;
    let universe = rng::split_label(cfg.seed, "universe");
    let source = LanguageSpec::generate(&cfg.source, &cfg.language, universe, language_seed(cfg, &cfg.source))?;
    let mut languages = BTreeMap::new();
    let mut corpora = BTreeMap::new();
    for entry in &cfg.languages {
        let seed = language_seed(cfg, &entry.name);
        let spec = match &entry.derive {
            None => LanguageSpec::generate(&entry.name, &cfg.language, universe, seed)?,
            Some(d) => {
                let base = if d.from == cfg.source { &source } else { &languages[&d.from] };
                derive_language(base, d.relatedness, seed, &entry.name)?
            }
        };
        let corpus = generate_corpus(&spec, &source, &entry.corpus, corpus_seed(cfg, &entry.name))?;
        corpora.insert(entry.name.clone(), corpus);
        languages.insert(entry.name.clone(), spec);
    }
    Ok(World {
        source,
        languages,
        corpora,
    })
}

impl World {
    pub fn corpus(&self, name: &str) -> Result<&Corpus> {
        self.corpora
            .get(name)
            .ok_or_else(|| Error::Config(format!("no corpus for language {name:?}")))
    }

    /// Training, validation and parallel-text datasets of every language,
    /// keyed as recipes expect.
    pub fn datasets(&self, vocab: &Vocab) -> Datasets<f32> {
        let mut out = Datasets::new();
        for (name, c) in &self.corpora {
            if !c.train.is_empty() {
                out.insert(speech_key(name), Dataset::speech(&c.train, vocab));
            }
            if !c.valid.is_empty() {
                out.insert(valid_key(name), Dataset::speech(&c.valid, vocab));
            }
            if !c.text.is_empty() {
                out.insert(text_key(name), Dataset::parallel_text(c, vocab));
            }
        }
        out
    }

    /// Test-set OOV rate of a language against its own training transcripts.
    pub fn oov(&self, name: &str, mode: OovMode) -> Result<f64> {
        let c = self.corpus(name)?;
        let train: Vec<&str> = c.train.iter().map(|u| u.transcript.as_str()).collect();
        let test: Vec<&str> = c.test.iter().map(|u| u.transcript.as_str()).collect();
        oov_rate(&train, &test, mode)
    }
}

/// The base model's build: the configured shape without adapters.
pub fn base_model(cfg: &ExperimentConfig) -> Result<MultimodalModel<f32>> {
    let mut m = cfg.model.clone();
    m.adapters = false;
    MultimodalModel::build(&m, model_seed(cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageMetrics {
    pub language: String,
    pub role: Role,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub log: PhaseLog,
    pub model_signature: String,
    pub parameter_counts: Vec<(Group, usize)>,
    pub test: Vec<LanguageMetrics>,
}

pub fn evaluate_split(
    cfg: &ExperimentConfig,
    model: &MultimodalModel<f32>,
    world: &World,
    language: &str,
    split: Split,
) -> Result<MetricsReport> {
    let c = world.corpus(language)?;
    let utts = c.split(split);
    if utts.is_empty() {
        return Err(Error::Corpus(format!("{language} has no {} utterances", split.as_str())));
    }
    Ok(evaluate_asr(model, &vocab(cfg), utts, cfg.decode)?.0)
}

/// Multilingual ASR plus MT training of every non-adapter group on the
/// pretraining languages, followed by test-set evaluation of every
/// language that has a test split.
pub fn pretrain(cfg: &ExperimentConfig, world: &World) -> Result<(MultimodalModel<f32>, PretrainReport)> {
    let v = vocab(cfg);
    let datasets = world.datasets(&v);
    let mut data = Vec::new();
    for l in cfg.pretrain_languages() {
        for key in [speech_key(&l.name), text_key(&l.name)] {
            if datasets.contains_key(&key) {
                data.push(key);
            }
        }
    }
    if !data.iter().any(|k| k.ends_with(".train")) {
        return Err(Error::Config("pretraining languages have no training speech".into()));
    }
    let mut model = base_model(cfg)?;
    let groups: BTreeSet<Group> = Group::ALL
        .iter()
        .copied()
        .filter(|g| !matches!(g, Group::EncoderAdapters | Group::DecoderAdapters))
        .collect();
    let phase = Phase {
        name: "pretrain".into(),
        objective: Objective::Asr,
        data,
        groups,
        epochs: cfg.training.pretrain_epochs,
        valid: None,
        mixed: true,
    };
    let mut opts = TrainOptions::new(cfg.training.pretrain_lr);
    opts.batch_size = cfg.training.batch_size;
    opts.decode = cfg.decode;
    let log = run_phase(&mut model, &phase, &datasets, &v, &opts, rng::split_label(cfg.seed, "pretrain"))?;
    let mut test = Vec::new();
    for l in &cfg.languages {
        if world.corpus(&l.name)?.test.is_empty() {
            continue;
        }
        test.push(LanguageMetrics {
            language: l.name.clone(),
            role: l.role,
            metrics: evaluate_split(cfg, &model, world, &l.name, Split::Test)?,
        });
    }
    let report = PretrainReport {
        log,
        model_signature: model.config.signature(),
        parameter_counts: model.count_parameters().0.into_iter().collect(),
        test,
    };
    Ok((model, report))
}

/// Runs one configured recipe on a copy of `base`.
pub fn adapt(
    cfg: &ExperimentConfig,
    world: &World,
    base: &MultimodalModel<f32>,
    run: &RunSpec,
) -> Result<(MultimodalModel<f32>, RecipeReport)> {
    let v = vocab(cfg);
    let spec = run.recipe_spec();
    let recipe = Recipe::build(&spec, cfg.training.epochs)?;
    let datasets = world.datasets(&v);
    let mut model = base.clone();
    let mut opts = TrainOptions::new(cfg.training.adapt_lr);
    opts.batch_size = cfg.training.batch_size;
    opts.eval_every = cfg.training.eval_every;
    opts.decode = cfg.decode;
    let seed = rng::split_label(cfg.seed, &format!("run:{}", run.name));
    let report = run_recipe(&mut model, &run.name, &spec, &recipe, &datasets, &v, &opts, seed, |m| {
        evaluate_split(cfg, m, world, &spec.target, Split::Test)
    })?;
    Ok((model, report))
}
