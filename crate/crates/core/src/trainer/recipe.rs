use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::phase::{run_phase, Datasets, Objective, Phase, PhaseLog, TrainOptions};
use crate::error::{Error, Result};
use crate::eval::{relative_reduction, MetricsReport};
use crate::model::MultimodalModel;
use crate::params::Group;
use crate::rng;
use crate::tensor::Scalar;
use crate::vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeName {
    None,
    SystemA,
    TextOnly,
    SystemTa,
    CrossLingual,
    CrossLingualTa,
    FullFinetune,
}

impl RecipeName {
    pub const ALL: [RecipeName; 7] = [
        RecipeName::None,
        RecipeName::SystemA,
        RecipeName::TextOnly,
        RecipeName::SystemTa,
        RecipeName::CrossLingual,
        RecipeName::CrossLingualTa,
        RecipeName::FullFinetune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecipeName::None => "none",
            RecipeName::SystemA => "system_a",
            RecipeName::TextOnly => "text_only",
            RecipeName::SystemTa => "system_ta",
            RecipeName::CrossLingual => "cross_lingual",
            RecipeName::CrossLingualTa => "cross_lingual_ta",
            RecipeName::FullFinetune => "full_finetune",
        }
    }
}

impl fmt::Display for RecipeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecipeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RecipeName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown recipe {s:?}")))
    }
}

/// Every group on the speech path; what "full fine-tuning" updates.
pub const ASR_PATH_GROUPS: [Group; 7] = [
    Group::SpeechEncoder,
    Group::LengthAdapter,
    Group::TextDecoder,
    Group::EncoderAdapters,
    Group::DecoderAdapters,
    Group::Embeddings,
    Group::OutputHead,
];

/// Epoch budgets of the standard recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochBudget {
    pub text: usize,
    pub asr: usize,
    pub cross: usize,
}

/// Inputs that turn a recipe name into concrete phases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSpec {
    pub recipe: RecipeName,
    /// Language evaluated, and trained on by in-language phases.
    pub target: String,
    /// Speech language of cross-lingual phases.
    #[serde(default)]
    pub pivot: Option<String>,
    /// Groups for the speech phase, replacing the recipe default.
    #[serde(default)]
    pub asr_groups: Option<BTreeSet<Group>>,
}

pub fn speech_key(lang: &str) -> String {
    format!("{lang}.train")
}

pub fn valid_key(lang: &str) -> String {
    format!("{lang}.valid")
}

pub fn text_key(lang: &str) -> String {
    format!("{lang}.text")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: RecipeName,
    pub phases: Vec<Phase>,
}

impl Recipe {
    pub fn build(spec: &RecipeSpec, epochs: EpochBudget) -> Result<Self> {
        let t = spec.target.as_str();
        let set = |gs: &[Group]| gs.iter().copied().collect::<BTreeSet<_>>();
        let asr = |lang: &str, default: &[Group], n: usize| Phase {
            name: format!("asr:{lang}"),
            objective: Objective::Asr,
            data: vec![speech_key(lang)],
            groups: spec.asr_groups.clone().unwrap_or_else(|| set(default)),
            epochs: n,
            valid: Some(valid_key(lang)),
            mixed: false,
        };
        let text = |valid: Option<String>| Phase {
            name: format!("mt:{t}"),
            objective: Objective::Mt,
            data: vec![text_key(t)],
            groups: set(&[Group::DecoderAdapters]),
            epochs: epochs.text,
            valid,
            mixed: false,
        };
        let pivot = || {
            spec.pivot
                .as_deref()
                .ok_or_else(|| Error::Config(format!("recipe {} needs a pivot language", spec.recipe)))
        };
        let phases = match spec.recipe {
            RecipeName::None => vec![],
            RecipeName::SystemA => vec![asr(t, &[Group::EncoderAdapters], epochs.asr)],
            RecipeName::TextOnly => vec![text(Some(valid_key(t)))],
            RecipeName::SystemTa => vec![text(Some(valid_key(t))), asr(t, &[Group::EncoderAdapters], epochs.asr)],
            RecipeName::FullFinetune => vec![asr(t, &ASR_PATH_GROUPS, epochs.asr)],
            RecipeName::CrossLingual => vec![asr(pivot()?, &[Group::LengthAdapter], epochs.cross)],
            RecipeName::CrossLingualTa => {
                vec![text(None), asr(pivot()?, &[Group::LengthAdapter], epochs.cross)]
            }
        };
        Ok(Recipe {
            name: spec.recipe,
            phases,
        })
    }

    /// Union of the groups trained by any phase.
    pub fn components(&self) -> BTreeSet<Group> {
        self.phases.iter().flat_map(|p| p.groups.iter().copied()).collect()
    }
}

/// Outcome of one recipe: metrics before and after, and per-phase logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeReport {
    pub run: String,
    pub recipe: RecipeName,
    pub language: String,
    pub pivot: Option<String>,
    pub components: Vec<Group>,
    pub learnable_parameters: usize,
    pub total_parameters: usize,
    pub model_signature: String,
    pub before: MetricsReport,
    pub after: MetricsReport,
    pub relative_wer_reduction: f64,
    pub phases: Vec<PhaseLog>,
    pub parameter_counts: Vec<(Group, usize)>,
}

/// Runs the phases in order and evaluates the target test set before and
/// after with `evaluate`.
#[allow(clippy::too_many_arguments)]
pub fn run_recipe<T: Scalar>(
    model: &mut MultimodalModel<T>,
    run: &str,
    spec: &RecipeSpec,
    recipe: &Recipe,
    datasets: &Datasets<T>,
    vocab: &Vocab,
    opts: &TrainOptions,
    seed: u64,
    mut evaluate: impl FnMut(&MultimodalModel<T>) -> Result<MetricsReport>,
) -> Result<RecipeReport> {
    for phase in &recipe.phases {
        for key in &phase.data {
            if !datasets.contains_key(key) {
                return Err(Error::Config(format!(
                    "recipe {} phase {} needs dataset {key:?}, which is not available",
                    recipe.name, phase.name
                )));
            }
        }
    }
    if !model.has_adapters() {
        model.insert_adapters(rng::split_label(seed, "adapters"));
    }
    let before = evaluate(model)?;
    let mut phases = Vec::with_capacity(recipe.phases.len());
    for phase in &recipe.phases {
        phases.push(run_phase(model, phase, datasets, vocab, opts, rng::split_label(seed, &phase.name))?);
    }
    let after = evaluate(model)?;
    let counts = model.count_parameters();
    let components: Vec<Group> = recipe.components().into_iter().collect();
    Ok(RecipeReport {
        run: run.to_string(),
        recipe: recipe.name,
        language: spec.target.clone(),
        pivot: spec.pivot.clone(),
        learnable_parameters: counts.sum_of(&components),
        total_parameters: counts.total(),
        model_signature: model.config.signature(),
        relative_wer_reduction: relative_reduction(before.wer, after.wer),
        components,
        before,
        after,
        phases,
        parameter_counts: counts.0.into_iter().collect(),
    })
}
