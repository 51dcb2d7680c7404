use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DecodeConfig;
use crate::model::ModelConfig;
use crate::params::Group;
use crate::synthlang::{CorpusConfig, LanguageParams};
use crate::trainer::{EpochBudget, RecipeName, RecipeSpec};
use crate::vocab::NUM_SPECIALS;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Labeled speech and parallel text seen while building the base model.
    Pretrain,
    /// Never seen during pretraining.
    Adapt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Derivation {
    pub from: String,
    pub relatedness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageEntry {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub derive: Option<Derivation>,
    pub corpus: CorpusConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub pretrain_lr: f64,
    pub pretrain_epochs: usize,
    pub adapt_lr: f64,
    pub epochs: EpochBudget,
    /// Validation interval for best-epoch selection during adaptation;
    /// 0 disables selection.
    #[serde(default)]
    pub eval_every: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    pub recipe: RecipeName,
    pub target: String,
    #[serde(default)]
    pub pivot: Option<String>,
    #[serde(default)]
    pub asr_groups: Option<BTreeSet<Group>>,
}

impl RunSpec {
    pub fn recipe_spec(&self) -> RecipeSpec {
        RecipeSpec {
            recipe: self.recipe,
            target: self.target.clone(),
            pivot: self.pivot.clone(),
            asr_groups: self.asr_groups.clone(),
        }
    }
}

/// Everything one experiment needs: model shape, languages and corpora,
/// training budgets and the adaptation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub model: ModelConfig,
    pub language: LanguageParams,
    /// Name of the MT source language, which has no speech.
    pub source: String,
    pub languages: Vec<LanguageEntry>,
    pub training: TrainingConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn language(&self, name: &str) -> Result<&LanguageEntry> {
        self.languages
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Config(format!("language {name:?} is not defined")))
    }

    pub fn pretrain_languages(&self) -> impl Iterator<Item = &LanguageEntry> {
        self.languages.iter().filter(|l| l.role == Role::Pretrain)
    }

    pub fn run(&self, name: &str) -> Result<&RunSpec> {
        self.runs
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Config(format!("run {name:?} is not defined")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.model.validate()?;
        self.language.validate()?;
        let vocab = NUM_SPECIALS + 1 + self.language.num_phonemes;
        if self.model.vocab_size != vocab {
            return fail(format!("model.vocab_size must be {vocab} for {} phonemes", self.language.num_phonemes));
        }
        if self.model.feature_dim != self.language.feature_dim {
            return fail("model.feature_dim must equal language.feature_dim".into());
        }
        let mut seen = BTreeSet::from([self.source.as_str()]);
        for l in &self.languages {
            if !seen.insert(l.name.as_str()) {
                return fail(format!("language {:?} defined twice", l.name));
            }
            if l.name.is_empty() || !l.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return fail(format!("language name {:?} must be alphanumeric", l.name));
            }
            if let Some(d) = &l.derive {
                if !seen.contains(d.from.as_str()) || d.from == l.name {
                    return fail(format!("language {:?} derives from {:?}, which is not defined before it", l.name, d.from));
                }
                if !(0.0..=1.0).contains(&d.relatedness) {
                    return fail(format!("relatedness {} outside [0, 1]", d.relatedness));
                }
            }
        }
        if self.pretrain_languages().next().is_none() {
            return fail("at least one pretraining language is required".into());
        }
        if self.training.batch_size == 0 {
            return fail("training.batch_size must be positive".into());
        }
        let mut names = BTreeSet::new();
        for r in &self.runs {
            if !names.insert(r.name.as_str()) {
                return fail(format!("run {:?} defined twice", r.name));
            }
            let target = self.language(&r.target)?;
            if target.role == Role::Pretrain {
                return fail(format!("run {:?} targets pretraining language {:?}", r.name, target.name));
            }
            if let Some(p) = &r.pivot {
                self.language(p)?;
            }
            if matches!(r.recipe, RecipeName::CrossLingual | RecipeName::CrossLingualTa)
                && r.pivot.is_none()
            {
                return fail(format!("run {:?} needs a pivot", r.name));
            }
        }
        Ok(())
    }
}
