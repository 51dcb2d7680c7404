//! Experiment configuration, the generate → pretrain → adapt → report
//! pipeline, and its on-disk layout.

mod config;
mod files;
mod pipeline;
mod table;

pub use config::{Derivation, ExperimentConfig, LanguageEntry, Role, RunSpec, TrainingConfig, SCHEMA_VERSION};
pub use files::{
    cmd_adapt, cmd_eval, cmd_gen, cmd_pretrain, cmd_report, load_model, load_world, EvalReport,
};
pub use pipeline::{
    adapt, base_model, corpus_seed, evaluate_split, generate_world, language_seed, model_seed, pretrain,
    vocab, LanguageMetrics, PretrainReport, World,
};
pub use table::comparison_table;
