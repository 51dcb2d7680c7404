//! Adam, the phase loop and the adaptation recipes.

mod adam;
mod phase;
mod recipe;
mod report;

pub use adam::{Adam, AdamConfig};
pub use phase::{
    evaluate_items, run_phase, AsrItem, Dataset, Datasets, FrozenSnapshot, MtItem, Objective, Phase,
    PhaseLog, TrainOptions,
};
pub use recipe::{
    run_recipe, speech_key, text_key, valid_key, EpochBudget, Recipe, RecipeName, RecipeReport,
    RecipeSpec, ASR_PATH_GROUPS,
};
pub use report::{components_label, format_millions, render_report};
