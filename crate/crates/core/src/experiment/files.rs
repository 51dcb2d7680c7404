use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{adapt, base_model, generate_world, pretrain, vocab, World};
use super::table::comparison_table;
use crate::error::{Error, Result};
use crate::eval::{evaluate_asr, oov_rate, MetricsReport, OovMode};
use crate::model::{load_checkpoint, save_checkpoint, MultimodalModel};
use crate::synthlang::{read_corpus, read_language, write_corpus, LanguageSpec, Split};
use crate::trainer::{render_report, RecipeReport};

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn corpus_dir(out: &Path, name: &str) -> PathBuf {
    out.join("corpora").join(name)
}

/// Writes every language and corpus under `out`; returns the corpus
/// directories.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let world = generate_world(cfg)?;
    write(&out.join("config.json"), &cfg.to_json()?)?;
    write(
        &out.join("languages").join(format!("{}.json", cfg.source)),
        &json(&world.source)?,
    )?;
    let mut dirs = Vec::new();
    for (name, corpus) in &world.corpora {
        let spec = &world.languages[name];
        write(&out.join("languages").join(format!("{name}.json")), &json(spec)?)?;
        let dir = corpus_dir(out, name);
        write_corpus(&dir, corpus, spec)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Reads the corpora written by [`cmd_gen`].
pub fn load_world(cfg: &ExperimentConfig, out: &Path) -> Result<World> {
    let path = out.join("languages").join(format!("{}.json", cfg.source));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let source: LanguageSpec = serde_json::from_str(&text)?;
    let mut languages = BTreeMap::new();
    let mut corpora = BTreeMap::new();
    for entry in &cfg.languages {
        let dir = corpus_dir(out, &entry.name);
        let corpus = read_corpus(&dir)?;
        if corpus.language_id != entry.name {
            return Err(Error::Corpus(format!(
                "{} holds language {:?}, expected {:?}",
                dir.display(),
                corpus.language_id,
                entry.name
            )));
        }
        languages.insert(entry.name.clone(), read_language(&dir)?);
        corpora.insert(entry.name.clone(), corpus);
    }
    Ok(World {
        source,
        languages,
        corpora,
    })
}

/// Pretrains the base model on the corpora under `out`, saving
/// `base.ckpt`; returns the path of the text report.
pub fn cmd_pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let world = load_world(cfg, out)?;
    let (model, report) = pretrain(cfg, &world)?;
    save_checkpoint(&model, &out.join("base.ckpt"))?;
    write(&out.join("pretrain.json"), &json(&report)?)?;
    let mut text = format!(
        "pretraining: {} epochs, {} steps, final loss {:.4}\n\n{:<12} {:<9} {:>8} {:>8}\n",
        report.log.epoch_losses.len(),
        report.log.steps,
        report.log.epoch_losses.last().copied().unwrap_or(f64::NAN),
        "language",
        "role",
        "WER",
        "CER"
    );
    for m in &report.test {
        let role = format!("{:?}", m.role).to_lowercase();
        text.push_str(&format!(
            "{:<12} {:<9} {:>8.2} {:>8.2}\n",
            m.language, role, m.metrics.wer, m.metrics.cer
        ));
    }
    let path = out.join("pretrain.txt");
    write(&path, &text)?;
    Ok(path)
}

/// Builds the configured model and loads a checkpoint into it.
pub fn load_model(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MultimodalModel<f32>> {
    let mut model = base_model(cfg)?;
    load_checkpoint(&mut model, checkpoint)?;
    Ok(model)
}

/// Runs the named runs (all when `runs` is empty) from `checkpoint`,
/// writing `runs/<name>/{adapted.ckpt, report.txt, report.json}`; returns
/// the report JSON paths.
pub fn cmd_adapt(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path, runs: &[String]) -> Result<Vec<PathBuf>> {
    let selected: Vec<_> = if runs.is_empty() {
        cfg.runs.iter().collect()
    } else {
        runs.iter().map(|r| cfg.run(r)).collect::<Result<_>>()?
    };
    if selected.is_empty() {
        return Err(Error::Config("no runs configured".into()));
    }
    let world = load_world(cfg, out)?;
    let base = load_model(cfg, checkpoint)?;
    let mut paths = Vec::new();
    for run in selected {
        let (model, report) = adapt(cfg, &world, &base, run)?;
        let dir = out.join("runs").join(&run.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_checkpoint(&model, &dir.join("adapted.ckpt"))?;
        write(&dir.join("report.txt"), &render_report(&report))?;
        let path = dir.join("report.json");
        write(&path, &json(&report)?)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Metrics of one checkpoint on one split of one corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: String,
    pub split: Split,
    pub metrics: MetricsReport,
    pub oov_mode: OovMode,
    /// Against the corpus's own training transcripts; absent when the
    /// corpus has no training split.
    pub oov_rate: Option<f64>,
    pub hypotheses: Vec<String>,
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    corpus: &Path,
    split: Split,
    mode: OovMode,
    out: &Path,
) -> Result<PathBuf> {
    let model = load_model(cfg, checkpoint)?;
    let c = read_corpus(corpus)?;
    let utts = c.split(split);
    if utts.is_empty() {
        return Err(Error::Corpus(format!("{} has no {} split", corpus.display(), split.as_str())));
    }
    let (metrics, hypotheses) = evaluate_asr(&model, &vocab(cfg), utts, cfg.decode)?;
    let refs: Vec<&str> = utts.iter().map(|u| u.transcript.as_str()).collect();
    let train: Vec<&str> = c.train.iter().map(|u| u.transcript.as_str()).collect();
    let report = EvalReport {
        language: c.language_id.clone(),
        split,
        metrics,
        oov_mode: mode,
        oov_rate: if train.is_empty() { None } else { Some(oov_rate(&train, &refs, mode)?) },
        hypotheses,
    };
    write(out, &json(&report)?)?;
    Ok(out.to_path_buf())
}

/// Combines run reports into one comparison table at `out` with a JSON
/// sidecar next to it.
pub fn cmd_report(reports: &[PathBuf], out: &Path) -> Result<PathBuf> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("at least one report is required".into()));
    }
    let parsed = reports
        .iter()
        .map(|p| {
            let s = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str::<RecipeReport>(&s)?)
        })
        .collect::<Result<Vec<_>>>()?;
    write(out, &comparison_table(&parsed))?;
    write(&out.with_extension("json"), &json(&parsed)?)?;
    Ok(out.to_path_buf())
}
