use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mmadapt::eval::OovMode;
use mmadapt::experiment::{cmd_adapt, cmd_eval, cmd_gen, cmd_pretrain, cmd_report, ExperimentConfig};
use mmadapt::synthlang::Split;
use mmadapt::Error;

/// Generate synthetic corpora, pretrain the base model, run adaptation
/// recipes, evaluate checkpoints and tabulate results.
#[derive(Parser)]
#[command(name = "mmadapt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write every language and corpus of a config under --out.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain the base model on the corpora under --out.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run adaptation recipes from a base checkpoint.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>/base.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run names from the config; all runs when omitted.
        #[arg(long = "run")]
        runs: Vec<String>,
    },
    /// Score a checkpoint on one split of a corpus directory.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Token)]
        mode: ModeArg,
        /// Report file; defaults to <corpus>/eval-<split>.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Combine run reports into one comparison table.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Token,
    Type,
}

impl From<ModeArg> for OovMode {
    fn from(m: ModeArg) -> OovMode {
        match m {
            ModeArg::Token => OovMode::Token,
            ModeArg::Type => OovMode::Type,
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> mmadapt::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Runs one subcommand and returns the lines to print; the last one is the
/// path of the main output.
fn run(command: Command) -> mmadapt::Result<Vec<PathBuf>> {
    match command {
        Command::Gen { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let mut lines = cmd_gen(&cfg, &out)?;
            lines.push(out.join("config.json"));
            Ok(lines)
        }
        Command::Pretrain { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let report = cmd_pretrain(&cfg, &out)?;
            Ok(vec![out.join("base.ckpt"), report])
        }
        Command::Adapt { config, out, checkpoint, seed, runs } => {
            let cfg = load(&config, seed)?;
            let checkpoint = checkpoint.unwrap_or_else(|| out.join("base.ckpt"));
            let mut lines = cmd_adapt(&cfg, &out, &checkpoint, &runs)?;
            let table = cmd_report(&lines, &out.join("runs").join("table.txt"))?;
            lines.push(table);
            Ok(lines)
        }
        Command::Eval { config, checkpoint, corpus, split, mode, out, seed } => {
            let cfg = load(&config, seed)?;
            let split = Split::from(split);
            let out = out.unwrap_or_else(|| corpus.join(format!("eval-{}.json", split.as_str())));
            Ok(vec![cmd_eval(&cfg, &checkpoint, &corpus, split, mode.into(), &out)?])
        }
        Command::Report { out, reports } => Ok(vec![cmd_report(&reports, &out)?]),
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Shape { .. } => "shape",
        Error::Geometry(_) => "geometry",
        Error::InvalidArgument(_) => "invalid-argument",
        Error::Backward(_) => "backward",
        Error::Config(_) | Error::UnknownGroup(_) => "config",
        Error::UnknownConcept(_) => "concept",
        Error::Consistency(_) => "consistency",
        Error::Checkpoint(_) => "checkpoint",
        Error::Corpus(_) => "corpus",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: usage: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{}", l.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {}", kind(&e), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
