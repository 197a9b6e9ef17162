use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jcpa::harness::{
    append_results, cmd_bench, cmd_eval, cmd_generalize, cmd_generate, cmd_report, cmd_robustness, cmd_train,
    parse_solvers, robustness_instances, ExperimentConfig, ResultRow, Solver, RESULTS_FILE,
};
use jcpa::jcpgnn::{load_checkpoint, save_checkpoint, JcpgnnParams};
use jcpa::netgen::{load_dataset, save_dataset};
use jcpa::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const TRAIN_FILE: &str = "train.jsonl";
const TEST_FILE: &str = "test.jsonl";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const HISTORY_FILE: &str = "history.json";

/// Joint channel and power allocation experiments.
#[derive(Debug, Parser)]
#[command(name = "jcpa", version, about)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment configuration (JSON); missing fields take desk defaults.
    #[arg(long, global = true, conflicts_with = "paper_scale")]
    config: Option<PathBuf>,
    /// Master seed (also used for training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, checkpoints and results.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Model checkpoint (default: <out>/checkpoint.json when present).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Dataset file (JSON Lines, optionally .gz).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Comma-separated solvers: exhaustive, jcpgnn, rr-gnn, rr-wmmse, closest, random.
    #[arg(long, global = true)]
    solvers: Option<String>,
    /// Small preset: D=10, M=2, 2000/500 instances (default).
    #[arg(long, global = true)]
    desk: bool,
    /// Larger preset: D=15, M=2, 10000/1000 instances.
    #[arg(long, global = true, conflicts_with = "desk")]
    paper_scale: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate training and test datasets.
    Generate,
    /// Train a model on the training dataset.
    Train,
    /// Evaluate solvers on the test dataset.
    Eval,
    /// Evaluate the classical baselines on the test dataset.
    Baseline,
    /// Evaluate the model with partially removed CSI.
    Robustness {
        /// Comma-separated corruption fractions.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Evaluate on larger networks at the training density.
    Generalize {
        /// Comma-separated scale factors for the number of pairs.
        #[arg(long, value_delimiter = ',')]
        factors: Option<Vec<f64>>,
    },
    /// Time solvers per instance.
    Bench {
        /// Comma-separated numbers of pairs.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Summarize results into JSON and per-figure CSVs.
    Report {
        /// Results file (default: <out>/results.csv).
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

struct Context {
    cfg: ExperimentConfig,
    global: Global,
}

impl Context {
    fn new(global: Global) -> Result<Self> {
        let mut cfg = match &global.config {
            Some(path) => ExperimentConfig::load(path)?,
            None if global.paper_scale => ExperimentConfig::paper_scale(),
            None => ExperimentConfig::desk(),
        };
        if let Some(seed) = global.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        fs::create_dir_all(&global.out).map_err(|e| Error::Io {
            path: global.out.clone(),
            source: e,
        })?;
        Ok(Self { cfg, global })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.global.out.join(name)
    }

    fn dataset_path(&self, default: &str) -> PathBuf {
        self.global.dataset.clone().unwrap_or_else(|| self.out(default))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.global.checkpoint.clone().unwrap_or_else(|| self.out(CHECKPOINT_FILE))
    }

    /// The checkpoint if one was named or exists at the default location.
    fn optional_model(&self) -> Result<Option<JcpgnnParams>> {
        let path = self.checkpoint_path();
        if self.global.checkpoint.is_some() || path.exists() {
            load_checkpoint(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn model(&self) -> Result<JcpgnnParams> {
        load_checkpoint(&self.checkpoint_path())
    }

    fn solvers(&self, default: &[Solver]) -> Result<Vec<Solver>> {
        match &self.global.solvers {
            Some(list) => parse_solvers(list),
            None => Ok(default.to_vec()),
        }
    }

    fn record(&self, rows: &[ResultRow]) -> Result<()> {
        append_results(&self.out(RESULTS_FILE), rows)?;
        for r in rows {
            println!("{}", serde_json::to_string(r)?);
        }
        Ok(())
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Context::new(cli.global)?;
    let cfg = &ctx.cfg;
    match cli.command {
        Command::Generate => {
            let (train, test) = cmd_generate(cfg)?;
            save_dataset(&train, &ctx.out(TRAIN_FILE))?;
            save_dataset(&test, &ctx.out(TEST_FILE))?;
            write_json(&ctx.out("config.json"), cfg)?;
            println!(
                "{}",
                serde_json::json!({"train": train.len(), "test": test.len(), "config_hash": cfg.hash()})
            );
        }
        Command::Train => {
            let ds = load_dataset(&ctx.dataset_path(TRAIN_FILE))?;
            let (params, history) = cmd_train(cfg, &ds)?;
            save_checkpoint(&params, &ctx.checkpoint_path())?;
            write_json(&ctx.out(HISTORY_FILE), &history)?;
            let best = &history.epochs[history.best_epoch - 1];
            println!(
                "{}",
                serde_json::json!({"best_epoch": history.best_epoch, "val_objective": best.val_objective})
            );
        }
        Command::Eval => {
            let ds = load_dataset(&ctx.dataset_path(TEST_FILE))?;
            let solvers = ctx.solvers(&cfg.solvers)?;
            let model = ctx.optional_model()?;
            ctx.record(&cmd_eval(cfg, &ds, &solvers, model.as_ref())?)?;
        }
        Command::Baseline => {
            let ds = load_dataset(&ctx.dataset_path(TEST_FILE))?;
            let defaults: Vec<Solver> = cfg.solvers.iter().copied().filter(|s| !s.needs_model()).collect();
            let solvers = ctx.solvers(&defaults)?;
            if let Some(s) = solvers.iter().find(|s| s.needs_model()) {
                return Err(Error::Config(format!("{s} is not a baseline; use eval")));
            }
            ctx.record(&cmd_eval(cfg, &ds, &solvers, None)?)?;
        }
        Command::Robustness { fractions } => {
            let ds = match &ctx.global.dataset {
                Some(path) => load_dataset(path)?,
                None => robustness_instances(cfg)?,
            };
            let fractions = fractions.unwrap_or_else(|| cfg.robustness_fractions.clone());
            ctx.record(&cmd_robustness(cfg, &ds, &ctx.model()?, &fractions)?)?;
        }
        Command::Generalize { factors } => {
            let factors = factors.unwrap_or_else(|| cfg.scale_factors.clone());
            ctx.record(&cmd_generalize(cfg, &ctx.model()?, &factors)?)?;
        }
        Command::Bench { sizes } => {
            let sizes = sizes.unwrap_or_else(|| cfg.bench_sizes.clone());
            let solvers = ctx.solvers(&cfg.bench_solvers)?;
            let model = ctx.optional_model()?;
            ctx.record(&cmd_bench(cfg, model.as_ref(), &sizes, &solvers)?)?;
        }
        Command::Report { results } => {
            let results = results.unwrap_or_else(|| ctx.out(RESULTS_FILE));
            let files = cmd_report(&results, &ctx.global.out)?;
            println!(
                "{}",
                serde_json::json!({"summary": files.summary, "figures": files.figures})
            );
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({"error": kind, "message": message}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
