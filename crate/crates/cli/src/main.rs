use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use kgeisd::config::RunConfig;
use kgeisd::eval::{evaluate, EvalOptions, TiePolicy};
use kgeisd::kgdata::{synthetic_kg, FilterIndex, Split, SyntheticSpec, TripleStore};
use kgeisd::models::Registry;
use kgeisd::pipeline::{self, RunOptions};
use kgeisd::trainer::{check_vocabulary, entity_embeddings, restore_model, Checkpoint};
use kgeisd::KgeError;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "kgeisd",
    version,
    about = "Knowledge graph embedding with self-semantic distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset directory and print its statistics, or generate a
    /// synthetic one.
    Prepare(PrepareArgs),
    /// Train a model as described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Save a checkpoint every N epochs (0: only at the end).
        #[arg(long, default_value_t = 1)]
        checkpoint_every: usize,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Print filtered ranking metrics of a checkpoint as JSON.
    Evaluate {
        checkpoint: PathBuf,
        dataset_dir: PathBuf,
        /// `valid` or `test`.
        split: String,
        #[arg(long, value_enum, default_value_t = TieArg::Average)]
        ties: TieArg,
    },
    /// Write entity embeddings as TSV: name, then one column per dimension.
    ExportEmbeddings { checkpoint: PathBuf, out: PathBuf },
    /// Print the number of learnable scalars a config would train.
    CountParams {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct PrepareArgs {
    dataset_dir: PathBuf,
    /// Write a random dataset into DATASET_DIR first.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 30)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    #[arg(long, default_value_t = 30)]
    per_relation: usize,
    #[arg(long, default_value_t = 6)]
    valid: usize,
    #[arg(long, default_value_t = 6)]
    test: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Store every generated fact in both directions.
    #[arg(long)]
    symmetric: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TieArg {
    Average,
    Optimistic,
    Pessimistic,
}

impl From<TieArg> for TiePolicy {
    fn from(t: TieArg) -> Self {
        match t {
            TieArg::Average => TiePolicy::Average,
            TieArg::Optimistic => TiePolicy::Optimistic,
            TieArg::Pessimistic => TiePolicy::Pessimistic,
        }
    }
}

/// Marks a failure of the caller's input rather than of the run.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<KgeError>() {
            return match e {
                KgeError::NumericAbort { .. } => EXIT_NUMERIC,
                KgeError::Config(_) | KgeError::CheckpointMismatch(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}

fn load_config(path: &Path, registry: &Registry) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.resolve(registry)?;
    Ok(cfg)
}

fn prepare(args: &PrepareArgs) -> anyhow::Result<()> {
    if args.synthetic {
        let spec = SyntheticSpec {
            entities: args.entities,
            relations: args.relations,
            triples_per_relation: args.per_relation,
            valid: args.valid,
            test: args.test,
            seed: args.seed,
            symmetric: args.symmetric,
        };
        synthetic_kg(&spec)?.write(&args.dataset_dir)?;
    }
    let store = TripleStore::load(&args.dataset_dir)?;
    println!("{}", serde_json::to_string_pretty(&store.stats())?);
    Ok(())
}

fn train(config: &Path, options: RunOptions, registry: &Registry) -> anyhow::Result<()> {
    let cfg = load_config(config, registry)?;
    let summary = pipeline::run(registry, &cfg, &options)?;
    if let Some(test) = summary.test {
        println!("{}", serde_json::to_string_pretty(&test)?);
    }
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &Path,
    dataset_dir: &Path,
    split: &str,
    ties: TieArg,
    registry: &Registry,
) -> anyhow::Result<()> {
    let split = match Split::parse(split) {
        Some(s @ (Split::Valid | Split::Test)) => s,
        _ => bail!(UsageError(format!(
            "split must be valid or test, got {split:?}"
        ))),
    };
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = pipeline::load_dataset(dataset_dir)?;
    check_vocabulary(&data, &ckpt)?;
    let (model, store) = restore_model(registry, &ckpt)?;
    let filter = FilterIndex::build(&data);
    let options = EvalOptions {
        tie_policy: ties.into(),
        ..EvalOptions::default()
    };
    let report = evaluate(
        &model,
        &store,
        data.original(split),
        &filter,
        data.base_relations(),
        options,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn export_embeddings(checkpoint: &Path, out: &Path) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let table = entity_embeddings(&ckpt)?;
    if table.rows() != ckpt.entities.len() {
        bail!(
            "entity table has {} rows for {} entity names",
            table.rows(),
            ckpt.entities.len()
        );
    }
    let mut text = String::new();
    for (i, name) in ckpt.entities.iter().enumerate() {
        text.push_str(name);
        for x in table.row(i) {
            text.push('\t');
            text.push_str(&format!("{x:.16e}"));
        }
        text.push('\n');
    }
    let mut f =
        fs::File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    f.write_all(text.as_bytes())
        .with_context(|| format!("cannot write {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let registry = Registry::builtin();
    match cli.command {
        Command::Prepare(args) => prepare(&args),
        Command::Train {
            config,
            resume,
            checkpoint_every,
            quiet,
        } => {
            let options = RunOptions {
                resume,
                checkpoint_every,
                verbose: !quiet,
                ..RunOptions::default()
            };
            train(&config, options, &registry)
        }
        Command::Evaluate {
            checkpoint,
            dataset_dir,
            split,
            ties,
        } => cmd_evaluate(&checkpoint, &dataset_dir, &split, ties, &registry),
        Command::ExportEmbeddings { checkpoint, out } => export_embeddings(&checkpoint, &out),
        Command::CountParams { config } => {
            let cfg = load_config(&config, &registry)?;
            println!("{}", pipeline::count_config_parameters(&registry, &cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
