//! `synthtab`: analyze, train, generate and evaluate from the command line.
//!
//! Exit codes: 0 success, 1 other failures (unreadable config, I/O while
//! writing), 2 schema analysis errors, 3 non-finite training loss, 4 schema
//! or data mismatch while training, 5 invalid generation conditions,
//! 6 column mismatch between evaluated tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synthtab::pipeline::{generate, train, train_two_table, Generated, GenerationRequest, TwoTableManifest};
use synthtab::qa::{evaluate, QaOptions};
use synthtab::schema::TableRole;
use synthtab::store::ModelStore;
use synthtab::trainer::{StopReason, TrainConfig};
use synthtab::{analyze, AnalysisOptions, ColumnKind, Error, RawTable, TableSchema};

/// Environment variable holding the log filter, e.g. `info` or `synthtab=debug`.
const LOG_ENV: &str = "SYNTHTAB_LOG";

#[derive(Parser)]
#[command(name = "synthtab", version, about = "Synthetic data for flat and sequential tables")]
#[command(after_help = "Set SYNTHTAB_LOG (error, warn, info, debug, trace) to control log output on stderr.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer column kinds and encodings of a CSV and write the schema.
    Analyze(AnalyzeArgs),
    /// Train a model and write a model store directory.
    Train(TrainArgs),
    /// Sample synthetic rows from a model store.
    Generate(GenerateArgs),
    /// Compare synthetic data with training and holdout data.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV with a header row.
    data: PathBuf,
    /// JSON object mapping column names to kinds (categorical, numeric,
    /// datetime, datetime_relative, character, geospatial).
    #[arg(long)]
    kinds: Option<PathBuf>,
    /// JSON file with analysis options; unknown keys are rejected.
    #[arg(long)]
    options: Option<PathBuf>,
    /// Column grouping rows into sequences; makes the table sequential.
    #[arg(long)]
    group_key: Option<String>,
    /// Primary key column of a context table, excluded from modelling.
    #[arg(long)]
    primary_key: Option<String>,
    /// Where to write the schema JSON.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Schema of the modelled table (the sequential table for two-table runs).
    #[arg(long)]
    schema: PathBuf,
    /// Training CSV; defaults to the manifest's sequential table.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Context CSV; defaults to the manifest's context table.
    #[arg(long, requires = "manifest")]
    context: Option<PathBuf>,
    /// Two-table manifest naming both tables and their key columns.
    #[arg(long, requires = "context_schema")]
    manifest: Option<PathBuf>,
    /// Schema of the context table; required with --manifest.
    #[arg(long)]
    context_schema: Option<PathBuf>,
    /// JSON training configuration; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the training configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Model store directory to create or replace.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Model store directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Rows for flat models, subjects for sequential and two-table models.
    #[arg(short, long)]
    n: usize,
    /// Softmax temperature; values near zero pick the most likely value.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// JSON object mapping columns to fixed values (`null` fixes missing).
    #[arg(long)]
    conditions: Option<PathBuf>,
    /// Comma-separated columns that are never generated as missing.
    #[arg(long, value_delimiter = ',')]
    impute: Vec<String>,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV. Two-table models write `<stem>.context.csv` and
    /// `<stem>.sequential.csv` next to it instead.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Schema of the training table.
    #[arg(long)]
    schema: PathBuf,
    /// Training CSV.
    #[arg(long)]
    trn: PathBuf,
    /// Holdout CSV drawn from the same source but not used for training.
    #[arg(long)]
    hold: PathBuf,
    /// Synthetic CSV.
    #[arg(long)]
    syn: PathBuf,
    /// JSON file with evaluation options; unknown keys are rejected.
    #[arg(long)]
    options: Option<PathBuf>,
    /// Where to write the report JSON.
    #[arg(short, long)]
    output: PathBuf,
}

/// A failure together with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

fn with_code(code: u8) -> impl Fn(Error) -> Failure {
    move |e| Failure::new(code, e)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, code: u8) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::new(1, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))
}

fn read_schema(path: &Path, code: u8) -> Result<TableSchema, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))?;
    TableSchema::from_json(&text).map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))
}

fn run_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let mut opts: AnalysisOptions = match &a.options {
        Some(p) => read_json(p, 2)?,
        None => AnalysisOptions::default(),
    };
    if a.group_key.is_some() {
        opts.table_role = TableRole::Sequential;
        opts.group_key = a.group_key;
    }
    if a.primary_key.is_some() {
        opts.primary_key = a.primary_key;
    }
    let kinds: Option<BTreeMap<String, ColumnKind>> = a.kinds.as_deref().map(|p| read_json(p, 2)).transpose()?;
    let raw = RawTable::read_csv(&a.data).map_err(with_code(2))?;
    let schema = analyze(&raw, kinds.as_ref(), &opts).map_err(with_code(2))?;
    write_file(&a.output, schema.to_json().map_err(with_code(1))?.as_bytes())?;
    log::info!("wrote schema of {} columns to {}", schema.specs.len(), a.output.display());
    Ok(())
}

fn train_code(e: Error) -> Failure {
    match e {
        Error::InvalidConfig(_) | Error::Json(_) => Failure::new(1, e),
        Error::NonFiniteLoss { .. } => Failure::new(3, e),
        _ => Failure::new(4, e),
    }
}

fn run_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p, 1)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let schema = read_schema(&a.schema, 4)?;
    let store = match &a.manifest {
        Some(m) => {
            let manifest = TwoTableManifest::read(m).map_err(with_code(4))?;
            let ctx_schema = read_schema(a.context_schema.as_deref().expect("required by clap"), 4)?;
            let ctx = RawTable::read_csv(a.context.as_ref().unwrap_or(&manifest.context)).map_err(with_code(4))?;
            let seq = RawTable::read_csv(a.data.as_ref().unwrap_or(&manifest.sequential)).map_err(with_code(4))?;
            let model = train_two_table(
                &ctx_schema,
                &ctx,
                &schema,
                &seq,
                &manifest.context_key,
                &manifest.foreign_key,
                &cfg,
            )
            .map_err(train_code)?;
            print!("context table\n{}", model.context.report.epoch_log());
            print!("sequential table\n{}", model.sequential.report.epoch_log());
            ModelStore::TwoTable(model)
        }
        None => {
            let data = a.data.as_ref().ok_or_else(|| Failure::new(1, "--data is required without --manifest"))?;
            let raw = RawTable::read_csv(data).map_err(with_code(4))?;
            let model = train(&schema, &raw, &cfg).map_err(train_code)?;
            print!("{}", model.report.epoch_log());
            ModelStore::Single(model)
        }
    };
    let non_finite = match &store {
        ModelStore::Single(m) => m.report.stop_reason == StopReason::NonFiniteLoss,
        ModelStore::TwoTable(t) => [&t.context, &t.sequential]
            .iter()
            .any(|m| m.report.stop_reason == StopReason::NonFiniteLoss),
    };
    store.save(&a.output).map_err(with_code(1))?;
    if non_finite {
        return Err(Failure::new(
            3,
            format!("training hit a non-finite loss; {} holds the best weights before it", a.output.display()),
        ));
    }
    log::info!("wrote model store to {}", a.output.display());
    Ok(())
}

fn generate_code(e: Error) -> Failure {
    match e {
        Error::ConditionIndexInvalid(_) | Error::AllProbabilityMassExcluded(_) => Failure::new(5, e),
        _ => Failure::new(1, e),
    }
}

fn sibling(path: &Path, part: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{part}.csv"))
}

fn write_csv(table: &RawTable, path: &Path) -> Result<(), Failure> {
    write_file(path, table.to_csv_string().map_err(with_code(1))?.as_bytes())
}

fn run_generate(a: GenerateArgs) -> Result<(), Failure> {
    let conditions: BTreeMap<String, Option<String>> = match &a.conditions {
        Some(p) => read_json(p, 5)?,
        None => BTreeMap::new(),
    };
    let store = ModelStore::load(&a.model).map_err(with_code(1))?;
    let req = GenerationRequest {
        n: a.n,
        temperature: a.temperature,
        conditions,
        impute: a.impute,
        order: None,
        seed: a.seed,
    };
    match generate(&store, &req).map_err(generate_code)? {
        Generated::Single(t) => write_csv(&t, &a.output)?,
        Generated::TwoTable { context, sequential } => {
            write_csv(&context, &sibling(&a.output, "context"))?;
            write_csv(&sequential, &sibling(&a.output, "sequential"))?;
        }
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let schema = read_schema(&a.schema, 1)?;
    let opts: QaOptions = match &a.options {
        Some(p) => read_json(p, 1)?,
        None => QaOptions::default(),
    };
    let read = |p: &Path| RawTable::read_csv(p).map_err(with_code(1));
    let (trn, hold, syn) = (read(&a.trn)?, read(&a.hold)?, read(&a.syn)?);
    let columns = |t: &RawTable| t.names().iter().cloned().collect::<BTreeSet<_>>();
    for (role, t) in [("holdout", &hold), ("synthetic", &syn)] {
        if columns(t) != columns(&trn) {
            return Err(Failure::new(6, format!("{role} columns differ from the training columns")));
        }
    }
    let report = evaluate(&schema, &trn, &hold, &syn, &opts).map_err(|e| match e {
        Error::SchemaMismatch(_) => Failure::new(6, e),
        _ => Failure::new(1, e),
    })?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::new(1, e))?;
    write_file(&a.output, json.as_bytes())?;
    print!("{}", report.summary());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => run_analyze(a),
        Command::Train(a) => run_train(a),
        Command::Generate(a) => run_generate(a),
        Command::Evaluate(a) => run_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
