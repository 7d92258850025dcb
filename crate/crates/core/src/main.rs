use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aqcnn::harness::{write_report, CellId, Harness, ModelId, ResultsStore, SweepConfig, TaskId};
use aqcnn::metrics::{AggregateOptions, RunRecord};
use aqcnn::{selftest, Error, Result};

const EXIT_MISSING_DATA: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Quantum-to-quantum transfer learning with ansatz-based QCNNs.
#[derive(Debug, Parser)]
#[command(name = "aqcnn", version)]
struct Cli {
    /// Directory holding `mnist/` and `fashion/` IDX files.
    #[arg(long, global = true, env = "AQCNN_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    /// Output directory: `records.jsonl` plus caches under `cache/`.
    #[arg(long, global = true, default_value = "results")]
    results_dir: PathBuf,

    /// Emit one JSON object per line instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the reduced-feature caches for the given tasks.
    Prepare {
        /// Tasks to prepare (default: all seven).
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<TaskId>,
        /// Qubit counts (feature dimension 2^n).
        #[arg(long, value_delimiter = ',', default_value = "3")]
        n: Vec<usize>,
        /// Held-out test samples per target class set.
        #[arg(long, default_value_t = 400)]
        test_size: usize,
    },
    /// Pretrain (or load) one source model.
    Train {
        #[arg(long)]
        task: TaskId,
        #[arg(long)]
        model: ModelId,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run a single transfer cell and print its record.
    Transfer {
        #[arg(long)]
        task: TaskId,
        #[arg(long)]
        model: ModelId,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Retrained layers; `m = n` trains from scratch.
        #[arg(long)]
        m: usize,
        #[arg(long)]
        target_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Do not append the record to the results store.
        #[arg(long)]
        no_store: bool,
        #[command(flatten)]
        settings: Settings,
    },
    /// Run a grid of cells, skipping those already stored.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        tasks: Vec<TaskId>,
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelId>,
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Retraining depths (default: 0..=n).
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        target_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Aggregate stored records into CSV and JSON reports.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Records file (default: `<results-dir>/records.jsonl`).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Leave out `m = 0` and `m = n` from drop and RPR means.
        #[arg(long)]
        exclude_endpoints: bool,
    },
    /// Run the built-in oracle, gradient and parameter-count checks.
    Selftest,
}

/// Training settings shared by `train`, `transfer` and `sweep`.
/// Values in `--config` take precedence over these flags.
#[derive(Debug, Args)]
struct Settings {
    /// TOML sweep config; its keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Adam learning rate for the quantum models.
    #[arg(long)]
    lr: Option<f64>,
    /// Adam learning rate for the classical baselines.
    #[arg(long)]
    classical_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs_large: Option<usize>,
    #[arg(long)]
    epochs_small: Option<usize>,
    #[arg(long)]
    source_size: Option<usize>,
    #[arg(long)]
    source_epochs: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    /// SVM regularisation constant of the readout.
    #[arg(long)]
    svm_c: Option<f64>,
}

impl Settings {
    /// Defaults, then flags, then the config file.
    fn resolve(&self, mut cfg: SweepConfig) -> Result<SweepConfig> {
        let t = &mut cfg.train;
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.epochs_large {
            t.epochs_large = v;
        }
        if let Some(v) = self.epochs_small {
            t.epochs_small = v;
        }
        if let Some(v) = self.classical_lr {
            let mut c = cfg.train.clone();
            c.learning_rate = v;
            cfg.classical_train = Some(c);
        }
        if let Some(v) = self.source_size {
            cfg.source_size = v;
        }
        if self.source_epochs.is_some() {
            cfg.source_epochs = self.source_epochs;
        }
        if let Some(v) = self.test_size {
            cfg.test_size = v;
        }
        if let Some(v) = self.svm_c {
            cfg.svm_c = v;
        }
        if let Some(path) = &self.config {
            cfg = overlay(cfg, path)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Deep-merges the TOML file at `path` over `base`.
fn overlay(base: SweepConfig, path: &Path) -> Result<SweepConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let file: serde_json::Value =
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let mut merged = serde_json::to_value(&base)?;
    merge(&mut merged, file);
    serde_json::from_value(merged).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
}

fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn print_record(json: bool, r: &RunRecord) -> Result<()> {
    let mut out = std::io::stdout().lock();
    if json {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    } else {
        writeln!(
            out,
            "{}  accuracy {:.4}  train {:.4}  trainable {}  {:.1}s",
            r.run_id, r.accuracy, r.train_accuracy, r.n_trainable, r.elapsed_secs
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let cache = cli.results_dir.join("cache");
    let harness = Harness::new(&cli.data_dir, &cache);
    let store = ResultsStore::open(cli.results_dir.join("records.jsonl"));
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::InvalidArgument("--workers must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global().ok();

    match cli.command {
        Command::Prepare { tasks, n, test_size } => {
            let tasks = if tasks.is_empty() { TaskId::ALL.to_vec() } else { tasks };
            if let Some(bad) = n.iter().find(|&&n| n != 3 && n != 4) {
                return Err(Error::InvalidArgument(format!("n must be 3 or 4, got {bad}")));
            }
            for task in tasks {
                let spec = task.spec();
                for &n in &n {
                    for set in [&spec.source, &spec.target] {
                        let split = harness.split(set, 1 << n, test_size)?;
                        if cli.json {
                            println!(
                                "{}",
                                serde_json::json!({"key": split.key, "dim": split.dim, "train": split.train.len(), "test": split.test.len()})
                            );
                        } else {
                            println!("{}  train {}  test {}", split.key, split.train.len(), split.test.len());
                        }
                    }
                }
            }
        }
        Command::Train { task, model, n, seed, settings } => {
            let cfg = settings.resolve(SweepConfig::default())?;
            if n != 3 && n != 4 {
                return Err(Error::InvalidArgument(format!("n must be 3 or 4, got {n}")));
            }
            let src = harness.pretrain_source(task, model, n, seed, &cfg)?;
            if cli.json {
                println!("{}", serde_json::to_string(&src)?);
            } else {
                println!(
                    "{} {} n={} seed={}  key {}  final loss {:.4}",
                    task,
                    model,
                    n,
                    seed,
                    src.key,
                    src.loss_history.last().copied().unwrap_or(f64::NAN)
                );
            }
        }
        Command::Transfer { task, model, n, m, target_size, seed, no_store, settings } => {
            let cell = CellId { task, model, n, m, target_size, seed };
            cell.validate()?;
            let cfg = settings.resolve(SweepConfig::default())?;
            let record = harness.run_transfer(&cell, &cfg)?;
            if !no_store {
                store.append(&record)?;
            }
            print_record(cli.json, &record)?;
        }
        Command::Sweep { tasks, models, n, m, target_sizes, seeds, settings } => {
            let mut base = SweepConfig { tasks, models, ..SweepConfig::default() };
            if !n.is_empty() {
                base.n = n;
            }
            if !m.is_empty() {
                base.m = Some(m);
            }
            if !target_sizes.is_empty() {
                base.target_sizes = target_sizes;
            }
            if !seeds.is_empty() {
                base.seeds = seeds;
            }
            let cfg = settings.resolve(base)?;
            let outcome = harness.sweep(&cfg, &store, workers)?;
            for r in &outcome.completed {
                print_record(cli.json, r)?;
            }
            for (id, e) in &outcome.failures {
                eprintln!("{id}: {e}");
            }
            log::info!(
                "{} completed, {} already stored, {} failed",
                outcome.completed.len(),
                outcome.skipped,
                outcome.failures.len()
            );
            if let Some(missing) = outcome.failures.iter().find(|(_, e)| e.starts_with("missing data file")) {
                eprintln!("{}", missing.1);
                return Ok(EXIT_MISSING_DATA);
            }
            if !outcome.failures.is_empty() {
                return Ok(1);
            }
        }
        Command::Report { out, input, exclude_endpoints } => {
            let input = input.unwrap_or_else(|| store.path().to_path_buf());
            let records = ResultsStore::open(&input).load()?;
            let summary = write_report(&records, &out, &AggregateOptions { exclude_endpoints, sizes: None })?;
            if cli.json {
                println!("{}", serde_json::to_string(&summary)?);
            } else {
                println!("{} records -> {}", records.len(), out.display());
                for d in &summary.drops {
                    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                    println!(
                        "{} n={}  mean |drop| {}  (positive tasks {})",
                        d.model,
                        d.n,
                        fmt(d.mean_abs_drop),
                        fmt(d.mean_abs_drop_positive)
                    );
                }
            }
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                if cli.json {
                    println!("{}", serde_json::to_string(c)?);
                } else {
                    println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::MissingData { .. } => EXIT_MISSING_DATA,
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => 1,
            })
        }
    }
}
