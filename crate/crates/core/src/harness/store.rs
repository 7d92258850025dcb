use std::collections::{BTreeSet, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;

use super::{CellId, Harness, SweepConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, AggregateOptions, RunRecord, Summary, SCHEMA_VERSION};

/// Append-only JSON-lines store of [`RunRecord`]s.
#[derive(Debug)]
pub struct ResultsStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl ResultsStore {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        ResultsStore { path: path.into(), lock: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// All stored records; a missing file is an empty store. Lines that do
    /// not parse (for instance a torn final write) are skipped with a warning.
    pub fn load(&self) -> Result<Vec<RunRecord>> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<RunRecord>(line) {
                Ok(r) if r.schema_version == SCHEMA_VERSION => out.push(r),
                Ok(r) => log::warn!("{}:{}: schema version {} ignored", self.path.display(), i + 1, r.schema_version),
                Err(e) => log::warn!("{}:{}: unreadable record ({e})", self.path.display(), i + 1),
            }
        }
        Ok(out)
    }

    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let _guard = self.lock.lock().expect("store lock poisoned");
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    /// Records produced by this invocation, in grid order.
    pub completed: Vec<RunRecord>,
    /// Cells already present in the store.
    pub skipped: usize,
    /// `(run_id, error)` for every failed cell.
    pub failures: Vec<(String, String)>,
}

impl Harness {
    /// Runs every cell of `cfg` not yet in `store` on at most `workers`
    /// threads, appending each record as it completes.
    pub fn sweep(&self, cfg: &SweepConfig, store: &ResultsStore, workers: usize) -> Result<SweepOutcome> {
        cfg.validate()?;
        let done: HashSet<String> = store.load()?.into_iter().map(|r| r.run_id).collect();
        let cells = cfg.cells();
        let pending: Vec<CellId> = cells.iter().filter(|c| !done.contains(&c.run_id())).copied().collect();
        let skipped = cells.len() - pending.len();
        if pending.is_empty() {
            return Ok(SweepOutcome { skipped, ..SweepOutcome::default() });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

        let sources: Vec<_> = pending
            .iter()
            .filter(|c| c.m < c.n)
            .map(|c| (c.task, c.model, c.n, c.seed))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        pool.install(|| {
            sources.par_iter().for_each(|&(task, model, n, seed)| {
                if let Err(e) = self.pretrain_source(task, model, n, seed, cfg) {
                    log::error!("pretraining {task} {model} n={n} seed={seed} failed: {e}");
                }
            })
        });

        let results: Vec<(CellId, Result<RunRecord>)> = pool.install(|| {
            pending
                .par_iter()
                .map(|cell| {
                    let r = self.run_transfer(cell, cfg).and_then(|rec| {
                        store.append(&rec)?;
                        log::info!("{} accuracy {:.4}", rec.run_id, rec.accuracy);
                        Ok(rec)
                    });
                    (*cell, r)
                })
                .collect()
        });
        let mut outcome = SweepOutcome { skipped, ..SweepOutcome::default() };
        for (cell, r) in results {
            match r {
                Ok(rec) => outcome.completed.push(rec),
                Err(e) => {
                    log::error!("{} failed: {e}", cell.run_id());
                    outcome.failures.push((cell.run_id(), e.to_string()));
                }
            }
        }
        Ok(outcome)
    }
}

/// Writes `records.csv`, `best_m.csv`, `loss_history.csv` and
/// `summary.json` into `out_dir`.
pub fn write_report(records: &[RunRecord], out_dir: &Path, opts: &AggregateOptions) -> Result<Summary> {
    std::fs::create_dir_all(out_dir)?;
    let summary = metrics::aggregate(records, opts)?;
    std::fs::write(out_dir.join("records.csv"), metrics::records_csv(records))?;
    std::fs::write(out_dir.join("best_m.csv"), metrics::best_m_csv(&summary.best_m))?;
    std::fs::write(out_dir.join("loss_history.csv"), metrics::loss_history_csv(records))?;
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
