//! Accuracy, accuracy drop, relative performance retention (RPR),
//! positive-transfer flags and their aggregation over tasks and depths.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Outcome of one transfer cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub task: String,
    pub model: String,
    pub n: usize,
    pub m: usize,
    pub target_size: usize,
    pub seed: u64,
    /// Accuracy on the held-out target test set.
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub test_size: usize,
    /// `m == n`: trained from a fresh initialization, no source knowledge.
    pub from_scratch: bool,
    pub n_trainable: usize,
    pub source_cache_key: Option<String>,
    pub config: serde_json::Value,
    pub readout: serde_json::Value,
    pub params: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub elapsed_secs: f64,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) || !(0.0..=1.0).contains(&self.train_accuracy) {
            return Err(Error::invalid(format!("{}: accuracy outside [0, 1]", self.run_id)));
        }
        if self.m > self.n {
            return Err(Error::invalid(format!("{}: m > n", self.run_id)));
        }
        if self.task.is_empty() || self.model.is_empty() {
            return Err(Error::invalid("record is missing task or model"));
        }
        Ok(())
    }
}

/// Fraction of matching entries.
pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::invalid("accuracy needs equal-length, nonempty inputs"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// `acc_small / acc_large`.
pub fn rpr(acc_small: f64, acc_large: f64) -> Result<f64> {
    if acc_large == 0.0 {
        return Err(Error::UndefinedMetric("RPR with zero large-data accuracy".into()));
    }
    Ok(acc_small / acc_large)
}

/// `acc_large - acc_small`, signed.
pub fn accuracy_drop(acc_large: f64, acc_small: f64) -> f64 {
    acc_large - acc_small
}

/// `true` iff the best accuracy over `m < n` strictly exceeds the `m = n`
/// accuracy. `by_m` holds `(m, accuracy)` pairs.
pub fn positive_transfer(by_m: &[(usize, f64)], n: usize) -> Result<bool> {
    let scratch = by_m
        .iter()
        .find(|(m, _)| *m == n)
        .map(|(_, a)| *a)
        .ok_or_else(|| Error::invalid("positive transfer needs an m = n record"))?;
    let best = by_m
        .iter()
        .filter(|(m, _)| *m < n)
        .map(|(_, a)| *a)
        .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |b| b.max(a))))
        .ok_or_else(|| Error::invalid("positive transfer needs a record with m < n"))?;
    Ok(best > scratch)
}

/// Seed-averaged accuracy of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub task: String,
    pub model: String,
    pub n: usize,
    pub m: usize,
    pub target_size: usize,
    pub mean_accuracy: f64,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropSummary {
    pub model: String,
    pub n: usize,
    pub mean_abs_drop: Option<f64>,
    pub cells: usize,
    /// Restricted to tasks flagged as positive transfer.
    pub mean_abs_drop_positive: Option<f64>,
    pub cells_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RprSummary {
    pub model: String,
    pub n: usize,
    pub m: usize,
    pub mean_rpr: f64,
    pub tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFlag {
    pub task: String,
    pub model: String,
    pub n: usize,
    pub target_size: usize,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFlag {
    pub task: String,
    pub n: usize,
    /// OR over models and target sizes.
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestM {
    pub task: String,
    pub model: String,
    pub n: usize,
    pub target_size: usize,
    pub m: usize,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Drop `m = 0` and `m = n` cells from drop and RPR aggregates.
    pub exclude_endpoints: bool,
    /// Large and small target sizes; inferred as max/min when absent.
    pub sizes: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<CellMean>,
    pub drops: Vec<DropSummary>,
    pub rpr: Vec<RprSummary>,
    pub transfer: Vec<TransferFlag>,
    pub tasks: Vec<TaskFlag>,
    pub best_m: Vec<BestM>,
}

type CellKey = (String, String, usize, usize, usize);

/// Seed means per `(task, model, n, m, size)`, in key order.
pub fn cell_means(records: &[RunRecord]) -> Vec<CellMean> {
    let mut groups: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.task.clone(), r.model.clone(), r.n, r.m, r.target_size))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((task, model, n, m, target_size), mut rs)| {
            rs.sort_by_key(|r| r.seed);
            let accuracies: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            CellMean {
                task,
                model,
                n,
                m,
                target_size,
                mean_accuracy: mean(&accuracies).expect("group is nonempty"),
                seeds: rs.iter().map(|r| r.seed).collect(),
                accuracies,
            }
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Builds every summary table from raw records.
pub fn aggregate(records: &[RunRecord], opts: &AggregateOptions) -> Result<Summary> {
    let cells = cell_means(records);
    let sizes: BTreeSet<usize> = cells.iter().map(|c| c.target_size).collect();
    let (large, small) = match opts.sizes {
        Some(s) => s,
        None => match (sizes.iter().next_back(), sizes.iter().next()) {
            (Some(&l), Some(&s)) => (l, s),
            _ => return Ok(Summary::default()),
        },
    };
    let lookup: BTreeMap<CellKey, f64> = cells
        .iter()
        .map(|c| ((c.task.clone(), c.model.clone(), c.n, c.m, c.target_size), c.mean_accuracy))
        .collect();

    // positive transfer per (task, model, n, size)
    let mut by_group: BTreeMap<(String, String, usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for c in &cells {
        by_group
            .entry((c.task.clone(), c.model.clone(), c.n, c.target_size))
            .or_default()
            .push((c.m, c.mean_accuracy));
    }
    let mut transfer = Vec::new();
    let mut best_m = Vec::new();
    let mut task_or: BTreeMap<(String, usize), bool> = BTreeMap::new();
    for ((task, model, n, target_size), by_m) in &by_group {
        let (m, acc) = by_m
            .iter()
            .copied()
            .fold(None, |best: Option<(usize, f64)>, (m, a)| match best {
                Some((bm, ba)) if ba > a || (ba == a && bm <= m) => Some((bm, ba)),
                _ => Some((m, a)),
            })
            .expect("group is nonempty");
        best_m.push(BestM { task: task.clone(), model: model.clone(), n: *n, target_size: *target_size, m, mean_accuracy: acc });
        if let Ok(positive) = positive_transfer(by_m, *n) {
            transfer.push(TransferFlag { task: task.clone(), model: model.clone(), n: *n, target_size: *target_size, positive });
            *task_or.entry((task.clone(), *n)).or_default() |= positive;
        }
    }
    let tasks: Vec<TaskFlag> = task_or.iter().map(|((task, n), &positive)| TaskFlag { task: task.clone(), n: *n, positive }).collect();

    // drops and RPR over cells present at both sizes
    let mut drops_all: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut drops_pos: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut rprs: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.target_size == large) {
        if opts.exclude_endpoints && (c.m == 0 || c.m == c.n) {
            continue;
        }
        let Some(&acc_small) = lookup.get(&(c.task.clone(), c.model.clone(), c.n, c.m, small)) else {
            continue;
        };
        let d = accuracy_drop(c.mean_accuracy, acc_small).abs();
        drops_all.entry((c.model.clone(), c.n)).or_default().push(d);
        if task_or.get(&(c.task.clone(), c.n)).copied().unwrap_or(false) {
            drops_pos.entry((c.model.clone(), c.n)).or_default().push(d);
        }
        if let Ok(r) = rpr(acc_small, c.mean_accuracy) {
            rprs.entry((c.model.clone(), c.n, c.m)).or_default().push(r);
        }
    }
    let drops = drops_all
        .iter()
        .map(|((model, n), all)| {
            let pos = drops_pos.get(&(model.clone(), *n)).map(Vec::as_slice).unwrap_or(&[]);
            DropSummary {
                model: model.clone(),
                n: *n,
                mean_abs_drop: mean(all),
                cells: all.len(),
                mean_abs_drop_positive: mean(pos),
                cells_positive: pos.len(),
            }
        })
        .collect();
    let rpr = rprs
        .into_iter()
        .map(|((model, n, m), v)| RprSummary { model, n, m, mean_rpr: mean(&v).expect("nonempty"), tasks: v.len() })
        .collect();
    Ok(Summary { cells, drops, rpr, transfer, tasks, best_m })
}

/// `model,n,m,task,size,seed,accuracy` with one row per record.
pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("model,n,m,task,size,seed,accuracy\n");
    for r in records {
        writeln!(out, "{},{},{},{},{},{},{}", r.model, r.n, r.m, r.task, r.target_size, r.seed, r.accuracy).expect("string write");
    }
    out
}

/// `task,model,n,size,best_m,mean_accuracy`.
pub fn best_m_csv(best: &[BestM]) -> String {
    let mut out = String::from("task,model,n,size,best_m,mean_accuracy\n");
    for b in best {
        writeln!(out, "{},{},{},{},{},{}", b.task, b.model, b.n, b.target_size, b.m, b.mean_accuracy).expect("string write");
    }
    out
}

/// `run_id,epoch,loss`.
pub fn loss_history_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("run_id,epoch,loss\n");
    for r in records {
        for (e, l) in r.loss_history.iter().enumerate() {
            writeln!(out, "{},{},{}", r.run_id, e, l).expect("string write");
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn fixture(task: &str, model: &str, n: usize, m: usize, size: usize, seed: u64, acc: f64) -> RunRecord {
    RunRecord {
        schema_version: SCHEMA_VERSION,
        run_id: format!("{task}/{model}/n{n}/m{m}/s{size}/seed{seed}"),
        task: task.into(),
        model: model.into(),
        n,
        m,
        target_size: size,
        seed,
        accuracy: acc,
        train_accuracy: acc,
        test_size: 400,
        from_scratch: m == n,
        n_trainable: 0,
        source_cache_key: None,
        config: serde_json::Value::Null,
        readout: serde_json::Value::Null,
        params: Vec::new(),
        loss_history: vec![1.0, 0.5],
        elapsed_secs: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[1, 1]).unwrap(), 0.5);
        let mut p = vec![1u8; 400];
        p[..12].iter_mut().for_each(|x| *x = 0);
        assert!((accuracy(&p, &[1; 400]).unwrap() - 0.97).abs() < 1e-15);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn rpr_and_drop() {
        assert_eq!(rpr(0.8, 0.8).unwrap(), 1.0);
        assert!((rpr(0.9675, 0.9694).unwrap() - 0.99804).abs() < 1e-5);
        assert!((rpr(0.9731, 0.9312).unwrap() - 1.0450).abs() < 1e-4);
        assert!(matches!(rpr(0.5, 0.0), Err(Error::UndefinedMetric(_))));
        assert!((accuracy_drop(0.9824, 0.8620) - 0.1204).abs() < 1e-12);
        assert!(accuracy_drop(0.8, 0.9) < 0.0);
    }

    #[test]
    fn positive_transfer_examples() {
        assert!(positive_transfer(&[(1, 0.90), (2, 0.95), (3, 0.92)], 3).unwrap());
        assert!(!positive_transfer(&[(1, 0.90), (3, 0.95)], 3).unwrap());
        assert!(!positive_transfer(&[(1, 0.95), (3, 0.95)], 3).unwrap());
        assert!(positive_transfer(&[(1, 0.95)], 3).is_err());
    }

    #[test]
    fn four_record_fixture() {
        let recs = vec![
            fixture("TL-I", "QCNN-Z", 3, 2, 12000, 0, 0.90),
            fixture("TL-I", "QCNN-Z", 3, 2, 40, 0, 0.80),
            fixture("TL-I", "QCNN-Z", 3, 3, 12000, 0, 0.95),
            fixture("TL-I", "QCNN-Z", 3, 3, 40, 0, 0.70),
        ];
        let s = aggregate(&recs, &AggregateOptions::default()).unwrap();
        assert_eq!(s.cells.len(), 4);
        let d = &s.drops[0];
        assert!((d.mean_abs_drop.unwrap() - 0.175).abs() < 1e-12);
        assert_eq!(d.cells, 2);
        let r2 = s.rpr.iter().find(|r| r.m == 2).unwrap();
        assert!((r2.mean_rpr - 0.8 / 0.9).abs() < 1e-12);
        // small: 0.80 at m=2 beats 0.70 at m=3
        assert!(s.tasks[0].positive);
        assert!((d.mean_abs_drop_positive.unwrap() - 0.175).abs() < 1e-12);
        let best_large = s.best_m.iter().find(|b| b.target_size == 12000).unwrap();
        assert_eq!(best_large.m, 3);
    }

    #[test]
    fn seeds_are_averaged_and_ties_prefer_small_m() {
        let recs = vec![
            fixture("T", "M", 3, 1, 40, 0, 0.5),
            fixture("T", "M", 3, 1, 40, 1, 0.7),
            fixture("T", "M", 3, 2, 40, 0, 0.6),
        ];
        let s = aggregate(&recs, &AggregateOptions::default()).unwrap();
        assert!((s.cells[0].mean_accuracy - 0.6).abs() < 1e-12);
        assert_eq!(s.best_m[0].m, 1);
    }

    #[test]
    fn csv_row_counts() {
        let recs: Vec<RunRecord> = (0..6).map(|i| fixture("T", "M", 3, i % 3, 40, i as u64, 0.5)).collect();
        assert_eq!(records_csv(&recs).lines().count(), 7);
        assert_eq!(loss_history_csv(&recs).lines().count(), 13);
    }
}
