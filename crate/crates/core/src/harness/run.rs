use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Harness, ModelId, SweepConfig, TaskId};
use crate::ansatz::{build_model, ModelSpec};
use crate::baseline::{self, build_ccnn, CcnnSpec};
use crate::dataio::Sample;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, RunRecord, SCHEMA_VERSION};
use crate::readout;
use crate::train::{self, Example, FitResult, FreezePlan, TargetBits, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub task: TaskId,
    pub model: ModelId,
    pub n: usize,
    pub m: usize,
    pub target_size: usize,
    pub seed: u64,
}

impl CellId {
    pub fn run_id(&self) -> String {
        format!(
            "{}/{}/n{}/m{}/s{}/seed{}",
            self.task.slug(),
            String::from(self.model),
            self.n,
            self.m,
            self.target_size,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 3 && self.n != 4 {
            return Err(Error::invalid(format!("n must be 3 or 4, got {}", self.n)));
        }
        if self.m > self.n {
            return Err(Error::invalid(format!("m = {} exceeds n = {}", self.m, self.n)));
        }
        if self.target_size == 0 {
            return Err(Error::invalid("target size must be positive"));
        }
        Ok(())
    }
}

/// Pretrained source parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub key: String,
    pub task: TaskId,
    pub model: ModelId,
    pub n: usize,
    pub seed: u64,
    pub params: Vec<f64>,
    pub loss_history: Vec<f64>,
}

enum Net {
    Quantum(ModelSpec),
    Classical(CcnnSpec),
}

impl Net {
    fn build(model: ModelId, n: usize) -> Result<Net> {
        Ok(match model {
            ModelId::Qcnn(v) => Net::Quantum(build_model(v, n)?),
            ModelId::Ccnn(v) => Net::Classical(build_ccnn(v, n)?),
        })
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        match self {
            Net::Quantum(s) => train::init_params(s.n_params, seed),
            Net::Classical(s) => baseline::init_weights(s, seed),
        }
    }

    fn freeze(&self, m: usize) -> Result<FreezePlan> {
        match self {
            Net::Quantum(s) => FreezePlan::for_model(s, m),
            Net::Classical(s) => s.freeze_plan(m),
        }
    }

    fn code_len(&self) -> usize {
        match self {
            Net::Quantum(s) => s.measured.len(),
            Net::Classical(_) => 1,
        }
    }

    fn examples(&self, samples: &[Sample], n_classes: usize) -> Vec<Example> {
        let len = self.code_len();
        samples
            .iter()
            .map(|s| Example {
                features: s.features.clone(),
                target: TargetBits::for_class(usize::from(s.label), n_classes, len),
            })
            .collect()
    }

    fn fit(&self, init: &[f64], data: &[Example], cfg: &TrainConfig, plan: &FreezePlan, epochs: usize) -> Result<FitResult> {
        match self {
            Net::Quantum(s) => train::fit_epochs(s, init, data, cfg, plan, epochs),
            Net::Classical(s) => baseline::ccnn_fit_epochs(s, init, data, cfg, plan, epochs),
        }
    }

    /// Refits the readout on `train` and returns `(rule as JSON, predictor)`.
    fn readout(&self, params: &[f64], train: &[Sample], c: f64) -> Result<(serde_json::Value, Box<dyn Fn(&[f64]) -> Result<u8> + Sync + '_>)> {
        let xs: Vec<Vec<f64>> = train.iter().map(|s| s.features.clone()).collect();
        let ys: Vec<u8> = train.iter().map(|s| s.label).collect();
        let params = params.to_vec();
        match self {
            Net::Quantum(spec) => {
                let bloch = readout::extract_bloch(spec, &params, &xs)?;
                let rule = readout::fit_rule(&bloch, &ys, c)?;
                let json = serde_json::to_value(&rule)?;
                Ok((json, Box::new(move |x| readout::classify(spec, &params, &rule, x))))
            }
            Net::Classical(spec) => {
                let rule = baseline::fit_logit_rule(spec, &params, &xs, &ys, c)?;
                let json = serde_json::to_value(rule)?;
                Ok((json, Box::new(move |x| baseline::ccnn_classify(spec, &params, &rule, x))))
            }
        }
    }
}

fn evaluate(predict: &(dyn Fn(&[f64]) -> Result<u8> + Sync), samples: &[Sample]) -> Result<f64> {
    use rayon::prelude::*;
    let preds: Vec<u8> = samples.par_iter().map(|s| predict(&s.features)).collect::<Result<_>>()?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    accuracy(&preds, &labels)
}

fn sha_hex(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

/// Feature fingerprint used for the train/test isolation check.
fn sample_hash(s: &Sample) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in &s.features {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

impl Harness {
    /// Content hash identifying one source pretraining.
    pub fn source_key(&self, task: TaskId, model: ModelId, n: usize, seed: u64, cfg: &SweepConfig) -> String {
        let mut train = cfg.train_for(model).clone();
        train.seed = 0;
        sha_hex(&serde_json::json!({
            "schema": SCHEMA_VERSION,
            "task": task,
            "model": model,
            "n": n,
            "seed": seed,
            "source_size": cfg.source_size,
            "test_size": cfg.test_size,
            "source_epochs": cfg.source_epochs,
            "train": train,
        }))
    }

    /// Trains `model` on the task's source data, or loads the cached result.
    pub fn pretrain_source(&self, task: TaskId, model: ModelId, n: usize, seed: u64, cfg: &SweepConfig) -> Result<SourceModel> {
        let key = self.source_key(task, model, n, seed, cfg);
        let path = self.cache_dir.join("source").join(format!("{key}.json"));
        if path.exists() {
            match std::fs::read_to_string(&path).map_err(Error::from).and_then(|t| Ok(serde_json::from_str::<SourceModel>(&t)?)) {
                Ok(s) if s.key == key => return Ok(s),
                Ok(_) => log::warn!("source cache {} has a mismatched key; recomputing", path.display()),
                Err(e) => log::warn!("source cache {} is corrupt ({e}); recomputing", path.display()),
            }
        }
        let spec = task.spec();
        let net = Net::build(model, n)?;
        let split = self.split(&spec.source, 1 << n, cfg.test_size)?;
        let samples = super::sample_balanced(&split.train, spec.source.n_classes(), cfg.source_size, seed, "source")?;
        let data = net.examples(&samples, spec.source.n_classes());
        let train_cfg = TrainConfig { seed: derive_seed(seed, "source"), ..cfg.train_for(model).clone() };
        let epochs = cfg.source_epochs.unwrap_or_else(|| train_cfg.epochs_for(data.len()));
        let init = net.init(derive_seed(seed, "source"));
        let t0 = Instant::now();
        let fit = net.fit(&init, &data, &train_cfg, &net.freeze(n)?, epochs)?;
        log::info!("pretrained {} {} n={n} seed={seed} in {:.1}s", task, model, t0.elapsed().as_secs_f64());
        let source = SourceModel { key, task, model, n, seed, params: fit.params, loss_history: fit.loss_history };
        std::fs::create_dir_all(path.parent().expect("cache path has a parent"))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string(&source)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(source)
    }

    /// Runs one cell: (pretrain,) freeze, fine-tune, refit readout, evaluate.
    pub fn run_transfer(&self, cell: &CellId, cfg: &SweepConfig) -> Result<RunRecord> {
        cell.validate()?;
        let t0 = Instant::now();
        let spec = cell.task.spec();
        let net = Net::build(cell.model, cell.n)?;
        let split = self.split(&spec.target, 1 << cell.n, cfg.test_size)?;
        let k = spec.target.n_classes();
        let train_samples = super::sample_balanced(&split.train, k, cell.target_size, cell.seed, "target")?;
        let test_hashes: std::collections::HashSet<[u8; 32]> = split.test.iter().map(sample_hash).collect();
        let overlap = train_samples.iter().filter(|s| test_hashes.contains(&sample_hash(s))).count();
        if overlap > 0 {
            log::warn!("{}: {overlap} training samples have feature vectors identical to test samples", cell.run_id());
        }

        let from_scratch = cell.m == cell.n;
        let (init, source_key) = if from_scratch {
            (net.init(cell.seed), None)
        } else {
            let src = self.pretrain_source(cell.task, cell.model, cell.n, cell.seed, cfg)?;
            (src.params, Some(src.key))
        };
        let plan = net.freeze(cell.m)?;
        let train_cfg = TrainConfig { seed: cell.seed, ..cfg.train_for(cell.model).clone() };
        let epochs = train_cfg.epochs_for(train_samples.len());
        let data = net.examples(&train_samples, k);
        let fit = net.fit(&init, &data, &train_cfg, &plan, epochs)?;
        let (rule, predict) = net.readout(&fit.params, &train_samples, cfg.svm_c)?;
        let acc = evaluate(&*predict, &split.test)?;
        let train_acc = evaluate(&*predict, &train_samples)?;
        drop(predict);

        let record = RunRecord {
            schema_version: SCHEMA_VERSION,
            run_id: cell.run_id(),
            task: cell.task.label().into(),
            model: cell.model.label().into(),
            n: cell.n,
            m: cell.m,
            target_size: cell.target_size,
            seed: cell.seed,
            accuracy: acc,
            train_accuracy: train_acc,
            test_size: split.test.len(),
            from_scratch,
            n_trainable: plan.n_trainable(),
            source_cache_key: source_key,
            config: serde_json::json!({
                "train": train_cfg,
                "epochs": epochs,
                "svm_c": cfg.svm_c,
                "source_size": cfg.source_size,
                "source_epochs": cfg.source_epochs,
                "test_size": cfg.test_size,
                "readout": "refit on target training data",
                "features": split.key,
            }),
            readout: rule,
            params: fit.params,
            loss_history: fit.loss_history,
            elapsed_secs: t0.elapsed().as_secs_f64(),
        };
        record.validate()?;
        Ok(record)
    }
}
