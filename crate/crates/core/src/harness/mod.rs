//! Transfer-learning tasks, cells and sweeps.
//!
//! A *cell* is one `(task, model, n, m, target size, seed)` combination.
//! For `m < n` the model is first pretrained on the task's source data
//! (cached by content hash), its first `n - m` layers are frozen, and the
//! rest is fine-tuned on the target data. `m = n` trains from a fresh
//! initialization. Every fit is followed by a readout refit on the target
//! training data and evaluation on a held-out target test set.

mod data;
mod run;
mod store;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ansatz::ModelVariant;
use crate::baseline::CcnnVariant;
use crate::error::{Error, Result};
use crate::readout::DEFAULT_SVM_C;
use crate::train::TrainConfig;

pub use data::{sample_balanced, split_indices, DataSplit};
pub use run::{CellId, SourceModel};
pub use store::{write_report, ResultsStore, SweepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Tl1,
    Tl2,
    Tl3,
    Tl4,
    Tl5,
    Tl6,
    Tl7,
}

impl TaskId {
    pub const ALL: [TaskId; 7] = [TaskId::Tl1, TaskId::Tl2, TaskId::Tl3, TaskId::Tl4, TaskId::Tl5, TaskId::Tl6, TaskId::Tl7];

    pub fn label(self) -> &'static str {
        match self {
            TaskId::Tl1 => "TL-I",
            TaskId::Tl2 => "TL-II",
            TaskId::Tl3 => "TL-III",
            TaskId::Tl4 => "TL-IV",
            TaskId::Tl5 => "TL-V",
            TaskId::Tl6 => "TL-VI",
            TaskId::Tl7 => "TL-VII",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            TaskId::Tl1 => "tl1",
            TaskId::Tl2 => "tl2",
            TaskId::Tl3 => "tl3",
            TaskId::Tl4 => "tl4",
            TaskId::Tl5 => "tl5",
            TaskId::Tl6 => "tl6",
            TaskId::Tl7 => "tl7",
        }
    }

    pub fn spec(self) -> TaskSpec {
        use DatasetId::{Fashion, Mnist};
        let (source, target) = match self {
            TaskId::Tl1 => (ClassSet::new(Mnist, &[1, 2]), ClassSet::new(Mnist, &[5, 7])),
            TaskId::Tl2 => (ClassSet::new(Mnist, &[5, 7]), ClassSet::new(Mnist, &[1, 2])),
            TaskId::Tl3 => (ClassSet::new(Mnist, &[1, 2]), ClassSet::new(Mnist, &[0, 8])),
            TaskId::Tl4 => (ClassSet::new(Mnist, &[5, 7]), ClassSet::new(Mnist, &[0, 8])),
            TaskId::Tl5 => (ClassSet::new(Fashion, &[0, 1]), ClassSet::new(Mnist, &[0, 8])),
            TaskId::Tl6 => (ClassSet::new(Mnist, &[1, 2, 3, 4, 5, 6, 7, 9]), ClassSet::new(Mnist, &[0, 8])),
            TaskId::Tl7 => (ClassSet::new(Fashion, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]), ClassSet::new(Mnist, &[0, 8])),
        };
        TaskSpec { id: self, source, target }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    /// Accepts `tl2`, `TL-II`, `tl-ii` and `2`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace(['-', '_', ' ', '(', ')'], "");
        let t = t.strip_prefix("tl").unwrap_or(&t);
        let id = match t {
            "1" | "i" => TaskId::Tl1,
            "2" | "ii" => TaskId::Tl2,
            "3" | "iii" => TaskId::Tl3,
            "4" | "iv" => TaskId::Tl4,
            "5" | "v" => TaskId::Tl5,
            "6" | "vi" => TaskId::Tl6,
            "7" | "vii" => TaskId::Tl7,
            _ => return Err(Error::invalid(format!("unknown task {s:?}"))),
        };
        Ok(id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Mnist,
    Fashion,
}

impl DatasetId {
    /// Subdirectory of the data directory holding the IDX files.
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Fashion => "fashion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassSet {
    pub dataset: DatasetId,
    pub classes: Vec<u8>,
}

impl ClassSet {
    pub fn new(dataset: DatasetId, classes: &[u8]) -> Self {
        ClassSet { dataset, classes: classes.to_vec() }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn key(&self) -> String {
        let c: String = self.classes.iter().map(|c| c.to_string()).collect();
        format!("{}-c{c}", self.dataset.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub source: ClassSet,
    pub target: ClassSet,
}

impl TaskSpec {
    pub fn multi_class_source(&self) -> bool {
        self.source.n_classes() > 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelId {
    Qcnn(ModelVariant),
    Ccnn(CcnnVariant),
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [
        ModelId::Qcnn(ModelVariant::QcnnN),
        ModelId::Qcnn(ModelVariant::QcnnZ),
        ModelId::Qcnn(ModelVariant::QcnnG),
        ModelId::Ccnn(CcnnVariant::A),
        ModelId::Ccnn(CcnnVariant::B),
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelId::Qcnn(v) => v.name(),
            ModelId::Ccnn(v) => v.name(),
        }
    }

    pub fn is_quantum(self) -> bool {
        matches!(self, ModelId::Qcnn(_))
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "qcnn-n" => ModelId::Qcnn(ModelVariant::QcnnN),
            "qcnn-z" => ModelId::Qcnn(ModelVariant::QcnnZ),
            "qcnn-g" => ModelId::Qcnn(ModelVariant::QcnnG),
            "ccnn-a" => ModelId::Ccnn(CcnnVariant::A),
            "ccnn-b" => ModelId::Ccnn(CcnnVariant::B),
            _ => return Err(Error::invalid(format!("unknown model {s:?}"))),
        };
        Ok(id)
    }
}

impl TryFrom<String> for ModelId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> String {
        m.label().to_ascii_lowercase()
    }
}

/// Grid of cells plus the training settings shared by all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub tasks: Vec<TaskId>,
    pub models: Vec<ModelId>,
    pub n: Vec<usize>,
    /// Retraining depths; `None` means every `m` in `0..=n`.
    pub m: Option<Vec<usize>>,
    pub target_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub source_size: usize,
    /// Held-out target test samples (split evenly over the classes).
    pub test_size: usize,
    pub svm_c: f64,
    /// Source pretraining epochs; `None` uses the training config rule.
    pub source_epochs: Option<usize>,
    pub train: TrainConfig,
    /// Settings for the classical baselines; `None` reuses `train`.
    pub classical_train: Option<TrainConfig>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            tasks: Vec::new(),
            models: Vec::new(),
            n: vec![3],
            m: None,
            target_sizes: vec![12000, 40],
            seeds: vec![0, 1, 2],
            source_size: 12000,
            test_size: 400,
            svm_c: DEFAULT_SVM_C,
            source_epochs: None,
            train: TrainConfig::default(),
            classical_train: None,
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    /// Training settings for `model`.
    pub fn train_for(&self, model: ModelId) -> &TrainConfig {
        match (model, &self.classical_train) {
            (ModelId::Ccnn(_), Some(c)) => c,
            _ => &self.train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(c) = &self.classical_train {
            c.validate()?;
        }
        for &n in &self.n {
            if n != 3 && n != 4 {
                return Err(Error::invalid(format!("n must be 3 or 4, got {n}")));
            }
            if let Some(ms) = &self.m {
                if let Some(m) = ms.iter().find(|&&m| m > n) {
                    return Err(Error::invalid(format!("m = {m} exceeds n = {n}")));
                }
            }
        }
        if self.test_size == 0 || self.source_size == 0 || self.target_sizes.contains(&0) {
            return Err(Error::invalid("sample counts must be positive"));
        }
        if !(self.svm_c > 0.0) {
            return Err(Error::invalid("svm_c must be positive"));
        }
        Ok(())
    }

    /// Every cell of the grid, in a fixed order.
    pub fn cells(&self) -> Vec<CellId> {
        let mut out = Vec::new();
        for &task in &self.tasks {
            for &model in &self.models {
                for &n in &self.n {
                    let ms: Vec<usize> = match &self.m {
                        Some(ms) => ms.iter().copied().filter(|&m| m <= n).collect(),
                        None => (0..=n).collect(),
                    };
                    for &m in &ms {
                        for &target_size in &self.target_sizes {
                            for &seed in &self.seeds {
                                out.push(CellId { task, model, n, m, target_size, seed });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Filesystem context shared by all cells.
#[derive(Debug)]
pub struct Harness {
    pub data_dir: PathBuf,
    /// Reduced-data and source-parameter caches live under `<cache_dir>`.
    pub cache_dir: PathBuf,
    splits: std::sync::Mutex<std::collections::HashMap<String, std::sync::Arc<DataSplit>>>,
}

impl Harness {
    pub fn new(data_dir: impl Into<PathBuf>, cache_dir: impl Into<PathBuf>) -> Self {
        Harness { data_dir: data_dir.into(), cache_dir: cache_dir.into(), splits: Default::default() }
    }
}
