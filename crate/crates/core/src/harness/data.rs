use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassSet, DatasetId, Harness};
use crate::dataio::{self, Reducer, Sample};
use crate::derive_seed;
use crate::error::{Error, Result};

/// Images used to fit the PCA basis, at most.
pub const PCA_FIT_MAX: usize = 12000;

/// Reduced features of one class set: a fixed held-out test split and the
/// remaining training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub key: String,
    pub dim: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Per-class held-out split independent of any run seed: each class's
/// indices are shuffled under `tag` and the first `test_per_class` go to the
/// test side. Both outputs are sorted.
pub fn split_indices(labels: &[u8], n_classes: usize, test_per_class: usize, tag: &str) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, tag));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| usize::from(labels[i]) == c).collect();
        if idx.len() <= test_per_class {
            return Err(Error::Dataset(format!("class {c} has {} samples, need more than {test_per_class}", idx.len())));
        }
        idx.shuffle(&mut rng);
        test.extend_from_slice(&idx[..test_per_class]);
        train.extend_from_slice(&idx[test_per_class..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Class-balanced subset of `size` samples drawn under `(seed, tag)`.
/// Classes get `size / k` samples each, the first `size % k` one more.
pub fn sample_balanced(samples: &[Sample], n_classes: usize, size: usize, seed: u64, tag: &str) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    let mut out = Vec::with_capacity(size);
    for c in 0..n_classes {
        let want = size / n_classes + usize::from(c < size % n_classes);
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| usize::from(samples[i].label) == c).collect();
        if idx.len() < want {
            return Err(Error::Dataset(format!("class {c} has {} samples, {want} requested", idx.len())));
        }
        idx.shuffle(&mut rng);
        out.extend(idx[..want].iter().map(|&i| samples[i].clone()));
    }
    Ok(out)
}

impl Harness {
    fn reduced_paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let dir = self.cache_dir.join("reduced");
        (dir.join(format!("{key}-train.bin")), dir.join(format!("{key}-test.bin")))
    }

    /// PCA reducer shared by every class set of `dataset`, fitted on up to
    /// [`PCA_FIT_MAX`] images of the dataset's `train` file.
    pub fn reducer(&self, dataset: DatasetId, dim: usize) -> Result<Reducer> {
        let path = self.cache_dir.join("reduced").join(format!("{}-d{dim}-pca.json", dataset.dir_name()));
        if path.exists() {
            match std::fs::read_to_string(&path).map_err(Error::from).and_then(|t| Ok(serde_json::from_str::<Reducer>(&t)?)) {
                Ok(r) if r.dim() == dim => return Ok(r),
                Ok(_) => log::warn!("{} has the wrong dimension; refitting", path.display()),
                Err(e) => log::warn!("{} unreadable ({e}); refitting", path.display()),
            }
        }
        let (train, _) = dataio::load_standard(&self.data_dir.join(dataset.dir_name()))?;
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(0, &format!("{}/pca", dataset.dir_name()))));
        idx.truncate(PCA_FIT_MAX);
        idx.sort_unstable();
        log::info!("fitting {dim}-component PCA for {} on {} images", dataset.dir_name(), idx.len());
        let r = dataio::fit_reducer(&train.subset(&idx), dim)?;
        std::fs::create_dir_all(path.parent().expect("cache path has a parent"))?;
        std::fs::write(&path, serde_json::to_string(&r)?)?;
        Ok(r)
    }

    /// Reduced train/test split for `set` with `dim` features, built from the
    /// IDX files on first use and cached on disk and in memory.
    ///
    /// Test samples (`test_size / k` per class) come from the `t10k` file;
    /// the training pool is the `train` file plus the unused `t10k` images.
    pub fn split(&self, set: &ClassSet, dim: usize, test_size: usize) -> Result<Arc<DataSplit>> {
        let test_per_class = test_size / set.n_classes();
        if test_per_class == 0 {
            return Err(Error::invalid(format!("test size {test_size} is smaller than the class count")));
        }
        let key = format!("{}-d{dim}-t{test_per_class}", set.key());
        let mut memo = self.splits.lock().expect("split cache poisoned");
        if let Some(s) = memo.get(&key) {
            return Ok(Arc::clone(s));
        }
        let (train_path, test_path) = self.reduced_paths(&key);
        let cached = match (dataio::read_reduced(&train_path), dataio::read_reduced(&test_path)) {
            (Ok(train), Ok(test)) if train.first().map_or(false, |s| s.features.len() == dim) => Some((train, test)),
            (Err(e), _) | (_, Err(e)) if train_path.exists() || test_path.exists() => {
                log::warn!("reduced cache {key} unreadable ({e}); rebuilding");
                None
            }
            _ => None,
        };
        let (train, test) = match cached {
            Some(t) => t,
            None => {
                let built = self.build_split(set, dim, test_per_class, &key)?;
                std::fs::create_dir_all(train_path.parent().expect("cache path has a parent"))?;
                dataio::write_reduced(&train_path, &built.0)?;
                dataio::write_reduced(&test_path, &built.1)?;
                built
            }
        };
        let split = Arc::new(DataSplit { key: key.clone(), dim, train, test });
        memo.insert(key, Arc::clone(&split));
        Ok(split)
    }

    fn build_split(&self, set: &ClassSet, dim: usize, test_per_class: usize, key: &str) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let reducer = self.reducer(set.dataset, dim)?;
        let (train_file, test_file) = dataio::load_standard(&self.data_dir.join(set.dataset.dir_name()))?;
        let train_sel = dataio::select_classes(&train_file, &set.classes)?;
        let test_sel = dataio::select_classes(&test_file, &set.classes)?;
        let (rest_idx, test_idx) = split_indices(&test_sel.labels, set.n_classes(), test_per_class, key)?;
        let pool = train_sel.concat(test_sel.subset(&rest_idx))?;
        Ok((dataio::reduce(&reducer, &pool), dataio::reduce(&reducer, &test_sel.subset(&test_idx))))
    }
}
