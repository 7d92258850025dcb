//! Dataset ingestion: IDX files, class filtering, PCA reduction to 8 or 16
//! features rescaled to `[0, pi]`, angle encoding, and a small binary cache
//! for reduced datasets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevec::StateVector;
use crate::tol;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// `b"AQRD"` read little-endian.
pub const REDUCED_MAGIC: u32 = 0x4452_5141;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `rows * cols` bytes per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.pixel_count();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// Appends another dataset with the same image shape.
    pub fn concat(mut self, other: RawDataset) -> Result<RawDataset> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::invalid("cannot concatenate datasets with different image sizes"));
        }
        self.pixels.extend(other.pixels);
        self.labels.extend(other.labels);
        Ok(self)
    }

    /// Subset by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> RawDataset {
        let mut pixels = Vec::with_capacity(idx.len() * self.pixel_count());
        for &i in idx {
            pixels.extend_from_slice(self.image(i));
        }
        RawDataset {
            rows: self.rows,
            cols: self.cols,
            pixels,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// A reduced feature vector in `[0, pi]` with its (relabelled) class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u8,
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), offset, message: message.into() }
}

/// Reads a whole file, transparently gunzipping it when it starts with the
/// gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData {
                path: path.to_path_buf(),
                hint: "run scripts/fetch_datasets.py or point --data-dir at the IDX files".into(),
            },
            _ => e.into(),
        })?
        .read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, 0, format!("gzip: {e}")))?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, offset as u64, "header truncated"))
}

pub fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(path, 0, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("expected {expected} pixel bytes, found {}", payload.len()),
        ));
    }
    Ok((count, rows, cols, payload[..expected].to_vec()))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(path, 0, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("expected {count} label bytes, found {}", payload.len()),
        ));
    }
    Ok(payload[..count].to_vec())
}

/// Loads a matching pair of IDX image and label files.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    let (count, rows, cols, pixels) = load_idx_images(images)?;
    let labels_v = load_idx_labels(labels)?;
    if labels_v.len() != count {
        return Err(format_err(
            labels,
            4,
            format!("{count} images but {} labels", labels_v.len()),
        ));
    }
    Ok(RawDataset { rows, cols, pixels, labels: labels_v })
}

/// Resolves `<dir>/<stem>` or `<dir>/<stem>.gz`.
pub fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

/// Loads the standard `train` and `t10k` files of one dataset directory.
pub fn load_standard(dir: &Path) -> Result<(RawDataset, RawDataset)> {
    let train = load_idx(&find_idx(dir, "train-images-idx3-ubyte"), &find_idx(dir, "train-labels-idx1-ubyte"))?;
    let test = load_idx(&find_idx(dir, "t10k-images-idx3-ubyte"), &find_idx(dir, "t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

/// Keeps only `classes` and relabels each kept image to the position of its
/// class in `classes` (so binary tasks map first -> 0, second -> 1).
pub fn select_classes(ds: &RawDataset, classes: &[u8]) -> Result<RawDataset> {
    if classes.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    if let Some(c) = classes.iter().find(|&&c| c > 9) {
        return Err(Error::invalid(format!("unknown class {c}")));
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| classes.contains(&ds.labels[i])).collect();
    let mut out = ds.subset(&idx);
    for l in out.labels.iter_mut() {
        *l = classes.iter().position(|c| c == l).expect("filtered") as u8;
    }
    Ok(out)
}

/// Fitted PCA projection plus min-max rescaling to `[0, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    /// Pixel-space mean (pixel units).
    pub mean: Vec<f64>,
    /// `dim` orthonormal rows of length `pixel_count`.
    pub basis: Vec<Vec<f64>>,
    /// Variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// PCA on raw pixel rows (`n x d`, row-major `f64`).
fn principal_components(data: &[f64], n: usize, d: usize, dim: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut mean = vec![0.0; d];
    for row in data.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data[i * d + j] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = (centered.transpose() * &centered) / denom;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order.iter().filter(|&&k| eig.eigenvalues[k] > 1e-9 * top.max(1e-300)).count();
    if dim > rank {
        return Err(Error::invalid(format!("requested {dim} components but data has rank {rank}")));
    }
    let mut basis = Vec::with_capacity(dim);
    let mut variance = Vec::with_capacity(dim);
    for &k in order.iter().take(dim) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
        if v[imax] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(v);
        variance.push(eig.eigenvalues[k]);
    }
    Ok((mean, basis, variance))
}

impl Reducer {
    /// Fits on raw real-valued rows; exposed for synthetic data.
    pub fn fit_rows(rows: &[Vec<f64>], dim: usize) -> Result<Reducer> {
        if rows.is_empty() {
            return Err(Error::invalid("cannot fit a reducer on an empty dataset"));
        }
        let d = rows[0].len();
        if dim == 0 || dim > d {
            return Err(Error::invalid(format!("dim {dim} not in 1..={d}")));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let (mean, basis, explained_variance) = principal_components(&flat, rows.len(), d, dim)?;
        let mut r = Reducer { mean, basis, explained_variance, min: vec![0.0; dim], max: vec![0.0; dim] };
        let proj: Vec<Vec<f64>> = rows.iter().map(|x| r.project(x)).collect();
        for k in 0..dim {
            r.min[k] = proj.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            r.max[k] = proj.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(r)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// PCA coordinates (before rescaling).
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.iter().zip(x).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum())
            .collect()
    }

    /// Projected, rescaled to `[0, pi]` with training min/max, and clamped.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        self.project(x)
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let span = self.max[k] - self.min[k];
                if span > 0.0 {
                    ((v - self.min[k]) / span * pi).clamp(0.0, pi)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Largest `|<b_i, b_j> - delta_ij|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                worst = worst.max((d - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }
}

fn image_rows(ds: &RawDataset) -> Vec<Vec<f64>> {
    (0..ds.len()).map(|i| ds.image(i).iter().map(|&p| f64::from(p)).collect()).collect()
}

/// PCA fitted on `train`, keeping `dim` components.
pub fn fit_reducer(train: &RawDataset, dim: usize) -> Result<Reducer> {
    if train.is_empty() {
        return Err(Error::invalid("cannot fit a reducer on an empty dataset"));
    }
    let r = Reducer::fit_rows(&image_rows(train), dim)?;
    debug_assert!(r.orthonormality_error() < tol::BASIS);
    Ok(r)
}

pub fn reduce(r: &Reducer, ds: &RawDataset) -> Vec<Sample> {
    (0..ds.len())
        .map(|i| {
            let x: Vec<f64> = ds.image(i).iter().map(|&p| f64::from(p)).collect();
            Sample { features: r.transform(&x), label: ds.labels[i] }
        })
        .collect()
}

/// `(x) Ry(x_i)|0>`.
pub fn angle_encode(features: &[f64]) -> Result<StateVector> {
    if let Some(x) = features.iter().find(|x| !(0.0..=std::f64::consts::PI).contains(*x)) {
        return Err(Error::invalid(format!("feature {x} outside [0, pi]")));
    }
    StateVector::product_ry(features)
}

/// Writes the reduced-dataset container: little-endian `u32` magic, `u32`
/// dim, `u32` count, then `count*dim` `f64` features and `count` `i32`
/// labels.
pub fn write_reduced(path: &Path, samples: &[Sample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    if samples.iter().any(|s| s.features.len() != dim) {
        return Err(Error::invalid("samples have inconsistent dimension"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&REDUCED_MAGIC.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        for v in &s.features {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for s in samples {
        w.write_all(&i32::from(s.label).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reduced(path: &Path) -> Result<Vec<Sample>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let word = |off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| format_err(path, off as u64, "header truncated"))
    };
    if word(0)? != REDUCED_MAGIC {
        return Err(format_err(path, 0, "bad reduced-dataset magic"));
    }
    let dim = word(4)? as usize;
    let count = word(8)? as usize;
    let expected = 12 + count * dim * 8 + count * 4;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let feats = &bytes[12..12 + count * dim * 8];
    let labels = &bytes[12 + count * dim * 8..];
    Ok((0..count)
        .map(|i| Sample {
            features: (0..dim)
                .map(|k| {
                    let o = (i * dim + k) * 8;
                    f64::from_le_bytes(feats[o..o + 8].try_into().expect("8 bytes"))
                })
                .collect(),
            label: i32::from_le_bytes(labels[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as u8,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn write_idx_images(path: &Path, count: u32, payload: &[u8]) {
        let mut b = Vec::new();
        b.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend(count.to_be_bytes());
        b.extend(2u32.to_be_bytes());
        b.extend(2u32.to_be_bytes());
        b.extend(payload);
        std::fs::write(path, b).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut b = Vec::new();
        b.extend(IDX_LABELS_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        std::fs::write(path, b).unwrap();
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, 3, &(0..12).collect::<Vec<u8>>());
        write_idx_labels(&lab, &[4, 5, 6]);
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.image(2), &[8, 9, 10, 11]);

        // truncated pixels
        write_idx_images(&img, 4, &(0..12).collect::<Vec<u8>>());
        let err = load_idx_images(&img).unwrap_err().to_string();
        assert!(err.contains("expected 16") && err.contains("found 12"), "{err}");

        // count mismatch
        write_idx_images(&img, 3, &(0..12).collect::<Vec<u8>>());
        write_idx_labels(&lab, &[1, 2]);
        assert!(matches!(load_idx(&img, &lab), Err(Error::Format { .. })));

        // swapped magic
        assert!(matches!(load_idx_labels(&img), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let mut b = Vec::new();
        b.extend(IDX_LABELS_MAGIC.to_be_bytes());
        b.extend(2u32.to_be_bytes());
        b.extend([7u8, 1]);
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&b).unwrap();
        let path = dir.path().join("labels.gz");
        std::fs::write(&path, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx_labels(&path).unwrap(), vec![7, 1]);
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_idx_labels(Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, Error::MissingData { .. }));
    }

    #[test]
    fn class_selection() {
        let ds = RawDataset { rows: 1, cols: 1, pixels: vec![10, 11, 12, 13, 14], labels: vec![5, 3, 7, 5, 1] };
        let sel = select_classes(&ds, &[5, 7]).unwrap();
        assert_eq!(sel.labels, vec![0, 1, 0]);
        assert_eq!(sel.pixels, vec![10, 12, 13]);
        assert!(select_classes(&ds, &[0, 8]).unwrap().is_empty());
        assert!(select_classes(&ds, &[11]).is_err());
        assert!(select_classes(&ds, &[]).is_err());
    }

    #[test]
    fn pca_diagonal_direction() {
        let rows: Vec<Vec<f64>> = (-5..=5).map(|t| vec![t as f64 + 0.01 * (t * t) as f64, t as f64]).collect();
        let r = Reducer::fit_rows(&rows, 1).unwrap();
        let b = &r.basis[0];
        assert!((b[0] - 0.7071).abs() < 1e-2 && (b[1] - 0.7071).abs() < 1e-2, "{b:?}");
    }

    #[test]
    fn rescale_bounds() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1]).collect();
        let r = Reducer::fit_rows(&rows, 2).unwrap();
        let t: Vec<Vec<f64>> = rows.iter().map(|x| r.transform(x)).collect();
        for k in 0..2 {
            let lo = t.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
            let hi = t.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo.abs() < 1e-12 && (hi - PI).abs() < 1e-12);
        }
        assert!(r.transform(&[100.0, -100.0, 50.0]).iter().all(|v| (0.0..=PI).contains(v)));
        assert!(r.orthonormality_error() < 1e-8);
    }

    #[test]
    fn rank_check() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        assert!(Reducer::fit_rows(&rows, 2).is_err());
        assert!(Reducer::fit_rows(&rows, 1).is_ok());
    }

    #[test]
    fn encode_examples() {
        let s = angle_encode(&[0.0; 3]).unwrap();
        assert_eq!(s.amplitudes()[0].re, 1.0);
        let s = angle_encode(&[PI, PI / 2.0]).unwrap();
        assert!(s.marginal_p0(0).unwrap() < 1e-15);
        assert!((s.marginal_p0(1).unwrap() - 0.5).abs() < 1e-15);
        assert!(angle_encode(&[-0.1]).is_err());
    }

    #[test]
    fn reduced_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bin");
        let s = vec![
            Sample { features: vec![0.1, 0.2], label: 1 },
            Sample { features: vec![3.0, 0.0], label: 0 },
        ];
        write_reduced(&path, &s).unwrap();
        assert_eq!(read_reduced(&path).unwrap(), s);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 12 + 2 * 2 * 8 + 2 * 4);
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_reduced(&path).is_err());
    }
}
