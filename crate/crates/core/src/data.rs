//! Dataset ingestion and iteration: IDX ubyte files, synthetic Gaussian
//! blobs, subsampling, and seeded mini-batch schedules.
//!
//! Datasets are immutable after construction and validated there: features in
//! `[0, 1]`, labels below the class count, at least one example.

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::{mix_seed, rng_from};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled examples with features in the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_count: usize,
        name: impl Into<String>,
    ) -> Result<Dataset> {
        if features.is_empty() {
            return Err(Error::Domain("a dataset needs at least one example".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Domain(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::Domain("feature rows must be non-empty".into()));
        }
        for row in &features {
            if row.len() != dim {
                return Err(Error::Domain(
                    "feature rows have inconsistent widths".into(),
                ));
            }
            if !row.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::Domain("features must lie in [0, 1]".into()));
            }
        }
        if class_count < 1 {
            return Err(Error::Domain("class count must be at least 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// Materializes the examples at `indices` as a batch, in order.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Domain(format!(
                    "index {i} out of range for {} examples",
                    self.len()
                )));
            }
            inputs.push(self.features[i].clone());
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, labels)
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
            .expect("indices in range")
    }
}

fn read_be_u32(bytes: &[u8], pos: usize, path: &Path) -> Result<u32> {
    bytes
        .get(pos..pos + 4)
        .map(|s| u32::from_be_bytes(s.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Ingestion {
            path: path.display().to_string(),
            message: "truncated header".into(),
        })
}

/// Loads an IDX image/label file pair into a dataset with pixels scaled to
/// `[0, 1]` by `byte / 255` and `class_count = 10`.
pub fn load_mnist_idx<P: AsRef<Path>>(images_path: P, labels_path: P) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let ingest = |path: &Path, message: String| Error::Ingestion {
        path: path.display().to_string(),
        message,
    };

    let image_bytes = fs::read(images_path).map_err(|e| ingest(images_path, e.to_string()))?;
    let label_bytes = fs::read(labels_path).map_err(|e| ingest(labels_path, e.to_string()))?;

    let magic = read_be_u32(&image_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(ingest(
            images_path,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = read_be_u32(&image_bytes, 4, images_path)? as usize;
    let rows = read_be_u32(&image_bytes, 8, images_path)? as usize;
    let cols = read_be_u32(&image_bytes, 12, images_path)? as usize;
    let dim = rows * cols;
    if image_bytes.len() != 16 + n * dim {
        return Err(ingest(
            images_path,
            format!(
                "expected {} bytes for {n} images of {rows}x{cols}, found {}",
                16 + n * dim,
                image_bytes.len()
            ),
        ));
    }

    let magic = read_be_u32(&label_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(ingest(
            labels_path,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let n_labels = read_be_u32(&label_bytes, 4, labels_path)? as usize;
    if label_bytes.len() != 8 + n_labels {
        return Err(ingest(
            labels_path,
            format!(
                "expected {} bytes for {n_labels} labels, found {}",
                8 + n_labels,
                label_bytes.len()
            ),
        ));
    }
    if n_labels != n {
        return Err(ingest(
            labels_path,
            format!("{n_labels} labels for {n} images"),
        ));
    }

    let features: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            image_bytes[16 + i * dim..16 + (i + 1) * dim]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect();
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&y| y > 9) {
        return Err(ingest(labels_path, format!("label {bad} outside 0..=9")));
    }
    Dataset::new(features, labels, 10, "mnist")
}

/// Writes a dataset back to an IDX image/label file pair. Pixels are encoded
/// as `round(value * 255)`; datasets whose features are exact multiples of
/// `1/255` (anything loaded by [`load_mnist_idx`]) round-trip exactly.
pub fn write_mnist_idx<P: AsRef<Path>>(
    data: &Dataset,
    images_path: P,
    labels_path: P,
) -> Result<()> {
    let dim = data.dim();
    let (rows, cols) = if dim == 784 {
        (28u32, 28u32)
    } else {
        (1u32, dim as u32)
    };

    let mut images = Vec::with_capacity(16 + data.len() * dim);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(data.len() as u32).to_be_bytes());
    images.extend_from_slice(&rows.to_be_bytes());
    images.extend_from_slice(&cols.to_be_bytes());
    for row in &data.features {
        images.extend(row.iter().map(|v| (v * 255.0).round() as u8));
    }

    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(data.len() as u32).to_be_bytes());
    labels.extend(data.labels.iter().map(|&y| y as u8));

    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

/// Draws `n_per_class` points around each class center with isotropic
/// Gaussian noise of scale `sigma`, clamped to the unit box. Classes are
/// balanced and interleaved.
pub fn synth_gaussians(
    n_per_class: usize,
    centers: &[Vec<f64>],
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if centers.is_empty() || n_per_class == 0 {
        return Err(Error::Domain(
            "need at least one center and one point per class".into(),
        ));
    }
    if sigma <= 0.0 || sigma.is_nan() {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let dim = centers[0].len();
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(Error::Domain(
            "centers must share a positive dimension".into(),
        ));
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = rng_from(seed);
    let mut features = Vec::with_capacity(n_per_class * centers.len());
    let mut labels = Vec::with_capacity(n_per_class * centers.len());
    for _ in 0..n_per_class {
        for (class, center) in centers.iter().enumerate() {
            let row: Vec<f64> = center
                .iter()
                .map(|c| (c + normal.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            features.push(row);
            labels.push(class);
        }
    }
    Dataset::new(features, labels, centers.len(), "synthetic")
}

/// Seeded uniform subsample without replacement, keeping the original order.
pub fn subsample(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > data.len() {
        return Err(Error::Domain(format!(
            "subsample size {n} out of range 1..={}",
            data.len()
        )));
    }
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(&mut rng_from(seed));
    let mut chosen = indices[..n].to_vec();
    chosen.sort_unstable();
    let features = chosen.iter().map(|&i| data.features[i].clone()).collect();
    let labels = chosen.iter().map(|&i| data.labels[i]).collect();
    Dataset::new(features, labels, data.class_count, data.name.clone())
}

/// Seeded permutation for one epoch, split into consecutive index chunks of
/// size `m`; the last chunk may be smaller. Identical `(seed, epoch)` produce
/// identical schedules.
pub fn minibatch_indices(data: &Dataset, m: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(m >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from(mix_seed(seed, epoch as u64)));
    order.chunks(m).map(|c| c.to_vec()).collect()
}

/// The epoch's mini-batches as materialized [`Batch`] values.
pub fn minibatches(data: &Dataset, m: usize, seed: u64, epoch: usize) -> Vec<Batch> {
    minibatch_indices(data, m, seed, epoch)
        .iter()
        .map(|idx| data.batch(idx).expect("indices in range"))
        .collect()
}

/// Persists a dataset as CSV rows `label,f0,f1,...`.
pub fn save_csv<P: AsRef<Path>>(data: &Dataset, path: P) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for (row, &label) in data.features.iter().zip(data.labels.iter()) {
        write!(out, "{label}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Loads a dataset written by [`save_csv`].
pub fn load_csv<P: AsRef<Path>>(path: P, class_count: usize, name: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let ingest = |message: String| Error::Ingestion {
        path: path.display().to_string(),
        message,
    };
    let file = fs::File::open(path).map_err(|e| ingest(e.to_string()))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ingest(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label: usize = parts
            .next()
            .ok_or_else(|| ingest(format!("line {}: empty row", lineno + 1)))?
            .trim()
            .parse()
            .map_err(|e| ingest(format!("line {}: bad label: {e}", lineno + 1)))?;
        let row: Vec<f64> = parts
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| ingest(format!("line {}: bad feature: {e}", lineno + 1)))?;
        labels.push(label);
        features.push(row);
    }
    Dataset::new(features, labels, class_count, name)
}
