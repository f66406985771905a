//! Dataset ingestion (IDX image format), synthetic blobs, and batching.
//!
//! Inputs always live in [0,1] so the attack box is the data box; no
//! mean/std normalization happens anywhere.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled inputs in [0,1]^features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::consistency(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if n_classes < 1 {
            return Err(Error::contract("n_classes must be >= 1"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::consistency(format!(
                "label {bad} >= n_classes {n_classes}"
            )));
        }
        if inputs.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("inputs must lie in [0,1]"));
        }
        Ok(Dataset {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    /// Copy of the examples at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let f = self.features();
        let mut data = Vec::with_capacity(indices.len() * f);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(format!("index {i} out of range")));
            }
            data.extend_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Dataset {
            inputs: Tensor::matrix(indices.len(), f, data)?,
            labels,
            n_classes: self.n_classes,
        })
    }

    /// Split into a head of `n_first` examples and the tail.
    pub fn split(&self, n_first: usize) -> Result<(Dataset, Dataset)> {
        if n_first == 0 || n_first >= self.len() {
            return Err(Error::contract(format!(
                "split point {n_first} must be inside 1..{}",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n_first).collect();
        let tail: Vec<usize> = (n_first..self.len()).collect();
        Ok((self.select(&head)?, self.select(&tail)?))
    }
}

// ── IDX ingestion ────────────────────────────────────────────────────

/// Parse an MNIST-style IDX image/label file pair. Pixels are scaled to
/// [0,1] by division by 255; each image flattens to one row.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut imgs = BufReader::new(File::open(images_path)?);
    let magic = imgs.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!(
            "bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let n = imgs.read_u32::<BigEndian>()? as usize;
    let rows = imgs.read_u32::<BigEndian>()? as usize;
    let cols = imgs.read_u32::<BigEndian>()? as usize;
    let mut raw = vec![0u8; n * rows * cols];
    imgs.read_exact(&mut raw)?;
    let data: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();

    let mut labs = BufReader::new(File::open(labels_path)?);
    let magic = labs.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!(
            "bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let n_labels = labs.read_u32::<BigEndian>()? as usize;
    if n_labels != n {
        return Err(Error::consistency(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let mut raw_labels = vec![0u8; n_labels];
    labs.read_exact(&mut raw_labels)?;
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(1, |&m| m + 1);

    Dataset::new(Tensor::matrix(n, rows * cols, data)?, labels, n_classes)
}

// ── Synthetic blobs ──────────────────────────────────────────────────

/// Gaussian blobs at seed-determined centers, clipped to [0,1], with
/// balanced classes (plus/minus one example).
///
/// Centers are drawn in [0.15, 0.85]^dim with rejection so that no two come
/// closer than 0.4 (the margin relaxes if a draw round keeps failing, which
/// only matters for many classes in low dimension).
pub fn synth_blobs(
    n: usize,
    n_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::contract("synth_blobs needs n_classes >= 2"));
    }
    if dim < 2 {
        return Err(Error::contract("synth_blobs needs dim >= 2"));
    }
    if spread < 0.0 {
        return Err(Error::contract("spread must be >= 0"));
    }
    let mut rng = seeded_rng(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    let mut margin = 0.4;
    let mut rejects = 0;
    while centers.len() < n_classes {
        let cand: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.15..0.85)).collect();
        let ok = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= margin
        });
        if ok {
            centers.push(cand);
            rejects = 0;
        } else {
            rejects += 1;
            if rejects > 200 {
                margin *= 0.8;
                rejects = 0;
            }
        }
    }

    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % n_classes;
        for d in 0..dim {
            let noise: f64 = rng.sample(StandardNormal);
            data.push((centers[class][d] + spread * noise).clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, n_classes)
}

// ── Batching ─────────────────────────────────────────────────────────

/// Seeded-shuffle batch sequence over a dataset; the final partial batch is
/// included. Each item is an owned (inputs, labels) pair.
pub fn batch_iter(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
) -> impl Iterator<Item = (Tensor, Vec<usize>)> + '_ {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seeded_rng(shuffle_seed));
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    chunks.into_iter().map(move |idxs| {
        let b = dataset.select(&idxs).expect("indices in range");
        (b.inputs, b.labels)
    })
}
