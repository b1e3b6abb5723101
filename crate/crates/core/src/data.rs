//! Dataset provisioning: seeded synthetic blobs, IDX image files, and
//! public/private splitting.
//!
//! The synthetic generator is the workhorse: it produces separable Gaussian
//! clusters in seconds-scale sizes so the full distillation pipeline can be
//! exercised end to end. The IDX reader accepts the standard big-endian
//! image/label encoding for runs on real data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, shuffled_indices, standard_normal, uniform_in};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Idx,
}

/// A feature matrix with optional labels. Public sets handed to the student
/// are unlabelled; everything else keeps its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Option<Vec<usize>>,
    classes: usize,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Option<Vec<usize>>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if !features.is_matrix() {
            return Err(Error::config(format!(
                "dataset features must be an n x d matrix, got shape {:?}",
                features.shape()
            )));
        }
        if classes == 0 {
            return Err(Error::config("dataset needs at least one class"));
        }
        if let Some(ref l) = labels {
            if l.len() != features.rows() {
                return Err(Error::config(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
            if let Some(&bad) = l.iter().find(|&&y| y >= classes) {
                return Err(Error::config(format!(
                    "label {bad} out of range for {classes} classes"
                )));
            }
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            provenance,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Copy of the rows at `indices`, labels carried along when present.
    fn gather(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::config(format!(
                    "index {i} out of range for {} rows",
                    self.len()
                )));
            }
            data.extend_from_slice(self.features.row(i));
        }
        let labels = match &self.labels {
            Some(l) => Some(indices.iter().map(|&i| l[i]).collect()),
            None => None,
        };
        Dataset::new(
            Tensor::matrix(indices.len(), d, data)?,
            labels,
            self.classes,
            self.provenance,
        )
    }

    pub fn without_labels(mut self) -> Dataset {
        self.labels = None;
        self
    }
}

/// How to cut one dataset into a private (teacher) part and a public
/// (student) part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of the rows that become the private set (floored).
    pub private_fraction: f64,
    /// Absolute size of the public set.
    pub n_public: usize,
    /// Drop labels from the public part (the student must not see them).
    pub strip_public_labels: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            private_fraction: 0.5,
            n_public: 0,
            strip_public_labels: true,
            seed: 0,
        }
    }
}

/// Disjoint seeded split into `(private, public)`. Rows not claimed by
/// either part are dropped.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&spec.private_fraction) {
        return Err(Error::config(format!(
            "private fraction must lie in [0, 1], got {}",
            spec.private_fraction
        )));
    }
    let n_private = (spec.private_fraction * data.len() as f64).floor() as usize;
    let parts = carve(data, &[n_private, spec.n_public], spec.seed)?;
    let mut it = parts.into_iter();
    let private = it.next().unwrap();
    let mut public = it.next().unwrap();
    if spec.strip_public_labels {
        public = public.without_labels();
    }
    Ok((private, public))
}

/// Cuts `data` into disjoint parts of the given sizes, in order, from one
/// seeded permutation. Verifies disjointness before returning.
pub fn carve(data: &Dataset, counts: &[usize], seed: u64) -> Result<Vec<Dataset>> {
    let total: usize = counts.iter().sum();
    if total > data.len() {
        return Err(Error::config(format!(
            "split asks for {total} rows, dataset has {}",
            data.len()
        )));
    }
    let order = shuffled_indices(data.len(), &mut seeded(seed));
    let mut taken = vec![false; data.len()];
    let mut parts = Vec::with_capacity(counts.len());
    let mut offset = 0;
    for &count in counts {
        let slice = &order[offset..offset + count];
        for &i in slice {
            if taken[i] {
                return Err(Error::numeric(format!("index {i} assigned to two parts")));
            }
            taken[i] = true;
        }
        parts.push(data.gather(slice)?);
        offset += count;
    }
    Ok(parts)
}

/// A seeded sample of `n` rows, independent of any split: used when public
/// data is allowed to overlap the private set.
pub fn sample(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > data.len() {
        return Err(Error::config(format!(
            "sample of {n} rows from a dataset of {}",
            data.len()
        )));
    }
    let order = shuffled_indices(data.len(), &mut seeded(seed));
    data.gather(&order[..n])
}

/// Seeded Gaussian clusters: `classes` centers in a box scaled to the
/// spread, points at `center + spread * N(0, I)`, labels balanced by
/// round-robin assignment.
pub fn gen_blobs(n: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::config(format!(
            "blob generation needs at least 2 classes, got {classes}"
        )));
    }
    if n < classes {
        return Err(Error::config(format!(
            "cannot place {classes} clusters in {n} points"
        )));
    }
    if dim < 2 {
        return Err(Error::config(format!(
            "blob features need at least 2 dimensions, got {dim}"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::config(format!(
            "cluster spread must be finite and >= 0, got {spread}"
        )));
    }
    let mut rng = seeded(seed);

    // Centers are rejection-sampled toward a pairwise separation of six
    // spreads, which keeps clusters linearly separable with high margin.
    // The box grows with the spread so separation stays feasible, and a
    // bounded attempt count keeps generation total.
    let half_width = 4.0 * spread.max(1.0);
    let min_sep = 6.0 * spread;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..200 {
            let cand: Vec<f64> = (0..dim)
                .map(|_| uniform_in(&mut rng, -half_width, half_width))
                .collect();
            let closest = centers
                .iter()
                .map(|c| {
                    c.iter()
                        .zip(&cand)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if closest >= min_sep {
                best = Some((closest, cand));
                break;
            }
            if best.as_ref().map_or(true, |(d, _)| closest > *d) {
                best = Some((closest, cand));
            }
        }
        centers.push(best.unwrap().1);
    }

    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        for j in 0..dim {
            data.push(centers[label][j] + spread * standard_normal(&mut rng));
        }
        labels.push(label);
    }
    Dataset::new(
        Tensor::matrix(n, dim, data)?,
        Some(labels),
        classes,
        Provenance::Synthetic,
    )
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::format(format!("truncated IDX file while reading {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Reads an IDX image/label pair: big-endian magics `0x803` / `0x801`,
/// pixel bytes scaled into `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;

    let magic = read_u32_be(&images, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&images, 4, "image count")? as usize;
    let rows = read_u32_be(&images, 8, "image rows")? as usize;
    let cols = read_u32_be(&images, 12, "image cols")? as usize;
    let pixel_count = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format("image dimensions overflow"))?;
    if images.len() != 16 + pixel_count {
        return Err(Error::format(format!(
            "image payload is {} bytes, header promises {}",
            images.len() - 16.min(images.len()),
            pixel_count
        )));
    }

    let lmagic = read_u32_be(&labels, 0, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!(
            "bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let lcount = read_u32_be(&labels, 4, "label count")? as usize;
    if lcount != count {
        return Err(Error::format(format!(
            "{count} images but {lcount} labels"
        )));
    }
    if labels.len() != 8 + lcount {
        return Err(Error::format(format!(
            "label payload is {} bytes, header promises {}",
            labels.len() - 8.min(labels.len()),
            lcount
        )));
    }

    let features: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let label_vec: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let classes = label_vec.iter().max().map_or(1, |&m| m + 1);
    Dataset::new(
        Tensor::matrix(count, rows * cols, features)?,
        Some(label_vec),
        classes,
        Provenance::Idx,
    )
}

/// Writes a labelled dataset as an IDX pair (one row of `d` columns per
/// image). Features are clamped to `[0, 1]` and quantized to bytes.
pub fn write_idx(data: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::config("cannot export an unlabelled dataset to IDX"))?;
    if data.classes() > 256 {
        return Err(Error::config(format!(
            "IDX labels are single bytes, dataset has {} classes",
            data.classes()
        )));
    }
    let (n, d) = (data.len(), data.dim());
    let mut images = Vec::with_capacity(16 + n * d);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&1u32.to_be_bytes());
    images.extend_from_slice(&(d as u32).to_be_bytes());
    for &v in data.features().data() {
        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }

    let mut label_bytes = Vec::with_capacity(8 + n);
    label_bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    label_bytes.extend(labels.iter().map(|&y| y as u8));

    std::fs::write(images_path, images)?;
    std::fs::write(labels_path, label_bytes)?;
    Ok(())
}

/// Per-dimension mean and standard deviation of a feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Column statistics of `data`, for standardizing every split against the
/// private set.
pub fn feature_stats(data: &Dataset) -> Result<FeatureStats> {
    if data.is_empty() {
        return Err(Error::config("cannot take statistics of an empty dataset"));
    }
    let (n, d) = (data.len(), data.dim());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &x) in mean.iter_mut().zip(data.features().row(r)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut sd = vec![0.0; d];
    for r in 0..n {
        for (s, (&x, &m)) in sd.iter_mut().zip(data.features().row(r).iter().zip(&mean)) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut sd {
        *s = (*s / n as f64).sqrt();
    }
    Ok(FeatureStats { mean, sd })
}

/// In-place `(x - mean) / sd` per dimension; constant dimensions (sd near
/// zero) are only centered.
pub fn standardize(data: &mut Dataset, stats: &FeatureStats) -> Result<()> {
    if stats.mean.len() != data.dim() || stats.sd.len() != data.dim() {
        return Err(Error::config(format!(
            "statistics cover {} dimensions, dataset has {}",
            stats.mean.len(),
            data.dim()
        )));
    }
    let n = data.len();
    for r in 0..n {
        for (x, (&m, &s)) in data
            .features
            .row_mut(r)
            .iter_mut()
            .zip(stats.mean.iter().zip(&stats.sd))
        {
            *x = (*x - m) / s.max(1e-8);
        }
    }
    Ok(())
}
