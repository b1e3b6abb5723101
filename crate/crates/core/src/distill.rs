//! Temperature-scaled distillation targets and the per-example transfer
//! loss.
//!
//! The teacher's logits are softened with a temperature `tau` and the
//! student is trained to match them. The loss is kept in per-example form
//! (one vector of class-wise KL components per input) because the privacy
//! mechanism clips and noises those vectors individually before they are
//! ever summed into a scalar.

use crate::error::{Error, Result};
use crate::nn::tape::softmax_row;
use crate::tensor::Tensor;

/// Floor applied inside logarithms of student probabilities, so a collapsed
/// class cannot produce an infinite loss.
pub const EPS_FLOOR: f64 = 1e-12;

/// A probability vector tagged with the temperature that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
    tau: f64,
}

impl ProbVector {
    /// Validates simplex membership: nonnegative, finite, summing to one
    /// within 1e-9.
    pub fn new(probs: Vec<f64>, tau: f64) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::config(format!(
                "probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::config(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        let mut total = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::config(format!("invalid probability entry {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(ProbVector { probs, tau })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Row-wise `softmax(logits / tau)` over a `batch x classes` logit matrix.
pub fn temperature_softmax(logits: &Tensor, tau: f64) -> Result<Vec<ProbVector>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::config(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    if !logits.is_matrix() || logits.cols() < 2 {
        return Err(Error::config(format!(
            "temperature_softmax wants a batch x classes matrix with >= 2 classes, got {:?}",
            logits.shape()
        )));
    }
    let mut out = Vec::with_capacity(logits.rows());
    let mut row = vec![0.0; logits.cols()];
    for r in 0..logits.rows() {
        softmax_row(&mut row, logits.row(r), tau);
        out.push(ProbVector {
            probs: row.clone(),
            tau,
        });
    }
    Ok(out)
}

/// Class-wise KL components for one example:
/// `v_k = pT_k * (ln pT_k - ln max(pS_k, EPS_FLOOR))`, with `0 * ln 0 = 0`.
/// Summing the vector gives `KL(pT || pS)`; the pieces stay separate so the
/// sanitizer can clip them per example.
///
/// Returns the vector plus the number of entries where the student
/// probability had to be floored while the teacher still cared about the
/// class, a cheap signal that the student has collapsed somewhere.
pub fn per_example_vector(teacher: &ProbVector, student: &ProbVector) -> Result<(Vec<f64>, u64)> {
    if teacher.len() != student.len() {
        return Err(Error::config(format!(
            "class count mismatch: teacher {}, student {}",
            teacher.len(),
            student.len()
        )));
    }
    if teacher.tau != student.tau {
        return Err(Error::config(format!(
            "temperature mismatch: teacher {}, student {}",
            teacher.tau, student.tau
        )));
    }
    let mut v = Vec::with_capacity(teacher.len());
    let mut floor_hits = 0u64;
    for (&pt, &ps) in teacher.probs.iter().zip(&student.probs) {
        if pt == 0.0 {
            v.push(0.0);
            continue;
        }
        if ps < EPS_FLOOR {
            floor_hits += 1;
        }
        v.push(pt * (pt.ln() - ps.max(EPS_FLOOR).ln()));
    }
    Ok((v, floor_hits))
}

/// Per-example loss vectors for one batch, all with the same class count.
#[derive(Debug, Clone)]
pub struct DistillBatch {
    per_example: Vec<Vec<f64>>,
    classes: usize,
}

impl DistillBatch {
    pub fn new(per_example: Vec<Vec<f64>>) -> Result<Self> {
        let classes = match per_example.first() {
            Some(v) => v.len(),
            None => return Err(Error::config("distillation batch is empty")),
        };
        if per_example.iter().any(|v| v.len() != classes) {
            return Err(Error::config(
                "distillation batch has ragged per-example vectors",
            ));
        }
        Ok(DistillBatch {
            per_example,
            classes,
        })
    }

    /// Builds the batch from aligned teacher and student distributions,
    /// also returning the total number of floored student entries.
    pub fn from_probs(teacher: &[ProbVector], student: &[ProbVector]) -> Result<(Self, u64)> {
        if teacher.len() != student.len() {
            return Err(Error::config(format!(
                "batch size mismatch: {} teacher rows, {} student rows",
                teacher.len(),
                student.len()
            )));
        }
        let mut per_example = Vec::with_capacity(teacher.len());
        let mut floor_hits = 0;
        for (t, s) in teacher.iter().zip(student) {
            let (v, hits) = per_example_vector(t, s)?;
            per_example.push(v);
            floor_hits += hits;
        }
        Ok((DistillBatch::new(per_example)?, floor_hits))
    }

    pub fn len(&self) -> usize {
        self.per_example.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_example.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn example(&self, i: usize) -> &[f64] {
        &self.per_example[i]
    }
}

/// Unsanitized batch loss: the plain sum of every component.
pub fn distill_loss(batch: &DistillBatch) -> f64 {
    batch.per_example.iter().flatten().sum()
}

/// Shannon entropy in nats, with `0 * ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}
