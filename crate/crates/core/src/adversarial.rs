//! Adversarial refinement of the student.
//!
//! A discriminator learns to tell teacher predictions from student
//! predictions on the same public inputs; the student is trained to fool
//! it. Class predictions are discrete, so both networks exchange
//! Gumbel-softmax relaxed samples: differentiable points on the simplex
//! that concentrate on one-hot vectors as the relaxation temperature drops.

use serde::{Deserialize, Serialize};

use crate::distill::{ProbVector, EPS_FLOOR};
use crate::error::{Error, Result};
use crate::nn::tape::{clamped_sigmoid, softmax_row};
use crate::nn::DenseNet;
use crate::rng::{standard_gumbel, Rng};
use crate::tensor::Tensor;

/// Discriminator outputs are clamped into `[1e-7, 1 - 1e-7]` so the log
/// losses stay finite even when it saturates.
pub const DISC_PROB_CLAMP: f64 = 1e-7;

/// Which loss the student descends against the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    /// Student minimizes `E[ln(1 - D(y_S))]`, the literal minimax objective.
    Minimax,
    /// Student minimizes `-E[ln D(y_S)]`, the stronger-gradient variant.
    Nonsaturating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Teacher,
    Student,
}

/// One Gumbel-softmax draw: a point on the simplex, tagged with where it
/// came from and how sharp the relaxation was.
#[derive(Debug, Clone)]
pub struct RelaxedSample {
    pub y: Vec<f64>,
    pub source: SampleSource,
    pub relax_temp: f64,
}

/// Draws `softmax((ln p + g) / relax_temp)` with iid standard Gumbel `g`.
/// One Gumbel draw per class, in class order.
pub fn gumbel_sample(
    p: &ProbVector,
    source: SampleSource,
    relax_temp: f64,
    rng: &mut Rng,
) -> Result<RelaxedSample> {
    if !(relax_temp > 0.0) || !relax_temp.is_finite() {
        return Err(Error::config(format!(
            "relaxation temperature must be positive and finite, got {relax_temp}"
        )));
    }
    let perturbed: Vec<f64> = p
        .probs()
        .iter()
        .map(|&pk| pk.max(EPS_FLOOR).ln() + standard_gumbel(rng))
        .collect();
    let mut y = vec![0.0; perturbed.len()];
    softmax_row(&mut y, &perturbed, relax_temp);
    Ok(RelaxedSample {
        y,
        source,
        relax_temp,
    })
}

/// Probability the discriminator assigns to "this came from the teacher".
/// `d` must end in a single logit; the input is one relaxed sample,
/// optionally already concatenated with conditioning features.
pub fn discriminate(d: &DenseNet, input: &[f64]) -> Result<f64> {
    if d.output_dim() != 1 {
        return Err(Error::config(format!(
            "discriminator must emit one logit, emits {}",
            d.output_dim()
        )));
    }
    if input.len() != d.input_dim() {
        return Err(Error::config(format!(
            "discriminator wants {} inputs, got {}",
            d.input_dim(),
            input.len()
        )));
    }
    let x = Tensor::matrix(1, input.len(), input.to_vec())?;
    let logit = d.forward(&x)?.data()[0];
    Ok(clamped_sigmoid(logit, DISC_PROB_CLAMP))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    /// `mean[ln D(y_T)] + mean[ln(1 - D(y_S))]`; the discriminator ascends
    /// this.
    pub loss_d: f64,
    /// The student's descent objective, per `GanMode`.
    pub loss_s: f64,
}

/// Batch GAN losses from the discriminator's probabilities on teacher
/// samples (`p_teacher`) and student samples (`p_student`).
pub fn gan_losses(p_teacher: &[f64], p_student: &[f64], mode: GanMode) -> Result<GanLosses> {
    if p_teacher.is_empty() || p_teacher.len() != p_student.len() {
        return Err(Error::config(format!(
            "gan_losses wants equal nonempty batches, got {} teacher / {} student",
            p_teacher.len(),
            p_student.len()
        )));
    }
    let clamp = |p: f64| p.clamp(DISC_PROB_CLAMP, 1.0 - DISC_PROB_CLAMP);
    let n = p_teacher.len() as f64;
    let mean_ln_t = p_teacher.iter().map(|&p| clamp(p).ln()).sum::<f64>() / n;
    let mean_ln_one_minus_s = p_student
        .iter()
        .map(|&p| (1.0 - clamp(p)).ln())
        .sum::<f64>()
        / n;
    let loss_d = mean_ln_t + mean_ln_one_minus_s;
    let loss_s = match mode {
        GanMode::Minimax => mean_ln_one_minus_s,
        GanMode::Nonsaturating => {
            -p_student.iter().map(|&p| clamp(p).ln()).sum::<f64>() / n
        }
    };
    Ok(GanLosses { loss_d, loss_s })
}
