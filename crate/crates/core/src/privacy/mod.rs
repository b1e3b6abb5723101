//! Differential privacy mechanism for the distillation loss.
//!
//! Each per-example loss vector is clipped to L2 norm `C`, the clipped
//! vectors are summed, Gaussian noise of scale `sigma = m * C` is added per
//! coordinate, and the result is normalized by the expected batch size
//! `q * N`. Only the noisy sum ever reaches the student's update, so one
//! training step is one release of a sampled Gaussian mechanism; the
//! accountant in [`accountant`] prices it.

pub mod accountant;
pub mod quadrature;

use serde::{Deserialize, Serialize};

use crate::distill::DistillBatch;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, Rng};

/// Mechanism parameters for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// L2 clipping bound `C` for per-example loss vectors.
    pub clip: f64,
    /// Noise multiplier `m`; the Gaussian scale is `m * C`.
    pub noise_multiplier: f64,
    /// Subsampling rate `q = batch / n_public`.
    pub sample_rate: f64,
    /// Size of the public set the batches are drawn from.
    pub n_public: usize,
    /// Target failure probability for the final `(epsilon, delta)` report.
    pub delta: f64,
}

impl DpConfig {
    pub fn new(
        clip: f64,
        noise_multiplier: f64,
        sample_rate: f64,
        n_public: usize,
        delta: f64,
    ) -> Result<Self> {
        let cfg = DpConfig {
            clip,
            noise_multiplier,
            sample_rate,
            n_public,
            delta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(Error::config(format!(
                "clip bound must be positive and finite, got {}",
                self.clip
            )));
        }
        if !(self.noise_multiplier > 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::config(format!(
                "noise multiplier must be positive and finite, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::config(format!(
                "sample rate must lie in (0, 1], got {}",
                self.sample_rate
            )));
        }
        if self.n_public == 0 {
            return Err(Error::config("public set size must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Gaussian noise scale `sigma = m * C`.
    pub fn sigma(&self) -> f64 {
        self.noise_multiplier * self.clip
    }
}

/// Scale factor `min(1, c / ||v||)` that projects `v` into the L2 ball of
/// radius `c`. The zero vector keeps scale 1.
pub fn clip_scale(v: &[f64], c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::config(format!(
            "clip bound must be positive and finite, got {c}"
        )));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::numeric(format!("clip input has norm {norm}")));
    }
    Ok(if norm > c { c / norm } else { 1.0 })
}

/// Projects `v` into the L2 ball of radius `c`, preserving direction.
pub fn clip_l2(v: &[f64], c: f64) -> Result<Vec<f64>> {
    let s = clip_scale(v, c)?;
    Ok(v.iter().map(|x| x * s).collect())
}

/// Everything the sanitizer decided, kept so a training step can rebuild
/// the same noisy loss on an autodiff tape: the clip scales and the noise
/// are constants with respect to the parameters.
#[derive(Debug, Clone)]
pub struct NoiseRecord {
    /// Per-example clip scale `min(1, C / ||v_i||)`.
    pub clip_scales: Vec<f64>,
    /// Per-class Gaussian draws at scale `sigma`.
    pub noise: Vec<f64>,
    /// Clipped, normalized loss before noise.
    pub clean_loss: f64,
    /// The released value: clipped, noised, normalized.
    pub noisy_loss: f64,
}

impl NoiseRecord {
    pub fn noise_sum(&self) -> f64 {
        self.noise.iter().sum()
    }
}

/// One release of the sampled Gaussian mechanism over a batch of
/// per-example loss vectors. Noise is drawn per class coordinate, in class
/// order, one `standard_normal` each.
pub fn sanitize(
    batch: &DistillBatch,
    cfg: &DpConfig,
    rng: &mut Rng,
) -> Result<(f64, NoiseRecord)> {
    cfg.validate()?;
    let classes = batch.classes();
    let mut clip_scales = Vec::with_capacity(batch.len());
    let mut clipped_sum = vec![0.0; classes];
    for i in 0..batch.len() {
        let v = batch.example(i);
        let s = clip_scale(v, cfg.clip)?;
        clip_scales.push(s);
        for (acc, &x) in clipped_sum.iter_mut().zip(v) {
            *acc += s * x;
        }
    }
    let sigma = cfg.sigma();
    let noise: Vec<f64> = (0..classes)
        .map(|_| sigma * standard_normal(rng))
        .collect();

    let denom = cfg.sample_rate * cfg.n_public as f64;
    let clean_loss = clipped_sum.iter().sum::<f64>() / denom;
    let noisy_loss = (clipped_sum.iter().sum::<f64>() + noise.iter().sum::<f64>()) / denom;
    if !noisy_loss.is_finite() {
        return Err(Error::numeric(format!(
            "sanitized loss is not finite (clean {clean_loss})"
        )));
    }
    Ok((
        noisy_loss,
        NoiseRecord {
            clip_scales,
            noise,
            clean_loss,
            noisy_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform_in};

    fn config(clip: f64, m: f64, q: f64, n: usize) -> DpConfig {
        DpConfig::new(clip, m, q, n, 1e-5).unwrap()
    }

    #[test]
    fn clip_keeps_vectors_already_inside_the_ball() {
        assert_eq!(clip_l2(&[3.0, 4.0], 5.0).unwrap(), vec![3.0, 4.0]);
        assert_eq!(clip_l2(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn clip_rescales_onto_the_sphere() {
        let clipped = clip_l2(&[3.0, 4.0], 1.0).unwrap();
        assert!((clipped[0] - 0.6).abs() < 1e-15);
        assert!((clipped[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_rejects_bad_bounds() {
        assert!(clip_l2(&[1.0], 0.0).is_err());
        assert!(clip_l2(&[1.0], -2.0).is_err());
        assert!(clip_l2(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn clipped_norm_never_exceeds_bound_and_direction_is_kept() {
        let mut rng = seeded(7);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..6).map(|_| uniform_in(&mut rng, -3.0, 3.0)).collect();
            let c = uniform_in(&mut rng, 0.1, 2.0);
            let s = clip_scale(&v, c).unwrap();
            let clipped = clip_l2(&v, c).unwrap();
            let norm = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= c * (1.0 + 1e-12), "norm {norm} exceeds {c}");
            for (&orig, &cl) in v.iter().zip(&clipped) {
                assert!((cl - s * orig).abs() <= 1e-15 * orig.abs().max(1.0));
            }
        }
    }

    #[test]
    fn config_validation_catches_out_of_range_values() {
        assert!(DpConfig::new(1.0, 1.1, 0.05, 100, 1e-5).is_ok());
        assert!(DpConfig::new(0.0, 1.1, 0.05, 100, 1e-5).is_err());
        assert!(DpConfig::new(1.0, 0.0, 0.05, 100, 1e-5).is_err());
        assert!(DpConfig::new(1.0, 1.1, 0.0, 100, 1e-5).is_err());
        assert!(DpConfig::new(1.0, 1.1, 1.5, 100, 1e-5).is_err());
        assert!(DpConfig::new(1.0, 1.1, 0.05, 0, 1e-5).is_err());
        assert!(DpConfig::new(1.0, 1.1, 0.05, 100, 0.0).is_err());
        assert!(DpConfig::new(1.0, 1.1, 0.05, 100, 1.0).is_err());
    }

    #[test]
    fn near_zero_noise_recovers_the_clipped_loss() {
        let batch = DistillBatch::new(vec![vec![0.6, 0.3], vec![3.0, 4.0]]).unwrap();
        let cfg = config(1.0, 1e-15, 0.5, 4);
        let (loss, record) = sanitize(&batch, &cfg, &mut seeded(1)).unwrap();
        let expected = (0.6 + 0.3 + 0.6 + 0.8) / 2.0;
        assert!((loss - expected).abs() < 1e-9, "got {loss}");
        assert!((record.clean_loss - expected).abs() < 1e-12);
        assert_eq!(record.clip_scales.len(), 2);
        assert!((record.clip_scales[0] - 1.0).abs() < 1e-15);
        assert!((record.clip_scales[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sanitize_is_seed_deterministic() {
        let batch = DistillBatch::new(vec![vec![0.1, 0.2, 0.3]; 5]).unwrap();
        let cfg = config(0.5, 1.1, 0.25, 20);
        let (a, ra) = sanitize(&batch, &cfg, &mut seeded(99)).unwrap();
        let (b, rb) = sanitize(&batch, &cfg, &mut seeded(99)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.noise, rb.noise);
        let (c, _) = sanitize(&batch, &cfg, &mut seeded(100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_matches_an_independent_replay_of_the_stream() {
        let batch = DistillBatch::new(vec![vec![0.2, -0.1, 0.4]]).unwrap();
        let cfg = config(2.0, 1.3, 0.1, 10);
        let seed = 4242;
        let (loss, record) = sanitize(&batch, &cfg, &mut seeded(seed)).unwrap();

        let mut replay = seeded(seed);
        let expected_noise: Vec<f64> = (0..3)
            .map(|_| cfg.sigma() * standard_normal(&mut replay))
            .collect();
        assert_eq!(record.noise, expected_noise);
        let denom = cfg.sample_rate * cfg.n_public as f64;
        let manual = (0.2 - 0.1 + 0.4 + record.noise_sum()) / denom;
        assert!((loss - manual).abs() < 1e-12);
    }

    #[test]
    fn noisy_loss_has_the_advertised_moments() {
        let batch = DistillBatch::new(vec![vec![0.0, 0.0]]).unwrap();
        let cfg = config(1.0, 2.0, 1.0, 1);
        let mut rng = seeded(314);
        let trials = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let (loss, _) = sanitize(&batch, &cfg, &mut rng).unwrap();
            sum += loss;
            sum_sq += loss * loss;
        }
        let mean = sum / trials as f64;
        let var = sum_sq / trials as f64 - mean * mean;
        let expected_var = 2.0 * cfg.sigma() * cfg.sigma();
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!(
            (var - expected_var).abs() < 0.05 * expected_var,
            "var {var} vs {expected_var}"
        );
    }
}
