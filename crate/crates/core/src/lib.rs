//! Private knowledge transfer between classifiers.
//!
//! A pretrained teacher transfers its behavior to a student that never sees
//! the private training data: the student fits sanitized soft labels on a
//! public set (temperature-scaled distillation with per-example clipping and
//! Gaussian noise) while a discriminator pushes its output distribution
//! toward the teacher's. A Renyi-DP accountant tracks the privacy cost of
//! every noisy loss release and reports the final `(epsilon, delta)`.

pub mod adversarial;
pub mod data;
pub mod distill;
pub mod error;
pub mod nn;
pub mod privacy;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
