//! Finite-difference gradient checking.
//!
//! Central differences with a caller-supplied step; used by the unit tests
//! and by the end-to-end verification suite to confirm backprop against an
//! independent numerical oracle.

use crate::error::Result;
use crate::tensor::Tensor;

/// Central-difference gradient of `f` with respect to every entry of every
/// tensor in `params`. `f` must be a pure function of its argument.
pub fn finite_difference<F>(params: &[Tensor], f: &F, h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].shape().to_vec());
        for k in 0..params[pi].len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let fp = f(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let fm = f(&work)?;
            work[pi].data_mut()[k] = orig;
            g.data_mut()[k] = (fp - fm) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest relative disagreement between two gradient sets. The denominator
/// is floored so coordinates where both gradients are tiny compare in
/// absolute terms instead of blowing up.
pub fn max_rel_error(analytic: &[Tensor], numeric: &[Tensor], denom_floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(denom_floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_recovers_quadratic_gradient() {
        let p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let f = |params: &[Tensor]| -> Result<f64> {
            Ok(params[0].data().iter().map(|v| v * v).sum())
        };
        let g = finite_difference(std::slice::from_ref(&p), &f, 1e-5).unwrap();
        let expected = [2.0, -4.0, 1.0];
        for (got, want) in g[0].data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn max_rel_error_uses_floor_for_tiny_gradients() {
        let a = vec![Tensor::new(vec![2], vec![1e-9, 1.0]).unwrap()];
        let n = vec![Tensor::new(vec![2], vec![2e-9, 1.0]).unwrap()];
        let err = max_rel_error(&a, &n, 1e-6);
        assert!(err < 1e-2, "floored error {err}");
    }
}
