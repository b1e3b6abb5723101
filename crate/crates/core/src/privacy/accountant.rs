//! Renyi-DP accounting for the sampled Gaussian mechanism.
//!
//! Per-step RDP at integer orders follows the binomial expansion
//!
//! ```text
//! eps(alpha) = ln( sum_{k=0}^{alpha} C(alpha,k) (1-q)^(alpha-k) q^k
//!                  exp((k^2 - k) / (2 m^2)) ) / (alpha - 1)
//! ```
//!
//! evaluated in log space so large orders and small noise stay finite.
//! Steps compose by adding RDP curves pointwise; the final conversion is
//! `epsilon = min_alpha [ eps_rdp(alpha) + ln(1/delta) / (alpha - 1) ]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer orders 2 through 128, a grid wide enough that the conversion
/// minimum sits strictly inside it for every regime this crate runs.
pub fn default_orders() -> Vec<u32> {
    (2..=128).collect()
}

fn validate_orders(orders: &[u32]) -> Result<()> {
    if orders.is_empty() {
        return Err(Error::config("order list is empty"));
    }
    for window in orders.windows(2) {
        if window[1] <= window[0] {
            return Err(Error::config(format!(
                "orders must be strictly ascending, got {} then {}",
                window[0], window[1]
            )));
        }
    }
    if orders[0] < 2 {
        return Err(Error::config(format!(
            "orders must be integers >= 2, got {}",
            orders[0]
        )));
    }
    Ok(())
}

/// `ln(sum exp(t))` over finite terms, stable against large magnitudes.
fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Per-step RDP of one sampled Gaussian release at each requested order.
///
/// `q` is the subsampling rate in `(0, 1]` and `noise_multiplier` the ratio
/// of Gaussian scale to clip bound. At `q = 1` the closed form
/// `alpha / (2 m^2)` applies exactly.
pub fn rdp_sgm_step(q: f64, noise_multiplier: f64, orders: &[u32]) -> Result<Vec<f64>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::config(format!(
            "sample rate must lie in (0, 1], got {q}"
        )));
    }
    if !(noise_multiplier > 0.0) || !noise_multiplier.is_finite() {
        return Err(Error::config(format!(
            "noise multiplier must be positive and finite, got {noise_multiplier}"
        )));
    }
    validate_orders(orders)?;

    let m2 = noise_multiplier * noise_multiplier;
    if q == 1.0 {
        return Ok(orders.iter().map(|&a| a as f64 / (2.0 * m2)).collect());
    }

    let max_order = *orders.last().unwrap() as usize;
    let mut ln_fact = vec![0.0; max_order + 1];
    for k in 1..=max_order {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let ln_q = q.ln();
    let ln_1q = (1.0 - q).ln();

    let mut out = Vec::with_capacity(orders.len());
    for &alpha in orders {
        let a = alpha as usize;
        let mut terms = Vec::with_capacity(a + 1);
        for k in 0..=a {
            let ln_binom = ln_fact[a] - ln_fact[k] - ln_fact[a - k];
            let kf = k as f64;
            terms.push(
                ln_binom
                    + (a - k) as f64 * ln_1q
                    + kf * ln_q
                    + (kf * kf - kf) / (2.0 * m2),
            );
        }
        let eps = log_sum_exp(&terms) / (alpha as f64 - 1.0);
        out.push(eps.max(0.0));
    }
    Ok(out)
}

/// A converted privacy guarantee, remembering which order won the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSpend {
    pub epsilon: f64,
    pub delta: f64,
    pub order: u32,
}

/// Running RDP totals across composed mechanism releases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountantState {
    orders: Vec<u32>,
    eps_rdp: Vec<f64>,
    steps: u64,
}

impl AccountantState {
    pub fn new(orders: Vec<u32>) -> Result<Self> {
        validate_orders(&orders)?;
        let eps_rdp = vec![0.0; orders.len()];
        Ok(AccountantState {
            orders,
            eps_rdp,
            steps: 0,
        })
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    pub fn eps_rdp(&self) -> &[f64] {
        &self.eps_rdp
    }

    /// Number of mechanism releases composed so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Adds `n_steps` releases with the given per-step RDP curve.
    pub fn compose(&mut self, per_step: &[f64], n_steps: u64) -> Result<()> {
        if per_step.len() != self.orders.len() {
            return Err(Error::config(format!(
                "per-step curve has {} orders, accountant tracks {}",
                per_step.len(),
                self.orders.len()
            )));
        }
        if per_step.iter().any(|e| e.is_nan() || *e < 0.0) {
            return Err(Error::config("per-step RDP entries must be >= 0"));
        }
        for (total, &eps) in self.eps_rdp.iter_mut().zip(per_step) {
            *total += n_steps as f64 * eps;
        }
        self.steps += n_steps;
        Ok(())
    }

    /// Converts the composed RDP curve to an `(epsilon, delta)` guarantee,
    /// minimizing over the tracked orders.
    pub fn to_dp(&self, delta: f64) -> Result<DpSpend> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        let ln_inv_delta = (1.0 / delta).ln();
        let mut best: Option<DpSpend> = None;
        for (&alpha, &eps_rdp) in self.orders.iter().zip(&self.eps_rdp) {
            let eps = eps_rdp + ln_inv_delta / (alpha as f64 - 1.0);
            if best.map_or(true, |b| eps < b.epsilon) {
                best = Some(DpSpend {
                    epsilon: eps,
                    delta,
                    order: alpha,
                });
            }
        }
        best.ok_or_else(|| Error::numeric("no finite conversion candidate"))
    }
}

/// End-to-end spend for `steps` identical releases: one `rdp_sgm_step`,
/// composed, converted at `delta`.
pub fn spend_for(
    q: f64,
    noise_multiplier: f64,
    steps: u64,
    delta: f64,
    orders: &[u32],
) -> Result<DpSpend> {
    let per_step = rdp_sgm_step(q, noise_multiplier, orders)?;
    let mut acct = AccountantState::new(orders.to_vec())?;
    acct.compose(&per_step, steps)?;
    acct.to_dp(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sampling_matches_the_gaussian_closed_form() {
        let orders = default_orders();
        for m in [0.5, 1.0, 1.1, 2.0] {
            let curve = rdp_sgm_step(1.0, m, &orders).unwrap();
            for (&alpha, &eps) in orders.iter().zip(&curve) {
                let expected = alpha as f64 / (2.0 * m * m);
                assert!(
                    (eps - expected).abs() <= 1e-12 * expected,
                    "alpha {alpha} m {m}: {eps} vs {expected}"
                );
            }
        }
        let one = rdp_sgm_step(1.0, 1.0, &[2]).unwrap();
        assert_eq!(one[0], 1.0);
    }

    #[test]
    fn vanishing_sample_rate_gives_vanishing_rdp() {
        let curve = rdp_sgm_step(1e-12, 1.0, &[2, 8, 32]).unwrap();
        for eps in curve {
            assert!(eps >= 0.0 && eps < 1e-12, "eps {eps}");
        }
    }

    #[test]
    fn per_step_value_matches_frozen_reference() {
        let curve = rdp_sgm_step(0.005, 1.1, &[13]).unwrap();
        let reference = 0.0013823165721981029;
        assert!(
            (curve[0] - reference).abs() <= 1e-12 * reference,
            "got {}",
            curve[0]
        );
    }

    #[test]
    fn rdp_curve_is_nondecreasing_in_order() {
        let orders = default_orders();
        let curve = rdp_sgm_step(0.01, 1.1, &orders).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-15);
        }
    }

    #[test]
    fn step_inputs_are_validated() {
        assert!(rdp_sgm_step(0.0, 1.0, &[2]).is_err());
        assert!(rdp_sgm_step(1.5, 1.0, &[2]).is_err());
        assert!(rdp_sgm_step(0.5, 0.0, &[2]).is_err());
        assert!(rdp_sgm_step(0.5, 1.0, &[]).is_err());
        assert!(rdp_sgm_step(0.5, 1.0, &[1, 2]).is_err());
        assert!(rdp_sgm_step(0.5, 1.0, &[2, 2]).is_err());
        assert!(rdp_sgm_step(0.5, 1.0, &[4, 3]).is_err());
    }

    #[test]
    fn composition_is_additive_in_steps() {
        let orders = vec![2, 4, 8];
        let per_step = rdp_sgm_step(0.02, 1.2, &orders).unwrap();

        let mut bulk = AccountantState::new(orders.clone()).unwrap();
        bulk.compose(&per_step, 5).unwrap();

        let mut one_by_one = AccountantState::new(orders).unwrap();
        for _ in 0..5 {
            one_by_one.compose(&per_step, 1).unwrap();
        }

        assert_eq!(bulk.steps(), 5);
        assert_eq!(one_by_one.steps(), 5);
        for (a, b) in bulk.eps_rdp().iter().zip(one_by_one.eps_rdp()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_rejects_mismatched_or_negative_curves() {
        let mut acct = AccountantState::new(vec![2, 3]).unwrap();
        assert!(acct.compose(&[0.1], 1).is_err());
        assert!(acct.compose(&[0.1, -0.2], 1).is_err());
        assert!(acct.compose(&[0.1, f64::NAN], 1).is_err());
        assert!(acct.compose(&[0.1, 0.2], 1).is_ok());
    }

    #[test]
    fn zero_rdp_conversion_is_the_delta_floor() {
        let acct = AccountantState::new((2..=64).collect()).unwrap();
        let spend = acct.to_dp(1e-5).unwrap();
        let expected = (1e5f64).ln() / 63.0;
        assert!(
            (spend.epsilon - expected).abs() <= 1e-12,
            "got {} want {expected}",
            spend.epsilon
        );
        assert_eq!(spend.order, 64);
        assert_eq!(spend.delta, 1e-5);
    }

    #[test]
    fn conversion_matches_frozen_end_to_end_reference() {
        let spend = spend_for(0.005, 1.1, 4000, 1e-5, &default_orders()).unwrap();
        let reference = 1.929650597045156;
        assert!(
            (spend.epsilon - reference).abs() <= 1e-9,
            "got {}",
            spend.epsilon
        );
        assert_eq!(spend.order, 11);
    }

    #[test]
    fn epsilon_grows_with_steps_and_shrinks_with_delta() {
        let orders = default_orders();
        let mut prev = 0.0;
        for steps in [100, 500, 2000, 8000] {
            let spend = spend_for(0.01, 1.1, steps, 1e-5, &orders).unwrap();
            assert!(spend.epsilon > prev);
            prev = spend.epsilon;
        }
        let tight = spend_for(0.01, 1.1, 500, 1e-7, &orders).unwrap();
        let loose = spend_for(0.01, 1.1, 500, 1e-3, &orders).unwrap();
        assert!(tight.epsilon > loose.epsilon);
    }

    #[test]
    fn to_dp_validates_delta() {
        let acct = AccountantState::new(vec![2]).unwrap();
        assert!(acct.to_dp(0.0).is_err());
        assert!(acct.to_dp(1.0).is_err());
        assert!(acct.to_dp(1e-5).is_ok());
    }
}
