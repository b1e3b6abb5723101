//! Numeric Renyi divergence between densities on an interval.
//!
//! This is the independent cross-check for the closed-form accountant: it
//! knows nothing about Gaussians or binomial expansions, just integrates
//! `q(x) (p(x)/q(x))^alpha` with adaptive Simpson panels and takes
//! `ln / (alpha - 1)`.

use crate::error::{Error, Result};

const INITIAL_PANELS: usize = 64;
const MAX_DEPTH: u32 = 50;

/// `D_alpha(p || q)` over `[lo, hi]` for `alpha > 0`, `alpha != 1`.
///
/// Both closures must be nonnegative on the interval and `q` must dominate
/// `p` wherever `p` is positive; the chosen interval has to carry
/// essentially all of the mass for the answer to mean anything.
pub fn renyi_divergence_numeric<P, Q>(p: P, q: Q, alpha: f64, lo: f64, hi: f64) -> Result<f64>
where
    P: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    if !alpha.is_finite() || alpha <= 0.0 || alpha == 1.0 {
        return Err(Error::config(format!(
            "Renyi order must be positive, finite, and != 1, got {alpha}"
        )));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::config(format!(
            "integration interval [{lo}, {hi}] is invalid"
        )));
    }

    let integrand = |x: f64| -> f64 {
        let px = p(x);
        let qx = q(x);
        if px < 0.0 || qx < 0.0 {
            return f64::NAN;
        }
        // Density values this small are indistinguishable from f64
        // underflow of a far tail, so they count as "no mass here" rather
        // than as a support violation.
        if px <= 1e-300 {
            return 0.0;
        }
        if qx == 0.0 {
            return f64::INFINITY;
        }
        (alpha * px.ln() - (alpha - 1.0) * qx.ln()).exp()
    };

    let width = (hi - lo) / INITIAL_PANELS as f64;
    let mut integral = 0.0;
    for i in 0..INITIAL_PANELS {
        let a = lo + i as f64 * width;
        let b = if i + 1 == INITIAL_PANELS { hi } else { a + width };
        integral += adaptive_panel(&integrand, a, b)?;
    }

    if !integral.is_finite() || integral <= 0.0 {
        return Err(Error::numeric(format!(
            "divergence integral came out as {integral} on [{lo}, {hi}]"
        )));
    }
    Ok(integral.ln() / (alpha - 1.0))
}

fn simpson(fa: f64, fm: f64, fb: f64, width: f64) -> f64 {
    width / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_panel<F>(f: &F, a: f64, b: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    for (x, v) in [(a, fa), (m, fm), (b, fb)] {
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "integrand is not finite at x = {x} (value {v})"
            )));
        }
    }
    let whole = simpson(fa, fm, fb, b - a);
    refine(f, a, b, fa, fm, fb, whole, 0)
}

#[allow(clippy::too_many_arguments)]
fn refine<F>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, depth: u32) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    for (x, v) in [(lm, flm), (rm, frm)] {
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "integrand is not finite at x = {x} (value {v})"
            )));
        }
    }
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = left + right - whole;
    let tol = 1e-12 + 1e-10 * (left + right).abs();
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::numeric(format!(
            "integral did not converge on [{a}, {b}] after {MAX_DEPTH} refinements"
        )));
    }
    Ok(refine(f, a, m, fa, flm, fm, left, depth + 1)?
        + refine(f, m, b, fm, frm, fb, right, depth + 1)?)
}

/// Gaussian density, for building test distributions.
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (std::f64::consts::TAU).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::accountant::rdp_sgm_step;

    #[test]
    fn identical_densities_have_zero_divergence() {
        let d = renyi_divergence_numeric(
            |x| normal_pdf(x, 0.0, 1.0),
            |x| normal_pdf(x, 0.0, 1.0),
            2.0,
            -20.0,
            20.0,
        )
        .unwrap();
        assert!(d.abs() < 1e-10, "got {d}");
    }

    #[test]
    fn shifted_gaussians_match_the_closed_form() {
        for shift in [0.5, 1.0, 2.0] {
            for alpha in [2.0, 4.0, 8.0] {
                // The integrand is a unit Gaussian centered at
                // -(alpha - 1) * shift, so the interval tracks that center
                // instead of growing symmetrically into underflow.
                let lo = -(alpha - 1.0) * shift - 20.0;
                let hi = shift + 20.0;
                let d = renyi_divergence_numeric(
                    |x| normal_pdf(x, 0.0, 1.0),
                    |x| normal_pdf(x, shift, 1.0),
                    alpha,
                    lo,
                    hi,
                )
                .unwrap();
                let expected = alpha * shift * shift / 2.0;
                assert!(
                    (d - expected).abs() < 1e-6,
                    "shift {shift} alpha {alpha}: {d} vs {expected}"
                );
            }
        }
    }

    /// The subsampled mechanism's RDP is the divergence of a Gaussian
    /// mixture from a plain Gaussian; the binomial accountant and blind
    /// quadrature must agree on it.
    #[test]
    fn accountant_agrees_with_blind_quadrature_on_mixtures() {
        for (q, m) in [(0.2, 1.5), (0.05, 1.1)] {
            for alpha in [2u32, 3, 5] {
                let numeric = renyi_divergence_numeric(
                    |x| (1.0 - q) * normal_pdf(x, 0.0, m) + q * normal_pdf(x, 1.0, m),
                    |x| normal_pdf(x, 0.0, m),
                    alpha as f64,
                    -40.0,
                    40.0,
                )
                .unwrap();
                let closed = rdp_sgm_step(q, m, &[alpha]).unwrap()[0];
                assert!(
                    (numeric - closed).abs() < 1e-9,
                    "q {q} m {m} alpha {alpha}: {numeric} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn order_and_interval_are_validated() {
        let p = |x: f64| normal_pdf(x, 0.0, 1.0);
        assert!(renyi_divergence_numeric(p, p, 1.0, -1.0, 1.0).is_err());
        assert!(renyi_divergence_numeric(p, p, 0.0, -1.0, 1.0).is_err());
        assert!(renyi_divergence_numeric(p, p, -2.0, -1.0, 1.0).is_err());
        assert!(renyi_divergence_numeric(p, p, 2.0, 1.0, -1.0).is_err());
        assert!(renyi_divergence_numeric(p, p, 2.0, f64::NEG_INFINITY, 0.0).is_err());
    }

    #[test]
    fn unsupported_reference_density_is_a_numeric_error() {
        let err = renyi_divergence_numeric(
            |x| normal_pdf(x, 0.0, 1.0),
            |x| if x < 0.0 { 0.0 } else { 2.0 * normal_pdf(x, 0.0, 1.0) },
            2.0,
            -5.0,
            5.0,
        );
        assert!(err.is_err());
    }
}
