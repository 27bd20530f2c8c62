//! Chi-squared survival function and upper quantiles for integer degrees of freedom.
//!
//! The survival function is the regularized upper incomplete gamma function
//! `Q(K/2, y/2)`, evaluated by its power series below `a + 1` and by a modified
//! Lentz continued fraction above. Quantiles come from bisection on it.

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// `ln Γ(dof / 2)`, exact up to rounding for integer `dof`.
fn ln_gamma_half(dof: u32) -> f64 {
    if dof.is_multiple_of(2) {
        // Γ(m) = (m-1)!
        (1..dof / 2).map(|j| (j as f64).ln()).sum()
    } else {
        // Γ(m + 1/2) = sqrt(pi) * prod_{j=1..m} (j - 1/2)
        let m = (dof - 1) / 2;
        0.5 * std::f64::consts::PI.ln() + (1..=m).map(|j| (j as f64 - 0.5).ln()).sum::<f64>()
    }
}

/// `P(Y > y)` for `Y ~ χ²(dof)`.
pub fn chi2_survival(y: f64, dof: u32) -> f64 {
    assert!(dof > 0, "chi-squared needs at least one degree of freedom");
    if y <= 0.0 {
        return 1.0;
    }
    if y.is_infinite() {
        return 0.0;
    }
    let a = dof as f64 / 2.0;
    let x = y / 2.0;
    let log_prefactor = -x + a * x.ln() - ln_gamma_half(dof);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        (1.0 - sum * log_prefactor.exp()).clamp(0.0, 1.0)
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        (log_prefactor.exp() * h).clamp(0.0, 1.0)
    }
}

/// The `y` with `P(Y > y) = alpha` for `Y ~ χ²(dof)`.
pub fn chi2_upper_quantile(alpha: f64, dof: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if dof == 0 {
        return Err(Error::param(
            "chi-squared needs at least one degree of freedom",
        ));
    }
    let k = dof as f64;
    let mut lo = 0.0;
    let mut hi = k + 40.0 * (2.0 * k).sqrt();
    while chi2_survival(hi, dof) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_survival(mid, dof) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
