//! Query parameters: `ε`, `β` and `α₁`/`α₂` tied together so that near points
//! survive projection with probability `1 - 1/e` and far points stay below `βn`.

use crate::chi2::{chi2_survival, chi2_upper_quantile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryParams {
    /// Approximation ratio, `> 1`.
    pub c: f64,
    /// Projected dimension `K`.
    pub proj_dim: usize,
    /// Number of projected spaces `L`.
    pub spaces: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Projected-radius multiplier: range queries use `ε·r`.
    pub epsilon: f64,
    /// Maximum false-positive fraction; `βn + k` candidates end a query.
    pub beta: f64,
    /// First search radius of a c²-k-ANN query.
    pub r_min: f64,
}

impl QueryParams {
    /// Derives `α₁ = e^{-1/L}`, `ε² = χ²_{α₁}(K)`, `α₂` with `χ²_{α₂}(K) = ε²/c²`
    /// and `β = 2 - 2α₂^L`. `beta_override` replaces the derived `β`.
    pub fn derive(
        proj_dim: usize,
        c: f64,
        spaces: usize,
        r_min: f64,
        beta_override: Option<f64>,
    ) -> Result<Self> {
        if !(c > 1.0) || !c.is_finite() {
            return Err(Error::param(format!(
                "approximation ratio c must exceed 1, got {c}"
            )));
        }
        if proj_dim == 0 || spaces == 0 {
            return Err(Error::param("K and L must be at least 1"));
        }
        if !(r_min > 0.0) || !r_min.is_finite() {
            return Err(Error::param(format!("r_min must be positive, got {r_min}")));
        }
        let dof = u32::try_from(proj_dim).map_err(|_| Error::param("K too large"))?;
        let alpha1 = (-1.0 / spaces as f64).exp();
        let eps_sq = chi2_upper_quantile(alpha1, dof)?;
        // χ²_{α₂}(K) = ε²/c² means α₂ is the survival probability at ε²/c²
        let alpha2 = chi2_survival(eps_sq / (c * c), dof);
        let derived_beta = 2.0 - 2.0 * alpha2.powi(spaces as i32);
        let beta = match beta_override {
            Some(b) if b > 0.0 && b < 1.0 => b,
            Some(b) => {
                return Err(Error::param(format!(
                    "beta override must lie in (0, 1), got {b}"
                )))
            }
            None if derived_beta > 0.0 && derived_beta < 1.0 => derived_beta,
            None => {
                return Err(Error::param(format!(
                    "derived beta {derived_beta} is outside (0, 1); choose different K, c or L"
                )))
            }
        };
        Ok(Self {
            c,
            proj_dim,
            spaces,
            alpha1,
            alpha2,
            epsilon: eps_sq.sqrt(),
            beta,
            r_min,
        })
    }

    /// `β` exactly as `2 - 2α₂^L`, independent of any override.
    pub fn derived_beta(&self) -> f64 {
        2.0 - 2.0 * self.alpha2.powi(self.spaces as i32)
    }

    pub fn with_r_min(mut self, r_min: f64) -> Result<Self> {
        if !(r_min > 0.0) || !r_min.is_finite() {
            return Err(Error::param(format!("r_min must be positive, got {r_min}")));
        }
        self.r_min = r_min;
        Ok(self)
    }

    /// Candidate count that ends a query early: `βn + k`.
    pub fn candidate_budget(&self, n: usize, k: usize) -> f64 {
        self.beta * n as f64 + k as f64
    }
}

/// Named `(K, L)` settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// K = 16, L = 4, the default setting.
    K16L4,
    /// K = 4, L = 16, the alternative trade-off.
    K4L16,
}

impl Preset {
    pub fn proj_dim(self) -> usize {
        match self {
            Preset::K16L4 => 16,
            Preset::K4L16 => 4,
        }
    }

    pub fn spaces(self) -> usize {
        match self {
            Preset::K16L4 => 4,
            Preset::K4L16 => 16,
        }
    }
}
