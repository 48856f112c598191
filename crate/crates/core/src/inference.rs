//! Neyman-type conservative variance estimation and Wald inference.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::FactorialDesign;
use crate::error::{Error, Result};
use crate::estimators::EffectEstimate;
use crate::numerics::{self, SymMatrix};

/// Which per-unit quantity the cell variances were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceSource {
    /// Raw outcomes.
    Y,
    /// Residuals after pooled per-arm adjustment.
    Epsilon,
    /// Residuals after the shared conditional adjustment.
    Eta,
    /// Residuals after stratum-specific adjustment.
    Mu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellVariance {
    pub n: usize,
    pub propensity: f64,
    /// Sample variance; `None` when the cell has fewer than two units.
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumCells {
    pub id: String,
    pub weight: f64,
    pub cells: Vec<CellVariance>,
}

#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    /// `F x F` estimate of the scaled covariance (divide by `n` for the
    /// covariance of the estimator itself).
    pub vhat: SymMatrix,
    pub source: VarianceSource,
    pub cells: Vec<StratumCells>,
}

/// `2^{-2(K-1)} sum_q w_q d_q d_q^T` for per-arm weights `w_q`.
pub fn contrast_quadratic(design: &FactorialDesign, arm_weights: &[f64]) -> SymMatrix {
    let f = design.effects();
    let scale2 = design.scale() * design.scale();
    let mut v = DMatrix::zeros(f, f);
    for (q, &w) in arm_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for a in 0..f {
            let sa = design.sign(a, q) * w;
            for b in a..f {
                v[(a, b)] += sa * design.sign(b, q);
            }
        }
    }
    for a in 0..f {
        for b in 0..a {
            v[(a, b)] = v[(b, a)];
        }
    }
    SymMatrix::new(v * scale2)
}

/// `Vhat = 2^{-2(K-1)} sum_m pi_[m] sum_q s^2_[m](q) / e_[m]q d_q d_q^T`.
///
/// Every cell must have at least two units.
pub fn neyman_variance(
    cells: &[StratumCells],
    design: &FactorialDesign,
    source: VarianceSource,
) -> Result<VarianceEstimate> {
    let arms = design.arms();
    let mut per_arm = vec![0.0; arms];
    for s in cells {
        if s.cells.len() != arms {
            return Err(Error::Validation(format!(
                "stratum `{}` has {} cells, design has {arms} arms",
                s.id,
                s.cells.len()
            )));
        }
        for (q, c) in s.cells.iter().enumerate() {
            let var = match c.variance {
                Some(v) if c.n >= 2 => v,
                _ => return Err(Error::Precondition(format!(
                    "variance estimation needs n_[m]q >= 2; stratum `{}`, arm {} has {} unit(s)",
                    s.id,
                    q + 1,
                    c.n
                ))),
            };
            per_arm[q] += s.weight * var / c.propensity;
        }
    }
    Ok(VarianceEstimate {
        vhat: contrast_quadratic(design, &per_arm),
        source,
        cells: cells.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    /// One-based effect index.
    pub effect: usize,
    pub label: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `tau_f +- z_{1 - alpha/2} sqrt(Vhat_ff / n)` for every effect.
pub fn wald_intervals(est: &EffectEstimate, alpha: f64) -> Result<Vec<Interval>> {
    let z = numerics::normal_quantile(1.0 - alpha / 2.0)?;
    Ok((0..est.tau_hat.len())
        .map(|f| {
            let half = z * est.vcov[(f, f)].max(0.0).sqrt();
            Interval {
                effect: f + 1,
                label: est.labels[f].clone(),
                estimate: est.tau_hat[f],
                lo: est.tau_hat[f] - half,
                hi: est.tau_hat[f] + half,
            }
        })
        .collect())
}

/// Closed ellipsoid `{mu : (c - mu)^T P (c - mu) <= threshold}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    /// One-based effect indices spanned by the region.
    pub effects: Vec<usize>,
    pub center: Vec<f64>,
    /// `(Vhat / n)^{-1}` restricted to `effects`.
    pub precision: Vec<Vec<f64>>,
    /// `chi^2_d(1 - alpha)`.
    pub threshold: f64,
    /// Ellipse area, reported for two-dimensional regions only.
    pub area: Option<f64>,
    /// Natural log of the ellipsoid volume for regions of other dimension.
    pub log_volume: Option<f64>,
}

impl ConfidenceRegion {
    pub fn quadratic_form(&self, mu: &[f64]) -> f64 {
        assert_eq!(mu.len(), self.center.len(), "point has wrong dimension");
        let diff: Vec<f64> = self.center.iter().zip(mu).map(|(c, m)| c - m).collect();
        let mut total = 0.0;
        for (a, da) in diff.iter().enumerate() {
            for (b, db) in diff.iter().enumerate() {
                total += da * self.precision[a][b] * db;
            }
        }
        total
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        self.quadratic_form(mu) <= self.threshold
    }
}

/// Wald confidence region for the effects listed in `effects` (zero-based),
/// or for all effects when `None`.
///
/// Fails with a singularity error, carrying the numerical rank, when the
/// relevant block of `Vhat` is not positive definite.
pub fn wald_region(
    est: &EffectEstimate,
    alpha: f64,
    effects: Option<&[usize]>,
) -> Result<ConfidenceRegion> {
    let all: Vec<usize> = (0..est.tau_hat.len()).collect();
    let idx = effects.unwrap_or(&all);
    if idx.is_empty() || idx.iter().any(|&f| f >= est.tau_hat.len()) {
        return Err(Error::Domain(format!("invalid effect selection {idx:?}")));
    }
    let d = idx.len();
    let sub = SymMatrix::new(DMatrix::from_fn(d, d, |a, b| est.vcov[(idx[a], idx[b])]));
    let chol = numerics::cholesky(&sub).map_err(|e| {
        e.in_context(format!(
            "variance matrix has rank {} of {d}; region undefined",
            numerics::numerical_rank(&sub)
        ))
    })?;
    let precision = chol.inverse();
    let threshold = numerics::chi2_quantile(d as u32, 1.0 - alpha)?;
    let ln_det = chol.ln_det();
    let (area, log_volume) = if d == 2 {
        (Some(PI * threshold * (0.5 * ln_det).exp()), None)
    } else {
        let half = d as f64 / 2.0;
        let ln_ball = half * PI.ln() - numerics::ln_gamma(half + 1.0);
        (None, Some(ln_ball + half * threshold.ln() + 0.5 * ln_det))
    };
    let center = DVector::from_iterator(d, idx.iter().map(|&f| est.tau_hat[f]));
    Ok(ConfidenceRegion {
        effects: idx.iter().map(|f| f + 1).collect(),
        center: center.iter().copied().collect(),
        precision: (0..d)
            .map(|a| (0..d).map(|b| precision[(a, b)]).collect())
            .collect(),
        threshold,
        area,
        log_volume,
    })
}
