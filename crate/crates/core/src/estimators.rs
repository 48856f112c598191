//! Point estimators of the average factorial effects.
//!
//! Every estimator has the form `2^{-(K-1)} sum_q d_q mu_q` where `mu_q` is
//! an (adjusted) stratified arm mean:
//!
//! * `unadj`: `mu_q = sum_m pi_[m] Ybar_[m](q)`.
//! * `adj`:   `mu_q = Ybar(q) - (Xbar(q) - Xbar)^T beta(q)` with one pooled
//!   vector per arm fitted by weighted least squares.
//! * `cond`:  as `adj` with a single vector `gamma` shared by all arms.
//! * `inter`: `mu_q = sum_m pi_[m] [Ybar_[m](q) - (Xbar_[m](q) - Xbar_[m])^T beta_[m](q)]`
//!   with a separate regression in every stratum-arm cell.
//!
//! The variance of each estimator is estimated by the Neyman-type formula
//! applied to the residuals of its adjustment, always centered at arm-specific
//! stratum sample means.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{summarize, CellSummary, ObservedDataset, StratumSummaries};
use crate::design::FactorialDesign;
use crate::error::{Error, Result};
use crate::inference::{self, CellVariance, StratumCells, VarianceEstimate, VarianceSource};
use crate::numerics::{self, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Unadj,
    Adj,
    Cond,
    Inter,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Unadj, Method::Adj, Method::Cond, Method::Inter];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Unadj => "unadj",
            Method::Adj => "adj",
            Method::Cond => "cond",
            Method::Inter => "inter",
        }
    }

    pub fn variance_source(self) -> VarianceSource {
        match self {
            Method::Unadj => VarianceSource::Y,
            Method::Adj => VarianceSource::Epsilon,
            Method::Cond => VarianceSource::Eta,
            Method::Inter => VarianceSource::Mu,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unadj" => Ok(Method::Unadj),
            "adj" => Ok(Method::Adj),
            "cond" => Ok(Method::Cond),
            "inter" => Ok(Method::Inter),
            other => Err(Error::Domain(format!(
                "unknown method `{other}`; expected unadj, adj, cond or inter"
            ))),
        }
    }
}

/// Fitted adjustment vectors, each of length `p`.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjustmentCoefficients {
    /// `beta(q)`, one per arm.
    PooledPerArm(Vec<DVector<f64>>),
    /// `gamma`, shared by all arms and effects.
    Conditional(DVector<f64>),
    /// `beta_[m](q)`, indexed `[stratum][arm]`.
    StratumSpecific(Vec<Vec<DVector<f64>>>),
}

impl AdjustmentCoefficients {
    pub fn get(&self, stratum: usize, arm: usize) -> &DVector<f64> {
        match self {
            AdjustmentCoefficients::PooledPerArm(b) => &b[arm],
            AdjustmentCoefficients::Conditional(g) => g,
            AdjustmentCoefficients::StratumSpecific(b) => &b[stratum][arm],
        }
    }

    pub fn residual_kind(&self) -> ResidualKind {
        match self {
            AdjustmentCoefficients::PooledPerArm(_) => ResidualKind::Epsilon,
            AdjustmentCoefficients::Conditional(_) => ResidualKind::Eta,
            AdjustmentCoefficients::StratumSpecific(_) => ResidualKind::Mu,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Cells with fewer than two units, as `(stratum id, one-based arm, n)`.
    pub cells_below_min: Vec<(String, usize, usize)>,
    pub min_cell_size: usize,
    pub covariates: usize,
    /// For `inter`: the PSD amount by which the variance estimate shrinks
    /// relative to the unadjusted one, `2^{-2(K-1)} sum_m pi sum_q e^{-1}
    /// d_q (beta^T s_XX beta) d_q^T`.
    pub inter_variance_reduction: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct EffectEstimate {
    pub method: Method,
    pub labels: Vec<String>,
    pub tau_hat: DVector<f64>,
    /// Estimated covariance of `tau_hat`, i.e. `Vhat / n`.
    pub vcov: DMatrix<f64>,
    pub variance: Option<VarianceEstimate>,
    /// The vector `mu_q` the contrast is applied to.
    pub adjusted_means: Vec<f64>,
    pub coefficients: Option<AdjustmentCoefficients>,
    pub n: usize,
    pub strata: usize,
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    /// Bare estimate from a point vector and covariance matrix.
    pub fn from_parts(method: Method, tau_hat: Vec<f64>, vcov: DMatrix<f64>) -> Self {
        let f = tau_hat.len();
        EffectEstimate {
            method,
            labels: (1..=f).map(|i| format!("effect{i}")).collect(),
            tau_hat: DVector::from_vec(tau_hat),
            vcov,
            variance: None,
            adjusted_means: Vec::new(),
            coefficients: None,
            n: 0,
            strata: 0,
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn effects(&self) -> usize {
        self.tau_hat.len()
    }
}

fn require_cells(summ: &StratumSummaries, min: usize, what: &str) -> Result<()> {
    if let Some((id, q, n)) = summ.cells_below(min).into_iter().next() {
        return Err(Error::Precondition(format!(
            "{what} requires n_[m]q >= {min}; stratum `{id}`, arm {q} has {n} unit(s)"
        )));
    }
    Ok(())
}

fn second_moments(cell: &CellSummary) -> (f64, &DVector<f64>, &SymMatrix) {
    (
        cell.y_var.expect("cell with n >= 2 has a variance"),
        cell.xy_cov
            .as_ref()
            .expect("cell with n >= 2 has a covariance"),
        cell.xx_cov
            .as_ref()
            .expect("cell with n >= 2 has a covariance"),
    )
}

/// Sample variance of `Y - X^T c` within a cell, from its second moments.
fn residual_variance(cell: &CellSummary, c: &DVector<f64>) -> Option<f64> {
    let (syy, sxy, sxx) = (cell.y_var?, cell.xy_cov.as_ref()?, cell.xx_cov.as_ref()?);
    let quad = (sxx.as_matrix() * c).dot(c);
    Some((syy - 2.0 * sxy.dot(c) + quad).max(0.0))
}

fn variance_cells(
    summ: &StratumSummaries,
    coeffs: Option<&AdjustmentCoefficients>,
) -> Vec<StratumCells> {
    summ.strata
        .iter()
        .enumerate()
        .map(|(m, s)| StratumCells {
            id: s.id.clone(),
            weight: s.weight,
            cells: s
                .cells
                .iter()
                .enumerate()
                .map(|(q, c)| CellVariance {
                    n: c.n,
                    propensity: s.propensities[q],
                    variance: match coeffs {
                        None => c.y_var,
                        Some(k) => residual_variance(c, k.get(m, q)),
                    },
                })
                .collect(),
        })
        .collect()
}

fn diagnostics(summ: &StratumSummaries) -> Diagnostics {
    Diagnostics {
        cells_below_min: summ.cells_below(2),
        min_cell_size: summ.min_cell_size(),
        covariates: summ.p,
        inter_variance_reduction: None,
    }
}

fn finish(
    method: Method,
    summ: &StratumSummaries,
    design: &FactorialDesign,
    adjusted_means: Vec<f64>,
    coefficients: Option<AdjustmentCoefficients>,
) -> Result<EffectEstimate> {
    check_design(summ, design)?;
    let tau_hat = design.contrast(&adjusted_means);
    let cells = variance_cells(summ, coefficients.as_ref());
    let variance = inference::neyman_variance(&cells, design, method.variance_source())?;
    let vcov = variance.vhat.as_matrix() / summ.n as f64;
    if !tau_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!("{method}: non-finite estimate")));
    }
    Ok(EffectEstimate {
        method,
        labels: design.effect_labels(),
        tau_hat,
        vcov,
        variance: Some(variance),
        adjusted_means,
        coefficients,
        n: summ.n,
        strata: summ.strata.len(),
        diagnostics: diagnostics(summ),
    })
}

fn check_design(summ: &StratumSummaries, design: &FactorialDesign) -> Result<()> {
    if summ.arms != design.arms() {
        return Err(Error::Validation(format!(
            "data have {} arms but the design has {}",
            summ.arms,
            design.arms()
        )));
    }
    Ok(())
}

/// Stratified arm means `Ybar(q)`.
pub fn unadjusted_means(summ: &StratumSummaries) -> Vec<f64> {
    (0..summ.arms).map(|q| summ.stratified_y_mean(q)).collect()
}

/// Stratified difference-in-means point estimate only (no variance), usable
/// with single-unit cells.
pub fn unadjusted_point(summ: &StratumSummaries, design: &FactorialDesign) -> Result<DVector<f64>> {
    check_design(summ, design)?;
    require_cells(summ, 1, "unadj")?;
    Ok(design.contrast(&unadjusted_means(summ)))
}

/// Stratified difference-in-means estimator with its Neyman variance.
pub fn estimate_unadjusted(
    summ: &StratumSummaries,
    design: &FactorialDesign,
) -> Result<EffectEstimate> {
    require_cells(summ, 1, "unadj")?;
    finish(Method::Unadj, summ, design, unadjusted_means(summ), None)
}

fn solve_or_zero(
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    context: impl FnOnce() -> String,
) -> Result<DVector<f64>> {
    if rhs.is_empty() {
        return Ok(rhs);
    }
    let chol = numerics::cholesky(&SymMatrix::new(gram)).map_err(|e| e.in_context(context()))?;
    Ok(chol.solve_vec(&rhs))
}

/// `beta(q)` from the pooled weighted normal equations with per-stratum
/// weight `(1 - e)/e * pi / (n_[m]q - 1)`.
///
/// Cells with `e_[m]q = 1` contribute with zero weight.
pub fn fit_beta_pooled(summ: &StratumSummaries) -> Result<AdjustmentCoefficients> {
    require_cells(summ, 2, "adj")?;
    let p = summ.p;
    let betas = (0..summ.arms)
        .map(|q| {
            let mut gram = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for s in &summ.strata {
                let e = s.propensities[q];
                let w = (1.0 - e) / e * s.weight;
                if w == 0.0 {
                    continue;
                }
                let (_, sxy, sxx) = second_moments(&s.cells[q]);
                gram += sxx.as_matrix() * w;
                rhs += sxy * w;
            }
            solve_or_zero(gram, rhs, || {
                format!(
                    "pooled covariate Gram matrix of arm {}; pivot is the covariate index",
                    q + 1
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdjustmentCoefficients::PooledPerArm(betas))
}

fn pooled_adjusted_means(
    summ: &StratumSummaries,
    per_arm: impl Fn(usize) -> DVector<f64>,
) -> Vec<f64> {
    (0..summ.arms)
        .map(|q| {
            let imbalance = summ.stratified_x_mean(q) - &summ.x_mean;
            summ.stratified_y_mean(q) - imbalance.dot(&per_arm(q))
        })
        .collect()
}

fn check_lengths(summ: &StratumSummaries, coeffs: &AdjustmentCoefficients) -> Result<()> {
    let ok = match coeffs {
        AdjustmentCoefficients::PooledPerArm(b) => {
            b.len() == summ.arms && b.iter().all(|v| v.len() == summ.p)
        }
        AdjustmentCoefficients::Conditional(g) => g.len() == summ.p,
        AdjustmentCoefficients::StratumSpecific(b) => {
            b.len() == summ.strata.len()
                && b.iter()
                    .all(|row| row.len() == summ.arms && row.iter().all(|v| v.len() == summ.p))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(
            "adjustment coefficients do not match the data dimensions".into(),
        ))
    }
}

/// Covariate-adjusted estimator with pooled per-arm vectors.
pub fn estimate_adjusted(
    summ: &StratumSummaries,
    design: &FactorialDesign,
    beta: &AdjustmentCoefficients,
) -> Result<EffectEstimate> {
    let AdjustmentCoefficients::PooledPerArm(b) = beta else {
        return Err(Error::Validation(
            "adj needs pooled per-arm coefficients".into(),
        ));
    };
    check_lengths(summ, beta)?;
    require_cells(summ, 2, "adj")?;
    let means = pooled_adjusted_means(summ, |q| b[q].clone());
    finish(Method::Adj, summ, design, means, Some(beta.clone()))
}

/// Shared vector `gamma = [sum_m pi sum_q e^{-1} s_[m]XX]^{-1} [sum_m pi sum_q e^{-1} s_[m]XY(q)]`,
/// with `s_[m]XX` over all units of the stratum and `s_[m]XY(q)` over its arm-`q` units.
pub fn fit_gamma(summ: &StratumSummaries) -> Result<AdjustmentCoefficients> {
    require_cells(summ, 2, "cond")?;
    let p = summ.p;
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for s in &summ.strata {
        let inv_e: f64 = s.propensities.iter().map(|e| 1.0 / e).sum();
        let sxx = s
            .xx_cov
            .as_ref()
            .expect("stratum with n >= 2 has a covariance");
        gram += sxx.as_matrix() * (s.weight * inv_e);
        for (q, cell) in s.cells.iter().enumerate() {
            let (_, sxy, _) = second_moments(cell);
            rhs += sxy * (s.weight / s.propensities[q]);
        }
    }
    let gamma = solve_or_zero(gram, rhs, || {
        "conditional covariate matrix; pivot is the covariate index".into()
    })?;
    Ok(AdjustmentCoefficients::Conditional(gamma))
}

/// Covariate-adjusted estimator with the shared conditional vector.
pub fn estimate_cond(
    summ: &StratumSummaries,
    design: &FactorialDesign,
    gamma: &AdjustmentCoefficients,
) -> Result<EffectEstimate> {
    let AdjustmentCoefficients::Conditional(g) = gamma else {
        return Err(Error::Validation(
            "cond needs a conditional coefficient vector".into(),
        ));
    };
    check_lengths(summ, gamma)?;
    require_cells(summ, 2, "cond")?;
    let means = pooled_adjusted_means(summ, |_| g.clone());
    finish(Method::Cond, summ, design, means, Some(gamma.clone()))
}

/// Per-cell OLS slopes `beta_[m](q) = s_[m]XX(q)^{-1} s_[m]XY(q)` from the
/// arm-`q` units of stratum `m`. Every cell needs at least `p + 2` units.
pub fn fit_beta_stratum(summ: &StratumSummaries) -> Result<AdjustmentCoefficients> {
    let min = summ.p + 2;
    if let Some((id, q, n)) = summ.cells_below(min).into_iter().next() {
        return Err(Error::Precondition(format!(
            "inter requires n_[m]q \u{2265} p+2 = {min}; stratum `{id}`, arm {q} has {n} unit(s); \
             consider adj or cond"
        )));
    }
    let betas = summ
        .strata
        .iter()
        .map(|s| {
            s.cells
                .iter()
                .enumerate()
                .map(|(q, cell)| {
                    let (_, sxy, sxx) = second_moments(cell);
                    solve_or_zero(sxx.as_matrix().clone(), sxy.clone(), || {
                        format!("covariate matrix of stratum `{}`, arm {}", s.id, q + 1)
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdjustmentCoefficients::StratumSpecific(betas))
}

/// Stratum-specific covariate-adjusted estimator.
pub fn estimate_inter(
    summ: &StratumSummaries,
    design: &FactorialDesign,
    betas: &AdjustmentCoefficients,
) -> Result<EffectEstimate> {
    let AdjustmentCoefficients::StratumSpecific(b) = betas else {
        return Err(Error::Validation(
            "inter needs stratum-specific coefficients".into(),
        ));
    };
    check_lengths(summ, betas)?;
    require_cells(summ, 2, "inter")?;
    let means: Vec<f64> = (0..summ.arms)
        .map(|q| {
            summ.strata
                .iter()
                .enumerate()
                .map(|(m, s)| {
                    let cell = &s.cells[q];
                    let imbalance = &cell.x_mean - &s.x_mean;
                    s.weight * (cell.y_mean - imbalance.dot(&b[m][q]))
                })
                .sum()
        })
        .collect();
    let mut est = finish(Method::Inter, summ, design, means, Some(betas.clone()))?;

    let mut per_arm = vec![0.0; summ.arms];
    for (m, s) in summ.strata.iter().enumerate() {
        let Some(sxx) = s.xx_cov.as_ref() else {
            continue;
        };
        for q in 0..summ.arms {
            let quad = (sxx.as_matrix() * &b[m][q]).dot(&b[m][q]);
            // s_XX is PSD, so each term is a non-negative multiple of d_q d_q^T
            if quad < -1e-10 * (1.0 + sxx.as_matrix().abs().max()) {
                return Err(Error::singular(
                    format!(
                        "stratum `{}` covariate matrix is not positive semi-definite",
                        s.id
                    ),
                    0,
                ));
            }
            per_arm[q] += s.weight * quad.max(0.0) / s.propensities[q];
        }
    }
    let reduction = inference::contrast_quadratic(design, &per_arm);
    let r = reduction.as_matrix();
    est.diagnostics.inter_variance_reduction = Some(
        (0..r.nrows())
            .map(|i| r.row(i).iter().copied().collect())
            .collect(),
    );
    Ok(est)
}

/// Fits the adjustment for `method` (if any) and returns the estimate.
pub fn estimate_from_summaries(
    method: Method,
    summ: &StratumSummaries,
    design: &FactorialDesign,
) -> Result<EffectEstimate> {
    match method {
        Method::Unadj => estimate_unadjusted(summ, design),
        Method::Adj => estimate_adjusted(summ, design, &fit_beta_pooled(summ)?),
        Method::Cond => estimate_cond(summ, design, &fit_gamma(summ)?),
        Method::Inter => estimate_inter(summ, design, &fit_beta_stratum(summ)?),
    }
}

/// Summarizes `data` and runs `method`.
pub fn estimate(
    method: Method,
    data: &ObservedDataset,
    design: &FactorialDesign,
) -> Result<EffectEstimate> {
    estimate_from_summaries(method, &summarize(data), design)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    Epsilon,
    Eta,
    Mu,
}

/// Residual of every unit at its own arm, in dataset order.
#[derive(Debug, Clone)]
pub struct ResidualMatrix {
    pub kind: ResidualKind,
    pub values: Vec<f64>,
}

impl ResidualMatrix {
    /// Mean residual per `[stratum][arm]` cell.
    pub fn cell_means(&self, data: &ObservedDataset) -> Vec<Vec<f64>> {
        let mut sums = vec![vec![0.0; data.arms()]; data.strata()];
        for (i, r) in self.values.iter().enumerate() {
            sums[data.stratum_of(i)][data.arm_of(i)] += r;
        }
        for (m, row) in sums.iter_mut().enumerate() {
            for (q, v) in row.iter_mut().enumerate() {
                *v /= data.count(m, q) as f64;
            }
        }
        sums
    }

    /// Sample variance per `[stratum][arm]` cell (`None` for single-unit cells).
    pub fn cell_variances(&self, data: &ObservedDataset) -> Vec<Vec<Option<f64>>> {
        let means = self.cell_means(data);
        let mut ss = vec![vec![0.0; data.arms()]; data.strata()];
        for (i, r) in self.values.iter().enumerate() {
            let (m, q) = (data.stratum_of(i), data.arm_of(i));
            ss[m][q] += (r - means[m][q]).powi(2);
        }
        ss.iter()
            .enumerate()
            .map(|(m, row)| {
                row.iter()
                    .enumerate()
                    .map(|(q, s)| {
                        let n = data.count(m, q);
                        (n >= 2).then(|| s / (n as f64 - 1.0))
                    })
                    .collect()
            })
            .collect()
    }
}

/// `Y_i - Ybar_[m](Z_i) - (X_i - Xbar_[m](Z_i))^T c`, where `c` is the
/// coefficient the adjustment uses for unit `i`'s stratum and arm.
pub fn compute_residuals(
    data: &ObservedDataset,
    summ: &StratumSummaries,
    coeffs: &AdjustmentCoefficients,
) -> Result<ResidualMatrix> {
    check_lengths(summ, coeffs)?;
    let values = (0..data.units())
        .map(|i| {
            let (m, q) = (data.stratum_of(i), data.arm_of(i));
            let cell = &summ.strata[m].cells[q];
            let c = coeffs.get(m, q);
            let centered: f64 = data
                .covariates(i)
                .iter()
                .zip(cell.x_mean.iter())
                .zip(c.iter())
                .map(|((x, xm), b)| (x - xm) * b)
                .sum();
            data.outcome(i) - cell.y_mean - centered
        })
        .collect();
    Ok(ResidualMatrix {
        kind: coeffs.residual_kind(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest_csv, Schema};

    fn load(k: usize, text: &str) -> (FactorialDesign, ObservedDataset, StratumSummaries) {
        let design = FactorialDesign::new(k).unwrap();
        let data = ingest_csv(text.as_bytes(), &Schema::default(), &design).unwrap();
        let summ = summarize(&data);
        (design, data, summ)
    }

    #[test]
    fn single_factor_difference_of_means() {
        let (d, _, s) = load(1, "stratum,arm,y\n1,1,3\n1,1,5\n1,2,1\n1,2,1\n");
        let est = estimate_unadjusted(&s, &d).unwrap();
        assert_eq!(est.tau_hat[0], 3.0);
        assert_eq!(est.vcov[(0, 0)], 1.0);
    }

    #[test]
    fn weighted_average_over_strata() {
        // stratum a effect 3, stratum b effect 1, equal sizes
        let (d, _, s) = load(
            1,
            "stratum,arm,y\na,1,3\na,1,3\na,2,0\na,2,0\nb,1,1\nb,1,1\nb,2,0\nb,2,0\n",
        );
        assert_eq!(estimate_unadjusted(&s, &d).unwrap().tau_hat[0], 2.0);
    }

    #[test]
    fn two_factor_contrast_by_hand() {
        let d = FactorialDesign::new(2).unwrap();
        let tau = d.contrast(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tau.as_slice(), &[-2.0, -1.0, 0.0]);
    }

    const GAMMA_TOY: &str = "stratum,arm,y,x\n1,1,1,-1\n1,1,3,1\n1,2,0,-2\n1,2,4,2\n";

    #[test]
    fn gamma_by_hand() {
        let (_, _, s) = load(1, GAMMA_TOY);
        let AdjustmentCoefficients::Conditional(g) = fit_gamma(&s).unwrap() else {
            unreachable!()
        };
        assert!((g[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn two_point_slope_and_single_stratum_pooling() {
        let (_, _, s) = load(1, GAMMA_TOY);
        let AdjustmentCoefficients::PooledPerArm(b) = fit_beta_pooled(&s).unwrap() else {
            unreachable!()
        };
        assert!((b[0][0] - 1.0).abs() < 1e-14);
        assert!((b[1][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_outcomes_give_zero_gamma() {
        let (_, _, s) = load(1, "stratum,arm,y,x\n1,1,2,-1\n1,1,2,1\n1,2,2,-2\n1,2,2,2\n");
        let AdjustmentCoefficients::Conditional(g) = fit_gamma(&s).unwrap() else {
            unreachable!()
        };
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn degenerate_covariate_is_singular() {
        let (_, _, s) = load(1, "stratum,arm,y,x\n1,1,1,0\n1,1,3,0\n1,2,0,0\n1,2,4,0\n");
        assert!(matches!(
            fit_beta_pooled(&s),
            Err(Error::Singular { pivot: 1, .. })
        ));
        assert!(matches!(fit_gamma(&s), Err(Error::Singular { .. })));
        // with zero coefficients the adjusted estimator collapses to unadj
        let zero = AdjustmentCoefficients::PooledPerArm(vec![DVector::zeros(1); 2]);
        let (d, _, _) = load(1, GAMMA_TOY);
        let adj = estimate_adjusted(&s, &d, &zero).unwrap();
        assert_eq!(adj.tau_hat, estimate_unadjusted(&s, &d).unwrap().tau_hat);
    }

    #[test]
    fn no_covariates_reduces_to_unadjusted() {
        let (d, _, s) = load(1, "stratum,arm,y\n1,1,3\n1,1,5\n1,2,1\n1,2,2\n");
        let unadj = estimate_unadjusted(&s, &d).unwrap();
        for m in [Method::Adj, Method::Cond] {
            let e = estimate_from_summaries(m, &s, &d).unwrap();
            assert_eq!(e.tau_hat, unadj.tau_hat);
            assert_eq!(e.vcov, unadj.vcov);
        }
    }

    #[test]
    fn balanced_covariates_leave_estimate_unchanged() {
        // arm means of x equal the overall mean (0) in both arms
        let (d, _, s) = load(1, "stratum,arm,y,x\n1,1,1,-1\n1,1,4,1\n1,2,0,-2\n1,2,5,2\n");
        let unadj = estimate_unadjusted(&s, &d).unwrap();
        let beta = AdjustmentCoefficients::PooledPerArm(vec![DVector::from_element(1, 7.0); 2]);
        assert_eq!(
            estimate_adjusted(&s, &d, &beta).unwrap().tau_hat,
            unadj.tau_hat
        );
        let cond = estimate_from_summaries(Method::Cond, &s, &d).unwrap();
        assert_eq!(cond.tau_hat, unadj.tau_hat);
    }

    #[test]
    fn cond_correction_by_hand() {
        // arm 1: x mean 0.2, arm 2: x mean -0.2 about an overall mean of 0
        let (d, _, s) = load(
            1,
            "stratum,arm,y,x\n1,1,1,0.0\n1,1,2,0.4\n1,2,0,-0.4\n1,2,1,0.0\n",
        );
        let gamma = AdjustmentCoefficients::Conditional(DVector::from_element(1, 1.5));
        let unadj = estimate_unadjusted(&s, &d).unwrap().tau_hat[0];
        let cond = estimate_cond(&s, &d, &gamma).unwrap().tau_hat[0];
        // -(0.2 * 1.5) for the +1 arm and +(-0.2 * 1.5) for the -1 arm
        assert!((cond - (unadj - 0.6)).abs() < 1e-14);
    }

    #[test]
    fn stratum_slopes_are_not_pooled() {
        let text = "stratum,arm,y,x\n\
            a,1,0,0\na,1,1,1\na,1,2,2\na,2,0,0\na,2,1,1\na,2,2,2\n\
            b,1,0,0\nb,1,-1,1\nb,1,-2,2\nb,2,0,0\nb,2,-1,1\nb,2,-2,2\n";
        let (_, _, s) = load(1, text);
        let AdjustmentCoefficients::StratumSpecific(b) = fit_beta_stratum(&s).unwrap() else {
            unreachable!()
        };
        for (a_q, b_q) in b[0].iter().zip(&b[1]) {
            assert!((a_q[0] - 1.0).abs() < 1e-14);
            assert!((b_q[0] + 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn inter_guard_names_threshold() {
        let (_, _, s) = load(1, GAMMA_TOY);
        let err = fit_beta_stratum(&s).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        assert!(err.to_string().contains("p+2"), "{err}");
    }

    #[test]
    fn inter_recovers_linear_truth() {
        // Y(q) = 2x + c_q with c = (5, 1), two strata with different x
        let text = "stratum,arm,y,x\n\
            a,1,5,0\na,1,7,1\na,1,9,2\na,2,7,3\na,2,1,0\na,2,3,1\n\
            b,1,11,3\nb,1,13,4\nb,1,5,0\nb,2,9,4\nb,2,3,1\nb,2,1,0\n";
        let (d, data, s) = load(1, text);
        let est = estimate_from_summaries(Method::Inter, &s, &d).unwrap();
        assert!((est.tau_hat[0] - 4.0).abs() < 1e-12);
        let r = compute_residuals(&data, &s, est.coefficients.as_ref().unwrap()).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(r.kind, ResidualKind::Mu);
    }

    #[test]
    fn zero_coefficients_give_centered_outcomes() {
        let (_, data, s) = load(1, GAMMA_TOY);
        let zero = AdjustmentCoefficients::Conditional(DVector::zeros(1));
        let r = compute_residuals(&data, &s, &zero).unwrap();
        assert_eq!(r.values, vec![-1.0, 1.0, -2.0, 2.0]);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("COND".parse::<Method>().unwrap(), Method::Cond);
        assert!("ols".parse::<Method>().is_err());
    }
}
