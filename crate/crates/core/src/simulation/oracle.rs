use nalgebra::{DMatrix, DVector};

use super::population::PotentialPopulation;
use crate::design::FactorialDesign;
use crate::error::{Error, Result};
use crate::estimators::AdjustmentCoefficients;
use crate::inference::{contrast_quadratic, VarianceSource};
use crate::numerics::{cholesky, SymMatrix};

/// Finite-population moments of one stratum (divisor `n_[m] - 1`).
#[derive(Debug, Clone)]
pub struct StratumMoments {
    pub size: usize,
    pub y_mean: Vec<f64>,
    pub x_mean: DVector<f64>,
    /// `S_[m]Y(q)Y(q')`, `Q x Q`.
    pub s_yy: DMatrix<f64>,
    /// `S_[m]XX`, `p x p`.
    pub s_xx: DMatrix<f64>,
    /// Column `q` is `S_[m]XY(q)`, `p x Q`.
    pub s_xy: DMatrix<f64>,
}

/// `V_n`, `Vtilde_n` and the stratum covariances they are built from, for one
/// choice of per-unit quantity (raw outcomes or a population residual).
#[derive(Debug, Clone)]
pub struct OracleMoments {
    pub source: VarianceSource,
    pub v: SymMatrix,
    pub v_tilde: SymMatrix,
    /// `S^2_[m]tau`, the covariance of unit-level effects within each stratum.
    pub s2_tau: Vec<SymMatrix>,
    /// `S_[m]R(q)R(q')` of the per-unit quantity, per stratum.
    pub s_rr: Vec<DMatrix<f64>>,
    pub coefficients: Option<AdjustmentCoefficients>,
}

impl OracleMoments {
    /// `S^2_[m]R(q)`, the diagonal of `s_rr`.
    pub fn s2(&self, stratum: usize, arm: usize) -> f64 {
        self.s_rr[stratum][(arm, arm)]
    }
}

pub fn stratum_moments(pop: &PotentialPopulation, stratum: usize) -> Result<StratumMoments> {
    let units = pop.members(stratum);
    let (nm, qq, p) = (units.len(), pop.arms(), pop.covariate_dim());
    if nm < 2 {
        return Err(Error::Precondition(format!(
            "stratum `{}` has fewer than two units",
            pop.stratum_ids()[stratum]
        )));
    }
    let div = nm as f64 - 1.0;
    let mut y_mean = vec![0.0; qq];
    let mut x_mean = DVector::zeros(p);
    for &i in units {
        for (q, y) in pop.outcomes(i).iter().enumerate() {
            y_mean[q] += y;
        }
        for (j, x) in pop.covariates(i).iter().enumerate() {
            x_mean[j] += x;
        }
    }
    y_mean.iter_mut().for_each(|v| *v /= nm as f64);
    x_mean /= nm as f64;

    let mut s_yy = DMatrix::zeros(qq, qq);
    let mut s_xx = DMatrix::zeros(p, p);
    let mut s_xy = DMatrix::zeros(p, qq);
    for &i in units {
        let dy =
            DVector::from_iterator(qq, pop.outcomes(i).iter().zip(&y_mean).map(|(y, m)| y - m));
        let dx = DVector::from_iterator(
            p,
            pop.covariates(i)
                .iter()
                .zip(x_mean.iter())
                .map(|(x, m)| x - m),
        );
        s_yy += &dy * dy.transpose();
        s_xx += &dx * dx.transpose();
        s_xy += &dx * dy.transpose();
    }
    Ok(StratumMoments {
        size: nm,
        y_mean,
        x_mean,
        s_yy: s_yy / div,
        s_xx: s_xx / div,
        s_xy: s_xy / div,
    })
}

fn solve(gram: DMatrix<f64>, rhs: DVector<f64>, context: &str) -> Result<DVector<f64>> {
    if rhs.is_empty() {
        return Ok(rhs);
    }
    Ok(cholesky(&SymMatrix::new(gram))
        .map_err(|e| e.in_context(context))?
        .solve_vec(&rhs))
}

/// Population adjustment vectors: `beta(q)` for epsilon, `gamma` for eta and
/// `beta_[m](q)` for mu. `None` for raw outcomes.
pub fn population_coefficients(
    pop: &PotentialPopulation,
    moments: &[StratumMoments],
    source: VarianceSource,
) -> Result<Option<AdjustmentCoefficients>> {
    let (qq, p) = (pop.arms(), pop.covariate_dim());
    Ok(match source {
        VarianceSource::Y => None,
        VarianceSource::Epsilon => {
            let betas = (0..qq)
                .map(|q| {
                    let mut gram = DMatrix::zeros(p, p);
                    let mut rhs = DVector::zeros(p);
                    for (m, mo) in moments.iter().enumerate() {
                        let e = pop.propensity(m, q);
                        let w = (1.0 - e) / e * pop.weight(m);
                        gram += &mo.s_xx * w;
                        rhs += mo.s_xy.column(q) * w;
                    }
                    solve(gram, rhs, "population pooled covariate matrix")
                })
                .collect::<Result<Vec<_>>>()?;
            Some(AdjustmentCoefficients::PooledPerArm(betas))
        }
        VarianceSource::Eta => {
            let mut gram = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for (m, mo) in moments.iter().enumerate() {
                for q in 0..qq {
                    let w = pop.weight(m) / pop.propensity(m, q);
                    gram += &mo.s_xx * w;
                    rhs += mo.s_xy.column(q) * w;
                }
            }
            Some(AdjustmentCoefficients::Conditional(solve(
                gram,
                rhs,
                "population conditional covariate matrix",
            )?))
        }
        VarianceSource::Mu => {
            let betas = moments
                .iter()
                .map(|mo| {
                    (0..qq)
                        .map(|q| {
                            solve(
                                mo.s_xx.clone(),
                                mo.s_xy.column(q).into_owned(),
                                "population stratum covariate matrix",
                            )
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Some(AdjustmentCoefficients::StratumSpecific(betas))
        }
    })
}

/// Row-major `n x Q` table of `Y_i(q) - Ybar_[m](q) - (X_i - Xbar_[m])^T c`,
/// or of `Y_i(q)` itself when `coeffs` is `None`.
pub fn population_residuals(
    pop: &PotentialPopulation,
    moments: &[StratumMoments],
    coeffs: Option<&AdjustmentCoefficients>,
) -> Vec<f64> {
    let qq = pop.arms();
    let mut out = Vec::with_capacity(pop.units() * qq);
    for i in 0..pop.units() {
        let m = pop.stratum_of(i);
        for q in 0..qq {
            let y = pop.outcome(i, q);
            out.push(match coeffs {
                None => y,
                Some(c) => {
                    let mo = &moments[m];
                    let adj: f64 = pop
                        .covariates(i)
                        .iter()
                        .zip(mo.x_mean.iter())
                        .zip(c.get(m, q).iter())
                        .map(|((x, xm), b)| (x - xm) * b)
                        .sum();
                    y - mo.y_mean[q] - adj
                }
            });
        }
    }
    out
}

/// `V_n(R) = 2^{-2(K-1)} sum_m pi sum_q e^{-1} S^2_[m]R(q) d_q d_q^T` and
/// `Vtilde_n(R) = V_n(R) - sum_m pi S^2_[m]tau(R)`.
pub fn oracle_moments(
    pop: &PotentialPopulation,
    design: &FactorialDesign,
    source: VarianceSource,
) -> Result<OracleMoments> {
    pop.check_design(design)?;
    let moments = (0..pop.strata())
        .map(|m| stratum_moments(pop, m))
        .collect::<Result<Vec<_>>>()?;
    let coefficients = population_coefficients(pop, &moments, source)?;
    let resid = population_residuals(pop, &moments, coefficients.as_ref());
    let qq = pop.arms();

    let g = design.matrix() * design.scale();
    let mut per_arm = vec![0.0; qq];
    let mut s_rr = Vec::with_capacity(pop.strata());
    let mut s2_tau = Vec::with_capacity(pop.strata());
    let mut tau_part = DMatrix::zeros(design.effects(), design.effects());
    for m in 0..pop.strata() {
        let units = pop.members(m);
        let nm = units.len() as f64;
        let mut mean = DVector::zeros(qq);
        for &i in units {
            mean += DVector::from_row_slice(&resid[i * qq..(i + 1) * qq]);
        }
        mean /= nm;
        let mut s = DMatrix::zeros(qq, qq);
        for &i in units {
            let d = DVector::from_row_slice(&resid[i * qq..(i + 1) * qq]) - &mean;
            s += &d * d.transpose();
        }
        s /= nm - 1.0;
        for (q, w) in per_arm.iter_mut().enumerate() {
            *w += pop.weight(m) * s[(q, q)] / pop.propensity(m, q);
        }
        let st = SymMatrix::new(&g * &s * g.transpose());
        tau_part += st.as_matrix() * pop.weight(m);
        s2_tau.push(st);
        s_rr.push(s);
    }
    let v = contrast_quadratic(design, &per_arm);
    let v_tilde = SymMatrix::new(v.as_matrix() - tau_part);
    Ok(OracleMoments {
        source,
        v,
        v_tilde,
        s2_tau,
        s_rr,
        coefficients,
    })
}

/// Covariance of the stratified arm-mean vector `(sum_m pi Ybar_[m](q))_q`
/// under stratified complete randomization:
/// `sum_m pi^2 [diag(S^2_[m](q) / n_[m]q) - S_[m]YY / n_[m]]`.
pub fn arm_mean_covariance(pop: &PotentialPopulation) -> Result<DMatrix<f64>> {
    let qq = pop.arms();
    let mut out = DMatrix::zeros(qq, qq);
    for m in 0..pop.strata() {
        let mo = stratum_moments(pop, m)?;
        let pi2 = pop.weight(m).powi(2);
        let mut block = -&mo.s_yy / mo.size as f64;
        for q in 0..qq {
            block[(q, q)] += mo.s_yy[(q, q)] / pop.arm_counts(m)[q] as f64;
        }
        out += block * pi2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{generate_scenario, ScenarioConfig};

    fn toy(y: Vec<f64>) -> (FactorialDesign, PotentialPopulation) {
        let d = FactorialDesign::new(1).unwrap();
        let pop = PotentialPopulation::new(
            &d,
            vec!["a".into()],
            vec![0; 4],
            vec![vec![2, 2]],
            y,
            vec![1.0, -1.0, 2.0, -2.0],
            vec!["x".into()],
        )
        .unwrap();
        (d, pop)
    }

    #[test]
    fn four_unit_stratum_by_hand() {
        // Y(1) = 1,2,3,4 (S^2 = 5/3); Y(2) = 0,0,0,4 (mean 1, S^2 = 4)
        let (d, pop) = toy(vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 4.0]);
        let o = oracle_moments(&pop, &d, VarianceSource::Y).unwrap();
        assert!((o.s2(0, 0) - 5.0 / 3.0).abs() < 1e-12);
        assert!((o.s2(0, 1) - 4.0).abs() < 1e-12);
        // covariance: deviations (-1.5,-.5,.5,1.5) and (-1,-1,-1,3) -> 6/3
        assert!((o.s_rr[0][(0, 1)] - 2.0).abs() < 1e-12);
        // V = (5/3)/0.5 + 4/0.5; S^2_tau = S11 + S22 - 2 S12
        let v = 2.0 * 5.0 / 3.0 + 8.0;
        assert!((o.v.as_matrix()[(0, 0)] - v).abs() < 1e-12);
        let s2tau = 5.0 / 3.0 + 4.0 - 4.0;
        assert!((o.v_tilde.as_matrix()[(0, 0)] - (v - s2tau)).abs() < 1e-12);
    }

    #[test]
    fn additive_effects_close_the_gap() {
        let (d, pop) = toy(vec![1.0, 0.0, 2.0, 1.0, 3.0, 2.0, 4.0, 3.0]);
        let o = oracle_moments(&pop, &d, VarianceSource::Y).unwrap();
        assert!(o.s2_tau[0].as_matrix()[(0, 0)].abs() < 1e-12);
        assert!((o.v.as_matrix() - o.v_tilde.as_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn residual_means_vanish_and_gap_is_psd() {
        let pop = generate_scenario(&ScenarioConfig::new(3, 11).unwrap()).unwrap();
        let d = FactorialDesign::new(2).unwrap();
        for source in [
            VarianceSource::Y,
            VarianceSource::Epsilon,
            VarianceSource::Eta,
            VarianceSource::Mu,
        ] {
            let o = oracle_moments(&pop, &d, source).unwrap();
            let gap = o.v.as_matrix() - o.v_tilde.as_matrix();
            let eig = SymMatrix::new(gap).into_inner().symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l > -1e-9), "{source:?}: {eig}");
            if source != VarianceSource::Y {
                let moments: Vec<_> = (0..pop.strata())
                    .map(|m| stratum_moments(&pop, m).unwrap())
                    .collect();
                let r = population_residuals(&pop, &moments, o.coefficients.as_ref());
                for m in 0..pop.strata() {
                    for q in 0..4 {
                        let s: f64 = pop.members(m).iter().map(|&i| r[i * 4 + q]).sum();
                        assert!(s.abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn stratum_specific_projection_is_best() {
        let pop = generate_scenario(&ScenarioConfig::new(3, 2).unwrap()).unwrap();
        let d = FactorialDesign::new(2).unwrap();
        let v = |s| oracle_moments(&pop, &d, s).unwrap().v.into_inner();
        let (y, mu, eps) = (
            v(VarianceSource::Y),
            v(VarianceSource::Mu),
            v(VarianceSource::Epsilon),
        );
        for f in 0..3 {
            assert!(mu[(f, f)] <= eps[(f, f)] + 1e-12);
            assert!(mu[(f, f)] <= y[(f, f)] + 1e-12);
        }
    }
}
