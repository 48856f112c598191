//! The four 2^2 data-generating processes.
//!
//! Arm `q` of the generating equations is design arm `q`. Since the design
//! lists `(+1, +1)` first while the equations start from `(-1, -1)`, both
//! main effects come out with the opposite sign to the equation labels; the
//! interaction and every variance-based comparison are unaffected.

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::population::{DgpMetadata, PotentialPopulation};
use crate::design::FactorialDesign;
use crate::error::{Error, Result};
use crate::numerics::{sample_mvn_with, SymMatrix};
use crate::seeding::{self, Rng};

const ARMS: usize = 4;
const P: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScenarioConfig {
    /// 1 to 4.
    pub case: u8,
    pub seed: u64,
    /// Number of strata `M`.
    pub strata: usize,
    /// Stratum size `n_[m]`.
    pub stratum_size: usize,
}

impl ScenarioConfig {
    /// Defaults: case 1 has 20 strata of 12, cases 2 and 3 two strata of
    /// 108, case 4 ten strata of 40.
    pub fn new(case: u8, seed: u64) -> Result<Self> {
        let (strata, stratum_size) = match case {
            1 => (20, 12),
            2 | 3 => (2, 108),
            4 => (10, 40),
            _ => {
                return Err(Error::Domain(format!(
                    "unknown case {case}; expected 1, 2, 3 or 4"
                )))
            }
        };
        Ok(ScenarioConfig {
            case,
            seed,
            strata,
            stratum_size,
        })
    }

    pub fn with_size(mut self, strata: Option<usize>, stratum_size: Option<usize>) -> Self {
        if let Some(m) = strata {
            self.strata = m;
        }
        if let Some(n) = stratum_size {
            self.stratum_size = n;
        }
        self
    }
}

/// Propensity ladder of the unequal-propensity case for stratum `m` (one-based) of `big_m`.
pub fn ladder_propensities(m: usize, big_m: usize) -> [f64; 4] {
    let denom = 2.0 * big_m as f64;
    let half = big_m / 2;
    if m <= half {
        let a = m as f64 / denom;
        [a, a, 0.5 - a, 0.5 - a]
    } else {
        let b = (m - half) as f64 / denom;
        [0.5 - b, 0.5 - b, b, b]
    }
}

fn integral_counts(e: &[f64], size: usize, stratum: usize) -> Result<Vec<usize>> {
    e.iter()
        .map(|&e| {
            let c = e * size as f64;
            let r = c.round();
            if (c - r).abs() > 1e-9 || r < 1.0 {
                Err(Error::Domain(format!(
                    "stratum {stratum}: propensity {e} times size {size} is not a positive integer count"
                )))
            } else {
                Ok(r as usize)
            }
        })
        .collect()
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

type Coefficients = Vec<(Vec<f64>, Vec<f64>)>;

/// `beta_11j ~ U(-1, 1)`, `beta_12j ~ U(-0.1, 0.1)` and each later arm adds a
/// fresh uniform of the same range to the previous arm's vector.
fn chained_coefficients(rng: &mut Rng) -> Coefficients {
    let mut b1 = vec![0.0; P];
    let mut b2 = vec![0.0; P];
    (0..ARMS)
        .map(|_| {
            for j in 0..P {
                b1[j] += rng.random_range(-1.0..1.0);
                b2[j] += rng.random_range(-0.1..0.1);
            }
            (b1.clone(), b2.clone())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the frozen population of one of the four cases.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<PotentialPopulation> {
    let design = FactorialDesign::new(2)?;
    let (big_m, size) = (cfg.strata, cfg.stratum_size);
    if big_m == 0 || size == 0 {
        return Err(Error::Domain(
            "need at least one stratum and one unit".into(),
        ));
    }
    let n = big_m * size;
    let mut rng = seeding::rng_from_seed(cfg.seed);

    let propensities: Vec<[f64; 4]> = match cfg.case {
        1..=3 => vec![[0.25; 4]; big_m],
        4 => {
            if big_m % 2 != 0 {
                return Err(Error::Domain(
                    "the propensity ladder needs an even number of strata".into(),
                ));
            }
            (1..=big_m).map(|m| ladder_propensities(m, big_m)).collect()
        }
        c => {
            return Err(Error::Domain(format!(
                "unknown case {c}; expected 1, 2, 3 or 4"
            )))
        }
    };
    let arm_counts = propensities
        .iter()
        .enumerate()
        .map(|(m, e)| integral_counts(e, size, m + 1))
        .collect::<Result<Vec<_>>>()?;

    let stratum_ids: Vec<String> = (1..=big_m).map(|m| m.to_string()).collect();
    let stratum_of: Vec<usize> = (0..n).map(|i| i / size).collect();
    let mut outcomes = vec![0.0; n * ARMS];
    let mut meta = DgpMetadata {
        case: Some(cfg.case),
        seed: cfg.seed,
        ..DgpMetadata::default()
    };

    let (covariates, names) = if cfg.case == 4 {
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sd = 0.1;
        for i in 0..n {
            let e = &propensities[stratum_of[i]];
            let signal = [
                -10.0 * e[0] * x[i],
                -10.0 * e[1] * x[i],
                10.0 * e[2] * (e[2] * x[i]).exp(),
                10.0 * e[3] * (e[3] * x[i]).exp(),
            ];
            for q in 0..ARMS {
                let z: f64 = StandardNormal.sample(&mut rng);
                outcomes[i * ARMS + q] = signal[q] + sd * z;
            }
        }
        meta.noise_variances = vec![vec![0.01; ARMS]];
        (x, vec!["x1".to_string()])
    } else {
        let groups = if cfg.case == 3 { big_m } else { 1 };
        let coefs: Vec<Coefficients> = (0..groups)
            .map(|_| chained_coefficients(&mut rng))
            .collect();
        let sigma = SymMatrix::new(nalgebra::DMatrix::from_fn(P, P, |j, l| {
            0.5f64.powi((j as i32 - l as i32).abs())
        }));
        let xm = sample_mvn_with(&DVector::zeros(P), &sigma, n, &mut rng)?;
        let x: Vec<f64> = (0..n)
            .flat_map(|i| (0..P).map(move |j| (i, j)))
            .map(|(i, j)| xm[(i, j)])
            .collect();

        // signal first, then noise scaled to a signal-to-noise ratio of 10
        let group_units: Vec<Vec<usize>> = if groups == 1 {
            vec![(0..n).collect()]
        } else {
            (0..big_m)
                .map(|m| (m * size..(m + 1) * size).collect())
                .collect()
        };
        for (g, units) in group_units.iter().enumerate() {
            let mut variances = Vec::with_capacity(ARMS);
            for (q, (b1, b2)) in coefs[g].iter().enumerate() {
                let signal: Vec<f64> = units
                    .iter()
                    .map(|&i| {
                        let xi = &x[i * P..(i + 1) * P];
                        dot(xi, b1) + dot(xi, b2).exp()
                    })
                    .collect();
                let var = population_variance(&signal) / 10.0;
                let sd = var.sqrt();
                for (k, &i) in units.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    outcomes[i * ARMS + q] = signal[k] + sd * z;
                }
                variances.push(var);
            }
            meta.noise_variances.push(variances);
        }
        meta.coefficients = coefs;
        (x, (1..=P).map(|j| format!("x{j}")).collect())
    };

    let mut pop = PotentialPopulation::new(
        &design,
        stratum_ids,
        stratum_of,
        arm_counts,
        outcomes,
        covariates,
        names,
    )?;
    pop.metadata = meta;
    Ok(pop)
}
