use nalgebra::DVector;
use serde::Serialize;

use crate::dataset::ObservedDataset;
use crate::design::{assign_stratum, AssignmentPlan, FactorialDesign, StratumPlan};
use crate::error::{Error, Result};
use crate::seeding::{self, Rng};

/// Data-generating metadata kept alongside a generated population.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DgpMetadata {
    pub case: Option<u8>,
    pub seed: u64,
    /// `(beta_q1, beta_q2)` per arm, one list per coefficient group (a
    /// single group unless coefficients are redrawn per stratum).
    pub coefficients: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Noise variances per group and arm.
    pub noise_variances: Vec<Vec<f64>>,
}

/// A fixed finite population: every potential outcome of every unit,
/// covariates, strata and the per-stratum arm counts of the experiment run
/// on it.
#[derive(Debug, Clone)]
pub struct PotentialPopulation {
    factors: usize,
    arms: usize,
    stratum_ids: Vec<String>,
    /// Units of each stratum, in population order.
    members: Vec<Vec<usize>>,
    stratum_of: Vec<usize>,
    arm_counts: Vec<Vec<usize>>,
    /// Row-major `n x Q`.
    outcomes: Vec<f64>,
    /// Row-major `n x p`.
    covariates: Vec<f64>,
    covariate_names: Vec<String>,
    pub metadata: DgpMetadata,
}

impl PotentialPopulation {
    /// `outcomes` is row-major `n x 2^K`, `covariates` row-major `n x p`.
    pub fn new(
        design: &FactorialDesign,
        stratum_ids: Vec<String>,
        stratum_of: Vec<usize>,
        arm_counts: Vec<Vec<usize>>,
        outcomes: Vec<f64>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let arms = design.arms();
        let n = stratum_of.len();
        let p = covariate_names.len();
        if outcomes.len() != n * arms || covariates.len() != n * p {
            return Err(Error::Validation(
                "science table dimensions disagree".into(),
            ));
        }
        if arm_counts.len() != stratum_ids.len() {
            return Err(Error::Validation(
                "one arm-count row is needed per stratum".into(),
            ));
        }
        if !outcomes.iter().chain(&covariates).all(|v| v.is_finite()) {
            return Err(Error::Validation(
                "potential outcomes and covariates must be finite".into(),
            ));
        }
        let mut members = vec![Vec::new(); stratum_ids.len()];
        for (i, &m) in stratum_of.iter().enumerate() {
            members
                .get_mut(m)
                .ok_or_else(|| {
                    Error::Validation(format!("unit {} has unknown stratum index {m}", i + 1))
                })?
                .push(i);
        }
        for (m, counts) in arm_counts.iter().enumerate() {
            let total: usize = counts.iter().sum();
            if counts.len() != arms || total != members[m].len() || counts.contains(&0) {
                return Err(Error::Validation(format!(
                    "stratum `{}`: arm counts {counts:?} do not split its {} units over {arms} non-empty arms",
                    stratum_ids[m],
                    members[m].len()
                )));
            }
        }
        Ok(PotentialPopulation {
            factors: design.factors(),
            arms,
            stratum_ids,
            members,
            stratum_of,
            arm_counts,
            outcomes,
            covariates,
            covariate_names,
            metadata: DgpMetadata::default(),
        })
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn units(&self) -> usize {
        self.stratum_of.len()
    }

    pub fn strata(&self) -> usize {
        self.stratum_ids.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn stratum_ids(&self) -> &[String] {
        &self.stratum_ids
    }

    pub fn members(&self, stratum: usize) -> &[usize] {
        &self.members[stratum]
    }

    pub fn stratum_of(&self, unit: usize) -> usize {
        self.stratum_of[unit]
    }

    pub fn arm_counts(&self, stratum: usize) -> &[usize] {
        &self.arm_counts[stratum]
    }

    pub fn weight(&self, stratum: usize) -> f64 {
        self.members[stratum].len() as f64 / self.units() as f64
    }

    pub fn propensity(&self, stratum: usize, arm: usize) -> f64 {
        self.arm_counts[stratum][arm] as f64 / self.members[stratum].len() as f64
    }

    pub fn outcome(&self, unit: usize, arm: usize) -> f64 {
        self.outcomes[unit * self.arms + arm]
    }

    pub fn outcomes(&self, unit: usize) -> &[f64] {
        &self.outcomes[unit * self.arms..(unit + 1) * self.arms]
    }

    pub fn covariates(&self, unit: usize) -> &[f64] {
        let p = self.covariate_dim();
        &self.covariates[unit * p..(unit + 1) * p]
    }

    pub fn check_design(&self, design: &FactorialDesign) -> Result<()> {
        if design.factors() != self.factors {
            return Err(Error::Validation(format!(
                "population has K = {} but the design has K = {}",
                self.factors,
                design.factors()
            )));
        }
        Ok(())
    }

    /// `Ybar_[m](q)` over all units of stratum `m`.
    pub fn stratum_mean(&self, stratum: usize, arm: usize) -> f64 {
        let units = &self.members[stratum];
        units.iter().map(|&i| self.outcome(i, arm)).sum::<f64>() / units.len() as f64
    }

    /// `tau_[m] = 2^{-(K-1)} G Ybar_[m]`.
    pub fn tau_strata(&self, design: &FactorialDesign) -> Vec<DVector<f64>> {
        (0..self.strata())
            .map(|m| {
                let means: Vec<f64> = (0..self.arms).map(|q| self.stratum_mean(m, q)).collect();
                design.contrast(&means)
            })
            .collect()
    }

    /// `tau = sum_m pi_[m] tau_[m]`.
    pub fn tau(&self, design: &FactorialDesign) -> DVector<f64> {
        self.tau_strata(design)
            .iter()
            .enumerate()
            .fold(DVector::zeros(design.effects()), |acc, (m, t)| {
                acc + t * self.weight(m)
            })
    }

    /// The assignment plan of the experiment run on this population.
    pub fn plan(&self, seed: u64) -> AssignmentPlan {
        AssignmentPlan {
            strata: (0..self.strata())
                .map(|m| StratumPlan {
                    id: self.stratum_ids[m].clone(),
                    size: self.members[m].len(),
                    arm_counts: self.arm_counts[m].clone(),
                })
                .collect(),
            seed,
        }
    }

    /// Draws a complete stratified randomization: one zero-based arm per unit.
    pub fn draw_assignment(&self, rng: &mut Rng) -> Vec<usize> {
        let mut arm_of = vec![0; self.units()];
        for (m, units) in self.members.iter().enumerate() {
            for (&i, q) in units.iter().zip(assign_stratum(&self.arm_counts[m], rng)) {
                arm_of[i] = q;
            }
        }
        arm_of
    }

    /// The dataset revealed by assignment `arm_of`.
    pub fn observe(&self, design: &FactorialDesign, arm_of: &[usize]) -> Result<ObservedDataset> {
        self.check_design(design)?;
        if arm_of.len() != self.units() {
            return Err(Error::Validation(
                "assignment length differs from population size".into(),
            ));
        }
        let y = arm_of
            .iter()
            .enumerate()
            .map(|(i, &q)| self.outcome(i, q))
            .collect();
        ObservedDataset::from_indexed(
            design,
            self.stratum_ids.clone(),
            self.stratum_of.clone(),
            arm_of.to_vec(),
            y,
            self.covariates.clone(),
            self.covariate_names.clone(),
        )
    }

    /// Draws an assignment from `seed` and returns the observed dataset.
    pub fn draw_observed(&self, design: &FactorialDesign, seed: u64) -> Result<ObservedDataset> {
        let arm_of = self.draw_assignment(&mut seeding::rng_from_seed(seed));
        self.observe(design, &arm_of)
    }
}
