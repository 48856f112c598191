use nalgebra::{DMatrix, DVector};

use super::population::PotentialPopulation;
use crate::dataset::summarize;
use crate::design::{arrangements, FactorialDesign};
use crate::error::{Error, Result};
use crate::estimators::{self, Method};

/// Default cap on the number of assignments visited.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Exact randomization moments of a vector statistic: every admissible
/// assignment is equally likely, so these are plain averages over all of them.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    pub assignments: u128,
    pub mean: DVector<f64>,
    /// Covariance with divisor equal to the number of assignments.
    pub cov: DMatrix<f64>,
}

/// Rearranges `v` into the next lexicographic permutation; false once the
/// last one has been reached. Repeated values are handled, so starting from
/// sorted order every distinct arrangement is produced once.
fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Number of stratified assignments `prod_m n_[m]! / prod_q n_[m]q!`.
pub fn assignment_count(pop: &PotentialPopulation) -> u128 {
    (0..pop.strata()).fold(1u128, |acc, m| {
        acc.saturating_mul(arrangements(pop.arm_counts(m)))
    })
}

/// Calls `visit` with the zero-based arm of every unit, once per admissible
/// assignment. Refuses when the count exceeds `budget`.
pub fn for_each_assignment(
    pop: &PotentialPopulation,
    budget: u128,
    mut visit: impl FnMut(&[usize]) -> Result<()>,
) -> Result<u128> {
    let count = assignment_count(pop);
    if count > budget {
        return Err(Error::BudgetExceeded { count, budget });
    }
    let start: Vec<Vec<usize>> = (0..pop.strata())
        .map(|m| {
            pop.arm_counts(m)
                .iter()
                .enumerate()
                .flat_map(|(q, &c)| std::iter::repeat_n(q, c))
                .collect()
        })
        .collect();
    let mut current = start.clone();
    let mut arm_of = vec![0; pop.units()];
    let write = |arm_of: &mut [usize], m: usize, labels: &[usize]| {
        for (&i, &q) in pop.members(m).iter().zip(labels) {
            arm_of[i] = q;
        }
    };
    for (m, labels) in current.iter().enumerate() {
        write(&mut arm_of, m, labels);
    }
    let mut visited = 0u128;
    loop {
        visit(&arm_of)?;
        visited += 1;
        // odometer over strata, last stratum fastest
        let mut m = pop.strata();
        loop {
            if m == 0 {
                debug_assert_eq!(visited, count);
                return Ok(visited);
            }
            m -= 1;
            if next_permutation(&mut current[m]) {
                write(&mut arm_of, m, &current[m]);
                break;
            }
            current[m].clone_from(&start[m]);
            write(&mut arm_of, m, &current[m]);
        }
    }
}

/// Exact mean and covariance of `stat` over all assignments.
pub fn enumerate_statistic(
    pop: &PotentialPopulation,
    budget: u128,
    mut stat: impl FnMut(&[usize]) -> Result<DVector<f64>>,
) -> Result<ExactMoments> {
    let mut values: Vec<DVector<f64>> = Vec::new();
    let count = for_each_assignment(pop, budget, |a| {
        values.push(stat(a)?);
        Ok(())
    })?;
    let d = values.first().map_or(0, |v| v.len());
    let n = values.len() as f64;
    let mean = values.iter().fold(DVector::zeros(d), |acc, v| acc + v) / n;
    let mut cov = DMatrix::zeros(d, d);
    for v in &values {
        let c = v - &mean;
        cov += &c * c.transpose();
    }
    Ok(ExactMoments {
        assignments: count,
        mean,
        cov: cov / n,
    })
}

/// Stratified arm means `(sum_m pi_[m] Ybar_[m](q))_q` under assignment `arm_of`.
pub fn stratified_arm_means(pop: &PotentialPopulation, arm_of: &[usize]) -> DVector<f64> {
    let qq = pop.arms();
    let mut out = DVector::zeros(qq);
    for m in 0..pop.strata() {
        let mut sums = vec![0.0; qq];
        for &i in pop.members(m) {
            sums[arm_of[i]] += pop.outcome(i, arm_of[i]);
        }
        for q in 0..qq {
            out[q] += pop.weight(m) * sums[q] / pop.arm_counts(m)[q] as f64;
        }
    }
    out
}

/// Exact moments of an estimator's point estimate over all assignments.
///
/// `unadj` is evaluated straight from the arm means, so single-unit cells are
/// allowed; the adjusted methods go through the full estimation path.
pub fn enumerate_exact(
    pop: &PotentialPopulation,
    design: &FactorialDesign,
    method: Method,
) -> Result<ExactMoments> {
    pop.check_design(design)?;
    enumerate_statistic(pop, ENUMERATION_BUDGET, |arm_of| match method {
        Method::Unadj => Ok(design.contrast(stratified_arm_means(pop, arm_of).as_slice())),
        _ => {
            let data = pop.observe(design, arm_of)?;
            Ok(estimators::estimate_from_summaries(method, &summarize(&data), design)?.tau_hat)
        }
    })
}
