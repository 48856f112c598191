#![allow(dead_code)]

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use stratfact_core::seeding;
use stratfact_core::simulation::{assignment_count, PotentialPopulation, ENUMERATION_BUDGET};
use stratfact_core::FactorialDesign;

/// Random small population: one or two factors, one or two strata of at
/// most six units, every arm non-empty, one covariate.
pub fn tiny_population(seed: u64) -> (FactorialDesign, PotentialPopulation) {
    let mut rng = seeding::rng_from_seed(seed);
    let k = rng.random_range(1..=2usize);
    let design = FactorialDesign::new(k).unwrap();
    let q = design.arms();
    let strata = rng.random_range(1..=2usize);
    let mut counts = Vec::new();
    for _ in 0..strata {
        let size = rng.random_range(q.max(2)..=6);
        let mut c = vec![1usize; q];
        for _ in q..size {
            c[rng.random_range(0..q)] += 1;
        }
        counts.push(c);
    }
    let sizes: Vec<usize> = counts.iter().map(|c| c.iter().sum()).collect();
    let n: usize = sizes.iter().sum();
    let stratum_of: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(m, &s)| std::iter::repeat_n(m, s))
        .collect();
    let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let shift: Vec<f64> = (0..q).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut y = Vec::with_capacity(n * q);
    for xi in &x {
        for s in &shift {
            let z: f64 = StandardNormal.sample(&mut rng);
            y.push(s + xi * s + z);
        }
    }
    let pop = PotentialPopulation::new(
        &design,
        (1..=strata).map(|m| m.to_string()).collect(),
        stratum_of,
        counts,
        y,
        x,
        vec!["x1".into()],
    )
    .unwrap();
    assert!(assignment_count(&pop) <= ENUMERATION_BUDGET);
    (design, pop)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
