use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::linalg::{cholesky_psd, SymMatrix};
use crate::error::{Error, Result};
use crate::seeding;

/// `n` i.i.d. rows from `N(mean, cov)`, as `L z + mean` with `L` the
/// semidefinite Cholesky factor of `cov` and `z` standard normals from the
/// ziggurat sampler of `rand_distr`, drawn row by row.
pub fn sample_mvn(
    mean: &DVector<f64>,
    cov: &SymMatrix,
    n: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let mut rng = seeding::rng_from_seed(seed);
    sample_mvn_with(mean, cov, n, &mut rng)
}

/// As [`sample_mvn`], drawing from a caller-owned generator.
pub fn sample_mvn_with(
    mean: &DVector<f64>,
    cov: &SymMatrix,
    n: usize,
    rng: &mut seeding::Rng,
) -> Result<DMatrix<f64>> {
    let d = mean.len();
    if cov.order() != d {
        return Err(Error::Domain(format!(
            "covariance has order {}, mean has length {d}",
            cov.order()
        )));
    }
    let l =
        cholesky_psd(cov).map_err(|e| e.in_context("covariance is not positive semi-definite"))?;
    let mut out = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let row = &l * &z + mean;
        for j in 0..d {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}
