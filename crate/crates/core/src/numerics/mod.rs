//! Small dense numerical kernel.
//!
//! All linear systems in the crate are small and symmetric positive definite
//! by construction, so a plain Cholesky factorization is the only solver.
//! Distribution quantiles are computed in-crate from the regularized
//! incomplete gamma function, which keeps results identical across builds.

mod linalg;
mod mvn;
mod special;

pub use linalg::{
    cholesky, cholesky_psd, numerical_rank, solve_spd, Cholesky, SymMatrix, PIVOT_TOLERANCE,
};
pub use mvn::{sample_mvn, sample_mvn_with};
pub use special::{
    chi2_cdf, chi2_quantile, erfc, ln_gamma, normal_cdf, normal_pdf, normal_quantile,
    regularized_gamma_p, regularized_gamma_q,
};
