//! Finite-population scenarios, exact randomization moments and the Monte
//! Carlo harness.

mod enumerate;
mod monte_carlo;
mod oracle;
mod population;
mod scenario;

pub use enumerate::{
    assignment_count, enumerate_exact, enumerate_statistic, for_each_assignment,
    stratified_arm_means, ExactMoments, ENUMERATION_BUDGET,
};
pub use monte_carlo::{
    replicate, run_monte_carlo, write_draws, EffectMetrics, MethodDraw, MethodSummary,
    MetricsTable, MonteCarloConfig, MonteCarloRun, Replication,
};
pub use oracle::{
    arm_mean_covariance, oracle_moments, population_coefficients, population_residuals,
    stratum_moments, OracleMoments, StratumMoments,
};
pub use population::{DgpMetadata, PotentialPopulation};
pub use scenario::{generate_scenario, ladder_propensities, ScenarioConfig};
