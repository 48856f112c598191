use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::population::PotentialPopulation;
use crate::dataset::summarize;
use crate::design::FactorialDesign;
use crate::error::{Error, Result};
use crate::estimators::{self, Method};
use crate::inference::{wald_intervals, wald_region};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloConfig {
    pub methods: Vec<Method>,
    pub reps: usize,
    pub alpha: f64,
    pub master_seed: u64,
    /// One-based effects of the joint region; the main effects when `None`.
    pub region_effects: Option<Vec<usize>>,
}

impl MonteCarloConfig {
    pub fn new(methods: Vec<Method>, reps: usize, master_seed: u64) -> Self {
        MonteCarloConfig {
            methods,
            reps,
            alpha: 0.05,
            master_seed,
            region_effects: None,
        }
    }
}

/// What one method produced in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodDraw {
    pub tau_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub covered: Vec<bool>,
    pub ci_length: Vec<f64>,
    /// Area of the joint region (volume when it is not two-dimensional).
    pub region_size: f64,
    pub region_covers: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    /// Parallel to the run's method list.
    pub draws: Vec<std::result::Result<MethodDraw, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectMetrics {
    pub method: Method,
    /// One-based.
    pub effect: usize,
    pub label: String,
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub rmse_ratio: Option<f64>,
    pub cp: f64,
    pub ci_length: f64,
    pub length_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub available: bool,
    pub reason: Option<String>,
    pub mean_region_size: Option<f64>,
    pub region_ratio: Option<f64>,
    pub region_cp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub reps: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub region_effects: Vec<usize>,
    pub truth: Vec<f64>,
    pub effects: Vec<EffectMetrics>,
    pub methods: Vec<MethodSummary>,
}

impl MetricsTable {
    pub fn get(&self, method: Method, effect: usize) -> Option<&EffectMetrics> {
        self.effects
            .iter()
            .find(|e| e.method == method && e.effect == effect)
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub methods: Vec<Method>,
    pub replications: Vec<Replication>,
    pub metrics: MetricsTable,
}

/// `unadj` first, then the requested methods in their canonical order.
fn normalized_methods(requested: &[Method]) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| *m == Method::Unadj || requested.contains(m))
        .collect()
}

fn region_effects(cfg: &MonteCarloConfig, design: &FactorialDesign) -> Vec<usize> {
    cfg.region_effects
        .clone()
        .unwrap_or_else(|| (1..=design.factors()).collect())
}

fn check_config(
    cfg: &MonteCarloConfig,
    pop: &PotentialPopulation,
    design: &FactorialDesign,
) -> Result<()> {
    pop.check_design(design)?;
    if cfg.reps == 0 {
        return Err(Error::Domain("reps must be at least 1".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    let effects = region_effects(cfg, design);
    if effects.is_empty() || effects.iter().any(|&f| f == 0 || f > design.effects()) {
        return Err(Error::Domain(format!(
            "region effects {effects:?} outside 1..={}",
            design.effects()
        )));
    }
    Ok(())
}

/// Reason a method cannot run on any assignment of this population.
fn inapplicable(method: Method, pop: &PotentialPopulation) -> Option<String> {
    let min_cell = (0..pop.strata())
        .flat_map(|m| pop.arm_counts(m).iter().copied())
        .min()
        .unwrap_or(0);
    let p = pop.covariate_dim();
    match method {
        Method::Inter if min_cell < p + 2 => Some(format!(
            "inter requires n_[m]q \u{2265} p+2 = {}; smallest cell has {min_cell}",
            p + 2
        )),
        _ if min_cell < 2 => Some(format!(
            "variance estimation needs n_[m]q >= 2; smallest cell has {min_cell}"
        )),
        _ => None,
    }
}

fn draw_method(
    method: Method,
    summ: &crate::dataset::StratumSummaries,
    design: &FactorialDesign,
    truth: &[f64],
    alpha: f64,
    effects: &[usize],
) -> Result<MethodDraw> {
    let est = estimators::estimate_from_summaries(method, summ, design)?;
    let intervals = wald_intervals(&est, alpha)?;
    let region = wald_region(&est, alpha, Some(effects))?;
    let center: Vec<f64> = effects.iter().map(|&f| truth[f - 1]).collect();
    Ok(MethodDraw {
        tau_hat: est.tau_hat.iter().copied().collect(),
        se: (0..est.effects())
            .map(|f| est.vcov[(f, f)].sqrt())
            .collect(),
        covered: intervals
            .iter()
            .map(|iv| iv.lo <= truth[iv.effect - 1] && truth[iv.effect - 1] <= iv.hi)
            .collect(),
        ci_length: intervals.iter().map(|iv| iv.hi - iv.lo).collect(),
        region_size: region
            .area
            .unwrap_or_else(|| region.log_volume.map_or(f64::NAN, f64::exp)),
        region_covers: region.contains(&center),
    })
}

/// Runs replication `index`: draws the assignment from
/// `derive_seed(master_seed, index)` and evaluates every method on it.
pub fn replicate(
    pop: &PotentialPopulation,
    design: &FactorialDesign,
    cfg: &MonteCarloConfig,
    methods: &[Method],
    index: usize,
) -> Result<Replication> {
    let seed = seeding::derive_seed(cfg.master_seed, index as u64);
    let data = pop.draw_observed(design, seed)?;
    let summ = summarize(&data);
    let truth: Vec<f64> = pop.tau(design).iter().copied().collect();
    let effects = region_effects(cfg, design);
    let draws = methods
        .iter()
        .map(|&m| {
            draw_method(m, &summ, design, &truth, cfg.alpha, &effects).map_err(|e| e.to_string())
        })
        .collect();
    Ok(Replication { index, seed, draws })
}

/// Monte Carlo study over random stratified assignments of a fixed population.
///
/// Replications run in parallel on the current rayon pool and are reduced in
/// index order, so the table does not depend on the thread count.
pub fn run_monte_carlo(
    pop: &PotentialPopulation,
    design: &FactorialDesign,
    cfg: &MonteCarloConfig,
) -> Result<MonteCarloRun> {
    check_config(cfg, pop, design)?;
    let all = normalized_methods(&cfg.methods);
    let skip: Vec<Option<String>> = all.iter().map(|&m| inapplicable(m, pop)).collect();
    let active: Vec<Method> = all
        .iter()
        .zip(&skip)
        .filter(|(_, s)| s.is_none())
        .map(|(m, _)| *m)
        .collect();

    let replications = (0..cfg.reps)
        .into_par_iter()
        .map(|r| replicate(pop, design, cfg, &active, r))
        .collect::<Result<Vec<_>>>()?;

    let truth: Vec<f64> = pop.tau(design).iter().copied().collect();
    let labels = design.effect_labels();
    let reps = cfg.reps as f64;
    let f_count = design.effects();

    let mut effects = Vec::new();
    let mut summaries = Vec::new();
    let mut baseline: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    for (k, &method) in all.iter().enumerate() {
        let column = active.iter().position(|&m| m == method);
        let failure = match (&skip[k], column) {
            (Some(reason), _) => Some(reason.clone()),
            (None, Some(c)) => replications.iter().find_map(|r| {
                r.draws[c]
                    .as_ref()
                    .err()
                    .map(|e| format!("failed in replication {}: {e}", r.index))
            }),
            (None, None) => Some("not run".into()),
        };
        if let Some(reason) = failure {
            summaries.push(MethodSummary {
                method,
                available: false,
                reason: Some(reason),
                mean_region_size: None,
                region_ratio: None,
                region_cp: None,
            });
            continue;
        }
        let c = column.expect("active method");
        let draws: Vec<&MethodDraw> = replications
            .iter()
            .map(|r| r.draws[c].as_ref().unwrap())
            .collect();

        let mut rmse_v = vec![0.0; f_count];
        let mut len_v = vec![0.0; f_count];
        for f in 0..f_count {
            let mean = draws.iter().map(|d| d.tau_hat[f]).sum::<f64>() / reps;
            let sd = (draws
                .iter()
                .map(|d| (d.tau_hat[f] - mean).powi(2))
                .sum::<f64>()
                / reps)
                .sqrt();
            let bias = mean - truth[f];
            let rmse = (bias * bias + sd * sd).sqrt();
            let cp = draws.iter().filter(|d| d.covered[f]).count() as f64 / reps;
            let len = draws.iter().map(|d| d.ci_length[f]).sum::<f64>() / reps;
            rmse_v[f] = rmse;
            len_v[f] = len;
            effects.push(EffectMetrics {
                method,
                effect: f + 1,
                label: labels[f].clone(),
                truth: truth[f],
                bias,
                sd,
                rmse,
                rmse_ratio: baseline
                    .as_ref()
                    .map(|b| rmse / b.0[f])
                    .or((method == Method::Unadj).then_some(1.0)),
                cp,
                ci_length: len,
                length_ratio: baseline
                    .as_ref()
                    .map(|b| len / b.1[f])
                    .or((method == Method::Unadj).then_some(1.0)),
            });
        }
        let size = draws.iter().map(|d| d.region_size).sum::<f64>() / reps;
        let ratio = baseline
            .as_ref()
            .map(|b| size / b.2)
            .or((method == Method::Unadj).then_some(1.0));
        summaries.push(MethodSummary {
            method,
            available: true,
            reason: None,
            mean_region_size: Some(size),
            region_ratio: ratio,
            region_cp: Some(draws.iter().filter(|d| d.region_covers).count() as f64 / reps),
        });
        if method == Method::Unadj {
            baseline = Some((rmse_v, len_v, size));
        }
    }

    Ok(MonteCarloRun {
        methods: active,
        metrics: MetricsTable {
            reps: cfg.reps,
            master_seed: cfg.master_seed,
            alpha: cfg.alpha,
            region_effects: region_effects(cfg, design),
            truth,
            effects,
            methods: summaries,
        },
        replications,
    })
}

/// Writes per-replication estimates as CSV: `rep,seed,method,<effect labels>`.
pub fn write_draws<W: Write>(run: &MonteCarloRun, labels: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["rep".to_string(), "seed".into(), "method".into()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for r in &run.replications {
        for (m, draw) in run.methods.iter().zip(&r.draws) {
            if let Ok(d) = draw {
                let mut row = vec![(r.index + 1).to_string(), r.seed.to_string(), m.to_string()];
                row.extend(d.tau_hat.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{generate_scenario, ScenarioConfig};

    fn small() -> (PotentialPopulation, FactorialDesign) {
        let pop = generate_scenario(&ScenarioConfig::new(1, 4).unwrap().with_size(Some(4), None))
            .unwrap();
        (pop, FactorialDesign::new(2).unwrap())
    }

    #[test]
    fn single_replication_has_zero_sd() {
        let (pop, d) = small();
        let run =
            run_monte_carlo(&pop, &d, &MonteCarloConfig::new(vec![Method::Adj], 1, 9)).unwrap();
        for e in &run.metrics.effects {
            assert_eq!(e.sd, 0.0);
            assert_eq!(e.rmse, e.bias.abs());
        }
    }

    #[test]
    fn unadj_ratios_are_one_and_rmse_decomposes() {
        let (pop, d) = small();
        let run =
            run_monte_carlo(&pop, &d, &MonteCarloConfig::new(vec![Method::Cond], 50, 9)).unwrap();
        for e in &run.metrics.effects {
            if e.method == Method::Unadj {
                assert_eq!(e.rmse_ratio, Some(1.0));
                assert_eq!(e.length_ratio, Some(1.0));
            }
            assert!((e.rmse.powi(2) - e.bias.powi(2) - e.sd.powi(2)).abs() < 1e-12);
        }
        assert_eq!(
            run.metrics.summary(Method::Unadj).unwrap().region_ratio,
            Some(1.0)
        );
    }

    #[test]
    fn inter_marked_absent_on_small_cells() {
        let (pop, d) = small();
        let run = run_monte_carlo(
            &pop,
            &d,
            &MonteCarloConfig::new(vec![Method::Adj, Method::Inter], 5, 1),
        )
        .unwrap();
        let s = run.metrics.summary(Method::Inter).unwrap();
        assert!(!s.available);
        assert!(s.reason.as_ref().unwrap().contains("p+2"));
        assert!(run.metrics.summary(Method::Adj).unwrap().available);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let (pop, d) = small();
        let cfg = MonteCarloConfig::new(vec![Method::Adj, Method::Cond], 40, 123);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one.install(|| run_monte_carlo(&pop, &d, &cfg)).unwrap();
        let b = four.install(|| run_monte_carlo(&pop, &d, &cfg)).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn replications_rerun_individually() {
        let (pop, d) = small();
        let cfg = MonteCarloConfig::new(vec![Method::Adj], 10, 5);
        let run = run_monte_carlo(&pop, &d, &cfg).unwrap();
        let again = replicate(&pop, &d, &cfg, &run.methods, 7).unwrap();
        assert_eq!(again, run.replications[7]);
    }

    #[test]
    fn draws_csv_has_row_per_method_and_rep() {
        let (pop, d) = small();
        let run =
            run_monte_carlo(&pop, &d, &MonteCarloConfig::new(vec![Method::Adj], 3, 5)).unwrap();
        let mut buf = Vec::new();
        write_draws(&run, &d.effect_labels(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        assert!(text.starts_with("rep,seed,method,f1,f2,f1:f2"));
    }

    #[test]
    fn rejects_bad_config() {
        let (pop, d) = small();
        assert!(run_monte_carlo(&pop, &d, &MonteCarloConfig::new(vec![], 0, 1)).is_err());
        let mut cfg = MonteCarloConfig::new(vec![], 2, 1);
        cfg.alpha = 1.5;
        assert!(run_monte_carlo(&pop, &d, &cfg).is_err());
    }
}
