//! Observed experimental data and the per stratum/arm summaries every
//! estimator is built from.

use std::collections::HashMap;
use std::io::Read;

use nalgebra::{DMatrix, DVector};

use crate::design::FactorialDesign;
use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Column names used by [`ingest_csv`].
///
/// When the arm column is absent the reader looks for `K` signed-level
/// columns named `<level_prefix>1 .. <level_prefix>K` holding `+1`/`-1`.
/// With `covariates: None`, every other column is a covariate.
#[derive(Debug, Clone)]
pub struct Schema {
    pub stratum: String,
    pub arm: String,
    pub outcome: String,
    pub level_prefix: String,
    pub covariates: Option<Vec<String>>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            stratum: "stratum".into(),
            arm: "arm".into(),
            outcome: "y".into(),
            level_prefix: "f".into(),
            covariates: None,
        }
    }
}

/// Validated unit-level data. Strata are stored in sorted id order (numeric
/// when every id parses as an integer); units keep their input order.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    factors: usize,
    arms: usize,
    stratum_ids: Vec<String>,
    stratum_of: Vec<usize>,
    arm_of: Vec<usize>,
    outcome: Vec<f64>,
    covariates: Vec<f64>,
    p: usize,
    covariate_names: Vec<String>,
    counts: Vec<Vec<usize>>,
}

fn sort_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap());
    } else {
        ids.sort();
    }
}

impl ObservedDataset {
    /// Builds a dataset from already-indexed columns.
    ///
    /// `stratum_ids[stratum_of[i]]` is the stratum of unit `i`, `arm_of[i]` is
    /// zero-based and `covariates` is row-major `n x p`.
    pub fn from_indexed(
        design: &FactorialDesign,
        stratum_ids: Vec<String>,
        stratum_of: Vec<usize>,
        arm_of: Vec<usize>,
        outcome: Vec<f64>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcome.len();
        let p = covariate_names.len();
        if stratum_of.len() != n || arm_of.len() != n || covariates.len() != n * p {
            return Err(Error::Validation("column lengths disagree".into()));
        }
        if n == 0 {
            return Err(Error::Validation("dataset has no units".into()));
        }
        let arms = design.arms();
        let m_count = stratum_ids.len();
        let mut counts = vec![vec![0usize; arms]; m_count];
        for i in 0..n {
            let (m, q) = (stratum_of[i], arm_of[i]);
            if m >= m_count {
                return Err(Error::Validation(format!(
                    "unit {} has unknown stratum index {m}",
                    i + 1
                )));
            }
            if q >= arms {
                return Err(Error::Validation(format!(
                    "unit {} has arm {} outside 1..={arms}",
                    i + 1,
                    q + 1
                )));
            }
            counts[m][q] += 1;
        }
        if !outcome
            .iter()
            .chain(covariates.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Validation(
                "outcomes and covariates must be finite".into(),
            ));
        }
        // re-order strata so reductions run in sorted-id order
        let mut sorted = stratum_ids.clone();
        sort_ids(&mut sorted);
        let pos: HashMap<&str, usize> = sorted
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        if pos.len() != sorted.len() {
            return Err(Error::Validation("duplicate stratum ids".into()));
        }
        let remap: Vec<usize> = stratum_ids.iter().map(|s| pos[s.as_str()]).collect();
        let stratum_of: Vec<usize> = stratum_of.iter().map(|&m| remap[m]).collect();
        let mut sorted_counts = vec![Vec::new(); m_count];
        for (old, c) in counts.into_iter().enumerate() {
            sorted_counts[remap[old]] = c;
        }
        for (m, row) in sorted_counts.iter().enumerate() {
            if let Some(q) = row.iter().position(|&c| c == 0) {
                return Err(Error::Validation(format!(
                    "empty stratum-arm cell: stratum `{}`, arm {}",
                    sorted[m],
                    q + 1
                )));
            }
        }
        Ok(ObservedDataset {
            factors: design.factors(),
            arms,
            stratum_ids: sorted,
            stratum_of,
            arm_of,
            outcome,
            covariates,
            p,
            covariate_names,
            counts: sorted_counts,
        })
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn units(&self) -> usize {
        self.outcome.len()
    }

    pub fn strata(&self) -> usize {
        self.stratum_ids.len()
    }

    /// Covariate dimension `p`.
    pub fn covariate_dim(&self) -> usize {
        self.p
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn stratum_ids(&self) -> &[String] {
        &self.stratum_ids
    }

    pub fn stratum_of(&self, unit: usize) -> usize {
        self.stratum_of[unit]
    }

    pub fn arm_of(&self, unit: usize) -> usize {
        self.arm_of[unit]
    }

    pub fn outcome(&self, unit: usize) -> f64 {
        self.outcome[unit]
    }

    pub fn covariates(&self, unit: usize) -> &[f64] {
        &self.covariates[unit * self.p..(unit + 1) * self.p]
    }

    /// `n_[m]q`.
    pub fn count(&self, stratum: usize, arm: usize) -> usize {
        self.counts[stratum][arm]
    }

    pub fn stratum_size(&self, stratum: usize) -> usize {
        self.counts[stratum].iter().sum()
    }

    /// `pi_[m] = n_[m] / n`.
    pub fn weight(&self, stratum: usize) -> f64 {
        self.stratum_size(stratum) as f64 / self.units() as f64
    }

    /// `e_[m]q = n_[m]q / n_[m]`.
    pub fn propensity(&self, stratum: usize, arm: usize) -> f64 {
        self.count(stratum, arm) as f64 / self.stratum_size(stratum) as f64
    }

    /// Copy with every outcome mapped through `f`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.outcome.iter_mut().for_each(|y| *y = f(*y));
        out
    }

    /// Copy with every covariate row mapped through `f(stratum, row)`.
    pub fn map_covariates(&self, f: impl Fn(usize, &mut [f64])) -> Self {
        let mut out = self.clone();
        for i in 0..out.units() {
            let m = out.stratum_of[i];
            f(m, &mut out.covariates[i * self.p..(i + 1) * self.p]);
        }
        out
    }
}

fn parse_number(text: &str, row: usize, column: &str) -> Result<f64> {
    let t = text.trim();
    let v = t.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
            format!("missing value `{t}`")
        } else {
            format!("expected a number, got `{t}`")
        },
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("missing or non-finite value `{t}`"),
        });
    }
    Ok(v)
}

/// Reads observed data from CSV.
///
/// Rows are numbered from 1 (the first data row after the header) in error
/// messages. Rows with a missing outcome are rejected rather than dropped.
pub fn ingest_csv<R: Read>(
    source: R,
    schema: &Schema,
    design: &FactorialDesign,
) -> Result<ObservedDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::Validation(format!("missing column `{name}`")))
    };
    let stratum_col = require(&schema.stratum)?;
    let outcome_col = require(&schema.outcome)?;

    enum ArmSource {
        Label(usize),
        Levels(Vec<usize>),
    }
    let arm_source = match find(&schema.arm) {
        Some(c) => ArmSource::Label(c),
        None => {
            let cols: Option<Vec<usize>> = (1..=design.factors())
                .map(|k| find(&format!("{}{k}", schema.level_prefix)))
                .collect();
            match cols {
                Some(cols) => ArmSource::Levels(cols),
                None => {
                    return Err(Error::Validation(format!(
                        "missing column `{}` (or level columns {}1..{}{})",
                        schema.arm,
                        schema.level_prefix,
                        schema.level_prefix,
                        design.factors()
                    )))
                }
            }
        }
    };
    let mut used: Vec<usize> = vec![stratum_col, outcome_col];
    match &arm_source {
        ArmSource::Label(c) => used.push(*c),
        ArmSource::Levels(cs) => used.extend(cs),
    }
    let covariate_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| require(n)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|c| !used.contains(c)).collect(),
    };
    let covariate_names: Vec<String> = covariate_cols
        .iter()
        .map(|&c| headers[c].to_string())
        .collect();

    let mut ids: Vec<String> = Vec::new();
    let mut id_index: HashMap<String, usize> = HashMap::new();
    let (mut stratum_of, mut arm_of, mut outcome, mut covariates) =
        (vec![], vec![], vec![], vec![]);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let id = rec[stratum_col].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                column: schema.stratum.clone(),
                message: "empty stratum label".into(),
            });
        }
        let m = *id_index.entry(id.clone()).or_insert_with(|| {
            ids.push(id);
            ids.len() - 1
        });
        let arm = match &arm_source {
            ArmSource::Label(c) => {
                let text = &rec[*c];
                match text.parse::<usize>() {
                    Ok(q) if (1..=design.arms()).contains(&q) => q - 1,
                    _ => {
                        return Err(Error::Parse {
                            row,
                            column: headers[*c].to_string(),
                            message: format!(
                                "unknown arm label `{text}`; expected 1..={}",
                                design.arms()
                            ),
                        })
                    }
                }
            }
            ArmSource::Levels(cols) => {
                let mut levels = Vec::with_capacity(cols.len());
                for &c in cols {
                    let level = match rec[c].trim_start_matches('+').parse::<i8>() {
                        Ok(l @ (1 | -1)) => l,
                        _ => {
                            return Err(Error::Parse {
                                row,
                                column: headers[c].to_string(),
                                message: format!(
                                    "factor level must be +1 or -1, got `{}`",
                                    &rec[c]
                                ),
                            })
                        }
                    };
                    levels.push(level);
                }
                design.arm_of_levels(&levels)?
            }
        };
        stratum_of.push(m);
        arm_of.push(arm);
        outcome.push(parse_number(&rec[outcome_col], row, &schema.outcome)?);
        for &c in &covariate_cols {
            covariates.push(parse_number(&rec[c], row, &headers[c])?);
        }
    }
    ObservedDataset::from_indexed(
        design,
        ids,
        stratum_of,
        arm_of,
        outcome,
        covariates,
        covariate_names,
    )
}

/// Summaries of the arm-`q` units of one stratum.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub n: usize,
    pub y_mean: f64,
    pub x_mean: DVector<f64>,
    /// Sample variance of the outcome; absent when `n < 2`.
    pub y_var: Option<f64>,
    /// Sample covariance of covariates with the outcome; absent when `n < 2`.
    pub xy_cov: Option<DVector<f64>>,
    /// Sample covariance of the covariates; absent when `n < 2`.
    pub xx_cov: Option<SymMatrix>,
}

#[derive(Debug, Clone)]
pub struct StratumSummary {
    pub id: String,
    pub n: usize,
    pub weight: f64,
    pub propensities: Vec<f64>,
    pub cells: Vec<CellSummary>,
    /// Covariate mean over all units of the stratum.
    pub x_mean: DVector<f64>,
    /// Covariate covariance over all units of the stratum (divisor `n - 1`).
    pub xx_cov: Option<SymMatrix>,
}

#[derive(Debug, Clone)]
pub struct StratumSummaries {
    pub factors: usize,
    pub arms: usize,
    pub p: usize,
    pub n: usize,
    pub strata: Vec<StratumSummary>,
    /// Overall covariate mean.
    pub x_mean: DVector<f64>,
}

impl StratumSummaries {
    /// `sum_m pi_[m] Ybar_[m](q)`.
    pub fn stratified_y_mean(&self, arm: usize) -> f64 {
        self.strata
            .iter()
            .map(|s| s.weight * s.cells[arm].y_mean)
            .sum()
    }

    /// `sum_m pi_[m] Xbar_[m](q)`.
    pub fn stratified_x_mean(&self, arm: usize) -> DVector<f64> {
        self.strata.iter().fold(DVector::zeros(self.p), |acc, s| {
            acc + &s.cells[arm].x_mean * s.weight
        })
    }

    /// Smallest `n_[m]q` over all cells.
    pub fn min_cell_size(&self) -> usize {
        self.strata
            .iter()
            .flat_map(|s| s.cells.iter().map(|c| c.n))
            .min()
            .unwrap_or(0)
    }

    /// `(stratum id, arm (one-based), n)` for every cell with fewer than `min` units.
    pub fn cells_below(&self, min: usize) -> Vec<(String, usize, usize)> {
        self.strata
            .iter()
            .flat_map(|s| {
                s.cells
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.n < min)
                    .map(move |(q, c)| (s.id.clone(), q + 1, c.n))
            })
            .collect()
    }
}

/// Computes means and (co)variances per stratum and per stratum-arm cell, all
/// with the `n - 1` divisor. Second moments of a cell are absent when it has
/// a single unit.
pub fn summarize(data: &ObservedDataset) -> StratumSummaries {
    let (mm, qq, p, n) = (
        data.strata(),
        data.arms(),
        data.covariate_dim(),
        data.units(),
    );
    let cell = |m: usize, q: usize| m * qq + q;

    let mut sum_y = vec![0.0; mm * qq];
    let mut sum_x = vec![0.0; mm * qq * p];
    let mut stratum_sum_x = vec![0.0; mm * p];
    for i in 0..n {
        let (m, q) = (data.stratum_of(i), data.arm_of(i));
        let c = cell(m, q);
        sum_y[c] += data.outcome(i);
        for (j, &x) in data.covariates(i).iter().enumerate() {
            sum_x[c * p + j] += x;
            stratum_sum_x[m * p + j] += x;
        }
    }
    let mut mean_y = vec![0.0; mm * qq];
    let mut mean_x = vec![0.0; mm * qq * p];
    let mut stratum_mean_x = vec![0.0; mm * p];
    for m in 0..mm {
        let nm = data.stratum_size(m) as f64;
        for j in 0..p {
            stratum_mean_x[m * p + j] = stratum_sum_x[m * p + j] / nm;
        }
        for q in 0..qq {
            let c = cell(m, q);
            let nc = data.count(m, q) as f64;
            mean_y[c] = sum_y[c] / nc;
            for j in 0..p {
                mean_x[c * p + j] = sum_x[c * p + j] / nc;
            }
        }
    }

    let mut syy = vec![0.0; mm * qq];
    let mut sxy = vec![0.0; mm * qq * p];
    let mut sxx = vec![0.0; mm * qq * p * p];
    let mut stratum_sxx = vec![0.0; mm * p * p];
    let mut dx = vec![0.0; p];
    let mut dxs = vec![0.0; p];
    for i in 0..n {
        let (m, q) = (data.stratum_of(i), data.arm_of(i));
        let c = cell(m, q);
        let dy = data.outcome(i) - mean_y[c];
        syy[c] += dy * dy;
        let x = data.covariates(i);
        for j in 0..p {
            dx[j] = x[j] - mean_x[c * p + j];
            dxs[j] = x[j] - stratum_mean_x[m * p + j];
        }
        for j in 0..p {
            sxy[c * p + j] += dx[j] * dy;
            for l in 0..p {
                sxx[(c * p + j) * p + l] += dx[j] * dx[l];
                stratum_sxx[(m * p + j) * p + l] += dxs[j] * dxs[l];
            }
        }
    }

    let mut strata = Vec::with_capacity(mm);
    for m in 0..mm {
        let nm = data.stratum_size(m);
        let cells = (0..qq)
            .map(|q| {
                let c = cell(m, q);
                let nc = data.count(m, q);
                let second = nc >= 2;
                let div = nc as f64 - 1.0;
                CellSummary {
                    n: nc,
                    y_mean: mean_y[c],
                    x_mean: DVector::from_column_slice(&mean_x[c * p..(c + 1) * p]),
                    y_var: second.then(|| syy[c] / div),
                    xy_cov: second.then(|| {
                        DVector::from_iterator(p, sxy[c * p..(c + 1) * p].iter().map(|v| v / div))
                    }),
                    xx_cov: second.then(|| {
                        SymMatrix::new(
                            DMatrix::from_row_slice(p, p, &sxx[c * p * p..(c + 1) * p * p]) / div,
                        )
                    }),
                }
            })
            .collect();
        strata.push(StratumSummary {
            id: data.stratum_ids()[m].clone(),
            n: nm,
            weight: data.weight(m),
            propensities: (0..qq).map(|q| data.propensity(m, q)).collect(),
            cells,
            x_mean: DVector::from_column_slice(&stratum_mean_x[m * p..(m + 1) * p]),
            xx_cov: (nm >= 2).then(|| {
                SymMatrix::new(
                    DMatrix::from_row_slice(p, p, &stratum_sxx[m * p * p..(m + 1) * p * p])
                        / (nm as f64 - 1.0),
                )
            }),
        });
    }
    let x_mean = strata
        .iter()
        .fold(DVector::zeros(p), |acc, s: &StratumSummary| {
            acc + &s.x_mean * s.weight
        });
    StratumSummaries {
        factors: data.factors(),
        arms: qq,
        p,
        n,
        strata,
        x_mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k1() -> FactorialDesign {
        FactorialDesign::new(1).unwrap()
    }

    #[test]
    fn four_row_file() {
        let text = "stratum,arm,y\n1,1,3\n1,1,5\n1,2,1\n1,2,1\n";
        let d = ingest_csv(text.as_bytes(), &Schema::default(), &k1()).unwrap();
        assert_eq!(d.strata(), 1);
        assert_eq!(d.propensity(0, 0), 0.5);
        assert_eq!(d.propensity(0, 1), 0.5);
        let s = summarize(&d);
        assert_eq!(s.strata[0].cells[0].y_mean, 4.0);
        assert_eq!(s.strata[0].cells[0].y_var, Some(2.0));
        assert_eq!(s.strata[0].cells[1].y_var, Some(0.0));
    }

    #[test]
    fn empty_cell_is_a_validation_error() {
        let d2 = FactorialDesign::new(2).unwrap();
        let text = "stratum,arm,y\n1,1,3\n1,2,5\n1,4,1\n1,4,1\n";
        let err = ingest_csv(text.as_bytes(), &Schema::default(), &d2).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("empty stratum-arm"));
        assert!(err.to_string().contains("arm 3"));
    }

    #[test]
    fn na_covariate_cites_row() {
        let text = "stratum,arm,y,x\n1,1,3,0.5\n1,1,5,NA\n1,2,1,0\n1,2,1,1\n";
        match ingest_csv(text.as_bytes(), &Schema::default(), &k1()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_outcome_and_bad_arm_rejected() {
        let text = "stratum,arm,y\n1,1,\n1,1,5\n1,2,1\n1,2,1\n";
        assert!(matches!(
            ingest_csv(text.as_bytes(), &Schema::default(), &k1()),
            Err(Error::Parse { row: 1, .. })
        ));
        let text = "stratum,arm,y\n1,1,2\n1,3,5\n1,2,1\n";
        let err = ingest_csv(text.as_bytes(), &Schema::default(), &k1()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
        let text = "stratum,y\n1,2\n";
        assert!(matches!(
            ingest_csv(text.as_bytes(), &Schema::default(), &k1()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn level_columns_map_to_design_order() {
        let d2 = FactorialDesign::new(2).unwrap();
        let text = "stratum,f1,f2,y\na,1,1,1\na,1,-1,2\na,-1,1,3\na,-1,-1,4\n";
        let d = ingest_csv(text.as_bytes(), &Schema::default(), &d2).unwrap();
        assert_eq!(
            (0..4).map(|i| d.arm_of(i)).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(d.covariate_dim(), 0);
    }

    #[test]
    fn stratum_covariance_by_hand() {
        // x = {-1, 1, -2, 2}: mean 0, s_xx = (1 + 1 + 4 + 4) / 3
        let text = "stratum,arm,y,x\n1,1,1,-1\n1,1,3,1\n1,2,0,-2\n1,2,4,2\n";
        let s = summarize(&ingest_csv(text.as_bytes(), &Schema::default(), &k1()).unwrap());
        let st = &s.strata[0];
        assert_eq!(st.x_mean[0], 0.0);
        assert!((st.xx_cov.as_ref().unwrap().as_matrix()[(0, 0)] - 10.0 / 3.0).abs() < 1e-15);
        assert_eq!(st.cells[0].xy_cov.as_ref().unwrap()[0], 2.0);
        assert_eq!(st.cells[1].xy_cov.as_ref().unwrap()[0], 8.0);
    }

    #[test]
    fn single_unit_cell_has_no_variance() {
        let text = "stratum,arm,y\n1,1,3\n1,2,5\n1,2,1\n";
        let s = summarize(&ingest_csv(text.as_bytes(), &Schema::default(), &k1()).unwrap());
        assert_eq!(s.strata[0].cells[0].y_mean, 3.0);
        assert!(s.strata[0].cells[0].y_var.is_none());
        assert_eq!(s.cells_below(2), vec![("1".to_string(), 1, 1)]);
    }

    #[test]
    fn numeric_stratum_ids_sort_numerically() {
        let text = "stratum,arm,y\n10,1,1\n10,2,1\n2,1,1\n2,2,1\n";
        let d = ingest_csv(text.as_bytes(), &Schema::default(), &k1()).unwrap();
        assert_eq!(d.stratum_ids(), ["2", "10"]);
        assert_eq!(d.stratum_of(0), 1);
    }
}
