//! Contrast structure of a 2^K factorial design and stratified complete
//! randomization.
//!
//! Arms follow the level-vector order in which factor K varies fastest and the
//! `+1` level precedes `-1`; for K = 3 this is
//! `(+++), (++-), (+-+), (+--), (-++), ...`. Effect rows list the K main
//! effects first, then interactions by increasing order, ties broken
//! lexicographically on the factor indices.
//!
//! The generating matrix is never stored densely. Arm `q` (zero-based) sets
//! factor `k` (one-based) to `-1` exactly when bit `K - k` of `q` is set, so
//! the sign of effect `f` at arm `q` is the parity of `mask_f & q`.

use std::io::Read;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const MAX_FACTORS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorialDesign {
    k: usize,
    masks: Vec<u32>,
    subsets: Vec<Vec<usize>>,
}

impl FactorialDesign {
    /// Builds the design for `k` two-level factors, `1 <= k <= 16`.
    pub fn new(k: usize) -> Result<Self> {
        if !(1..=MAX_FACTORS).contains(&k) {
            return Err(Error::Domain(format!(
                "number of factors must lie in 1..={MAX_FACTORS}, got {k}"
            )));
        }
        let mut masks = Vec::with_capacity((1 << k) - 1);
        let mut subsets = Vec::with_capacity((1 << k) - 1);
        for order in 1..=k {
            for subset in (1..=k).combinations(order) {
                masks.push(subset.iter().fold(0u32, |m, &f| m | (1 << (k - f))));
                subsets.push(subset);
            }
        }
        Ok(FactorialDesign { k, masks, subsets })
    }

    pub fn factors(&self) -> usize {
        self.k
    }

    /// Number of arms, `2^K`.
    pub fn arms(&self) -> usize {
        1 << self.k
    }

    /// Number of factorial effects, `2^K - 1`.
    pub fn effects(&self) -> usize {
        self.masks.len()
    }

    /// `2^{-(K-1)}`, the factor in front of every contrast.
    pub fn scale(&self) -> f64 {
        1.0 / (1u64 << (self.k - 1)) as f64
    }

    /// Level (+1 or -1) of `factor` (one-based) in `arm` (zero-based).
    pub fn level(&self, arm: usize, factor: usize) -> i8 {
        if (arm >> (self.k - factor)) & 1 == 0 {
            1
        } else {
            -1
        }
    }

    pub fn levels(&self, arm: usize) -> Vec<i8> {
        (1..=self.k).map(|f| self.level(arm, f)).collect()
    }

    /// Entry `g_{f,q}` of the generating matrix (both indices zero-based).
    #[inline]
    pub fn sign(&self, effect: usize, arm: usize) -> f64 {
        if (self.masks[effect] & arm as u32)
            .count_ones()
            .is_multiple_of(2)
        {
            1.0
        } else {
            -1.0
        }
    }

    /// Factors (one-based) whose product defines `effect`.
    pub fn effect_factors(&self, effect: usize) -> &[usize] {
        &self.subsets[effect]
    }

    /// Labels such as `f1`, `f2`, `f1:f2`.
    pub fn effect_label(&self, effect: usize) -> String {
        self.subsets[effect]
            .iter()
            .map(|f| format!("f{f}"))
            .join(":")
    }

    pub fn effect_labels(&self) -> Vec<String> {
        (0..self.effects()).map(|f| self.effect_label(f)).collect()
    }

    /// Row `g_f` as a dense vector.
    pub fn generating_vector(&self, effect: usize) -> DVector<f64> {
        DVector::from_fn(self.arms(), |q, _| self.sign(effect, q))
    }

    /// Column `d_q` as a dense vector.
    pub fn column(&self, arm: usize) -> DVector<f64> {
        DVector::from_fn(self.effects(), |f, _| self.sign(f, arm))
    }

    /// Dense `F x Q` generating matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.effects(), self.arms(), |f, q| self.sign(f, q))
    }

    /// `2^{-(K-1)} sum_q d_q means[q]`.
    pub fn contrast(&self, arm_means: &[f64]) -> DVector<f64> {
        assert_eq!(arm_means.len(), self.arms(), "one mean per arm");
        let scale = self.scale();
        DVector::from_fn(self.effects(), |f, _| {
            scale
                * arm_means
                    .iter()
                    .enumerate()
                    .map(|(q, &y)| self.sign(f, q) * y)
                    .sum::<f64>()
        })
    }

    /// Maps a vector of factor levels (each `+1` or `-1`) to its arm index.
    pub fn arm_of_levels(&self, levels: &[i8]) -> Result<usize> {
        if levels.len() != self.k {
            return Err(Error::Validation(format!(
                "expected {} factor levels, got {}",
                self.k,
                levels.len()
            )));
        }
        let mut arm = 0usize;
        for (i, &l) in levels.iter().enumerate() {
            match l {
                1 => {}
                -1 => arm |= 1 << (self.k - 1 - i),
                other => {
                    return Err(Error::Validation(format!(
                        "factor level must be +1 or -1, got {other}"
                    )))
                }
            }
        }
        Ok(arm)
    }
}

/// Per-stratum allocation: size and number of units per arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumPlan {
    pub id: String,
    pub size: usize,
    pub arm_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentPlan {
    pub strata: Vec<StratumPlan>,
    pub seed: u64,
}

/// One row of an assignment: global unit index (zero-based), stratum index in
/// the plan, and arm (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitAssignment {
    pub unit: usize,
    pub stratum: usize,
    pub arm: usize,
}

impl AssignmentPlan {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.strata.first() else {
            return Err(Error::Domain("assignment plan has no strata".into()));
        };
        let arms = first.arm_counts.len();
        if arms < 2 {
            return Err(Error::Domain("at least two arms are required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.strata {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Domain(format!("duplicate stratum id `{}`", s.id)));
            }
            if s.arm_counts.len() != arms {
                return Err(Error::Domain(format!(
                    "stratum `{}` lists {} arm counts, expected {arms}",
                    s.id,
                    s.arm_counts.len()
                )));
            }
            let total: usize = s.arm_counts.iter().sum();
            if total != s.size {
                return Err(Error::Domain(format!(
                    "stratum `{}`: arm counts sum to {total} but size is {}",
                    s.id, s.size
                )));
            }
            if let Some(q) = s.arm_counts.iter().position(|&c| c == 0) {
                return Err(Error::Domain(format!(
                    "stratum `{}`: arm {} has no units",
                    s.id,
                    q + 1
                )));
            }
        }
        Ok(())
    }

    pub fn arms(&self) -> usize {
        self.strata.first().map_or(0, |s| s.arm_counts.len())
    }

    pub fn units(&self) -> usize {
        self.strata.iter().map(|s| s.size).sum()
    }

    /// Reads `stratum_id, n, n_arm1..n_armQ` rows.
    pub fn from_csv<R: Read>(reader: R, seed: u64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Validation(format!("missing column `{name}`")))
        };
        let id_col = col("stratum_id")?;
        let n_col = col("n")?;
        let mut arm_cols = Vec::new();
        while let Some(c) = headers
            .iter()
            .position(|h| h == format!("n_arm{}", arm_cols.len() + 1))
        {
            arm_cols.push(c);
        }
        if arm_cols.is_empty() {
            return Err(Error::Validation("missing column `n_arm1`".into()));
        }
        let parse = |rec: &csv::StringRecord, row: usize, c: usize| -> Result<usize> {
            rec[c].parse::<usize>().map_err(|_| Error::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("expected a non-negative integer, got `{}`", &rec[c]),
            })
        };
        let mut strata = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            strata.push(StratumPlan {
                id: rec[id_col].to_string(),
                size: parse(&rec, row, n_col)?,
                arm_counts: arm_cols
                    .iter()
                    .map(|&c| parse(&rec, row, c))
                    .collect::<Result<_>>()?,
            });
        }
        let plan = AssignmentPlan { strata, seed };
        plan.validate()?;
        Ok(plan)
    }
}

/// Uniform random arrangement of the arm multiset given by `counts`.
pub fn assign_stratum(counts: &[usize], rng: &mut seeding::Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(q, &c)| std::iter::repeat_n(q, c))
        .collect();
    labels.shuffle(rng);
    labels
}

/// Draws a stratified complete randomization.
///
/// Units are numbered consecutively, stratum by stratum in plan order. Each
/// stratum draws from its own sub-stream `seed ^ hash(stratum id)`.
pub fn assign_treatments(plan: &AssignmentPlan) -> Result<Vec<UnitAssignment>> {
    plan.validate()?;
    let mut out = Vec::with_capacity(plan.units());
    for (m, s) in plan.strata.iter().enumerate() {
        let mut rng = seeding::rng_from_seed(seeding::stratum_seed(plan.seed, &s.id));
        for arm in assign_stratum(&s.arm_counts, &mut rng) {
            out.push(UnitAssignment {
                unit: out.len(),
                stratum: m,
                arm,
            });
        }
    }
    Ok(out)
}

/// Number of distinct arrangements `n! / prod_q n_q!`, saturating at `u128::MAX`.
pub fn arrangements(counts: &[usize]) -> u128 {
    // Built as a product of binomials to stay exact as long as possible.
    let mut total: u128 = 1;
    let mut placed = 0usize;
    for &c in counts {
        for j in 1..=c {
            placed += 1;
            // total *= placed / j, keeping exactness since binomials are integral
            total = match total.checked_mul(placed as u128) {
                Some(v) => v / j as u128,
                None => return u128::MAX,
            };
        }
    }
    total
}
