use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIMPLEX_TOL: f64 = 1e-9;
pub const WEIGHT_RENORM_TOL: f64 = 1e-6;
pub const PRED_CROSSCHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub k: usize,
}

impl LabelSpace {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::DimensionMismatch(format!("need at least 2 labels, got {k}")));
        }
        Ok(Self { k })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group_id: String,
    pub weight: f64,
    pub true_props: Vec<f64>,
    pub pred_props: Vec<f64>,
}

impl GroupStats {
    pub fn new(group_id: impl Into<String>, weight: f64, true_props: Vec<f64>, pred_props: Vec<f64>) -> Self {
        Self {
            group_id: group_id.into(),
            weight,
            true_props,
            pred_props,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateInputs {
    pub labels: LabelSpace,
    pub groups: Vec<GroupStats>,
}

impl AggregateInputs {
    /// Builds and validates in one step.
    pub fn new(groups: Vec<GroupStats>) -> Result<Self> {
        let k = groups.first().map(|g| g.true_props.len()).ok_or(Error::EmptyGroupList)?;
        validate_inputs(AggregateInputs {
            labels: LabelSpace::new(k)?,
            groups,
        })
    }

    pub fn k(&self) -> usize {
        self.labels.k
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

fn check_simplex(what: impl FnOnce() -> String, v: &[f64], tol: f64) -> Result<()> {
    let sum: f64 = v.iter().sum();
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if v.iter().any(|x| !x.is_finite()) || min < -tol || (sum - 1.0).abs() > tol {
        return Err(Error::NonSimplexVector { what: what(), sum, min });
    }
    Ok(())
}

fn check_weights(groups: &[GroupStats]) -> Result<f64> {
    for g in groups {
        if !(0.0..=1.0).contains(&g.weight) {
            return Err(Error::WeightSumMismatch { sum: g.weight });
        }
    }
    let sum: f64 = groups.iter().map(|g| g.weight).sum();
    if (sum - 1.0).abs() > WEIGHT_RENORM_TOL * (1.0 + 1e-9) {
        return Err(Error::WeightSumMismatch { sum });
    }
    Ok(sum)
}

/// Sums within rounding noise of 1 are left alone so validation is
/// idempotent.
fn needs_renorm(sum: f64, n: usize) -> bool {
    (sum - 1.0).abs() > 4.0 * n as f64 * f64::EPSILON
}

fn check_ids(groups: &[GroupStats]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for g in groups {
        if !seen.insert(g.group_id.as_str()) {
            return Err(Error::DuplicateGroup(g.group_id.clone()));
        }
    }
    Ok(())
}

/// Checks the invariants of `raw` and renormalizes weights whose sum is
/// within 1e-6 of one.
pub fn validate_inputs(raw: AggregateInputs) -> Result<AggregateInputs> {
    let AggregateInputs { labels, mut groups } = raw;
    if labels.k < 2 {
        return Err(Error::DimensionMismatch(format!("need at least 2 labels, got {}", labels.k)));
    }
    if groups.is_empty() {
        return Err(Error::EmptyGroupList);
    }
    check_ids(&groups)?;
    for g in &groups {
        if g.true_props.len() != labels.k || g.pred_props.len() != labels.k {
            return Err(Error::DimensionMismatch(format!(
                "group `{}` has vectors of length {}/{} for k = {}",
                g.group_id,
                g.true_props.len(),
                g.pred_props.len(),
                labels.k
            )));
        }
        check_simplex(|| format!("true_props of `{}`", g.group_id), &g.true_props, SIMPLEX_TOL)?;
        check_simplex(|| format!("pred_props of `{}`", g.group_id), &g.pred_props, SIMPLEX_TOL)?;
    }
    let sum = check_weights(&groups)?;
    if needs_renorm(sum, groups.len()) {
        for g in &mut groups {
            g.weight /= sum;
        }
    }
    Ok(AggregateInputs { labels, groups })
}

/// Row-stochastic k x k matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("confusion matrix must be square with k >= 2".into()));
        }
        for (y, r) in rows.iter().enumerate() {
            check_simplex(|| format!("row {y} of confusion matrix"), r, SIMPLEX_TOL)?;
        }
        Ok(Self {
            k,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    /// Skips validation; callers guarantee stochastic rows.
    pub(crate) fn from_flat_unchecked(k: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), k * k);
        Self { k, entries }
    }

    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        Self { k, entries }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, y: usize, z: usize) -> f64 {
        self.entries[y * self.k + z]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.entries[y * self.k..(y + 1) * self.k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.k).map(|r| r.to_vec()).collect()
    }
}

pub type BaselineMatrix = ConfusionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSet {
    pub labels: LabelSpace,
    pub per_group: Vec<(GroupStats, ConfusionMatrix)>,
}

impl ConfusionSet {
    /// Validates the groups; empty `pred_props` are derived from the matrix,
    /// supplied ones must agree with it within 1e-6.
    pub fn new(per_group: Vec<(GroupStats, ConfusionMatrix)>) -> Result<Self> {
        let k = per_group.first().map(|(_, a)| a.k()).ok_or(Error::EmptyGroupList)?;
        let labels = LabelSpace::new(k)?;
        let mut out = Vec::with_capacity(per_group.len());
        for (mut g, a) in per_group {
            if a.k() != k || g.true_props.len() != k {
                return Err(Error::DimensionMismatch(format!("group `{}` does not have k = {k}", g.group_id)));
            }
            check_simplex(|| format!("true_props of `{}`", g.group_id), &g.true_props, SIMPLEX_TOL)?;
            let implied = implied_pred_props(&g, &a);
            if g.pred_props.is_empty() {
                g.pred_props = implied;
            } else {
                if g.pred_props.len() != k {
                    return Err(Error::DimensionMismatch(format!("pred_props of `{}`", g.group_id)));
                }
                let worst = g.pred_props.iter().zip(&implied).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                if worst > PRED_CROSSCHECK_TOL {
                    return Err(Error::InconsistentGroup(g.group_id.clone()));
                }
            }
            out.push((g, a));
        }
        let groups: Vec<GroupStats> = out.iter().map(|(g, _)| g.clone()).collect();
        check_ids(&groups)?;
        let sum = check_weights(&groups)?;
        if needs_renorm(sum, out.len()) {
            for (g, _) in &mut out {
                g.weight /= sum;
            }
        }
        Ok(Self { labels, per_group: out })
    }

    pub fn k(&self) -> usize {
        self.labels.k
    }

    pub fn inputs(&self) -> AggregateInputs {
        AggregateInputs {
            labels: self.labels,
            groups: self.per_group.iter().map(|(g, _)| g.clone()).collect(),
        }
    }
}

pub fn error_of(set: &ConfusionSet) -> f64 {
    let acc: f64 = set
        .per_group
        .iter()
        .map(|(g, a)| g.weight * (0..set.k()).map(|y| g.true_props[y] * a.get(y, y)).sum::<f64>())
        .sum();
    (1.0 - acc).clamp(0.0, 1.0)
}

pub fn implied_pred_props(stats: &GroupStats, a: &ConfusionMatrix) -> Vec<f64> {
    let k = a.k();
    (0..k).map(|z| (0..k).map(|y| stats.true_props[y] * a.get(y, z)).sum()).collect()
}

pub fn is_fair(set: &ConfusionSet, tol: f64) -> bool {
    let k = set.k();
    let live: Vec<_> = set.per_group.iter().filter(|(g, _)| g.weight > 0.0).collect();
    for (i, (gi, ai)) in live.iter().enumerate() {
        for (gj, aj) in &live[i + 1..] {
            for y in 0..k {
                if gi.true_props[y] <= 0.0 || gj.true_props[y] <= 0.0 {
                    continue;
                }
                if (0..k).any(|z| (ai.get(y, z) - aj.get(y, z)).abs() > tol) {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OneSided {
    /// p̂¹ >= π¹ in every group.
    AllPredGe,
    /// p̂¹ <= π¹ in every group; `all_equal` when equality holds everywhere.
    AllPredLe {
        all_equal: bool,
    },
    Mixed,
}

pub fn condition_onesided(inputs: &AggregateInputs) -> Result<OneSided> {
    if inputs.k() != 2 {
        return Err(Error::NotBinary(inputs.k()));
    }
    let le = inputs.groups.iter().all(|g| g.pred_props[1] <= g.true_props[1]);
    let ge = inputs.groups.iter().all(|g| g.pred_props[1] >= g.true_props[1]);
    Ok(match (le, ge) {
        (true, eq) => OneSided::AllPredLe { all_equal: eq },
        (false, true) => OneSided::AllPredGe,
        _ => OneSided::Mixed,
    })
}
