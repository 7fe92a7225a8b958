use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary::{mindisc_binary, DiscrepancyQuery, DiscrepancySolution};
use crate::domain::{AggregateInputs, ConfusionMatrix};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::multiclass::{mindisc_multiclass_lower, mindisc_multiclass_upper, SlpParams};

pub const BETA_SEARCH_TOL: f64 = 1e-3;
pub const SWEEP_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairErrorResult {
    pub feasible: bool,
    pub min_error: Option<f64>,
    pub witness: Option<ConfusionMatrix>,
}

/// Minimum error of a classifier whose confusion matrix is shared by all
/// groups. Infeasible means no fair classifier matches the proportions.
pub fn fair_error_lower_bound(inputs: &AggregateInputs, margin: f64) -> Result<FairErrorResult> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("margin = {margin} must be nonnegative")));
    }
    let k = inputs.k();
    let mut prog = LinearProgram::new(k * k);
    prog.bounds = vec![(0.0, 1.0); k * k];
    for y in 0..k {
        prog.objective[y * k + y] = -inputs.groups.iter().map(|g| g.weight * g.true_props[y]).sum::<f64>();
        prog.add_eq(&(0..k).map(|z| (y * k + z, 1.0)).collect::<Vec<_>>(), 1.0);
    }
    for g in &inputs.groups {
        for z in 0..k {
            let terms: Vec<(usize, f64)> = (0..k).map(|y| (y * k + z, g.true_props[y])).collect();
            if margin == 0.0 {
                prog.add_eq(&terms, g.pred_props[z]);
            } else {
                prog.add_le(&terms, g.pred_props[z] + margin);
                let neg: Vec<(usize, f64)> = terms.iter().map(|&(j, v)| (j, -v)).collect();
                prog.add_le(&neg, margin - g.pred_props[z]);
            }
        }
    }
    let sol = lp::solve(&prog).map_err(|e| Error::LpFailure(e.to_string()))?;
    match sol.status {
        LpStatus::Optimal => {
            let rows: Vec<Vec<f64>> = sol
                .x
                .chunks(k)
                .map(|r| {
                    let s: f64 = r.iter().map(|v| v.max(0.0)).sum();
                    r.iter().map(|v| v.max(0.0) / s).collect()
                })
                .collect();
            Ok(FairErrorResult {
                feasible: true,
                min_error: Some((1.0 + sol.objective_value).clamp(0.0, 1.0)),
                witness: Some(ConfusionMatrix::from_rows(rows)?),
            })
        }
        LpStatus::Infeasible => Ok(FairErrorResult {
            feasible: false,
            min_error: None,
            witness: None,
        }),
        LpStatus::Unbounded => Err(Error::LpFailure("fair-error LP reported unbounded".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub gamma: f64,
    pub slp: SlpParams,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            gamma: 1e-6,
            slp: SlpParams::default(),
        }
    }
}

/// mindisc_β: exact for two labels, SLP upper bound (with the sound lower
/// companion) otherwise.
pub fn solve_discrepancy(inputs: &AggregateInputs, beta: f64, opts: &AuditOptions) -> Result<(DiscrepancySolution, Option<f64>)> {
    if inputs.k() == 2 {
        Ok((mindisc_binary(inputs, DiscrepancyQuery::new(beta, opts.gamma)?)?, None))
    } else {
        let up = mindisc_multiclass_upper(inputs, beta, &opts.slp, None)?;
        let lo = mindisc_multiclass_lower(inputs, beta)?.min(up.value);
        Ok((up, Some(lo)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub beta: f64,
    pub unfairness_lb: f64,
    pub error_lb: f64,
    pub mindisc_value: f64,
    /// Lower companion of `mindisc_value` when it is only an upper bound.
    pub mindisc_lower: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCurve {
    pub points: Vec<ParetoPoint>,
    pub normalization: Option<f64>,
}

/// Overall rate of label 1, a natural divisor for binary curves.
pub fn overall_positive_rate(inputs: &AggregateInputs) -> f64 {
    inputs.groups.iter().map(|g| g.weight * g.true_props[1]).sum()
}

fn point(inputs: &AggregateInputs, beta: f64, opts: &AuditOptions) -> Result<ParetoPoint> {
    let (s, lo) = solve_discrepancy(inputs, beta, opts)?;
    Ok(ParetoPoint {
        beta,
        unfairness_lb: s.unfairness_part,
        error_lb: s.error_part,
        mindisc_value: s.value,
        mindisc_lower: lo,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn pareto_curve(inputs: &AggregateInputs, n_init: usize, refine_budget: usize, opts: &AuditOptions) -> Result<ParetoCurve> {
    if n_init < 2 {
        return Err(Error::InvalidParameter("pareto curve needs at least 2 initial points".into()));
    }
    let betas: Vec<f64> = (0..n_init).map(|i| i as f64 / (n_init - 1) as f64).collect();
    let mut points: Vec<ParetoPoint> = betas.par_iter().map(|&b| point(inputs, b, opts)).collect::<Result<_>>()?;
    let mut budget = refine_budget;
    while budget > 0 {
        let gaps: Vec<f64> = points
            .windows(2)
            .map(|w| (w[1].unfairness_lb - w[0].unfairness_lb).hypot(w[1].error_lb - w[0].error_lb))
            .collect();
        let med = median(gaps.clone());
        let mut wide: Vec<usize> = (0..gaps.len())
            .filter(|&i| gaps[i] > med && points[i + 1].beta - points[i].beta > 2.0 * f64::EPSILON)
            .collect();
        if wide.is_empty() {
            break;
        }
        wide.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
        wide.truncate(budget);
        budget -= wide.len();
        let mids: Vec<f64> = wide.iter().map(|&i| 0.5 * (points[i].beta + points[i + 1].beta)).collect();
        let new: Vec<ParetoPoint> = mids.par_iter().map(|&b| point(inputs, b, opts)).collect::<Result<_>>()?;
        points.extend(new);
        points.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    }
    Ok(ParetoCurve {
        points,
        normalization: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapBound {
    pub beta: f64,
    pub unfairness: f64,
    pub error: f64,
}

fn cap_bound(
    inputs: &AggregateInputs,
    opts: &AuditOptions,
    satisfied: impl Fn(&DiscrepancySolution) -> bool,
    want_large_beta: bool,
) -> Result<CapBound> {
    let solve = |b: f64| solve_discrepancy(inputs, b, opts).map(|s| s.0);
    let done = |b: f64, s: DiscrepancySolution| CapBound {
        beta: b,
        unfairness: s.unfairness_part,
        error: s.error_part,
    };
    // error_part grows with β, unfairness_part shrinks: the feasible βs form
    // an interval touching one end of [0, 1].
    let (good_end, bad_end) = if want_large_beta { (0.0, 1.0) } else { (1.0, 0.0) };
    let g = solve(good_end)?;
    if !satisfied(&g) {
        return Err(Error::InfeasibleCap);
    }
    let b = solve(bad_end)?;
    if satisfied(&b) {
        return Ok(done(bad_end, b));
    }
    let (mut ok, mut bad, mut ok_sol) = (good_end, bad_end, g);
    while (bad - ok).abs() > BETA_SEARCH_TOL {
        let mid = 0.5 * (ok + bad);
        let s = solve(mid)?;
        if satisfied(&s) {
            ok = mid;
            ok_sol = s;
        } else {
            bad = mid;
        }
    }
    Ok(done(ok, ok_sol))
}

/// Largest β whose solution respects the error cap; its unfairness is a
/// lower bound on the unfairness of any classifier with error ≤ cap.
pub fn bound_under_error_cap(inputs: &AggregateInputs, error_cap: f64, opts: &AuditOptions) -> Result<CapBound> {
    cap_bound(inputs, opts, |s| s.error_part <= error_cap + opts.gamma, true)
}

/// Smallest β whose solution respects the unfairness cap; its error is a
/// lower bound on the error of any classifier with unfairness ≤ cap.
pub fn bound_under_unfairness_cap(inputs: &AggregateInputs, unfairness_cap: f64, opts: &AuditOptions) -> Result<CapBound> {
    cap_bound(inputs, opts, |s| s.unfairness_part <= unfairness_cap + opts.gamma, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaInterval {
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub unfairness: f64,
    pub error: f64,
}

/// Solves on the 0.01 β grid and merges neighbours with matching
/// (unfairness, error) within γ.
pub fn beta_sensitivity(inputs: &AggregateInputs, gamma: f64) -> Result<Vec<BetaInterval>> {
    if inputs.k() != 2 {
        return Err(Error::NotBinary(inputs.k()));
    }
    let n = (1.0 / SWEEP_STEP).round() as usize;
    let sols: Vec<(f64, DiscrepancySolution)> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let b = i as f64 / n as f64;
            mindisc_binary(inputs, DiscrepancyQuery::new(b, gamma)?).map(|s| (b, s))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<BetaInterval> = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for (b, s) in sols {
        let same = prev.map_or(false, |(u, e)| {
            (u - s.unfairness_part).abs() <= gamma && (e - s.error_part).abs() <= gamma
        });
        match out.last_mut() {
            Some(last) if same => last.beta_hi = b,
            _ => out.push(BetaInterval {
                beta_lo: b,
                beta_hi: b,
                unfairness: s.unfairness_part,
                error: s.error_part,
            }),
        }
        prev = Some((s.unfairness_part, s.error_part));
    }
    Ok(out)
}
