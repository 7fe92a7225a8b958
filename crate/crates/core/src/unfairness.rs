use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{BaselineMatrix, ConfusionMatrix, ConfusionSet};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::scalar::{eta_raw, eta_split_partials};

/// Confusion entries are clamped to [ε, 1 − ε] before local search.
pub const CLAMP_EPS: f64 = 1e-5;
const MAX_HALVINGS: usize = 30;
const TIE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelBound {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfairnessResult {
    pub lower: f64,
    pub upper: f64,
    pub baseline_witness: BaselineMatrix,
    pub per_label: Vec<LabelBound>,
    /// `per_group_eta[g][y] = max_z η(α_base^{yz}, α_g^{yz})`
    pub per_group_eta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnfairnessOptions {
    pub n_orderings: usize,
    pub max_iter: usize,
    pub eps_stop: f64,
    pub seed: u64,
}

impl Default for UnfairnessOptions {
    fn default() -> Self {
        Self {
            n_orderings: 10,
            max_iter: 100,
            eps_stop: 1e-7,
            seed: 0,
        }
    }
}

/// Per true label y, a map from predicted labels to predicted labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub maps: Vec<Vec<usize>>,
}

impl LabelMapping {
    pub fn identity(k: usize) -> Self {
        Self {
            maps: vec![(0..k).collect(); k],
        }
    }

    /// f_y(ŷ) = 0 if ŷ = y, else 1.
    pub fn collapse_mistakes(k: usize) -> Self {
        Self {
            maps: (0..k).map(|y| (0..k).map(|z| usize::from(z != y)).collect()).collect(),
        }
    }
}

/// (w_g π_g^y, row y of A_g) for groups with positive mass on y.
fn weighted_rows(set: &ConfusionSet, y: usize) -> Vec<(f64, &[f64])> {
    set.per_group
        .iter()
        .map(|(g, a)| (g.weight * g.true_props[y], a.row(y)))
        .filter(|(w, _)| *w > 0.0)
        .collect()
}

pub fn objective_y(baseline_row: &[f64], set: &ConfusionSet, y: usize) -> f64 {
    weighted_rows(set, y).iter().map(|(w, r)| w * row_eta(baseline_row, r)).sum()
}

fn row_eta(base: &[f64], row: &[f64]) -> f64 {
    base.iter().zip(row).map(|(&a, &b)| eta_raw(a, b)).fold(0.0, f64::max)
}

/// Argmin of `f` over `cands`; ties go to the smallest candidate.
fn argmin_candidates(mut cands: Vec<f64>, f: impl Fn(f64) -> f64) -> (f64, f64) {
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    let mut best = (cands[0], f(cands[0]));
    for &x in &cands[1..] {
        let v = f(x);
        if v < best.1 - TIE_TOL {
            best = (x, v);
        }
    }
    best
}

/// Exact minimum of μ(x) = Σ w η(x, a) over [0, 1].
fn binary_min(terms: &[(f64, f64)]) -> (f64, f64) {
    let mut cands = vec![0.0, 1.0];
    cands.extend(terms.iter().map(|t| t.1));
    argmin_candidates(cands, |x| terms.iter().map(|&(w, a)| w * eta_raw(x, a)).sum())
}

fn mu_terms(rows: &[(f64, &[f64])], z: usize) -> Vec<(f64, f64)> {
    rows.iter().map(|&(w, r)| (w, r[z])).collect()
}

fn assemble(set: &ConfusionSet, base_rows: Vec<Vec<f64>>, per_label: Vec<LabelBound>) -> UnfairnessResult {
    let k = set.k();
    let per_group_eta: Vec<Vec<f64>> = set
        .per_group
        .iter()
        .map(|(_, a)| (0..k).map(|y| row_eta(&base_rows[y], a.row(y))).collect())
        .collect();
    let lower = per_label.iter().map(|b| b.lower).sum::<f64>().clamp(0.0, 1.0);
    let upper = per_label.iter().map(|b| b.upper).sum::<f64>().clamp(0.0, 1.0);
    UnfairnessResult {
        lower: lower.min(upper),
        upper,
        baseline_witness: ConfusionMatrix::from_flat_unchecked(k, base_rows.concat()),
        per_label,
        per_group_eta,
    }
}

fn binary_row(k: usize, z1: usize, z2: usize, x: f64) -> Vec<f64> {
    let mut row = vec![0.0; k];
    row[z1] = x;
    row[z2] += 1.0 - x;
    row
}

pub fn unfairness_binary_exact(set: &ConfusionSet) -> Result<UnfairnessResult> {
    if set.k() != 2 {
        return Err(Error::NotBinary(set.k()));
    }
    let mut rows = Vec::with_capacity(2);
    let mut per_label = Vec::with_capacity(2);
    for y in 0..2 {
        let (x, v) = binary_min(&mu_terms(&weighted_rows(set, y), y));
        rows.push(binary_row(2, y, 1 - y, x));
        per_label.push(LabelBound { lower: v, upper: v });
    }
    Ok(assemble(set, rows, per_label))
}

fn lower_for_label(set: &ConfusionSet, y: usize) -> f64 {
    let rows = weighted_rows(set, y);
    if rows.is_empty() {
        return 0.0;
    }
    (0..set.k()).map(|z| binary_min(&mu_terms(&rows, z)).1).fold(0.0, f64::max)
}

pub fn unfairness_multiclass_lower(set: &ConfusionSet) -> Vec<f64> {
    (0..set.k()).map(|y| lower_for_label(set, y)).collect()
}

/// Piece 1 − P/Q(x) with Q(x) = q0 + q1 x.
#[derive(Clone, Copy)]
struct Piece {
    p: f64,
    q0: f64,
    q1: f64,
}

fn split_candidates(gamma: f64, terms: &[(f64, f64, f64, f64)]) -> Vec<f64> {
    let mut c = vec![0.0, gamma];
    for &(_, v, a, t) in terms {
        c.extend([a, t, gamma - t]);
        let f1 = [
            Piece { p: a, q0: 0.0, q1: 1.0 },
            Piece {
                p: 1.0 - a,
                q0: 1.0,
                q1: -1.0,
            },
        ];
        let f2 = [
            Piece { p: t, q0: gamma, q1: -1.0 },
            Piece {
                p: 1.0 - t,
                q0: 1.0 - gamma,
                q1: 1.0,
            },
        ];
        for pc in f1.iter().chain(&f2) {
            if v < 1.0 {
                c.push((pc.p / (1.0 - v) - pc.q0) / pc.q1);
            }
        }
        for p1 in &f1 {
            for p2 in &f2 {
                let den = p1.p * p2.q1 - p2.p * p1.q1;
                if den != 0.0 {
                    c.push((p2.p * p1.q0 - p1.p * p2.q0) / den);
                }
            }
        }
    }
    c.retain(|x| x.is_finite() && *x >= -1e-12 && *x <= gamma + 1e-12);
    c.iter_mut().for_each(|x| *x = x.clamp(0.0, gamma));
    c
}

/// Greedy label-by-label baseline for row y; also returns the objective of
/// each intermediate (coarsened) problem.
pub fn greedy_baseline_trace(set: &ConfusionSet, y: usize, ordering: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let k = set.k();
    assert_eq!(ordering.len(), k - 1, "ordering must list the other k-1 labels");
    let rows = weighted_rows(set, y);
    let mut base = vec![0.0; k];
    if rows.is_empty() {
        base[y] = 1.0;
        return (base, vec![0.0]);
    }
    let (x, v) = binary_min(&mu_terms(&rows, y));
    base[y] = x;
    let mut gamma = 1.0 - x;
    let mut trace = vec![v];
    let mut fixed: Vec<f64> = rows.iter().map(|(_, r)| eta_raw(x, r[y])).collect();
    for i in 0..k - 2 {
        let (yi, rest) = (ordering[i], &ordering[i + 1..]);
        // (w, v_g, α_g^{y y_i}, merged tail mass)
        let terms: Vec<(f64, f64, f64, f64)> = rows
            .iter()
            .zip(&fixed)
            .map(|(&(w, r), &v)| (w, v, r[yi], rest.iter().map(|&z| r[z]).sum::<f64>().min(1.0)))
            .collect();
        let g = gamma;
        let (xs, val) = argmin_candidates(split_candidates(g, &terms), |x| {
            terms
                .iter()
                .map(|&(w, v, a, t)| w * v.max(eta_raw(x, a)).max(eta_raw((g - x).max(0.0), t)))
                .sum()
        });
        base[yi] = xs;
        gamma = (g - xs).max(0.0);
        for (f, &(_, v, a, _)) in fixed.iter_mut().zip(&terms) {
            *f = v.max(eta_raw(xs, a));
        }
        trace.push(val);
    }
    base[ordering[k - 2]] = gamma;
    (base, trace)
}

pub fn greedy_baseline(set: &ConfusionSet, y: usize, ordering: &[usize]) -> Vec<f64> {
    greedy_baseline_trace(set, y, ordering).0
}

pub fn greedy_baseline_multi(set: &ConfusionSet, y: usize, n_orderings: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut others: Vec<usize> = (0..set.k()).filter(|&z| z != y).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..n_orderings.max(1) {
        others.shuffle(&mut rng);
        let row = greedy_baseline(set, y, &others);
        let v = objective_y(&row, set, y);
        if best.as_ref().map_or(true, |(_, b)| v < *b) {
            best = Some((row, v));
        }
    }
    best.unwrap().0
}

/// Baseline row y set to the (w π^y)-weighted mean of the group rows.
pub fn weighted_average_row(set: &ConfusionSet, y: usize) -> Vec<f64> {
    let rows = weighted_rows(set, y);
    let total: f64 = rows.iter().map(|r| r.0).sum();
    if total <= 0.0 {
        let mut e = vec![0.0; set.k()];
        e[y] = 1.0;
        return e;
    }
    (0..set.k())
        .map(|z| rows.iter().map(|(w, r)| w * r[z]).sum::<f64>() / total)
        .collect()
}

pub(crate) fn clamp_row(row: &[f64], eps: f64) -> Vec<f64> {
    let c: Vec<f64> = row.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect();
    let s: f64 = c.iter().sum();
    c.into_iter().map(|v| v / s).collect()
}

/// Sequential-LP local search on baseline row y starting from `init`.
pub fn local_minimize_row(init: &[f64], set: &ConfusionSet, y: usize, max_iter: usize, eps_stop: f64) -> Result<Vec<f64>> {
    let k = set.k();
    let rows: Vec<(f64, Vec<f64>)> = weighted_rows(set, y)
        .into_iter()
        .map(|(w, r)| (w, clamp_row(r, CLAMP_EPS)))
        .collect();
    let n = rows.len();
    let obj = |alpha: &[f64]| -> f64 { rows.iter().map(|(w, h)| w * row_eta(alpha, h)).sum() };

    let mut alpha = init.to_vec();
    let mut cur = obj(&alpha);
    for _ in 0..max_iter {
        let mut prog = LinearProgram::new(k + n);
        for z in 0..k {
            prog.bounds[z] = (0.0, 1.0);
        }
        for g in 0..n {
            prog.objective[k + g] = rows[g].0;
            prog.bounds[k + g] = (0.0, 1.0);
        }
        prog.add_eq(&(0..k).map(|z| (z, 1.0)).collect::<Vec<_>>(), 1.0);
        for (g, (_, h)) in rows.iter().enumerate() {
            for z in 0..k {
                let (a, b) = (alpha[z], h[z]);
                let ((d1, _), (d2, _)) = eta_split_partials(a, b);
                if a > 0.0 {
                    let e1 = 1.0 - b / a;
                    if e1 >= -1.0 {
                        prog.add_le(&[(z, d1), (k + g, -1.0)], d1 * a - e1);
                    }
                }
                if a < 1.0 {
                    let e2 = 1.0 - (1.0 - b) / (1.0 - a);
                    if e2 >= -1.0 {
                        prog.add_le(&[(z, d2), (k + g, -1.0)], d2 * a - e2);
                    }
                }
            }
        }
        // A failed subproblem ends the search with the best iterate so far.
        let sol = match lp::solve(&prog) {
            Ok(s) if s.status == LpStatus::Optimal => s,
            _ => break,
        };
        let e: Vec<f64> = (0..k).map(|z| sol.x[z] - alpha[z]).collect();
        if e.iter().fold(0.0f64, |m, v| m.max(v.abs())) < eps_stop {
            break;
        }
        let mut mu = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = alpha.iter().zip(&e).map(|(a, d)| (a + mu * d).clamp(0.0, 1.0)).collect();
            let v = obj(&cand);
            if v < cur {
                alpha = cand;
                cur = v;
                accepted = true;
                break;
            }
            mu *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if objective_y(&alpha, set, y) <= objective_y(init, set, y) {
        Ok(alpha)
    } else {
        Ok(init.to_vec())
    }
}

/// If every live group puts its row-y mass on at most two common columns,
/// row y reduces to the binary problem and is solved exactly.
fn two_column_exact(set: &ConfusionSet, y: usize) -> Option<(Vec<f64>, f64)> {
    let k = set.k();
    let rows = weighted_rows(set, y);
    let support: Vec<usize> = (0..k).filter(|&z| rows.iter().any(|(_, r)| r[z] > 0.0)).collect();
    match support.as_slice() {
        [] => Some((binary_row(k, y, y, 1.0), 0.0)),
        [z] => Some((binary_row(k, *z, *z, 1.0), 0.0)),
        [z1, z2] => {
            let (x, v) = binary_min(&mu_terms(&rows, *z1));
            Some((binary_row(k, *z1, *z2, x), v))
        }
        _ => None,
    }
}

pub(crate) fn label_upper(set: &ConfusionSet, y: usize, opts: &UnfairnessOptions, init: Option<Vec<f64>>) -> Result<(Vec<f64>, f64)> {
    if let Some(exact) = two_column_exact(set, y) {
        return Ok(exact);
    }
    let search = |start: Vec<f64>| -> Result<(Vec<f64>, f64)> {
        let row = local_minimize_row(&start, set, y, opts.max_iter, opts.eps_stop)?;
        let v = objective_y(&row, set, y);
        Ok((row, v))
    };
    if let Some(start) = init {
        return search(start);
    }
    // The local search only finds the basin it starts in, so the greedy start
    // is backed up by the naive weighted-average start.
    let greedy = search(greedy_baseline_multi(set, y, opts.n_orderings, opts.seed.wrapping_add(y as u64)))?;
    let naive = search(weighted_average_row(set, y))?;
    Ok(if naive.1 < greedy.1 { naive } else { greedy })
}

pub fn unfairness_multiclass_bounds(set: &ConfusionSet, opts: &UnfairnessOptions) -> Result<UnfairnessResult> {
    if set.k() == 2 {
        return unfairness_binary_exact(set);
    }
    let per: Vec<(Vec<f64>, LabelBound)> = (0..set.k())
        .into_par_iter()
        .map(|y| {
            let (row, upper) = label_upper(set, y, opts, None)?;
            let lower = lower_for_label(set, y).min(upper);
            Ok((row, LabelBound { lower, upper }))
        })
        .collect::<Result<_>>()?;
    let (rows, bounds) = per.into_iter().unzip();
    Ok(assemble(set, rows, bounds))
}

/// Same as [`unfairness_multiclass_bounds`] but every row starts from the
/// weighted-average baseline instead of the greedy one.
pub fn unfairness_multiclass_bounds_avg_init(set: &ConfusionSet, opts: &UnfairnessOptions) -> Result<UnfairnessResult> {
    if set.k() == 2 {
        return unfairness_binary_exact(set);
    }
    let mut rows = Vec::new();
    let mut bounds = Vec::new();
    for y in 0..set.k() {
        let (row, upper) = label_upper(set, y, opts, Some(weighted_average_row(set, y)))?;
        bounds.push(LabelBound {
            lower: lower_for_label(set, y).min(upper),
            upper,
        });
        rows.push(row);
    }
    Ok(assemble(set, rows, bounds))
}

pub fn apply_label_mapping(set: &ConfusionSet, f: &LabelMapping) -> Result<ConfusionSet> {
    let k = set.k();
    if f.maps.len() != k || f.maps.iter().any(|m| m.len() != k || m.iter().any(|&z| z >= k)) {
        return Err(Error::DimensionMismatch("label mapping must be a total map on 0..k".into()));
    }
    let per_group = set
        .per_group
        .iter()
        .map(|(g, a)| {
            let mut out = vec![0.0; k * k];
            for y in 0..k {
                for z in 0..k {
                    out[y * k + f.maps[y][z]] += a.get(y, z);
                }
            }
            let mut g = g.clone();
            g.pred_props.clear();
            (g, ConfusionMatrix::from_flat_unchecked(k, out))
        })
        .collect();
    ConfusionSet::new(per_group)
}
