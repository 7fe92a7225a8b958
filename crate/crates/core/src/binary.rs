use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{AggregateInputs, BaselineMatrix, ConfusionMatrix, ConfusionSet, GroupStats};
use crate::error::{Error, Result};
use crate::scalar::{eta_raw, psi_deriv_bound, AffinePair, Side};
use crate::unfairness::unfairness_binary_exact;

/// Per-sub-interval grid cap before the interval is bisected instead.
pub const GRID_CAP: f64 = 1e7;
const TIE_TOL: f64 = 1e-12;
const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupDerived {
    pub r: f64,
    pub q: f64,
    pub dom: (f64, f64),
    /// π¹ > 0
    pub in_g1: bool,
    /// no label has π = 1
    pub in_gplus: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyQuery {
    pub beta: f64,
    pub gamma: f64,
}

impl DiscrepancyQuery {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!("beta = {beta} not in [0, 1]")));
        }
        if !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} must be positive")));
        }
        Ok(Self { beta, gamma })
    }
}

impl Default for DiscrepancyQuery {
    fn default() -> Self {
        Self { beta: 1.0, gamma: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySolution {
    pub beta: f64,
    pub value: f64,
    pub unfairness_part: f64,
    pub error_part: f64,
    pub baseline: BaselineMatrix,
    pub witness_confusions: Vec<ConfusionMatrix>,
}

pub fn derive_group(stats: &GroupStats) -> Result<GroupDerived> {
    if stats.true_props.len() != 2 {
        return Err(Error::NotBinary(stats.true_props.len()));
    }
    let (pi0, pi1, p1) = (stats.true_props[0], stats.true_props[1], stats.pred_props[1]);
    if pi1 <= 0.0 {
        return Ok(GroupDerived {
            r: 0.0,
            q: 0.0,
            dom: (p1, p1),
            in_g1: false,
            in_gplus: false,
        });
    }
    if pi1 >= 1.0 {
        return Ok(GroupDerived {
            r: 1.0 - p1,
            q: 0.0,
            dom: (0.0, 1.0),
            in_g1: true,
            in_gplus: false,
        });
    }
    let r = 1.0 - p1 / pi1;
    let q = pi0 / pi1;
    let lo = (-r / q).max(0.0);
    let hi = ((1.0 - r) / q).min(1.0);
    if lo > hi + 1e-12 {
        return Err(Error::InconsistentGroup(stats.group_id.clone()));
    }
    Ok(GroupDerived {
        r,
        q,
        dom: (lo, hi.max(lo)),
        in_g1: true,
        in_gplus: true,
    })
}

#[derive(Clone, Copy)]
struct Prep {
    w: f64,
    pi0: f64,
    pi1: f64,
    p1: f64,
    d: GroupDerived,
}

impl Prep {
    fn alpha1(&self, a0: f64) -> f64 {
        if !self.d.in_g1 {
            0.0
        } else {
            (self.d.r + self.d.q * a0).clamp(0.0, 1.0)
        }
    }

    /// (η part, error part) of D at α⁰ = a0.
    fn parts(&self, b0: f64, b1: f64, a0: f64) -> (f64, f64) {
        if !self.d.in_g1 {
            (self.pi0 * eta_raw(b0, a0), self.pi0 * a0)
        } else if !self.d.in_gplus {
            let a1 = self.d.r;
            (self.pi1 * eta_raw(b1, a1), self.pi1 * a1)
        } else {
            let a1 = self.alpha1(a0);
            (
                self.pi0 * eta_raw(b0, a0) + self.pi1 * eta_raw(b1, a1),
                self.pi0 * a0 + self.pi1 * a1,
            )
        }
    }

    fn candidates(&self, b0: f64, b1: f64) -> ([f64; 4], usize) {
        let d = &self.d;
        if !d.in_g1 {
            return ([self.p1, 0.0, 0.0, 0.0], 1);
        }
        if !d.in_gplus {
            return ([0.0; 4], 1);
        }
        let (lo, hi) = d.dom;
        let mut out = [lo, hi, 0.0, 0.0];
        let mut n = 2;
        for s in [b0, (b1 - d.r) / d.q] {
            if s >= lo - 1e-12 && s <= hi + 1e-12 {
                out[n] = s.clamp(lo, hi);
                n += 1;
            }
        }
        (out, n)
    }

    /// Minimum of D over the candidate set: (D, α⁰, η part, error part).
    fn best(&self, beta: f64, b0: f64, b1: f64) -> (f64, f64, f64, f64) {
        let (cands, n) = self.candidates(b0, b1);
        let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
        for &s in &cands[..n] {
            let (u, e) = self.parts(b0, b1, s);
            let v = beta * u + (1.0 - beta) * e;
            let better = v < best.0 - 1e-15 || (v <= best.0 + 1e-15 && (e < best.3 - 1e-15 || (e <= best.3 + 1e-15 && s < best.1)));
            if better {
                best = (v, s, u, e);
            }
        }
        best
    }
}

struct Problem {
    beta: f64,
    groups: Vec<Prep>,
}

impl Problem {
    fn new(inputs: &AggregateInputs, beta: f64) -> Result<Self> {
        if inputs.k() != 2 {
            return Err(Error::NotBinary(inputs.k()));
        }
        let groups = inputs
            .groups
            .iter()
            .map(|g| {
                Ok(Prep {
                    w: g.weight,
                    pi0: g.true_props[0],
                    pi1: g.true_props[1],
                    p1: g.pred_props[1],
                    d: derive_group(g)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { beta, groups })
    }

    /// (F, error of the minimizing witness)
    fn f(&self, b0: f64, b1: f64) -> (f64, f64) {
        self.groups.iter().fold((0.0, 0.0), |(f, e), g| {
            if g.w == 0.0 {
                return (f, e);
            }
            let (v, _, _, err) = g.best(self.beta, b0, b1);
            (f + g.w * v, e + g.w * err)
        })
    }
}

pub fn d_beta_g(baseline: (f64, f64), alpha0_g: f64, d: &GroupDerived, stats: &GroupStats, beta: f64) -> Result<f64> {
    let (lo, hi) = d.dom;
    if alpha0_g < lo - 1e-9 || alpha0_g > hi + 1e-9 {
        return Err(Error::DomainError(format!("alpha0 = {alpha0_g} outside [{lo}, {hi}]")));
    }
    let p = Prep {
        w: stats.weight,
        pi0: stats.true_props[0],
        pi1: stats.true_props[1],
        p1: stats.pred_props[1],
        d: *d,
    };
    let (u, e) = p.parts(baseline.0, baseline.1, alpha0_g);
    Ok(beta * u + (1.0 - beta) * e)
}

pub fn candidate_set_s(baseline: (f64, f64), stats: &GroupStats, d: &GroupDerived) -> Vec<f64> {
    let p = Prep {
        w: stats.weight,
        pi0: stats.true_props[0],
        pi1: stats.true_props[1],
        p1: stats.pred_props[1],
        d: *d,
    };
    let (c, n) = p.candidates(baseline.0, baseline.1);
    c[..n].to_vec()
}

/// The proxy F(baseline) = Σ_g w_g min over the candidate set of D_{β,g}.
pub fn f_proxy(baseline: (f64, f64), inputs: &AggregateInputs, beta: f64) -> Result<f64> {
    Ok(Problem::new(inputs, beta)?.f(baseline.0, baseline.1).0)
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.retain(|x| x.is_finite());
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    v
}

pub fn v_candidate_sets(inputs: &AggregateInputs) -> Result<(Vec<f64>, Vec<f64>)> {
    if inputs.k() != 2 {
        return Err(Error::NotBinary(inputs.k()));
    }
    let mut v0 = vec![0.0, 1.0];
    let mut v1 = vec![0.0, 1.0];
    for g in &inputs.groups {
        let d = derive_group(g)?;
        if d.in_gplus {
            v1.push(d.r.max(0.0));
            v1.push((d.r + d.q).min(1.0));
            v0.push(d.dom.0);
            v0.push(d.dom.1);
        } else if d.in_g1 {
            v1.push(1.0 - g.pred_props[1]);
        } else {
            v0.push(g.pred_props[1]);
        }
    }
    Ok((sorted_unique(v0), sorted_unique(v1)))
}

/// η argument pair along the search line plus its weight π_z^y.
#[derive(Clone, Copy)]
struct Term {
    pair: AffinePair,
    weight: f64,
}

/// Candidate α⁰_z(v) = s0 + s1 v together with the terms it induces.
struct Cand {
    s0: f64,
    s1: f64,
    terms: Vec<Term>,
}

struct LineGroup {
    w: f64,
    dom: (f64, f64),
    movable: bool,
    cands: Vec<Cand>,
}

struct Line<'a> {
    prob: &'a Problem,
    r: f64,
    q: f64,
    groups: Vec<LineGroup>,
}

impl<'a> Line<'a> {
    fn new(prob: &'a Problem, gi: usize) -> Self {
        let g = &prob.groups[gi].d;
        let (r, q) = (g.r, g.q);
        let a0 = (0.0, 1.0);
        let a1 = (r, q);
        let mut groups = Vec::new();
        for z in prob.groups.iter().filter(|z| z.w > 0.0) {
            let d = &z.d;
            let mut cands = Vec::new();
            if !d.in_g1 {
                cands.push(Cand {
                    s0: z.p1,
                    s1: 0.0,
                    terms: vec![term(a0, (z.p1, 0.0), z.pi0)],
                });
            } else if !d.in_gplus {
                cands.push(Cand {
                    s0: 0.0,
                    s1: 0.0,
                    terms: vec![term(a1, (d.r, 0.0), z.pi1)],
                });
            } else {
                let (lo, hi) = d.dom;
                let forms = [(lo, 0.0), (hi, 0.0), (0.0, 1.0), ((r - d.r) / d.q, q / d.q)];
                for (s0, s1) in forms {
                    let c0 = (s0, s1);
                    let c1 = (d.r + d.q * s0, d.q * s1);
                    cands.push(Cand {
                        s0,
                        s1,
                        terms: vec![term(a0, c0, z.pi0), term(a1, c1, z.pi1)],
                    });
                }
            }
            groups.push(LineGroup {
                w: z.w,
                dom: d.dom,
                movable: d.in_gplus,
                cands,
            });
        }
        Self { prob, r, q, groups }
    }

    fn h(&self, v: f64) -> (f64, f64) {
        self.prob.f(v, (self.r + self.q * v).clamp(0.0, 1.0))
    }

    fn breakpoints(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = vec![lo, hi];
        let mut root = |c0: f64, c1: f64, target: f64| {
            if c1 != 0.0 {
                pts.push((target - c0) / c1);
            }
        };
        for g in &self.groups {
            for c in &g.cands {
                if g.movable && c.s1 != 0.0 {
                    root(c.s0, c.s1, g.dom.0);
                    root(c.s0, c.s1, g.dom.1);
                }
                for t in &c.terms {
                    let p = t.pair;
                    for target in [0.0, 1.0] {
                        root(p.a, p.b, target);
                        root(p.c, p.d, target);
                    }
                    root(p.a - p.c, p.b - p.d, 0.0);
                }
            }
        }
        let mut pts = sorted_unique(pts);
        pts.retain(|&x| x >= lo && x <= hi);
        pts
    }

    /// Lipschitz bound of H on [l, h], which must not contain a breakpoint
    /// in its interior.
    fn lipschitz(&self, l: f64, h: f64) -> f64 {
        let beta = self.prob.beta;
        let mid = 0.5 * (l + h);
        let mut total = 0.0;
        for g in &self.groups {
            let mut worst: f64 = 0.0;
            for c in &g.cands {
                let s = c.s0 + c.s1 * mid;
                if g.movable && (s < g.dom.0 - 1e-12 || s > g.dom.1 + 1e-12) {
                    continue;
                }
                let sum: f64 = c.terms.iter().map(|t| t.weight * term_bound(t.pair, beta, l, h)).sum();
                worst = worst.max(sum);
            }
            total += g.w * worst;
        }
        total
    }
}

fn term(a: (f64, f64), c: (f64, f64), weight: f64) -> Term {
    Term {
        pair: AffinePair::new(a.0, a.1, c.0, c.1),
        weight,
    }
}

/// Bound on |d/dv τ_off(A(v), C(v))| over [l, h].
fn term_bound(p: AffinePair, beta: f64, l: f64, h: f64) -> f64 {
    let err = (1.0 - beta) * p.d.abs();
    if beta == 0.0 {
        return err;
    }
    let mid = 0.5 * (l + h);
    let (am, cm) = p.at(mid);
    if am == cm {
        return err;
    }
    let (al, _) = p.at(l);
    let (ah, _) = p.at(h);
    let exact = if am > cm {
        let num = (p.d * p.a - p.c * p.b).abs();
        let den = al.min(ah).max(0.0);
        if num == 0.0 {
            0.0
        } else {
            num / (den * den)
        }
    } else {
        let num = ((p.b - p.d) + p.d * p.a - p.c * p.b).abs();
        let den = (1.0 - al.max(ah)).max(0.0);
        if num == 0.0 {
            0.0
        } else {
            num / (den * den)
        }
    };
    let side = match p.crossing() {
        Some(x) if mid < x => Side::Left,
        Some(_) => Side::Right,
        None => Side::Left,
    };
    let crossing = psi_deriv_bound(p, 1.0, side).unwrap_or(f64::INFINITY);
    beta * exact.min(crossing) + err
}

#[derive(PartialEq)]
struct Node {
    lb: f64,
    l: f64,
    h: f64,
    hl: f64,
    hh: f64,
    depth: usize,
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // min-heap on the lower bound, then on position for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other.lb.total_cmp(&self.lb).then_with(|| other.l.total_cmp(&self.l))
    }
}

/// Best point found on a line: (value, v, error part).
type LineBest = (f64, f64, f64);

fn improve(best: &mut LineBest, v: f64, x: f64, e: f64) {
    if v < best.0 - TIE_TOL || (v <= best.0 + TIE_TOL && (e < best.2 - TIE_TOL || (e <= best.2 + TIE_TOL && x < best.1))) {
        *best = (v, x, e);
    }
}

fn search_line(line: &Line, lo: f64, hi: f64, gamma: f64) -> LineBest {
    let pts = line.breakpoints(lo, hi);
    let vals: Vec<(f64, f64)> = pts.iter().map(|&v| line.h(v)).collect();
    let mut best = (f64::INFINITY, lo, f64::INFINITY);
    for (&x, &(v, e)) in pts.iter().zip(&vals) {
        improve(&mut best, v, x, e);
    }
    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<Node>, l: f64, h: f64, hl: f64, hh: f64, depth: usize| {
        if h - l <= 0.0 {
            return;
        }
        let lip = line.lipschitz(l, h);
        let lb = if lip.is_finite() {
            0.5 * (hl + hh) - 0.5 * lip * (h - l)
        } else {
            f64::NEG_INFINITY
        };
        heap.push(Node { lb, l, h, hl, hh, depth });
    };
    for i in 0..pts.len().saturating_sub(1) {
        push(&mut heap, pts[i], pts[i + 1], vals[i].0, vals[i + 1].0, 0);
    }
    while let Some(n) = heap.pop() {
        if n.lb >= best.0 - gamma {
            break;
        }
        let m = 0.5 * (n.l + n.h);
        if n.depth >= MAX_DEPTH || m <= n.l || m >= n.h {
            continue;
        }
        let (vm, em) = line.h(m);
        improve(&mut best, vm, m, em);
        push(&mut heap, n.l, m, n.hl, vm, n.depth + 1);
        push(&mut heap, m, n.h, vm, n.hh, n.depth + 1);
    }
    best
}

fn argmin_line(prob: &Problem, gi: usize, gamma: f64) -> LineBest {
    let (lo, hi) = prob.groups[gi].d.dom;
    search_line(&Line::new(prob, gi), lo, hi, gamma)
}

/// Minimizes H^g(v) = F(v, r_g + q_g v) over dom_g to within γ.
pub fn argmin_1d(g: usize, inputs: &AggregateInputs, beta: f64, gamma: f64) -> Result<(f64, f64)> {
    let prob = Problem::new(inputs, beta)?;
    let gp = prob
        .groups
        .get(g)
        .ok_or_else(|| Error::InvalidParameter(format!("group index {g} out of range")))?;
    if !gp.d.in_gplus {
        return Err(Error::HypothesisViolation(format!("group {g} has a label with probability 1")));
    }
    let (v, x, _) = argmin_line(&prob, g, gamma);
    Ok((x, v))
}

pub fn mindisc0_closed_form(inputs: &AggregateInputs) -> Result<f64> {
    if inputs.k() != 2 {
        return Err(Error::NotBinary(inputs.k()));
    }
    Ok(inputs
        .groups
        .iter()
        .map(|g| g.weight * (g.true_props[1] - g.pred_props[1]).abs())
        .sum())
}

/// Per-group confusion matrices realizing α⁰ values (α¹ follows).
pub fn witness_set(inputs: &AggregateInputs, alpha0: &[f64]) -> Result<ConfusionSet> {
    let per_group = inputs
        .groups
        .iter()
        .zip(alpha0)
        .map(|(g, &a0)| {
            let d = derive_group(g)?;
            let a1 = if d.in_g1 { (d.r + d.q * a0).clamp(0.0, 1.0) } else { 0.0 };
            let m = ConfusionMatrix::from_flat_unchecked(2, vec![1.0 - a0, a0, a1, 1.0 - a1]);
            Ok((g.clone(), m))
        })
        .collect::<Result<_>>()?;
    ConfusionSet::new(per_group)
}

pub fn mindisc_binary(inputs: &AggregateInputs, query: DiscrepancyQuery) -> Result<DiscrepancySolution> {
    let DiscrepancyQuery { beta, gamma } = DiscrepancyQuery::new(query.beta, query.gamma)?;
    let prob = Problem::new(inputs, beta)?;
    let (v0s, v1s) = v_candidate_sets(inputs)?;

    // (value, error, b0, b1, tag) where tag orders the V pairs before lines.
    let mut cands: Vec<(f64, f64, f64, f64, usize)> = Vec::with_capacity(v0s.len() * v1s.len());
    for &b0 in &v0s {
        for &b1 in &v1s {
            let (v, e) = prob.f(b0, b1);
            cands.push((v, e, b0, b1, 0));
        }
    }
    let lines: Vec<(f64, f64, f64, f64, usize)> = (0..prob.groups.len())
        .into_par_iter()
        .filter(|&gi| prob.groups[gi].d.in_gplus)
        .map(|gi| {
            let (v, x, e) = argmin_line(&prob, gi, gamma);
            let d = prob.groups[gi].d;
            (v, e, x, (d.r + d.q * x).clamp(0.0, 1.0), gi + 1)
        })
        .collect();
    cands.extend(lines);

    let mut best = cands[0];
    for &c in &cands[1..] {
        let key = |t: &(f64, f64, f64, f64, usize)| (t.1, t.2, t.3, t.4);
        let better = if c.0 < best.0 - TIE_TOL {
            true
        } else if c.0 <= best.0 + TIE_TOL {
            let (a, b) = (key(&c), key(&best));
            a.0 < b.0 - TIE_TOL || (a.0 <= b.0 + TIE_TOL && (a.1, a.2, a.3).partial_cmp(&(b.1, b.2, b.3)) == Some(Ordering::Less))
        } else {
            false
        };
        if better {
            best = c;
        }
    }

    let (_, _, b0, b1, _) = best;
    let alpha0: Vec<f64> = prob.groups.iter().map(|g| g.best(beta, b0, b1).1).collect();
    let set = witness_set(inputs, &alpha0)?;
    let exact = unfairness_binary_exact(&set)?;
    let error_part = crate::domain::error_of(&set);
    let unfairness_part = exact.upper;
    Ok(DiscrepancySolution {
        beta,
        value: beta * unfairness_part + (1.0 - beta) * error_part,
        unfairness_part,
        error_part,
        baseline: exact.baseline_witness,
        witness_confusions: set.per_group.into_iter().map(|(_, m)| m).collect(),
    })
}
