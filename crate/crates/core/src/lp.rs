use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-7;
const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const TINY_PIVOT: f64 = 1e-12;
const DEGENERATE_SWITCH: usize = 50;
const HARRIS_TOL: f64 = 1e-9;

/// minimize cᵀx subject to A_eq x = b_eq, A_ub x ≤ b_ub, lo ≤ x ≤ hi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// `n` variables, zero objective, bounds [0, +inf).
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    fn dense(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut row = vec![0.0; self.n_vars()];
        for &(j, v) in terms {
            row[j] += v;
        }
        row
    }

    pub fn add_eq(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.dense(terms);
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let row = self.dense(terms);
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    fn check(&self) -> Result<()> {
        let n = self.n_vars();
        let bad = self.bounds.len() != n
            || self.a_eq.len() != self.b_eq.len()
            || self.a_ub.len() != self.b_ub.len()
            || self.a_eq.iter().chain(&self.a_ub).any(|r| r.len() != n);
        if bad {
            return Err(Error::DimensionMismatch("inconsistent linear program dimensions".into()));
        }
        if let Some(&(lo, hi)) = self.bounds.iter().find(|(lo, hi)| lo > hi || lo.is_nan() || hi.is_nan()) {
            return Err(Error::InvalidParameter(format!("variable bounds [{lo}, {hi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
}

/// How an original variable is expressed through nonnegative columns.
#[derive(Clone, Copy)]
enum VarMap {
    /// x = offset + y
    Shift(f64, usize),
    /// x = offset − y
    Flip(f64, usize),
    /// x = y⁺ − y⁻
    Split(usize, usize),
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Le,
    Ge,
    Eq,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// (rows + 1) x (cols + 1); the last row holds reduced costs, the last
    /// column the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.cols + 1;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        self.t[r * w + c] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Two-pass (Harris) ratio test: among rows whose ratio is within a small
    /// tolerance of the minimum, take the largest pivot. In Bland mode the
    /// smallest basic index among exact ties wins instead.
    fn ratio_test(&self, c: usize, bland: bool) -> Option<(usize, f64)> {
        let mut bound = f64::INFINITY;
        for i in 0..self.rows {
            let a = self.at(i, c);
            if a > PIVOT_TOL {
                bound = bound.min((self.rhs(i).max(0.0) + HARRIS_TOL) / a);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut pick: Option<(usize, f64, f64)> = None;
        for i in 0..self.rows {
            let a = self.at(i, c);
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            if ratio > bound {
                continue;
            }
            let better = match pick {
                None => true,
                Some((pi, pa, pr)) => {
                    if bland {
                        ratio < pr - 1e-12 || (ratio <= pr + 1e-12 && self.basis[i] < self.basis[pi])
                    } else {
                        a > pa
                    }
                }
            };
            if better {
                pick = Some((i, a, ratio));
            }
        }
        pick.map(|(i, _, r)| (i, r))
    }

    fn run(&mut self, allowed: usize) -> Result<Outcome> {
        let max_iter = 50 * (self.rows + self.cols) + 1000;
        let obj = self.rows;
        let mut degenerate = 0usize;
        let mut tiny = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate > DEGENERATE_SWITCH;
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..allowed {
                let d = self.at(obj, j);
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else { return Ok(Outcome::Optimal) };
            let Some((r, ratio)) = self.ratio_test(c, bland) else {
                return Ok(Outcome::Unbounded);
            };
            if self.at(r, c).abs() < TINY_PIVOT {
                tiny += 1;
                if tiny > 10 {
                    return Err(Error::NumericalFailure("pivot magnitudes below 1e-12".into()));
                }
            }
            degenerate = if ratio <= 1e-12 { degenerate + 1 } else { 0 };
            self.pivot(r, c);
        }
        Err(Error::NumericalFailure("iteration limit reached".into()))
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp.check()?;
    let n = lp.n_vars();

    let mut maps = Vec::with_capacity(n);
    let mut ns = 0usize;
    let mut upper_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            maps.push(VarMap::Shift(lo, ns));
            if hi.is_finite() {
                upper_rows.push((ns, hi - lo));
            }
            ns += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Flip(hi, ns));
            ns += 1;
        } else {
            maps.push(VarMap::Split(ns, ns + 1));
            ns += 2;
        }
    }

    // Substitute x in terms of the nonnegative columns.
    let substitute = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; ns];
        let mut rhs = rhs;
        for (j, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift(off, y) => {
                    out[y] += a;
                    rhs -= a * off;
                }
                VarMap::Flip(off, y) => {
                    out[y] -= a;
                    rhs -= a * off;
                }
                VarMap::Split(p, m) => {
                    out[p] += a;
                    out[m] -= a;
                }
            }
        }
        (out, rhs)
    };

    let mut rows: Vec<(Vec<f64>, Kind, f64)> = Vec::new();
    for (r, &b) in lp.a_eq.iter().zip(&lp.b_eq) {
        let (row, rhs) = substitute(r, b);
        rows.push((row, Kind::Eq, rhs));
    }
    for (r, &b) in lp.a_ub.iter().zip(&lp.b_ub) {
        let (row, rhs) = substitute(r, b);
        rows.push((row, Kind::Le, rhs));
    }
    for &(y, ub) in &upper_rows {
        let mut row = vec![0.0; ns];
        row[y] = 1.0;
        rows.push((row, Kind::Le, ub));
    }
    for (row, kind, rhs) in rows.iter_mut() {
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            row.iter_mut().for_each(|v| *v /= scale);
            *rhs /= scale;
        }
        if *rhs < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            if *kind == Kind::Le {
                *kind = Kind::Ge;
            }
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|(_, k, _)| *k != Kind::Eq).count();
    let n_art = rows.iter().filter(|(_, k, _)| *k != Kind::Le).count();
    let art_start = ns + n_slack;
    let cols = art_start + n_art;
    let w = cols + 1;
    let mut tab = Tableau {
        rows: m,
        cols,
        t: vec![0.0; (m + 1) * w],
        basis: vec![0; m],
    };
    let (mut s, mut a) = (ns, art_start);
    for (i, (row, kind, rhs)) in rows.iter().enumerate() {
        tab.t[i * w..i * w + ns].copy_from_slice(row);
        tab.t[i * w + cols] = *rhs;
        match kind {
            Kind::Le => {
                tab.t[i * w + s] = 1.0;
                tab.basis[i] = s;
                s += 1;
            }
            Kind::Ge => {
                tab.t[i * w + s] = -1.0;
                s += 1;
                tab.t[i * w + a] = 1.0;
                tab.basis[i] = a;
                a += 1;
            }
            Kind::Eq => {
                tab.t[i * w + a] = 1.0;
                tab.basis[i] = a;
                a += 1;
            }
        }
    }

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        for j in art_start..cols {
            tab.t[m * w + j] = 1.0;
        }
        for i in 0..m {
            if tab.basis[i] >= art_start {
                for j in 0..w {
                    tab.t[m * w + j] -= tab.t[i * w + j];
                }
            }
        }
        tab.run(cols)?;
        let infeas = -tab.t[m * w + cols];
        if infeas > FEAS_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![f64::NAN; n],
                objective_value: f64::NAN,
            });
        }
        // Drive artificials out of the basis, dropping redundant rows.
        let mut i = 0;
        while i < tab.rows {
            if tab.basis[i] >= art_start {
                let col = (0..art_start)
                    .filter(|&j| tab.at(i, j).abs() > PIVOT_TOL)
                    .max_by(|&p, &q| tab.at(i, p).abs().partial_cmp(&tab.at(i, q).abs()).unwrap());
                match col {
                    Some(j) => tab.pivot(i, j),
                    None => {
                        tab.t.drain(i * w..(i + 1) * w);
                        tab.basis.remove(i);
                        tab.rows -= 1;
                        continue;
                    }
                }
            }
            i += 1;
        }
    }

    // Phase 2 over structural and slack columns.
    let m = tab.rows;
    let mut cost = vec![0.0; ns];
    for (j, &c) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shift(_, y) => cost[y] += c,
            VarMap::Flip(_, y) => cost[y] -= c,
            VarMap::Split(p, q) => {
                cost[p] += c;
                cost[q] -= c;
            }
        }
    }
    for j in 0..w {
        tab.t[m * w + j] = if j < ns { cost[j] } else { 0.0 };
    }
    for i in 0..m {
        let b = tab.basis[i];
        let cb = if b < ns { cost[b] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..w {
                tab.t[m * w + j] -= cb * tab.t[i * w + j];
            }
        }
    }
    let outcome = tab.run(art_start)?;
    if let Outcome::Unbounded = outcome {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![f64::NAN; n],
            objective_value: f64::NEG_INFINITY,
        });
    }

    let mut y = vec![0.0; ns];
    for i in 0..m {
        if tab.basis[i] < ns {
            y[tab.basis[i]] = tab.rhs(i).max(0.0);
        }
    }
    let x: Vec<f64> = maps
        .iter()
        .zip(&lp.bounds)
        .map(|(mp, &(lo, hi))| {
            let v = match *mp {
                VarMap::Shift(off, j) => off + y[j],
                VarMap::Flip(off, j) => off - y[j],
                VarMap::Split(p, q) => y[p] - y[q],
            };
            v.clamp(lo, hi)
        })
        .collect();

    let worst = residual(lp, &x);
    if worst > FEAS_TOL {
        return Err(Error::NumericalFailure(format!(
            "constraint residual {worst:e} at reported optimum"
        )));
    }
    let objective_value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
    })
}

/// Largest violation of any constraint or bound at `x`.
pub fn residual(lp: &LinearProgram, x: &[f64]) -> f64 {
    let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let eq = lp.a_eq.iter().zip(&lp.b_eq).map(|(r, b)| (dot(r) - b).abs());
    let ub = lp.a_ub.iter().zip(&lp.b_ub).map(|(r, b)| (dot(r) - b).max(0.0));
    let bx = x.iter().zip(&lp.bounds).map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0));
    eq.chain(ub).chain(bx).fold(0.0, f64::max)
}
