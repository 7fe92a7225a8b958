use serde::{Deserialize, Serialize};

use crate::audit::fair_error_lower_bound;
use crate::binary::DiscrepancySolution;
use crate::domain::{error_of, AggregateInputs, ConfusionMatrix, ConfusionSet};
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpStatus};
use crate::scalar::{eta_raw, eta_split_partials, tau};
use crate::unfairness::{local_minimize_row, objective_y};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlpParams {
    pub max_iter: usize,
    pub eps_stop: f64,
    pub trust_radius: f64,
    pub prune_threshold: f64,
    pub clamp_eps: f64,
}

impl Default for SlpParams {
    fn default() -> Self {
        Self {
            max_iter: 200,
            eps_stop: 1e-7,
            trust_radius: 0.1,
            prune_threshold: -1.0,
            clamp_eps: 1e-5,
        }
    }
}

impl SlpParams {
    fn check(&self) -> Result<()> {
        let ok = self.max_iter > 0 && self.eps_stop > 0.0 && self.trust_radius > 0.0 && self.prune_threshold <= 0.0 && self.clamp_eps > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Iterate of the multiclass sequential LP. `h[y][g]` is row y of group g's
/// confusion matrix, `c[y][g]` its η proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlpState {
    pub alpha: Vec<Vec<f64>>,
    pub h: Vec<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub objective: f64,
}

impl SlpState {
    /// Starts from a known solution (for example the exact binary one).
    pub fn from_solution(sol: &DiscrepancySolution) -> Self {
        let k = sol.baseline.k();
        let alpha = sol.baseline.rows();
        let h = (0..k)
            .map(|y| sol.witness_confusions.iter().map(|m| m.row(y).to_vec()).collect())
            .collect();
        Self {
            alpha,
            h,
            c: Vec::new(),
            objective: f64::NAN,
        }
    }
}

struct Setup<'a> {
    inputs: &'a AggregateInputs,
    beta: f64,
    eps: f64,
    k: usize,
    ng: usize,
    /// w_g π_g^y indexed [y][g]
    wt: Vec<Vec<f64>>,
    /// ε-adjusted predicted proportions [g][z]
    p_adj: Vec<Vec<f64>>,
}

impl<'a> Setup<'a> {
    fn new(inputs: &'a AggregateInputs, beta: f64, eps: f64) -> Self {
        let k = inputs.k();
        let ng = inputs.n_groups();
        let wt = (0..k)
            .map(|y| inputs.groups.iter().map(|g| g.weight * g.true_props[y]).collect())
            .collect();
        let p_adj = inputs
            .groups
            .iter()
            .map(|g| g.pred_props.iter().map(|p| (1.0 - k as f64 * eps) * p + eps).collect())
            .collect();
        Self {
            inputs,
            beta,
            eps,
            k,
            ng,
            wt,
            p_adj,
        }
    }

    fn ia(&self, y: usize, z: usize) -> usize {
        y * self.k + z
    }

    fn ih(&self, y: usize, g: usize, z: usize) -> usize {
        self.k * self.k + (y * self.ng + g) * self.k + z
    }

    fn ic(&self, y: usize, g: usize) -> usize {
        self.k * self.k * (1 + self.ng) + y * self.ng + g
    }

    fn n_vars(&self) -> usize {
        self.k * self.k * (1 + self.ng) + self.k * self.ng
    }

    fn objective(&self, alpha: &[Vec<f64>], h: &[Vec<Vec<f64>>]) -> f64 {
        let mut unf = 0.0;
        let mut err = 0.0;
        for y in 0..self.k {
            for g in 0..self.ng {
                let w = self.wt[y][g];
                if w > 0.0 {
                    let m = alpha[y].iter().zip(&h[y][g]).map(|(&a, &b)| eta_raw(a, b)).fold(0.0, f64::max);
                    unf += w * m;
                    err += w * (1.0 - h[y][g][y]);
                }
            }
        }
        self.beta * unf + (1.0 - self.beta) * err
    }

    fn adjust_row(&self, row: &[f64]) -> Vec<f64> {
        let s = 1.0 - self.k as f64 * self.eps;
        row.iter().map(|v| s * v + self.eps).collect()
    }

    fn alpha_from_h(&self, h: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|y| {
                let tot: f64 = self.wt[y].iter().sum();
                if tot <= 0.0 {
                    return vec![1.0 / self.k as f64; self.k];
                }
                (0..self.k)
                    .map(|z| (0..self.ng).map(|g| self.wt[y][g] * h[y][g][z]).sum::<f64>() / tot)
                    .collect()
            })
            .collect()
    }

    fn auto_init(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
        let fair = fair_error_lower_bound(self.inputs, 0.0)?;
        let h: Vec<Vec<Vec<f64>>> = match fair.witness {
            Some(a) => (0..self.k).map(|y| vec![self.adjust_row(a.row(y)); self.ng]).collect(),
            None => (0..self.k)
                .map(|_| (0..self.ng).map(|g| self.adjust_row(&self.inputs.groups[g].pred_props)).collect())
                .collect(),
        };
        Ok((self.alpha_from_h(&h), h))
    }

    /// Builds the linearized subproblem around (alpha, h).
    fn subproblem(&self, alpha: &[Vec<f64>], h: &[Vec<Vec<f64>>], p: &SlpParams) -> LinearProgram {
        let (k, ng, eps, tr) = (self.k, self.ng, self.eps, p.trust_radius);
        let mut prog = LinearProgram::new(self.n_vars());
        let boxed = |x: f64| ((x - tr).max(eps), (x + tr).min(1.0 - eps));
        for y in 0..k {
            for z in 0..k {
                prog.bounds[self.ia(y, z)] = boxed(alpha[y][z]);
                for g in 0..ng {
                    prog.bounds[self.ih(y, g, z)] = boxed(h[y][g][z]);
                }
            }
            for g in 0..ng {
                let w = self.wt[y][g];
                prog.bounds[self.ic(y, g)] = if w > 0.0 { (0.0, f64::INFINITY) } else { (0.0, 0.0) };
                prog.objective[self.ic(y, g)] = self.beta * w;
                prog.objective[self.ih(y, g, y)] = -(1.0 - self.beta) * w;
            }
        }
        for y in 0..k {
            prog.add_eq(&(0..k).map(|z| (self.ia(y, z), 1.0)).collect::<Vec<_>>(), 1.0);
            for g in 0..ng {
                prog.add_eq(&(0..k).map(|z| (self.ih(y, g, z), 1.0)).collect::<Vec<_>>(), 1.0);
            }
        }
        for g in 0..ng {
            let pi = &self.inputs.groups[g].true_props;
            for z in 0..k {
                let terms: Vec<(usize, f64)> = (0..k).map(|y| (self.ih(y, g, z), pi[y])).collect();
                prog.add_eq(&terms, self.p_adj[g][z]);
            }
        }
        for y in 0..k {
            for g in 0..ng {
                if self.wt[y][g] <= 0.0 || self.beta == 0.0 {
                    continue;
                }
                for z in 0..k {
                    let (a, b) = (alpha[y][z], h[y][g][z]);
                    let ((da1, db1), (da2, db2)) = eta_split_partials(a, b);
                    let e1 = 1.0 - b / a;
                    let e2 = 1.0 - (1.0 - b) / (1.0 - a);
                    for (e, da, db) in [(e1, da1, db1), (e2, da2, db2)] {
                        if e < p.prune_threshold {
                            continue;
                        }
                        let terms = [(self.ia(y, z), da), (self.ih(y, g, z), db), (self.ic(y, g), -1.0)];
                        prog.add_le(&terms, da * a + db * b - e);
                    }
                }
            }
        }
        prog
    }

    fn unpack(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let alpha = (0..self.k).map(|y| (0..self.k).map(|z| x[self.ia(y, z)]).collect()).collect();
        let h = (0..self.k)
            .map(|y| (0..self.ng).map(|g| (0..self.k).map(|z| x[self.ih(y, g, z)]).collect()).collect())
            .collect();
        (alpha, h)
    }
}

fn lerp3(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>], t: f64) -> Vec<Vec<Vec<f64>>> {
    a.iter().zip(b).map(|(x, y)| lerp2(x, y, t)).collect()
}

fn lerp2(a: &[Vec<f64>], b: &[Vec<f64>], t: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + t * (v - u)).collect())
        .collect()
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Runs the sequential LP and returns the final iterate.
pub fn slp_minimize(inputs: &AggregateInputs, beta: f64, params: &SlpParams, init: Option<SlpState>) -> Result<SlpState> {
    params.check()?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta = {beta} not in [0, 1]")));
    }
    let st = Setup::new(inputs, beta, params.clamp_eps);
    let (mut alpha, mut h) = match init {
        Some(s) => {
            let h: Vec<Vec<Vec<f64>>> = s.h.iter().map(|rows| rows.iter().map(|r| st.adjust_row(r)).collect()).collect();
            let alpha = s.alpha.iter().map(|r| st.adjust_row(r)).collect();
            (alpha, h)
        }
        None => st.auto_init()?,
    };
    let mut cur = st.objective(&alpha, &h);
    for _ in 0..params.max_iter {
        let prog = st.subproblem(&alpha, &h, params);
        let sol = match lp::solve(&prog) {
            Ok(s) if s.status == LpStatus::Optimal => s,
            Ok(s) if s.status == LpStatus::Infeasible => {
                return Err(Error::LpFailure("linearized subproblem infeasible".into()));
            }
            _ => break,
        };
        let (na, nh) = st.unpack(&sol.x);
        let step = max_abs_diff(&na, &alpha).max(h.iter().zip(&nh).map(|(a, b)| max_abs_diff(a, b)).fold(0.0, f64::max));
        if step < params.eps_stop {
            break;
        }
        let mut mu = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let ca = lerp2(&alpha, &na, mu);
            let ch = lerp3(&h, &nh, mu);
            let v = st.objective(&ca, &ch);
            if v < cur {
                alpha = ca;
                h = ch;
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
    let c = (0..st.k)
        .map(|y| {
            (0..st.ng)
                .map(|g| alpha[y].iter().zip(&h[y][g]).map(|(&a, &b)| eta_raw(a, b)).fold(0.0, f64::max))
                .collect()
        })
        .collect();
    Ok(SlpState {
        alpha,
        h,
        c,
        objective: cur,
    })
}

/// Upper bound on mindisc_β from the sequential LP. The returned witness
/// reproduces the unadjusted predicted proportions.
pub fn mindisc_multiclass_upper(
    inputs: &AggregateInputs,
    beta: f64,
    params: &SlpParams,
    init: Option<SlpState>,
) -> Result<DiscrepancySolution> {
    let state = slp_minimize(inputs, beta, params, init)?;
    let (k, eps) = (inputs.k(), params.clamp_eps);
    let scale = 1.0 - k as f64 * eps;
    let unadjust = |row: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = row.iter().map(|v| ((v - eps) / scale).max(0.0)).collect();
        let s: f64 = r.iter().sum();
        r.into_iter().map(|v| v / s).collect()
    };
    let per_group = inputs
        .groups
        .iter()
        .enumerate()
        .map(|(g, stats)| {
            let flat: Vec<f64> = (0..k).flat_map(|y| unadjust(&state.h[y][g])).collect();
            (stats.clone(), ConfusionMatrix::from_flat_unchecked(k, flat))
        })
        .collect();
    let set = ConfusionSet::new(per_group)?;
    let mut baseline = Vec::with_capacity(k * k);
    let mut unfairness = 0.0;
    for y in 0..k {
        let start = unadjust(&state.alpha[y]);
        let refined = local_minimize_row(&start, &set, y, 100, 1e-7)?;
        let (a, b) = (objective_y(&start, &set, y), objective_y(&refined, &set, y));
        let (row, v) = if b < a { (refined, b) } else { (start, a) };
        unfairness += v;
        baseline.extend(row);
    }
    let error = error_of(&set);
    Ok(DiscrepancySolution {
        beta,
        value: beta * unfairness + (1.0 - beta) * error,
        unfairness_part: unfairness,
        error_part: error,
        baseline: ConfusionMatrix::from_flat_unchecked(k, baseline),
        witness_confusions: set.per_group.into_iter().map(|(_, m)| m).collect(),
    })
}

/// Sound lower bound on mindisc_β: the η term of each true label is bounded
/// below by its diagonal entry, which decouples the labels. Each diagonal
/// entry d of group g is confined to [lo, hi] by the predicted proportions.
pub fn mindisc_multiclass_lower(inputs: &AggregateInputs, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("beta = {beta} not in [0, 1]")));
    }
    let mut total = 0.0;
    for y in 0..inputs.k() {
        let terms: Vec<(f64, f64, f64)> = inputs
            .groups
            .iter()
            .filter(|g| g.weight * g.true_props[y] > 0.0)
            .map(|g| {
                let (pi, p) = (g.true_props[y], g.pred_props[y]);
                let lo = ((p - 1.0 + pi) / pi).clamp(0.0, 1.0);
                let hi = (p / pi).clamp(lo, 1.0);
                (g.weight * pi, lo, hi)
            })
            .collect();
        let inner = |x: f64, lo: f64, hi: f64| -> f64 {
            [lo, hi, x.clamp(lo, hi)]
                .iter()
                .map(|&d| tau(beta, x, d).unwrap_or(f64::INFINITY))
                .fold(f64::INFINITY, f64::min)
        };
        let mut cands = vec![0.0, 1.0];
        for &(_, lo, hi) in &terms {
            cands.extend([lo, hi]);
        }
        let best = cands
            .iter()
            .map(|&x| terms.iter().map(|&(w, lo, hi)| w * inner(x, lo, hi)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        total += best;
    }
    Ok(total)
}
