//! Independent oracles and random instance generators shared by the
//! integration tests (and the acceptance runner in the cli crate).
#![allow(dead_code)]

use fairscope_core::lp::LinearProgram;
use fairscope_core::{AggregateInputs, ConfusionMatrix, ConfusionSet, GroupStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Written out again here so the oracles do not share code with the library.
pub fn eta(a: f64, b: f64) -> f64 {
    if b < a {
        1.0 - b / a
    } else if b > a {
        1.0 - (1.0 - b) / (1.0 - a)
    } else {
        0.0
    }
}

pub fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -rng.gen_range(1e-3f64..1.0).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Two-label inputs with π¹ in [0.05, 0.95] and p̂¹ in [0.02, 0.98].
pub fn binary_inputs(rng: &mut ChaCha8Rng, n_groups: usize) -> AggregateInputs {
    let w = simplex(rng, n_groups);
    let groups = (0..n_groups)
        .map(|g| {
            let pi1: f64 = rng.gen_range(0.05..0.95);
            let p1: f64 = rng.gen_range(0.02..0.98);
            GroupStats::new(format!("g{g}"), w[g], vec![1.0 - pi1, pi1], vec![1.0 - p1, p1])
        })
        .collect();
    AggregateInputs::new(groups).unwrap()
}

pub fn confusion_set(rng: &mut ChaCha8Rng, k: usize, n_groups: usize) -> ConfusionSet {
    let w = simplex(rng, n_groups);
    let per_group = (0..n_groups)
        .map(|g| {
            let pi = simplex(rng, k);
            let rows = (0..k).map(|_| simplex(rng, k)).collect();
            (
                GroupStats::new(format!("g{g}"), w[g], pi, vec![]),
                ConfusionMatrix::from_rows(rows).unwrap(),
            )
        })
        .collect();
    ConfusionSet::new(per_group).unwrap()
}

/// Random simplex vector whose entries are multiples of `1/denom`.
pub fn lattice_simplex(rng: &mut ChaCha8Rng, k: usize, denom: u32) -> Vec<f64> {
    let mut cuts: Vec<u32> = (0..k - 1).map(|_| rng.gen_range(0..=denom)).collect();
    cuts.push(0);
    cuts.push(denom);
    cuts.sort_unstable();
    cuts.windows(2).map(|w| (w[1] - w[0]) as f64 / denom as f64).collect()
}

/// Like [`confusion_set`] with matrix entries on the `1/denom` lattice.
pub fn lattice_confusion_set(rng: &mut ChaCha8Rng, k: usize, n_groups: usize, denom: u32) -> ConfusionSet {
    let w = simplex(rng, n_groups);
    let per_group = (0..n_groups)
        .map(|g| {
            let pi = simplex(rng, k);
            let rows = (0..k).map(|_| lattice_simplex(rng, k, denom)).collect();
            (
                GroupStats::new(format!("g{g}"), w[g], pi, vec![]),
                ConfusionMatrix::from_rows(rows).unwrap(),
            )
        })
        .collect();
    ConfusionSet::new(per_group).unwrap()
}

/// Every group shares one random matrix.
pub fn fair_set(rng: &mut ChaCha8Rng, k: usize, n_groups: usize) -> ConfusionSet {
    let w = simplex(rng, n_groups);
    let a = ConfusionMatrix::from_rows((0..k).map(|_| simplex(rng, k)).collect()).unwrap();
    let per_group = (0..n_groups)
        .map(|g| (GroupStats::new(format!("g{g}"), w[g], simplex(rng, k), vec![]), a.clone()))
        .collect();
    ConfusionSet::new(per_group).unwrap()
}

/// A consistent two-label confusion set for `inputs` with α⁰ drawn uniformly
/// from each group's feasible interval.
pub fn binary_witness(rng: &mut ChaCha8Rng, inputs: &AggregateInputs) -> ConfusionSet {
    let per_group = inputs
        .groups
        .iter()
        .map(|g| {
            let (pi0, pi1, p1) = (g.true_props[0], g.true_props[1], g.pred_props[1]);
            // p1 = π0 α0 + π1 (1 − α1)
            let lo = ((p1 - pi1) / pi0).max(0.0);
            let hi = (p1 / pi0).min(1.0);
            let a0 = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
            let a1 = (1.0 - (p1 - pi0 * a0) / pi1).clamp(0.0, 1.0);
            let m = ConfusionMatrix::from_rows(vec![vec![1.0 - a0, a0], vec![a1, 1.0 - a1]]).unwrap();
            (GroupStats::new(g.group_id.clone(), g.weight, g.true_props.clone(), vec![]), m)
        })
        .collect();
    ConfusionSet::new(per_group).unwrap()
}

/// Per group: (w, π⁰, π¹, r, q, lo, hi) with α¹ = r + q α⁰ on [lo, hi].
fn binary_lines(inputs: &AggregateInputs) -> Vec<[f64; 7]> {
    inputs
        .groups
        .iter()
        .map(|g| {
            let (pi0, pi1, p1) = (g.true_props[0], g.true_props[1], g.pred_props[1]);
            let r = 1.0 - p1 / pi1;
            let q = pi0 / pi1;
            [g.weight, pi0, pi1, r, q, (-r / q).max(0.0), ((1.0 - r) / q).min(1.0)]
        })
        .collect()
}

/// β·unfairness + (1−β)·error of group data at baseline (b0, b1) and α⁰ = s.
fn group_disc(l: &[f64; 7], beta: f64, b0: f64, b1: f64, s: f64) -> f64 {
    let [w, pi0, pi1, r, q, _, _] = *l;
    let a1 = (r + q * s).clamp(0.0, 1.0);
    w * (beta * (pi0 * eta(b0, s) + pi1 * eta(b1, a1)) + (1.0 - beta) * (pi0 * s + pi1 * a1))
}

/// Minimum over α⁰ ∈ dom of one group's discrepancy on a grid of `n` steps.
pub fn group_grid_min(inputs: &AggregateInputs, g: usize, beta: f64, b0: f64, b1: f64, step: f64) -> f64 {
    let l = binary_lines(inputs)[g];
    let n = ((l[6] - l[5]) / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| group_disc(&l, beta, b0, b1, (l[5] + i as f64 * step).min(l[6])))
        .fold(f64::INFINITY, f64::min)
}

/// mindisc_β by a dense grid over baselines (b0, b1). For each baseline the
/// inner minimum over α⁰ uses the four candidates {lo, hi, b0, (b1 − r)/q}.
/// The lo/hi terms separate in b0 and b1 and are tabulated up front.
pub fn binary_mindisc_grid(inputs: &AggregateInputs, beta: f64, step: f64) -> f64 {
    let lines = binary_lines(inputs);
    let n = (1.0 / step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(1.0)).collect();
    // tab[g][end] = (part depending on b0, part depending on b1), error included in the first.
    let tab: Vec<[(Vec<f64>, Vec<f64>); 2]> = lines
        .iter()
        .map(|l| {
            let [w, pi0, pi1, r, q, lo, hi] = *l;
            let mk = |s: f64| {
                let a1 = (r + q * s).clamp(0.0, 1.0);
                let err = (1.0 - beta) * (pi0 * s + pi1 * a1);
                let f0: Vec<f64> = grid.iter().map(|&b0| w * (beta * pi0 * eta(b0, s) + err)).collect();
                let f1: Vec<f64> = grid.iter().map(|&b1| w * beta * pi1 * eta(b1, a1)).collect();
                (f0, f1)
            };
            [mk(lo), mk(hi)]
        })
        .collect();
    let mut best = f64::INFINITY;
    for (i, &b0) in grid.iter().enumerate() {
        for (j, &b1) in grid.iter().enumerate() {
            let mut total = 0.0;
            for (g, l) in lines.iter().enumerate() {
                let [_, _, _, r, q, lo, hi] = *l;
                let t = &tab[g];
                let mut m = (t[0].0[i] + t[0].1[j]).min(t[1].0[i] + t[1].1[j]);
                if b0 > lo && b0 < hi {
                    m = m.min(group_disc(l, beta, b0, b1, b0));
                }
                let s = (b1 - r) / q;
                if s > lo && s < hi {
                    m = m.min(group_disc(l, beta, b0, b1, s));
                }
                total += m;
                if total >= best {
                    break;
                }
            }
            best = best.min(total);
        }
    }
    best
}

/// Exact two-label unfairness by a baseline grid; the objective separates
/// into one term per true label.
pub fn binary_unfairness_grid(set: &ConfusionSet, step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    (0..2)
        .map(|y| {
            let z = 1 - y;
            (0..=n)
                .map(|i| {
                    let b = (i as f64 * step).min(1.0);
                    set.per_group
                        .iter()
                        .map(|(g, a)| g.weight * g.true_props[y] * eta(b, a.get(y, z)))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Three-label unfairness by brute force over a simplex grid per row.
pub fn ternary_unfairness_grid(set: &ConfusionSet, step: f64) -> f64 {
    assert_eq!(set.k(), 3);
    let n = (1.0 / step).round() as usize;
    (0..3)
        .map(|y| {
            let mut best = f64::INFINITY;
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let row = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                    let v: f64 = set
                        .per_group
                        .iter()
                        .map(|(g, a)| g.weight * g.true_props[y] * (0..3).map(|z| eta(row[z], a.get(y, z))).fold(0.0, f64::max))
                        .sum();
                    best = best.min(v);
                }
            }
            best
        })
        .sum()
}

/// Random LP `min cᵀx, A x ≤ b, 0 ≤ x ≤ 10` with `n` variables and `m` rows.
pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearProgram {
    let mut lp = LinearProgram::new(n);
    lp.objective = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for _ in 0..m {
        let terms: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        lp.add_le(&terms, rng.gen_range(-0.5..2.0));
    }
    lp.bounds = vec![(0.0, 10.0); n];
    lp
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for i in 0..n {
            if i != col {
                let f = a[i][col] / a[col][col];
                for j in col..n {
                    a[i][j] -= f * a[col][j];
                }
                b[i] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Optimum of an LP from `random_lp` by enumerating every vertex.
/// `None` when no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for (r, &b) in lp.a_ub.iter().zip(&lp.b_ub) {
        rows.push((r.clone(), b));
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = -1.0;
        rows.push((e.clone(), 0.0));
        e[j] = 1.0;
        rows.push((e, lp.bounds[j].1));
    }
    let feasible = |x: &[f64]| {
        rows.iter()
            .all(|(r, b)| r.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() <= b + 1e-9)
    };
    let mut best: Option<f64> = None;
    let mut pick = Vec::with_capacity(n);
    fn combos(start: usize, total: usize, n: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if pick.len() == n {
            f(pick);
            return;
        }
        for i in start..total {
            pick.push(i);
            combos(i + 1, total, n, pick, f);
            pick.pop();
        }
    }
    combos(0, rows.len(), n, &mut pick, &mut |idx| {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| rows[i].1).collect();
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let v: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(best.map_or(v, |bv: f64| bv.min(v)));
            }
        }
    });
    best
}
