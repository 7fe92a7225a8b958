mod common;

use common::*;
use fairscope_core::audit::fair_error_lower_bound;
use fairscope_core::binary::{candidate_set_s, d_beta_g, derive_group, mindisc0_closed_form, mindisc_binary, DiscrepancyQuery};
use fairscope_core::lp::{self, LpStatus};
use fairscope_core::multiclass::{mindisc_multiclass_lower, mindisc_multiclass_upper, SlpParams, SlpState};
use fairscope_core::scalar::{psi_deriv_bound, tau, AffinePair, Side};
use fairscope_core::unfairness::{unfairness_binary_exact, unfairness_multiclass_bounds, UnfairnessOptions};
use fairscope_core::{error_of, AggregateInputs, ConfusionMatrix, ConfusionSet, GroupStats};
use rand::Rng;

fn q(beta: f64, gamma: f64) -> DiscrepancyQuery {
    DiscrepancyQuery::new(beta, gamma).unwrap()
}

#[test]
fn error_of_matches_counted_population() {
    // Tenths everywhere so a population of 1000 per group has integer cells.
    let mut rng = rng(11);
    for _ in 0..20 {
        let tenths = |rng: &mut rand_chacha::ChaCha8Rng| {
            let a = rng.gen_range(0..=10u32);
            let b = rng.gen_range(0..=(10 - a));
            vec![a, b, 10 - a - b]
        };
        let groups: Vec<(Vec<u32>, Vec<Vec<u32>>)> = (0..2)
            .map(|_| (tenths(&mut rng), (0..3).map(|_| tenths(&mut rng)).collect()))
            .collect();
        let (mut wrong, mut total) = (0u64, 0u64);
        for (pi, a) in &groups {
            for y in 0..3 {
                for z in 0..3 {
                    let n = (pi[y] * a[y][z]) as u64 * 10;
                    total += n;
                    if y != z {
                        wrong += n;
                    }
                }
            }
        }
        let set = ConfusionSet::new(
            groups
                .iter()
                .enumerate()
                .map(|(i, (pi, a))| {
                    let f = |v: &Vec<u32>| v.iter().map(|&x| x as f64 / 10.0).collect::<Vec<f64>>();
                    (
                        GroupStats::new(format!("g{i}"), 0.5, f(pi), vec![]),
                        ConfusionMatrix::from_rows(a.iter().map(f).collect()).unwrap(),
                    )
                })
                .collect(),
        )
        .unwrap();
        assert!((error_of(&set) - wrong as f64 / total as f64).abs() < 1e-12);
    }
}

#[test]
fn psi_bound_dominates_finite_differences() {
    let mut rng = rng(3);
    let h = 1e-7;
    let mut checked = 0;
    while checked < 200 {
        let p = AffinePair::new(
            rng.gen_range(-0.5..1.0),
            rng.gen_range(0.05..2.0),
            rng.gen_range(-0.5..1.0),
            rng.gen_range(0.0..2.0),
        );
        let beta: f64 = rng.gen_range(0.0..=1.0);
        let x: f64 = rng.gen_range(-1.0..1.0);
        let inside = |x: f64| {
            let (u, v) = p.at(x);
            u > 1e-3 && u < 1.0 - 1e-3 && v > 1e-3 && v < 1.0 - 1e-3
        };
        if !inside(x - h) || !inside(x + h) {
            continue;
        }
        let side = match p.crossing() {
            Some(c) if (x - c).abs() < 1e-4 => continue,
            Some(c) if x < c => Side::Left,
            Some(_) => Side::Right,
            None => Side::Left,
        };
        let psi = |x: f64| {
            let (u, v) = p.at(x);
            tau(beta, u, v).unwrap()
        };
        let fd = (psi(x + h) - psi(x - h)) / (2.0 * h);
        let bound = psi_deriv_bound(p, beta, side).unwrap();
        assert!(fd.abs() <= bound + 1e-6, "{p:?} beta={beta} x={x}: |{fd}| > {bound}");
        checked += 1;
    }
}

#[test]
fn candidate_set_attains_group_minimum() {
    let mut rng = rng(5);
    for _ in 0..100 {
        let inputs = binary_inputs(&mut rng, 1);
        let g = &inputs.groups[0];
        let d = derive_group(g).unwrap();
        let base = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let beta: f64 = rng.gen_range(0.0..=1.0);
        let fin = candidate_set_s(base, g, &d)
            .into_iter()
            .map(|s| d_beta_g(base, s, &d, g, beta).unwrap())
            .fold(f64::INFINITY, f64::min);
        let (lo, hi) = d.dom;
        let n = ((hi - lo) / 1e-5).ceil() as usize;
        let grid = (0..=n)
            .map(|i| d_beta_g(base, (lo + i as f64 * 1e-5).min(hi), &d, g, beta).unwrap())
            .fold(f64::INFINITY, f64::min);
        // Grid points are feasible, so the finite set can only be lower; the
        // gap is the grid's own resolution error.
        assert!(fin <= grid + 1e-12, "finite {fin} above grid {grid}");
        assert!(grid - fin < 1e-4, "finite {fin} vs grid {grid}");
        let cands = candidate_set_s(base, g, &d);
        let refined = cands
            .iter()
            .flat_map(|&c| (-100..=100).map(move |i| (c + i as f64 * 1e-9).clamp(lo, hi)))
            .map(|s| d_beta_g(base, s, &d, g, beta).unwrap())
            .fold(grid, f64::min);
        assert!((fin - refined).abs() < 1e-6, "finite {fin} vs refined grid {refined}");
        // The library's D agrees with the independently written group term.
        let oracle = group_grid_min(&inputs, 0, beta, base.0, base.1, 1e-5);
        assert!((oracle - grid).abs() < 1e-9, "{oracle} vs {grid}");
    }
}

#[test]
fn mindisc_binary_matches_baseline_grid() {
    let mut rng = rng(17);
    for _ in 0..8 {
        let n = rng.gen_range(1..=4);
        let inputs = binary_inputs(&mut rng, n);
        let beta: f64 = rng.gen_range(0.0..=1.0);
        let exact = mindisc_binary(&inputs, q(beta, 1e-6)).unwrap().value;
        let grid = binary_mindisc_grid(&inputs, beta, 1e-3);
        assert!(exact <= grid + 1e-6, "exact {exact} above grid {grid}");
        assert!(grid - exact < 3e-3, "exact {exact} far below grid {grid}");
    }
}

#[test]
fn mindisc_binary_beta_zero_is_closed_form() {
    let mut rng = rng(19);
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let inputs = binary_inputs(&mut rng, n);
        let got = mindisc_binary(&inputs, q(0.0, 1e-6)).unwrap().value;
        let want: f64 = inputs
            .groups
            .iter()
            .map(|g| g.weight * (g.true_props[1] - g.pred_props[1]).abs())
            .sum();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!((mindisc0_closed_form(&inputs).unwrap() - want).abs() < 1e-15);
    }
}

#[test]
fn consistent_witnesses_never_beat_mindisc() {
    let mut rng = rng(23);
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let inputs = binary_inputs(&mut rng, n);
        let beta: f64 = rng.gen_range(0.0..=1.0);
        let m = mindisc_binary(&inputs, q(beta, 1e-6)).unwrap().value;
        for _ in 0..3 {
            let set = binary_witness(&mut rng, &inputs);
            let u = unfairness_binary_exact(&set).unwrap().upper;
            let disc = beta * u + (1.0 - beta) * error_of(&set);
            assert!(disc >= m - 1e-6, "witness {disc} below mindisc {m}");
        }
    }
}

#[test]
fn binary_unfairness_matches_grid() {
    let mut rng = rng(29);
    for _ in 0..50 {
        let n = rng.gen_range(1..=5);
        // On the grid's lattice every breakpoint is a grid point.
        let set = lattice_confusion_set(&mut rng, 2, n, 10_000);
        let exact = unfairness_binary_exact(&set).unwrap();
        let grid = binary_unfairness_grid(&set, 1e-4);
        assert!((exact.upper - grid).abs() < 1e-5, "{} vs {grid}", exact.upper);
        assert!((exact.lower - exact.upper).abs() < 1e-12);

        let set = confusion_set(&mut rng, 2, n);
        let exact = unfairness_binary_exact(&set).unwrap().upper;
        let grid = binary_unfairness_grid(&set, 1e-4);
        assert!(exact <= grid + 1e-12 && grid - exact < 1e-3, "{exact} vs {grid}");
    }
}

#[test]
fn two_group_unequal_unfairness_is_one_tenth() {
    let set = ConfusionSet::new(vec![
        (
            GroupStats::new("L", 0.5, vec![0.7, 0.3], vec![]),
            ConfusionMatrix::from_rows(vec![vec![5.0 / 7.0, 2.0 / 7.0], vec![0.0, 1.0]]).unwrap(),
        ),
        (GroupStats::new("R", 0.5, vec![0.3, 0.7], vec![]), ConfusionMatrix::identity(2)),
    ])
    .unwrap();
    assert!((unfairness_binary_exact(&set).unwrap().upper - 0.1).abs() < 1e-12);
    assert!((binary_unfairness_grid(&set, 1e-4) - 0.1).abs() < 1e-12);
}

#[test]
fn multiclass_unfairness_brackets_grid() {
    let mut rng = rng(31);
    for _ in 0..10 {
        let n = rng.gen_range(1..=4);
        let set = confusion_set(&mut rng, 3, n);
        let r = unfairness_multiclass_bounds(&set, &UnfairnessOptions::default()).unwrap();
        let grid = ternary_unfairness_grid(&set, 1e-2);
        assert!(r.lower <= grid + 1e-12, "lower {} above grid {grid}", r.lower);
        assert!(r.lower <= r.upper + 1e-12);
        // Both the grid and the local search are feasible baselines.
        assert!(r.upper <= grid + 0.1, "upper {} far above grid {grid}", r.upper);
    }
}

#[test]
fn fair_multiclass_sets_have_zero_bounds() {
    let mut rng = rng(37);
    for _ in 0..10 {
        let set = fair_set(&mut rng, 3, 3);
        let r = unfairness_multiclass_bounds(&set, &UnfairnessOptions::default()).unwrap();
        assert_eq!(r.lower, 0.0);
        assert!(r.upper <= 1e-3, "{}", r.upper);
    }
}

/// A fair three-label set on which the one-versus-rest collapse of the
/// inputs reports positive discrepancy, so that collapse is no lower bound.
#[test]
fn one_vs_rest_collapse_overstates_fair_set() {
    let a = ConfusionMatrix::from_rows(vec![vec![0.12, 0.1, 0.78], vec![0.68, 0.3, 0.02], vec![0.34, 0.53, 0.13]]).unwrap();
    let set = ConfusionSet::new(vec![
        (GroupStats::new("a", 0.5, vec![0.1, 0.1, 0.8], vec![]), a.clone()),
        (GroupStats::new("b", 0.5, vec![0.8, 0.1, 0.1], vec![]), a),
    ])
    .unwrap();
    let inputs = set.inputs();
    let collapsed = |y: usize| {
        AggregateInputs::new(
            inputs
                .groups
                .iter()
                .map(|g| {
                    GroupStats::new(
                        g.group_id.clone(),
                        g.weight,
                        vec![g.true_props[y], 1.0 - g.true_props[y]],
                        vec![g.pred_props[y], 1.0 - g.pred_props[y]],
                    )
                })
                .collect(),
        )
        .unwrap()
    };
    let worst = (0..3)
        .map(|y| mindisc_binary(&collapsed(y), q(1.0, 1e-6)).unwrap().value)
        .fold(0.0, f64::max);
    assert!(worst > 0.15, "{worst}");
    assert_eq!(
        unfairness_multiclass_bounds(&set, &UnfairnessOptions::default()).unwrap().lower,
        0.0
    );
    assert!(mindisc_multiclass_lower(&inputs, 1.0).unwrap() <= 1e-12);
}

#[test]
fn multiclass_bounds_bracket_known_sets() {
    let mut rng = rng(41);
    for _ in 0..4 {
        let set = confusion_set(&mut rng, 3, 2);
        let inputs = set.inputs();
        let beta: f64 = rng.gen_range(0.0..=1.0);
        let known = unfairness_multiclass_bounds(&set, &UnfairnessOptions::default()).unwrap().upper;
        let disc = beta * known + (1.0 - beta) * error_of(&set);
        let lo = mindisc_multiclass_lower(&inputs, beta).unwrap();
        let up = mindisc_multiclass_upper(&inputs, beta, &SlpParams::default(), None).unwrap();
        assert!(lo <= disc + 1e-9, "lower {lo} above a feasible {disc}");
        assert!(lo <= up.value + 1e-6, "lower {lo} above upper {}", up.value);
    }
}

#[test]
fn slp_on_two_labels_stays_near_exact() {
    let mut rng = rng(43);
    for _ in 0..5 {
        let inputs = binary_inputs(&mut rng, 3);
        let beta: f64 = rng.gen_range(0.0..=1.0);
        let exact = mindisc_binary(&inputs, q(beta, 1e-6)).unwrap();
        let up = mindisc_multiclass_upper(&inputs, beta, &SlpParams::default(), Some(SlpState::from_solution(&exact))).unwrap();
        assert!(up.value >= exact.value - 1e-6, "{} < {}", up.value, exact.value);
        assert!(up.value <= exact.value + 5e-3, "{} > {}", up.value, exact.value);
    }
}

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = rng(47);
    let mut feasible = 0;
    for _ in 0..40 {
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(1..=5);
        let prog = random_lp(&mut rng, n, m);
        let sol = lp::solve(&prog).unwrap();
        match vertex_enumeration(&prog) {
            Some(v) => {
                feasible += 1;
                assert_eq!(sol.status, LpStatus::Optimal);
                assert!((sol.objective_value - v).abs() < 1e-6, "{} vs {v}", sol.objective_value);
                assert!(lp::residual(&prog, &sol.x) < 1e-7);
            }
            None => assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }
    assert!(feasible > 10);
}

#[test]
fn identical_truth_different_predictions_cannot_be_fair() {
    let inputs = AggregateInputs::new(vec![
        GroupStats::new("a", 0.5, vec![0.6, 0.4], vec![0.5, 0.5]),
        GroupStats::new("b", 0.5, vec![0.6, 0.4], vec![0.7, 0.3]),
    ])
    .unwrap();
    assert!(!fair_error_lower_bound(&inputs, 0.0).unwrap().feasible);
    assert!(fair_error_lower_bound(&inputs, 0.1).unwrap().feasible);
}
