//! Seeded fixtures shared by the benchmarks.

use fairscope_core::lp::LinearProgram;
use fairscope_core::{AggregateInputs, ConfusionMatrix, ConfusionSet, GroupStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Two-label inputs with `n` groups.
pub fn binary_inputs(seed: u64, n: usize) -> AggregateInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = simplex(&mut rng, n);
    let groups = (0..n)
        .map(|g| {
            let pi: f64 = rng.gen_range(0.05..0.95);
            let p: f64 = rng.gen_range(0.02..0.98);
            GroupStats::new(format!("g{g}"), w[g], vec![1.0 - pi, pi], vec![1.0 - p, p])
        })
        .collect();
    AggregateInputs::new(groups).unwrap()
}

/// Random confusion set with `k` labels and `n` groups.
pub fn confusion_set(seed: u64, k: usize, n: usize) -> ConfusionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = simplex(&mut rng, n);
    let per_group = (0..n)
        .map(|g| {
            let pi = simplex(&mut rng, k);
            let rows = (0..k).map(|_| simplex(&mut rng, k)).collect();
            (
                GroupStats::new(format!("g{g}"), w[g], pi, vec![]),
                ConfusionMatrix::from_rows(rows).unwrap(),
            )
        })
        .collect();
    ConfusionSet::new(per_group).unwrap()
}

/// Bounded LP with `n` variables and `m` random inequality rows.
pub fn random_lp(seed: u64, n: usize, m: usize) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lp = LinearProgram::new(n);
    for j in 0..n {
        lp.objective[j] = rng.gen_range(-1.0..1.0);
        lp.bounds[j] = (0.0, 10.0);
    }
    for _ in 0..m {
        let terms: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        lp.add_le(&terms, rng.gen_range(1.0..5.0));
    }
    lp
}
