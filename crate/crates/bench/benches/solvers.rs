use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use fairscope_bench::{binary_inputs, confusion_set, random_lp};
use fairscope_core::binary::{mindisc_binary, DiscrepancyQuery};
use fairscope_core::lp;
use fairscope_core::unfairness::{unfairness_binary_exact, unfairness_multiclass_bounds, UnfairnessOptions};

fn binary(c: &mut Criterion) {
    let mut group = c.benchmark_group("mindisc_binary");
    for n in [2, 8, 32] {
        let inputs = binary_inputs(7, n);
        let q = DiscrepancyQuery::new(0.5, 1e-5).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &inputs, |b, inp| {
            b.iter(|| mindisc_binary(black_box(inp), q).unwrap())
        });
    }
    group.finish();

    let set = confusion_set(11, 2, 16);
    c.bench_function("unfairness_binary_exact/16", |b| {
        b.iter(|| unfairness_binary_exact(black_box(&set)).unwrap())
    });
}

fn multiclass(c: &mut Criterion) {
    let mut group = c.benchmark_group("unfairness_multiclass_bounds");
    group.sample_size(10);
    for k in [3, 4] {
        let set = confusion_set(13, k, 4);
        let opts = UnfairnessOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(k), &set, |b, s| {
            b.iter(|| unfairness_multiclass_bounds(black_box(s), &opts).unwrap())
        });
    }
    group.finish();
}

fn simplex(c: &mut Criterion) {
    let mut group = c.benchmark_group("lp_solve");
    for (n, m) in [(6, 5), (30, 20), (80, 60)] {
        let prog = random_lp(17, n, m);
        group.bench_with_input(BenchmarkId::new("vars", n), &prog, |b, p| {
            b.iter(|| lp::solve(black_box(p)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, binary, multiclass, simplex);
criterion_main!(benches);
