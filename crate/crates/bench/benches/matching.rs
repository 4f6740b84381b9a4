use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use osae_bench::gaussian;
use osae_core::metrics::{hungarian, stab_ord};
use osae_core::Dictionary;

fn assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("hungarian");
    for n in [32, 100, 256] {
        let s = gaussian(n, n, n as u64);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| hungarian(black_box(&s), true, false).unwrap())
        });
    }
    g.finish();
}

fn dictionaries(c: &mut Criterion) {
    let a = Dictionary::from_unnormalized(gaussian(80, 100, 1)).unwrap();
    let b = Dictionary::from_unnormalized(gaussian(80, 100, 2)).unwrap();
    c.bench_function("stab_ord_k100", |bench| bench.iter(|| stab_ord(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group!(benches, assignment, dictionaries);
criterion_main!(benches);
