use cmanifold::whitney::{refine, Params};
use cmanifold::{build_center_manifold, g_dist, Generator};
use cmanifold_bench::{current, qpoints};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn bench_g_dist(c: &mut Criterion) {
    for q in [4, 8] {
        let (a, b) = qpoints(q, 2);
        c.bench_function(&format!("g_dist q={q}"), |bch| bch.iter(|| g_dist(black_box(&a), black_box(&b)).unwrap()));
    }
}

fn bench_refine(c: &mut Criterion) {
    let t = current(Generator::ParallelSheets { d: 0.03, amplitude: 0.0, frequency: 1.0 }, 2, 64);
    let mut p = Params::for_dim(2);
    p.c_h = 1000.0;
    c.bench_function("refine parallel_sheets grid=64", |bch| bch.iter(|| refine(black_box(&t), &p).unwrap()));
}

fn bench_center_manifold(c: &mut Criterion) {
    let t = current(Generator::Sinusoid { amplitude: 0.2, frequency: 2.0 }, 2, 64);
    let dec = refine(&t, &Params::for_dim(2)).unwrap();
    let mut g = c.benchmark_group("center_manifold");
    g.sample_size(10);
    g.bench_function("sinusoid grid=64", |bch| bch.iter(|| build_center_manifold(black_box(&t), &dec).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_g_dist, bench_refine, bench_center_manifold);
criterion_main!(benches);
