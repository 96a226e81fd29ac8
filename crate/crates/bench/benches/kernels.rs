use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mirs::kernels::{heat_kernel, semigroup_convolve};
use mirs::noise::sample_white;
use mirs::schauder::solve;
use mirs::{Grid, Node, Point};

fn kernels(c: &mut Criterion) {
    let grid = Grid::new(64, 1024, 1.0, 1.0).unwrap();
    let xi = sample_white(grid, 1, 0);
    c.bench_function("heat_kernel 64x1024", |b| b.iter(|| heat_kernel(grid, black_box(2f64.powi(-12)), Point::new(0.5, 0.5))));
    c.bench_function("semigroup_convolve 64x1024", |b| b.iter(|| semigroup_convolve(&xi.field, black_box(2f64.powi(-12)))));
    c.bench_function("spectrum 64x1024", |b| b.iter(|| xi.field.spectrum()));
    let spec = semigroup_convolve(&xi.field, 2f64.powi(-16)).spectrum();
    c.bench_function("schauder solve eta 1.5", |b| b.iter(|| solve(&spec, Node::new(5, 100), black_box(1.5)).unwrap()));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
