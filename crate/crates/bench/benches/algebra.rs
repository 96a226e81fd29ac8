use criterion::{criterion_group, criterion_main, Criterion};
use mirs::config::Config;
use mirs::estimator::config_model;
use mirs::model::Counterterms;
use mirs::noise::sample_white;
use mirs::reexpansion::{gamma_compose, gamma_from_pis, GammaParams};
use mirs::{DerivIndex, Grid, Grading, Node, Series, Truncation};

fn algebra(c: &mut Criterion) {
    let t = Truncation::new(Grading::new(0.5), 1.6);
    let mut s = Series::new(t.clone());
    for (i, b) in t.indices().iter().enumerate() {
        s.set(b, 1.0 / (1.0 + i as f64)).unwrap();
    }
    c.bench_function("series multiply", |b| b.iter(|| s.multiply(&s).unwrap()));

    let mut p = GammaParams::new(t.clone());
    let g = t.grading;
    let mut v = 0.1;
    for n in DerivIndex::all_up_to(3) {
        for b in t.indices() {
            if b.is_populated() && (n.degree() as f64) < b.homogeneity().value(&g) {
                p.set(n, b, v).unwrap();
                v = -0.7 * v + 0.05;
            }
        }
    }
    c.bench_function("gamma_from_pis", |b| b.iter(|| gamma_from_pis(&p).unwrap()));
    c.bench_function("gamma_compose", |b| b.iter(|| gamma_compose(&p, &p).unwrap()));

    let mut cfg = Config::default();
    cfg.grid = Grid::new(16, 256, 1.0, 1.0).unwrap();
    cfg.model_tau = 2f64.powi(-16);
    let model = config_model(&cfg).unwrap();
    let ct = Counterterms::zero(model.truncation().clone(), cfg.model_tau);
    let xi = sample_white(cfg.grid, 1, 0);
    c.bench_function("model build 16x256", |b| b.iter(|| model.build(&xi, Node::new(3, 40), &ct).unwrap()));
}

criterion_group!(benches, algebra);
criterion_main!(benches);
