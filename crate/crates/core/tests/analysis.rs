use std::f64::consts::PI;

use mirs::kernels::{apply_a, apply_a_inverse, carnot_norm, heat_kernel, reflect_x1, semigroup_convolve, spectral_derivative};
use mirs::multiindex::Grading;
use mirs::noise::{mollify, pairing, reflected, sample_white};
use mirs::schauder::integrate;
use mirs::{DerivIndex, Grid, GridField, Homogeneity, Node, Point};
use proptest::prelude::*;

fn grid() -> Grid {
    Grid::new(16, 128, 1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn carnot_norm_is_parabolically_homogeneous(d1 in -1.0..1.0f64, d2 in -1.0..1.0f64, s in 0.1..4.0f64) {
        let a = carnot_norm(s * d1, s * s * d2);
        prop_assert!((a - s * carnot_norm(d1, d2)).abs() < 1e-12 * (1.0 + a));
        prop_assert_eq!(carnot_norm(d1, d2), carnot_norm(-d1, -d2));
    }

    #[test]
    fn spectral_derivative_of_trig_mode(k1 in -6i32..7, k2 in -50i32..51, n1 in 0u32..4, n2 in 0u32..3) {
        let g = grid();
        let (q1, q2) = (2.0 * PI * k1 as f64, 2.0 * PI * k2 as f64);
        let f = GridField::from_fn(g, |p| (q1 * p.x1 + q2 * p.x2).cos());
        let d = spectral_derivative(&f, DerivIndex::new(n1, n2));
        // d^n cos(θ) = Re(i^n e^{iθ}) q1^n1 q2^n2
        let n = (n1 + n2) as i32;
        let amp = q1.powi(n1 as i32) * q2.powi(n2 as i32);
        let exact = GridField::from_fn(g, |p| {
            let th = q1 * p.x1 + q2 * p.x2;
            amp * (th + n as f64 * PI / 2.0).cos()
        });
        let mut e = d.clone();
        e.sub_assign(&exact);
        prop_assert!(e.max_abs() <= 1e-9 * (1.0 + amp.abs()));
    }

    #[test]
    fn a_inverse_inverts_on_mean_free_fields(seed in 0u64..1000) {
        let g = grid();
        let mut f = mollify(&sample_white(g, seed, 0), 1e-3);
        f.add_constant(-f.mean());
        let mut r = apply_a(&apply_a_inverse(&f));
        r.sub_assign(&f);
        prop_assert!(r.max_abs() <= 1e-10 * f.max_abs());
    }

    #[test]
    fn noise_is_a_pure_function_of_seed_and_index(seed in 0u64..1000, idx in 0u64..1000) {
        let g = grid();
        prop_assert_eq!(sample_white(g, seed, idx), sample_white(g, seed, idx));
        prop_assert_ne!(sample_white(g, seed, idx).field, sample_white(g, seed, idx + 1).field);
    }
}

#[test]
fn semigroup_composes() {
    let g = grid();
    let f = heat_kernel(g, 1e-4, Point::new(0.3, 0.6));
    let mut a = semigroup_convolve(&semigroup_convolve(&f, 2e-4), 3e-4);
    a.sub_assign(&semigroup_convolve(&f, 5e-4));
    assert!(a.max_abs() < 1e-12 * f.max_abs());
}

#[test]
fn reflection_is_an_involution_and_keeps_pairings() {
    let g = grid();
    let xi = sample_white(g, 7, 3);
    let r = reflected(&xi, 5);
    assert_eq!(reflect_x1(&r.field, 5), xi.field);
    let zeta = GridField::from_fn(g, |p| (2.0 * PI * p.x2).cos());
    assert!((pairing(&xi, &zeta) - pairing(&r, &zeta)).abs() < 1e-12);
}

#[test]
fn schauder_solution_vanishes_at_base_point_to_order_eta() {
    let g = Grid::new(32, 512, 1.0, 1.0).unwrap();
    let gr = Grading::new(0.5);
    let f = GridField::from_fn(g, |p| (2.0 * PI * p.x1).sin() * (2.0 * PI * p.x2).cos());
    let x = Node::new(7, 100);
    let eta = Homogeneity::new(3, 0);
    let e = eta.value(&gr);
    let u = integrate(&f, x, eta, &gr, g.resolved_tau_floor()).unwrap();
    assert_eq!(u.at(x), 0.0);
    // |u(y)| / d(x, y)^η stays bounded as y approaches x along both axes
    let ratio = |k1: i64, k2: i64| {
        let y = g.offset(x, k1, k2);
        let d = g.carnot_distance(g.node_point(x), g.node_point(y));
        u.at(y).abs() / d.powf(e)
    };
    let far = ratio(8, 0).max(ratio(0, 64));
    for k in 1..4 {
        assert!(ratio(k, 0) <= 4.0 * far + 1e-12);
        assert!(ratio(0, k * k) <= 4.0 * far + 1e-12);
    }
}
