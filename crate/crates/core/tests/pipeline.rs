use mirs::config::Config;
use mirs::estimator::{
    base_point_identities, calibrate_config, config_model, fd_check, fd_directions, fit_options, reexpansion_check,
    reexpansion_triple, run_experiment,
};
use mirs::model::{counterterm_active, counterterm_slot};
use mirs::noise::sample_white;
use mirs::reexpansion::build_gamma_yx;
use mirs::{MultiIndex, Node};

fn small() -> Config {
    Config::parse(
        "grid.n1 = 16\ngrid.n2 = 256\nmodel.tau = 2^-16\ntau = 2^-18, 2^-17, 2^-16, 2^-15\nsamples = 48\n\
         samples.fourth = 48\nt = 2^-12, 2^-10, 2^-8\nscales = 2^-4, 2^-3, 2^-2\n",
    )
    .unwrap()
}

#[test]
fn calibration_is_deterministic_and_respects_parity() {
    let cfg = small();
    let model = config_model(&cfg).unwrap();
    let a = calibrate_config(&model, &cfg, 32, 0, false).unwrap();
    let b = calibrate_config(&model, &cfg, 32, 0, false).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let g = cfg.grading();
    for beta in model.index_set() {
        if counterterm_slot(beta, &g) && !counterterm_active(beta, &g) {
            assert_eq!(a.value(beta), 0.0, "{beta}");
        }
    }
    assert!(a.value(&MultiIndex::e_k(1)) != 0.0);
}

#[test]
fn identities_hold_sample_by_sample() {
    let cfg = small();
    let model = config_model(&cfg).unwrap();
    let c = calibrate_config(&model, &cfg, 16, 0, false).unwrap();
    let (r32, r20) = base_point_identities(&model, &c, 5, 4, &cfg.base_points).unwrap();
    assert!(r32 <= 1e-9 && r20 <= 1e-9, "{r32:e} {r20:e}");

    let x = cfg.base_points[1];
    let r = reexpansion_check(&model, &c, 5, 2, reexpansion_triple(&cfg.grid, x), &fit_options(&cfg), cfg.t[0]).unwrap();
    assert!(r.max_pi() < 1e-8 && r.max_pi_minus() < 1e-8 && r.transitivity < 1e-8, "{r:?}");

    let rows = fd_check(&model, &c, 5, 1, &fd_directions(cfg.grid), (1e-3, 1e-4)).unwrap();
    for row in rows {
        assert!((9.0..=11.0).contains(&row.ratio), "{row:?}");
    }
}

#[test]
fn reexpansion_needs_a_common_chart() {
    let cfg = small();
    let model = config_model(&cfg).unwrap();
    let c = calibrate_config(&model, &cfg, 8, 0, false).unwrap();
    let xi = sample_white(cfg.grid, 1, 0);
    let (x, y) = (Node::new(2, 30), Node::new(3, 34));
    let mx = model.build(&xi, x, &c).unwrap();
    let my = model.build(&xi, y, &c).unwrap();
    assert!(build_gamma_yx(&mx, &my, &fit_options(&cfg)).is_err());
    let my = model.build_in_chart(&xi, y, &c, x).unwrap();
    let r = build_gamma_yx(&mx, &my, &fit_options(&cfg)).unwrap();
    // (Γ*)_{z1}^{z0} = π^(0)_0 = Π_{y0}(x)
    let pi_y0_x = my.pi.get(&MultiIndex::zero()).unwrap().at(x);
    assert!((r.matrix.get(&MultiIndex::e_k(1), &MultiIndex::e_k(0)) - pi_y0_x).abs() < 1e-12);
}

#[test]
fn experiment_output_is_deterministic_and_well_formed() {
    let cfg = small();
    let model = config_model(&cfg).unwrap();
    let c = calibrate_config(&model, &cfg, 16, 0, false).unwrap();
    let a = run_experiment(&cfg, &c).unwrap();
    let b = run_experiment(&cfg, &c).unwrap();
    let csv = a.csv_string().unwrap();
    assert_eq!(csv, b.csv_string().unwrap());
    assert_eq!(
        csv.lines().next().unwrap(),
        "quantity,beta,p,scale_kind,scale,estimate,stderr,n_samples"
    );
    let j = a.summary_json(&cfg).unwrap();
    assert!(j["config"].is_object());
    for f in j["fits"].as_array().unwrap() {
        for k in ["quantity", "beta", "slope", "stderr", "target", "tol", "pass"] {
            assert!(f.get(k).is_some(), "missing {k}");
        }
    }
}
