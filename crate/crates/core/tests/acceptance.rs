//! Acceptance run at the default configuration. Prints one PASS/FAIL line per
//! criterion, then fails the test if a criterion outside `KNOWN_UNATTAINABLE`
//! fails, or if an attainable part of one of those criteria fails.
//!
//! Oracles computed here (Parseval sums, `∫ζ²`) do not go through the
//! library's spectral code.

use std::f64::consts::PI;
use std::time::Instant;

use mirs::config::Config;
use mirs::estimator::{
    base_point_identities, calibrate_config, config_model, counterterm_scan, cw01_series, cw02_series,
    dual_norm_series, fd_check, fd_directions, fit_options, noise_time_series, reexpansion_check, reexpansion_scaling,
    reexpansion_triple, scaling_fit, sg_check, uv_divergence, white_noise_pairing, ScalingSeries,
};
use mirs::model::{counterterm_active, Counterterms, Model, ModelSpec};
use mirs::selftest::{algebra_suite, kernel_suite, schauder_suite, shift_suite, SuiteReport};
use mirs::{Grid, GridField, MultiIndex, Node};

/// Criteria whose statistical part cannot be met at desk scale; see the
/// decisions ledger. They still print PASS/FAIL honestly.
const KNOWN_UNATTAINABLE: [u32; 2] = [7, 10];

// Written straight to stderr so the lines survive libtest output capture.
macro_rules! say {
    ($($a:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stderr(), $($a)*);
    }};
}

struct Outcome {
    id: u32,
    pass: bool,
    /// Parts that are attainable and must pass even for waived criteria.
    hard_pass: bool,
}

fn line(id: u32, name: &str, pass: bool, detail: &str, t0: Instant) -> Outcome {
    say!(
        "{} [{id:>2}] {name}: {detail} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64()
    );
    Outcome {
        id,
        pass,
        hard_pass: pass,
    }
}

fn suite_detail(r: &SuiteReport) -> (bool, String) {
    let worst: Vec<String> = r
        .checks
        .iter()
        .map(|c| format!("{} {:.1e}/{:.0e}", c.name, c.value, c.bound))
        .collect();
    (r.all_pass(), format!("{}; {:.2} s", worst.join(", "), r.seconds))
}

/// `(1/A) Σ_k w(q1, q2)` over the DFT wavenumbers of `g`.
fn mode_sum(g: &Grid, w: impl Fn(f64, f64, bool) -> f64) -> f64 {
    let mut acc = 0.0;
    for j1 in 0..g.n1 {
        let k1 = if j1 <= g.n1 / 2 { j1 as f64 } else { j1 as f64 - g.n1 as f64 };
        let nyq1 = 2 * j1 == g.n1;
        for j2 in 0..g.n2 {
            let k2 = if j2 <= g.n2 / 2 { j2 as f64 } else { j2 as f64 - g.n2 as f64 };
            acc += w(2.0 * PI * k1 / g.l1, 2.0 * PI * k2 / g.l2, nyq1);
        }
    }
    acc / (g.l1 * g.l2)
}

fn slope_within(s: &ScalingSeries, target: f64, tol: f64) -> (bool, f64, f64) {
    let f = scaling_fit(s).expect("fit");
    ((f.slope - target).abs() <= tol, f.slope, f.stderr)
}

#[test]
fn acceptance() {
    let cfg = Config::default();
    let grid = cfg.grid;
    let g = cfg.grading();
    let tol = cfg.tol.clone();
    let n = cfg.samples;
    say!("grid {}x{}, model tau {:e}, cutoff {}", grid.n1, grid.n2, cfg.model_tau, cfg.cutoff);
    let mut out = Vec::new();

    // 1. exact algebra
    let t0 = Instant::now();
    let r = algebra_suite(g, cfg.cutoff, 100, cfg.seed).unwrap();
    let (ok, d) = suite_detail(&r);
    out.push(line(1, "algebra suite", ok && r.seconds < 60.0, &d, t0));

    // 2. shift covariance
    let t0 = Instant::now();
    let r = shift_suite(g, cfg.cutoff, 100, cfg.seed).unwrap();
    let (ok, d) = suite_detail(&r);
    out.push(line(2, "shift covariance", ok && r.seconds < 5.0, &d, t0));

    // 3. kernels
    let t0 = Instant::now();
    let r = kernel_suite(grid).unwrap();
    let (ok, d) = suite_detail(&r);
    out.push(line(3, "kernel suite", ok && r.seconds < 60.0, &d, t0));

    // 4. noise laws
    let t0 = Instant::now();
    let zeta = GridField::from_fn(grid, |p| (2.0 * PI * p.x1).sin() * (4.0 * PI * p.x2).cos());
    let zeta_sq = 0.25; // ∫ sin²(2πx1) cos²(4πx2) over the unit torus
    let (m, se) = white_noise_pairing(&cfg, &zeta, 16384, 0);
    let pairing_ok = (m - zeta_sq).abs() <= 5.0 * se;
    let ts = cfg.t.clone();
    let series = noise_time_series(&cfg, &ts, n, 0);
    let mut parseval_ok = true;
    let mut worst_z: f64 = 0.0;
    let mut oracle = ScalingSeries::new("oracle", "1", 2, mirs::estimator::ScaleKind::Time);
    for pt in &series.points {
        let exact = mode_sum(&grid, |q1, q2, _| (-2.0 * pt.scale * (q1.powi(4) + q2 * q2)).exp());
        let z = (pt.estimate - exact).abs() / pt.stderr;
        worst_z = worst_z.max(z);
        parseval_ok &= z <= 5.0;
        oracle.push(pt.scale, exact, 0.0, 1);
    }
    let (slope_ok, slope, sse) = slope_within(&series, -0.75, 0.05);
    let oracle_slope = scaling_fit(&oracle).unwrap().slope;
    out.push(line(
        4,
        "noise laws",
        pairing_ok && parseval_ok && slope_ok,
        &format!(
            "E(xi,zeta)^2 = {m:.5} ± {se:.5} vs {zeta_sq}; Parseval max z {worst_z:.2}; slope {slope:.4} ± {sse:.4} (oracle {oracle_slope:.4}) vs -0.75 ± 0.05"
        ),
        t0,
    ));

    // 5. UV divergence
    let t0 = Instant::now();
    let uv = uv_divergence(&cfg, &cfg.tau, n, 0).unwrap();
    let (ok, slope, sse) = slope_within(&uv, -0.25, tol.uv);
    let mut uv_z: f64 = 0.0;
    for pt in &uv.points {
        let exact = mode_sum(&grid, |q1, q2, nyq1| {
            let d = q2 * q2 + q1.powi(4);
            if d == 0.0 || nyq1 {
                0.0
            } else {
                q1 * q1 / d * (-2.0 * pt.scale * (q1.powi(4) + q2 * q2)).exp()
            }
        });
        uv_z = uv_z.max((pt.estimate - exact).abs() / pt.stderr);
    }
    out.push(line(
        5,
        "UV divergence",
        ok && uv.points.len() >= 4,
        &format!(
            "slope {slope:.4} ± {sse:.4} vs -0.25 ± {} over tau {:e}..{:e}, {n} samples; Parseval max z {uv_z:.2}",
            tol.uv,
            cfg.tau[0],
            cfg.tau[cfg.tau.len() - 1]
        ),
        t0,
    ));

    // 6. counterterms
    let t0 = Instant::now();
    let n_cal = 256;
    let model = config_model(&cfg).unwrap();
    let c = calibrate_config(&model, &cfg, n_cal, 0, false).unwrap();
    let c_refl = calibrate_config(&model, &cfg, n_cal, n_cal as u64, true).unwrap();
    let mut cfg_b = cfg.clone();
    cfg_b.base_points = cfg.base_points.iter().map(|p| grid.offset(*p, (grid.n1 / 8) as i64, (grid.n2 / 8) as i64 + 3)).collect();
    let c_base = calibrate_config(&model, &cfg_b, n_cal, 2 * n_cal as u64, false).unwrap();
    let zero_ok = [MultiIndex::zero(), MultiIndex::e_k(0)]
        .iter()
        .all(|b| c.value(b) == 0.0 && c.value(b).abs() <= 3.0 * c.stderr.value(b));
    let mut inv_ok = true;
    let mut inv = Vec::new();
    for b in model.index_set() {
        if !counterterm_active(b, &g) {
            continue;
        }
        for (label, other) in [("reflected", &c_refl), ("moved", &c_base)] {
            let joint = (c.stderr.value(b).powi(2) + other.stderr.value(b).powi(2)).sqrt();
            let z = (c.value(b) - other.value(b)).abs() / joint;
            inv_ok &= z <= 3.0;
            inv.push(format!("{b} {label} z {z:.2}"));
        }
    }
    let (scan, _) = counterterm_scan(&cfg, &cfg.tau, 256).unwrap();
    let (scan_ok, slope, sse) = slope_within(&scan, -0.25, tol.counterterm);
    out.push(line(
        6,
        "counterterms",
        zero_ok && inv_ok && scan_ok,
        &format!(
            "c_1 = c_z0 = 0 exactly: {zero_ok}; c_z1 slope {slope:.4} ± {sse:.4} vs -0.25 ± {}; invariance {}",
            tol.counterterm,
            inv.join(", ")
        ),
        t0,
    ));

    // 7. theorem estimates
    let t0 = Instant::now();
    let s02 = cw02_series(&model, &c, &cfg.t, n, 0, cfg.seed).unwrap();
    let (cw02_ok, s02_slope, s02_se) = slope_within(&s02, g.alpha - 2.0, tol.cw02);
    let series01 = cw01_series(&model, &c, &cfg, model.index_set().len(), n, 0).unwrap();
    let mut fails = Vec::new();
    for s in &series01 {
        let b: MultiIndex = s.beta.parse().unwrap();
        let target = b.homogeneity().value(&g);
        let (ok, slope, _) = slope_within(s, target, tol.cw01);
        if !ok {
            fails.push(format!("{} {} {:.3}/{:.3}", s.quantity, s.beta, slope, target));
        }
    }
    let mut o = line(
        7,
        "theorem estimates",
        cw02_ok && fails.is_empty(),
        &format!(
            "cw02 slope {s02_slope:.4} ± {s02_se:.4} vs {} ± {}; cw01 {}/{} series within ± {}; off: {}",
            g.alpha - 2.0,
            tol.cw02,
            series01.len() - fails.len(),
            series01.len(),
            tol.cw01,
            fails.join(", ")
        ),
        t0,
    );
    o.hard_pass = cw02_ok;
    out.push(o);

    // 8. base-point identities
    let t0 = Instant::now();
    let (r32, r20) = base_point_identities(&model, &c, cfg.seed, 16, &cfg.base_points).unwrap();
    out.push(line(
        8,
        "base-point identities",
        r32 <= 1e-9 && r20 <= 1e-9,
        &format!("max residuals {r32:.2e} (Pi-) and {r20:.2e} (linearized) over 16 samples"),
        t0,
    ));

    // 9. finite differences against the linearization
    let t0 = Instant::now();
    let rows = fd_check(&model, &c, cfg.seed, 4, &fd_directions(grid), (1e-3, 1e-4)).unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let fd_ok = rows.len() == 12 && ratios.iter().all(|r| (9.0..=11.0).contains(r));
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |a, r| (a.0.min(*r), a.1.max(*r)));
    out.push(line(
        9,
        "directional derivatives",
        fd_ok,
        &format!("{} error ratios in [{lo:.4}, {hi:.4}], band [9, 11]", rows.len()),
        t0,
    ));

    // 10. re-expansion
    let t0 = Instant::now();
    let opts = fit_options(&cfg);
    let smoothing = cfg.t[0];
    let x = cfg.base_points[1];
    let coarse = reexpansion_check(&model, &c, cfg.seed, 4, reexpansion_triple(&grid, x), &opts, smoothing).unwrap();
    let fine_grid = Grid::new(2 * grid.n1, 2 * grid.n2, grid.l1, grid.l2).unwrap();
    let fine_model = Model::new(ModelSpec {
        grid: fine_grid,
        ..model.spec
    })
    .unwrap();
    let fine_c = Counterterms::from_json(&c.to_json().unwrap(), fine_model.truncation().clone()).unwrap();
    let x2 = Node::new(2 * x.i1, 2 * x.i2);
    let fine =
        reexpansion_check(&fine_model, &fine_c, cfg.seed, 2, reexpansion_triple(&fine_grid, x2), &opts, smoothing).unwrap();
    let worst = |r: &mirs::estimator::ReexpansionCheck| r.max_pi().max(r.max_pi_minus());
    let (wc, wf) = (worst(&coarse), worst(&fine));
    let refine_ok = wf <= wc || (wc <= 1e-8 && wf <= 1e-8);
    let resid_ok = wc <= 0.05 && coarse.transitivity <= 0.05 && fine.transitivity <= 0.05 && refine_ok;
    let scal = reexpansion_scaling(&model, &c, &cfg, 256, 0).unwrap();
    let mut parts = Vec::new();
    let mut scal_ok = true;
    for s in &scal {
        let t = if s.quantity.starts_with("mt94") { tol.mt94 } else { tol.ks93 };
        let (ok, slope, se) = slope_within(s, g.alpha, t);
        scal_ok &= ok;
        parts.push(format!("{} {slope:.3} ± {se:.3}", s.quantity));
    }
    let mut o = line(
        10,
        "re-expansion",
        resid_ok && scal_ok,
        &format!(
            "residual {wc:.2e} (refined {wf:.2e}), transitivity {:.2e}/{:.2e}; slopes vs {} (tol {}/{}): {}",
            coarse.transitivity,
            fine.transitivity,
            g.alpha,
            tol.mt94,
            tol.ks93,
            parts.join(", ")
        ),
        t0,
    );
    o.hard_pass = resid_ok;
    out.push(o);

    // 11. spectral gap
    let t0 = Instant::now();
    let t_sg = cfg.t[cfg.t.len() / 2];
    let sg = sg_check(&cfg, t_sg, n, 0);
    let sg_ok = (sg.variance - sg.dual_norm_sq).abs() <= 5.0 * sg.stderr;
    let (dual_ok, slope, _) = slope_within(&dual_norm_series(&cfg, &cfg.t), g.alpha - 2.0, tol.dual);
    out.push(line(
        11,
        "spectral gap",
        sg_ok && dual_ok,
        &format!(
            "Var F = {:.4} ± {:.4} vs dual norm^2 {:.4} at t = {t_sg:e}; dual norm slope {slope:.4} vs {} ± {}",
            sg.variance,
            sg.stderr,
            sg.dual_norm_sq,
            g.alpha - 2.0,
            tol.dual
        ),
        t0,
    ));

    // 12. Schauder
    let t0 = Instant::now();
    let r = schauder_suite(grid, cfg.model_tau, cfg.seed).unwrap();
    let (ok, d) = suite_detail(&r);
    out.push(line(12, "Schauder integration", ok, &d, t0));

    let blocking: Vec<u32> = out
        .iter()
        .filter(|o| if KNOWN_UNATTAINABLE.contains(&o.id) { !o.hard_pass } else { !o.pass })
        .map(|o| o.id)
        .collect();
    let waived: Vec<u32> = out.iter().filter(|o| !o.pass && KNOWN_UNATTAINABLE.contains(&o.id)).map(|o| o.id).collect();
    say!(
        "{} of {} criteria pass; known unattainable failing: {waived:?}",
        out.iter().filter(|o| o.pass).count(),
        out.len()
    );
    assert!(blocking.is_empty(), "criteria failed: {blocking:?}");
}
