//! Deterministic self-checks shared by the CLI and the test suites.
//!
//! Each suite returns a list of [`CheckResult`]s; a check passes when its
//! worst value over all instances stays within its bound.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::kernels::{
    heat_kernel, monomial_in_chart, spectral_derivative, Grid, GridField, Node, Point,
};
use crate::multiindex::{DerivIndex, Grading, Homogeneity, MultiIndex};
use crate::noise::{mollify, sample_white};
use crate::reexpansion::{gamma_compose, gamma_from_pis, gamma_invert, GammaMatrix, GammaParams};
use crate::schauder::{integrate, integrate_levels, solve};
use crate::series::{assemble_pi_minus, d0_entry, taylor_shift_check, Series, Truncation};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Worst value over all instances.
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    pub instances: usize,
}

impl CheckResult {
    fn new(name: &str, value: f64, bound: f64, instances: usize) -> Self {
        CheckResult {
            name: name.to_string(),
            value,
            bound,
            pass: value <= bound,
            instances,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<Vec<CheckResult>>) -> Result<SuiteReport> {
    let t0 = Instant::now();
    let checks = f()?;
    Ok(SuiteReport {
        suite: name.to_string(),
        checks,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

pub const ALGEBRA_TOL: f64 = 1e-10;
pub const SHIFT_TOL: f64 = 1e-9;

fn random_series(t: &Arc<Truncation>, rng: &mut ChaCha8Rng, keep: impl Fn(&MultiIndex) -> bool) -> Series<f64> {
    let mut s = Series::new(t.clone());
    for b in t.indices() {
        if keep(b) && rng.gen_bool(0.7) {
            s.set(b, rng.gen_range(-1.0..1.0)).unwrap();
        }
    }
    s
}

fn random_params(t: &Arc<Truncation>, rng: &mut ChaCha8Rng) -> GammaParams {
    let g = t.grading;
    let mut p = GammaParams::new(t.clone());
    for n in DerivIndex::all_up_to(3) {
        for b in t.indices() {
            if b.is_populated() && (n.degree() as f64) < b.homogeneity().value(&g) && rng.gen_bool(0.8) {
                p.set(n, b, rng.gen_range(-1.0..1.0)).unwrap();
            }
        }
    }
    p
}

fn series_diff(a: &Series<f64>, b: &Series<f64>) -> f64 {
    a.max_diff(b).max(b.max_diff(a))
}

fn params_diff(p: &GammaParams, q: &GammaParams) -> f64 {
    let mut keys: Vec<DerivIndex> = p.keys().chain(q.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let t = p.truncation();
    let mut worst: f64 = 0.0;
    for n in keys {
        for b in t.indices() {
            worst = worst.max((p.get(n, b) - q.get(n, b)).abs());
        }
    }
    worst
}

/// Largest violation of `(Γ* - id)_β^γ = 0 unless |γ| < |β| and γ ≺ β`
/// and of `(Γ*)_β^0 = δ_β^0` (1 per violation).
fn triangularity_violations(m: &GammaMatrix) -> f64 {
    let t = m.truncation();
    let g = t.grading;
    let idx = t.indices();
    let mut bad = 0.0;
    for (i, b) in idx.iter().enumerate() {
        for (j, c) in idx.iter().enumerate() {
            let v = m.at(i, j) - if i == j { 1.0 } else { 0.0 };
            if v == 0.0 {
                continue;
            }
            let lower = j < i && c.homogeneity().value(&g) < b.homogeneity().value(&g);
            if !lower || c.is_zero() {
                bad += 1.0;
            }
        }
    }
    bad
}

/// `β = e_k + e_{n_1} + … + e_{n_{k+1}}` with nonzero `n_j`.
fn is_pure_derivative_tail(b: &MultiIndex) -> bool {
    let pops: Vec<(u32, u32)> = b.pop_entries().collect();
    if pops.len() != 1 || pops[0].1 != 1 {
        return false;
    }
    let k = pops[0].0;
    let derivs: u32 = b.deriv_entries().map(|(_, m)| m).sum();
    derivs == k + 1
}

/// Exact algebra checks on `instances` random inputs at the given cutoff.
pub fn algebra_suite(grading: Grading, cutoff: f64, instances: usize, seed: u64) -> Result<SuiteReport> {
    timed("algebra", || {
        let t = Truncation::new(grading, cutoff);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = |_: &MultiIndex| true;
        let mut worst = [0.0f64; 14];
        let idx = t.indices().to_vec();

        // The D0 matrix is fixed; its two routes are compared once per index.
        for (j, gamma) in idx.iter().enumerate() {
            let mut unit = Series::new(t.clone());
            unit.set(gamma, 1.0)?;
            let col = unit.derivation_d0();
            for (i, beta) in idx.iter().enumerate() {
                let a = col.value(beta);
                let b = d0_entry(beta, gamma);
                // entries that fall outside the truncation are absent from col
                worst[1] = worst[1].max((a - b).abs());
                if a != 0.0 && !(i > j && beta.brackets0() == gamma.brackets0() + 1) {
                    worst[1] = worst[1].max(1.0);
                }
            }
        }

        for _ in 0..instances {
            let u = random_series(&t, &mut rng, all);
            let v = random_series(&t, &mut rng, all);
            let w = random_series(&t, &mut rng, all);

            // Leibniz rule for D0.
            let lhs = u.multiply(&v)?.derivation_d0();
            let rhs = u.derivation_d0().multiply(&v)?.add(&u.multiply(&v.derivation_d0())?)?;
            worst[0] = worst[0].max(series_diff(&lhs, &rhs));

            // Powers of D0 shift [.]_0 by exactly l.
            let l = rng.gen_range(1..=3u32);
            let dl = u.iterated_d0(l);
            for (b, x) in dl.iter() {
                if *x != 0.0 && !u.iter().any(|(c, _)| b.brackets0() == c.brackets0() + l as u64) {
                    worst[1] = worst[1].max(1.0);
                }
            }

            // Associativity and commutativity of the product.
            let a1 = u.multiply(&v)?.multiply(&w)?;
            let a2 = u.multiply(&v.multiply(&w)?)?;
            worst[2] = worst[2].max(series_diff(&a1, &a2));
            worst[2] = worst[2].max(series_diff(&u.multiply(&v)?, &v.multiply(&u)?));

            // Population propagation through the Π⁻ assembly.
            let pi = random_series(&t, &mut rng, |b| b.is_populated());
            let pp = random_series(&t, &mut rng, |b| b.is_populated());
            let c = random_series(&t, &mut rng, |b| b.is_populated() && b.is_pop_only());
            let xi: f64 = rng.gen_range(-1.0..1.0);
            let pm = assemble_pi_minus(&pi, &pp, &c, &xi)?;
            for (b, x) in pm.iter() {
                if *x != 0.0 && b.brackets() < 0 && !is_pure_derivative_tail(b) {
                    worst[3] = worst[3].max(1.0);
                }
            }

            // Γ* is an algebra morphism.
            let p = random_params(&t, &mut rng);
            let gm = gamma_from_pis(&p)?;
            let m1 = gm.apply(&u.multiply(&v)?);
            let m2 = gm.apply(&u).multiply(&gm.apply(&v))?;
            worst[4] = worst[4].max(series_diff(&m1, &m2));

            // Triangularity of every constructed matrix.
            worst[5] = worst[5].max(triangularity_violations(&gm));

            // Entries with [γ] >= 0 do not see π^(n)_{β'} for β' not ≺ β.
            let row = rng.gen_range(0..idx.len());
            let mut pert = p.clone();
            let keys: Vec<DerivIndex> = p.keys().copied().collect();
            for n in keys {
                for bp in &idx[row..] {
                    if pert.get(n, bp) != 0.0 {
                        pert.set(n, bp, rng.gen_range(-1.0..1.0))?;
                    }
                }
            }
            let gp = gamma_from_pis(&pert)?;
            for (j, gamma) in idx.iter().enumerate() {
                if gamma.brackets() >= 0 && gp.at(row, j).to_bits() != gm.at(row, j).to_bits() {
                    worst[6] = worst[6].max(1.0);
                }
            }

            // Group laws.
            let q = random_params(&t, &mut rng);
            let r = random_params(&t, &mut rng);
            let id = GammaMatrix::identity(t.clone());
            worst[7] = worst[7].max(gamma_from_pis(&GammaParams::new(t.clone()))?.max_diff(&id));
            let (_, pq) = gamma_compose(&p, &q)?;
            worst[12] = worst[12].max(pq.max_diff(&gm.matmul(&gamma_from_pis(&q)?)));
            let inv = gamma_invert(&p)?;
            let (_, left) = gamma_compose(&p, &inv)?;
            let (_, right) = gamma_compose(&inv, &p)?;
            worst[8] = worst[8].max(left.max_diff(&id)).max(right.max_diff(&id));
            let (pq_p, _) = gamma_compose(&p, &q)?;
            let (qr_p, _) = gamma_compose(&q, &r)?;
            let (a_p, a_m) = gamma_compose(&pq_p, &r)?;
            let (b_p, b_m) = gamma_compose(&p, &qr_p)?;
            worst[9] = worst[9].max(params_diff(&a_p, &b_p)).max(a_m.max_diff(&b_m));
            // Closure: the composite is again a population-respecting Γ*.
            if a_p.check_population().is_err() {
                worst[10] = worst[10].max(1.0);
            }
            worst[10] = worst[10].max(triangularity_violations(&a_m));
            // Γ* applied to the inverse parameters gives -π.
            for n in p.keys() {
                let zero = Series::new(t.clone());
                let lhs = gm.apply(inv.pi(*n).unwrap_or(&zero));
                let rhs = p.pi(*n).unwrap().scaled(-1.0);
                worst[11] = worst[11].max(series_diff(&lhs, &rhs));
            }
        }
        let names = [
            "leibniz_d0",
            "d0_triangularity",
            "product_associativity",
            "population_propagation",
            "gamma_morphism",
            "gamma_triangularity",
            "gamma_dependence_triangularity",
            "group_identity",
            "group_inverse",
            "group_associativity",
            "group_closure",
            "inverse_equation",
            "composition_vs_matmul",
        ];
        Ok(names
            .iter()
            .enumerate()
            .map(|(i, n)| CheckResult::new(n, worst[i], ALGEBRA_TOL, instances))
            .collect())
    })
}

/// `c[a(· + v)] = Σ_l v^l/l! (D0^l c)[a]` for random population series,
/// polynomials `a` and shifts `v`.
pub fn shift_suite(grading: Grading, cutoff: f64, instances: usize, seed: u64) -> Result<SuiteReport> {
    timed("shift_covariance", || {
        let t = Truncation::pop_only(grading, cutoff);
        let kmax = t.indices().iter().flat_map(|b| b.pop_entries().map(|(k, _)| k)).max().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let c = random_series(&t, &mut rng, |_| true);
            let deg = kmax as usize + 1 + rng.gen_range(0..3);
            let a: Vec<f64> = (0..deg).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = rng.gen_range(-1.0..1.0);
            let (lhs, rhs) = taylor_shift_check(&c, &a, v)?;
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
        Ok(vec![CheckResult::new("taylor_shift", worst, SHIFT_TOL, instances)])
    })
}

/// Times used by the kernel suite; `t` and `16 t` must both be resolved.
pub const KERNEL_TIMES: [f64; 3] = [1.0 / 1_048_576.0, 1.0 / 65_536.0, 1.0 / 4096.0];

/// Semigroup, mass, PDE and parabolic scaling of the heat kernel.
pub fn kernel_suite(grid: Grid) -> Result<SuiteReport> {
    timed("kernels", || {
        let o = Point::new(0.0, 0.0);
        let mut semigroup: f64 = 0.0;
        let mut mass: f64 = 0.0;
        for &t in &KERNEL_TIMES {
            let s = t / 2.0;
            let ps = heat_kernel(grid, s, o);
            let pt = heat_kernel(grid, t, o);
            // (ψ_s * ψ_t)(y) = Σ_z ψ_s(y - z) ψ_t(z) h1 h2, via the spectrum
            let mut conv = ps.spectrum();
            let st = pt.spectrum();
            for (a, b) in conv.data.iter_mut().zip(&st.data) {
                *a *= b * grid.cell_area();
            }
            let conv = conv.to_field();
            let exact = heat_kernel(grid, s + t, o);
            let mut d = conv.clone();
            d.sub_assign(&exact);
            semigroup = semigroup.max(d.max_abs() / exact.max_abs());
            mass = mass.max((pt.mean() * grid.area() - 1.0).abs());
        }

        // ∂_t ψ + (∂1⁴ - ∂2²) ψ = 0, time derivative by a 5-point stencil.
        let mut pde: f64 = 0.0;
        for &t in &KERNEL_TIMES {
            let h = 1e-3 * t;
            let k = |dt: f64| heat_kernel(grid, t + dt, o);
            let mut dt = k(-2.0 * h);
            dt.axpy(-8.0, &k(-h));
            dt.axpy(8.0, &k(h));
            dt.axpy(-1.0, &k(2.0 * h));
            dt.scale(1.0 / (12.0 * h));
            let pt = k(0.0);
            let mut res = dt.clone();
            res.add_assign(&spectral_derivative(&pt, DerivIndex::new(4, 0)));
            res.sub_assign(&spectral_derivative(&pt, DerivIndex::new(0, 2)));
            pde = pde.max(res.max_abs() / dt.max_abs());
        }

        // ψ_t(x1, x2) = 8 ψ_{16t}(2 x1, 4 x2). The periodized kernel obeys
        // it between the torus and its dilate by (2, 4), node for node.
        let mut scaling: f64 = 0.0;
        let wide = Grid::new(grid.n1, grid.n2, 2.0 * grid.l1, 4.0 * grid.l2)?;
        for &t in &KERNEL_TIMES {
            let a = heat_kernel(grid, t, o);
            let b = heat_kernel(wide, 16.0 * t, o);
            let scale = a.max_abs();
            for (va, vb) in a.values.iter().zip(&b.values) {
                scaling = scaling.max((va - 8.0 * vb).abs() / scale);
            }
        }
        Ok(vec![
            CheckResult::new("semigroup", semigroup, 1e-12, KERNEL_TIMES.len()),
            CheckResult::new("mass", mass, 1e-12, KERNEL_TIMES.len()),
            CheckResult::new("kernel_pde", pde, 1e-8, KERNEL_TIMES.len()),
            CheckResult::new("parabolic_scaling", scaling, 1e-12, KERNEL_TIMES.len()),
        ])
    })
}

/// Relative L² residual of `r` on `nodes` after removing its least-squares
/// fit by monomials of degree `< deg` centred at `x`.
fn residual_after_poly_fit(r: &GridField, f: &GridField, x: Node, nodes: &[Node], deg: f64) -> f64 {
    let g = r.grid;
    let xp = g.node_point(x);
    let monos: Vec<GridField> = DerivIndex::all_below(deg)
        .into_iter()
        .map(|n| monomial_in_chart(g, xp, n, xp))
        .collect();
    let rv = DVector::from_iterator(nodes.len(), nodes.iter().map(|y| r.at(*y)));
    let resid = if monos.is_empty() {
        rv
    } else {
        let a = DMatrix::from_fn(nodes.len(), monos.len(), |i, j| monos[j].at(nodes[i]));
        let sol = a.clone().svd(true, true).solve(&rv, 1e-14).expect("svd solve");
        rv - a * sol
    };
    let fnorm = nodes.iter().map(|y| f.at(*y).powi(2)).sum::<f64>().sqrt();
    resid.norm() / fnorm
}

pub const SCHAUDER_TOL: f64 = 1e-3;

/// Schauder integration on manufactured inputs: zero and constant inputs,
/// PDE residual modulo polynomials, and the t-level decomposition.
pub fn schauder_suite(grid: Grid, tau: f64, seed: u64) -> Result<SuiteReport> {
    timed("schauder", || {
        let gr = Grading::new(0.5);
        let etas = [Homogeneity::new(1, 0), Homogeneity::new(3, 0), Homogeneity::new(5, 0), Homogeneity::new(7, 0)];
        let x = Node::new(grid.n1 / 4, grid.n2 / 3);
        let floor = grid.resolved_tau_floor();

        let mut zero: f64 = 0.0;
        let mut constant: f64 = 0.0;
        for eta in etas {
            let u = integrate(&GridField::zeros(grid), x, eta, &gr, floor)?;
            zero = zero.max(u.max_abs());
            let c = 3.7;
            let u = integrate(&GridField::constant(grid, c), x, eta, &gr, floor)?;
            constant = constant.max(u.max_abs() / c);
        }

        let tp = 2.0 * std::f64::consts::PI;
        let smooth = GridField::from_fn(grid, |p| {
            (tp * p.x1 / grid.l1).sin() * (tp * 2.0 * p.x2 / grid.l2).cos()
                + 0.4 * (tp * 3.0 * p.x1 / grid.l1 + tp * p.x2 / grid.l2).cos()
                + 0.25
        });
        let rough = mollify(&sample_white(grid, seed, 0), tau);
        let radius = grid.l1.min(grid.l2.sqrt()) / 8.0;
        let nodes = grid.ball(x, radius);
        let mut pde: f64 = 0.0;
        let mut levels: f64 = 0.0;
        for f in [&smooth, &rough] {
            for eta in etas {
                let e = eta.value(&gr);
                let sol = solve(&f.spectrum(), x, e)?;
                let mut r = sol.apply_a();
                r.sub_assign(f);
                r.add_constant(f.mean());
                pde = pde.max(residual_after_poly_fit(&r, f, x, &nodes, e - 2.0));
            }
            let eta = etas[1];
            let u = integrate(f, x, eta, &gr, floor)?;
            let mut sum = GridField::zeros(grid);
            for (_, part) in integrate_levels(f, x, eta, &gr, floor)? {
                sum.add_assign(&part);
            }
            sum.sub_assign(&u);
            levels = levels.max(sum.max_abs() / u.max_abs());
        }
        Ok(vec![
            CheckResult::new("zero_input", zero, 0.0, etas.len()),
            CheckResult::new("polynomial_input", constant, SCHAUDER_TOL, etas.len()),
            CheckResult::new("pde_residual", pde, SCHAUDER_TOL, 2 * etas.len()),
            CheckResult::new("level_sum", levels, 1e-8, 2),
        ])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let g = Grading::new(0.5);
        for r in [algebra_suite(g, 1.6, 5, 3).unwrap(), shift_suite(g, 1.6, 10, 3).unwrap()] {
            for c in &r.checks {
                assert!(c.pass, "{} {}: {:e}", r.suite, c.name, c.value);
            }
        }
    }

    #[test]
    fn kernel_and_schauder_suites_pass_on_small_grid() {
        let grid = Grid::new(32, 512, 1.0, 1.0).unwrap();
        for r in [kernel_suite(grid).unwrap(), schauder_suite(grid, 2f64.powi(-18), 1).unwrap()] {
            for c in &r.checks {
                assert!(c.pass, "{} {}: {:e}", r.suite, c.name, c.value);
            }
        }
    }
}
