//! Re-expansion maps `Γ*` acting on series: built from the parameters
//! `π^(n)`, composed, inverted, and constructed from two centered models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{GridField, Node, Spectrum};
use crate::model::ModelSample;
use crate::multiindex::{binomial, binomial_deriv, DerivIndex, Key, MultiIndex};
use crate::series::{Coefficient, Series, Truncation};

/// Parameters `π^(n)` for `n = 0` and nonzero derivative indices.
#[derive(Clone, Debug)]
pub struct GammaParams {
    trunc: Arc<Truncation>,
    pis: BTreeMap<DerivIndex, Series<f64>>,
}

impl GammaParams {
    pub fn new(trunc: Arc<Truncation>) -> Self {
        GammaParams {
            trunc,
            pis: BTreeMap::new(),
        }
    }

    pub fn truncation(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    pub fn pi(&self, n: DerivIndex) -> Option<&Series<f64>> {
        self.pis.get(&n)
    }

    pub fn pi_mut(&mut self, n: DerivIndex) -> &mut Series<f64> {
        let t = self.trunc.clone();
        self.pis.entry(n).or_insert_with(|| Series::new(t))
    }

    pub fn get(&self, n: DerivIndex, b: &MultiIndex) -> f64 {
        self.pis.get(&n).map(|s| s.value(b)).unwrap_or(0.0)
    }

    pub fn set(&mut self, n: DerivIndex, b: &MultiIndex, v: f64) -> Result<()> {
        self.pi_mut(n).set(b, v)
    }

    pub fn keys(&self) -> impl Iterator<Item = &DerivIndex> {
        self.pis.keys()
    }

    /// `π^(n)_β = 0` unless `|n| < |β|`.
    pub fn check_population(&self) -> Result<()> {
        let g = self.trunc.grading;
        for (n, s) in &self.pis {
            for (b, v) in s.iter() {
                if *v != 0.0 && !((n.degree() as f64) < b.homogeneity().value(&g)) {
                    return Err(Error::Population {
                        n: n.to_string(),
                        beta: b.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Dense `Γ*` on a truncation, rows `β`, columns `γ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaMatrix {
    trunc: Arc<Truncation>,
    data: Vec<f64>,
}

impl GammaMatrix {
    pub fn identity(trunc: Arc<Truncation>) -> Self {
        let n = trunc.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        GammaMatrix { trunc, data }
    }

    pub fn truncation(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    pub fn dim(&self) -> usize {
        self.trunc.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim() + j]
    }

    pub fn get(&self, beta: &MultiIndex, gamma: &MultiIndex) -> f64 {
        match (self.trunc.position(beta), self.trunc.position(gamma)) {
            (Some(i), Some(j)) => self.at(i, j),
            _ => 0.0,
        }
    }

    pub fn matmul(&self, other: &GammaMatrix) -> GammaMatrix {
        let n = self.dim();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.at(k, j);
                }
            }
        }
        GammaMatrix {
            trunc: self.trunc.clone(),
            data,
        }
    }

    pub fn max_diff(&self, other: &GammaMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_diff(&self, other: &GammaMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `(Γ* π)_β = Σ_γ (Γ*)_β^γ π_γ`.
    pub fn apply<C: Coefficient>(&self, s: &Series<C>) -> Series<C> {
        let mut out = Series::new(self.trunc.clone());
        let n = self.dim();
        for i in 0..n {
            let mut acc: Option<C> = None;
            for j in 0..=i.min(n - 1) {
                let a = self.at(i, j);
                if a == 0.0 {
                    continue;
                }
                if let Some(v) = s.get_at(j) {
                    match &mut acc {
                        Some(x) => x.axpy(a, v),
                        None => {
                            let mut x = v.zero_like();
                            x.axpy(a, v);
                            acc = Some(x);
                        }
                    }
                }
            }
            // entries above the diagonal are zero by triangularity
            for j in i + 1..n {
                debug_assert_eq!(self.at(i, j), 0.0);
            }
            out.set_at(i, acc);
        }
        out
    }

    /// Nonzero entries as `(β, γ, value)`.
    pub fn entries(&self) -> Vec<(MultiIndex, MultiIndex, f64)> {
        let idx = self.trunc.indices();
        let n = self.dim();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = self.at(i, j);
                if v != 0.0 {
                    out.push((idx[i].clone(), idx[j].clone(), v));
                }
            }
        }
        out
    }

    /// Sparse text dump: one `beta<TAB>gamma<TAB>value` line per nonzero.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        for (b, g, v) in self.entries() {
            writeln!(s, "{b}\t{g}\t{v:e}").unwrap();
        }
        s
    }
}

/// `Γ*` from its parameters: unit columns
/// `Γ* z_k = Σ_{l>=0} binom(k+l, k) (π^(0))^l z_{k+l}`, `Γ* z_n = z_n + π^(n)`,
/// extended multiplicatively to every column.
pub fn gamma_from_pis(p: &GammaParams) -> Result<GammaMatrix> {
    p.check_population()?;
    let trunc = p.trunc.clone();
    let n = trunc.len();
    let idx = trunc.indices().to_vec();
    let mut one = Series::new(trunc.clone());
    if trunc.contains(&MultiIndex::zero()) {
        one.set(&MultiIndex::zero(), 1.0)?;
    }
    let pi0 = p.pis.get(&DerivIndex::ZERO).cloned().unwrap_or_else(|| Series::new(trunc.clone()));
    let unit_column = |key: Key| -> Result<Series<f64>> {
        match key {
            Key::Pop(k) => {
                let mut col = Series::new(trunc.clone());
                let mut power = one.clone();
                let mut l = 0u32;
                loop {
                    let unit = MultiIndex::e_k(k + l);
                    if !trunc.contains(&unit) {
                        break;
                    }
                    col = col.add(&power.shift(&unit).scaled(binomial(k + l, k)))?;
                    power = power.multiply(&pi0)?;
                    if power.iter().all(|(_, v)| *v == 0.0) {
                        break;
                    }
                    l += 1;
                }
                Ok(col)
            }
            Key::Deriv(m) => {
                let mut col = Series::new(trunc.clone());
                col.set(&MultiIndex::e_n(m), 1.0)?;
                if let Some(s) = p.pis.get(&m) {
                    col = col.add(s)?;
                }
                Ok(col)
            }
        }
    };
    let mut cols: Vec<Series<f64>> = Vec::with_capacity(n);
    for gamma in &idx {
        let col = if gamma.is_zero() {
            one.clone()
        } else {
            let (key, _) = gamma.entries()[0];
            let rest = gamma.remove_key(key, 1).unwrap();
            let j = trunc.position(&rest).expect("order ideal");
            unit_column(key)?.multiply(&cols[j])?
        };
        cols.push(col);
    }
    let mut data = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for (b, v) in col.iter() {
            let i = trunc.position(b).unwrap();
            data[i * n + j] = *v;
        }
    }
    Ok(GammaMatrix { trunc, data })
}

/// Parameters of the composition: `π̃^(n) = π^(n) + Γ* π'^(n)`; the matrix of
/// the result is `Γ* Γ'*`.
pub fn compose_params(p: &GammaParams, q: &GammaParams) -> Result<GammaParams> {
    let g = gamma_from_pis(p)?;
    let mut out = p.clone();
    for (n, s) in &q.pis {
        let add = g.apply(s);
        let cur = out.pi_mut(*n).clone();
        *out.pi_mut(*n) = cur.add(&add)?;
    }
    Ok(out)
}

pub fn gamma_compose(p: &GammaParams, q: &GammaParams) -> Result<(GammaParams, GammaMatrix)> {
    let r = compose_params(p, q)?;
    let m = gamma_from_pis(&r)?;
    Ok((r, m))
}

/// Parameters of the inverse: `Γ* π̃^(n) = -π^(n)`, solved by forward
/// substitution in `≺` order.
pub fn gamma_invert(p: &GammaParams) -> Result<GammaParams> {
    let g = gamma_from_pis(p)?;
    let trunc = p.trunc.clone();
    let n = trunc.len();
    let mut out = GammaParams::new(trunc.clone());
    for (key, s) in &p.pis {
        let mut sol = vec![0.0; n];
        for i in 0..n {
            let mut v = -s.get_at(i).copied().unwrap_or(0.0);
            for (j, sj) in sol.iter().enumerate().take(i) {
                v -= g.at(i, j) * sj;
            }
            sol[i] = v;
        }
        let t = out.pi_mut(*key);
        for (i, v) in sol.into_iter().enumerate() {
            if v != 0.0 {
                t.set_at(i, Some(v));
            }
        }
    }
    Ok(out)
}

/// Fit settings for [`build_gamma_yx`].
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    /// Fit ball radius as a multiple of `d(x, y)`.
    pub radius_factor: f64,
    /// Upper bound on the fit radius (the validity window).
    pub max_radius: f64,
    /// Smallest node count accepted in the fit ball.
    pub min_nodes: usize,
    /// Relative residual above which the fit is rejected.
    pub threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            radius_factor: 2.0,
            max_radius: 0.125,
            min_nodes: 49,
            threshold: 0.25,
        }
    }
}

/// Result of [`build_gamma_yx`].
#[derive(Clone, Debug)]
pub struct Reexpansion {
    pub params: GammaParams,
    pub matrix: GammaMatrix,
    pub window: Vec<Node>,
    pub fit_residuals: Vec<(MultiIndex, f64)>,
}

/// Fit ball around `x` of radius `radius_factor * d(x, y)` clipped to
/// `max_radius`, enlarged until it holds `min_nodes` nodes.
pub fn fit_window(grid: &crate::Grid, x: Node, y: Node, opts: &FitOptions) -> Vec<Node> {
    let d = grid.carnot_distance(grid.node_point(x), grid.node_point(y));
    let mut r = (opts.radius_factor * d)
        .min(opts.max_radius)
        .max(grid.h1())
        .max(grid.h2().sqrt());
    loop {
        let b = grid.ball(x, r);
        if b.len() >= opts.min_nodes || r > grid.l1.min(grid.l2.sqrt()) / 2.0 {
            return b;
        }
        r *= 1.25;
    }
}

/// `Γ*_{yx}` with `Π_y = Γ*_{yx} Π_x + Π_y(x)`, for two models built in a
/// common chart: `π^(0) = Π_y(x)`, the
/// polynomial sector from `(x - y)`, the remaining `π^(n)_β` by least squares
/// on the fit window in `≺` order.
pub fn build_gamma_yx(mx: &ModelSample, my: &ModelSample, opts: &FitOptions) -> Result<Reexpansion> {
    let trunc = mx.pi.truncation().clone();
    let g = trunc.grading;
    let grid = mx.xi_tau.grid;
    let x = mx.base;
    let y = my.base;
    if mx.chart != my.chart {
        return Err(Error::InvalidArgument("models at x and y must share a chart".into()));
    }
    let xp = grid.node_point(x);
    let yp = grid.node_point(y);
    let (dx1, dx2) = grid.chart_diff(grid.node_point(mx.chart), yp, xp);
    let mut params = GammaParams::new(trunc.clone());
    for (b, f) in my.pi.iter() {
        params.set(DerivIndex::ZERO, b, f.at(x))?;
    }
    for m in trunc.indices() {
        let Some(mn) = m.as_unit_deriv() else { continue };
        for n in DerivIndex::all_up_to(mn.degree()) {
            if n.is_zero() || n == mn || !n.le(&mn) {
                continue;
            }
            let d = mn.checked_sub(&n).unwrap();
            let v = binomial_deriv(&mn, &n) * dx1.powi(d.n1 as i32) * dx2.powi(d.n2 as i32);
            params.set(n, m, v)?;
        }
    }
    let window = fit_window(&grid, x, y, opts);
    let wpts: Vec<(f64, f64)> = window.iter().map(|w| grid.diff(xp, grid.node_point(*w))).collect();
    let mut fit_residuals = Vec::new();
    let populated: Vec<MultiIndex> = trunc.populated();
    for b in &populated {
        if b.brackets() < 0 {
            continue;
        }
        let Some(piy) = my.pi.get(b) else { continue };
        let eta = b.homogeneity().value(&g);
        let gm = gamma_from_pis(&params)?;
        let bi = trunc.position(b).unwrap();
        let c0 = piy.at(x);
        let rhs: Vec<f64> = window
            .iter()
            .map(|w| {
                let mut v = piy.at(*w) - c0;
                for (gi, gamma) in trunc.indices().iter().enumerate() {
                    if gamma.brackets() < 0 {
                        continue;
                    }
                    let a = gm.at(bi, gi);
                    if a == 0.0 {
                        continue;
                    }
                    if let Some(f) = mx.pi.get(gamma) {
                        v -= a * f.at(*w);
                    }
                }
                v
            })
            .collect();
        let monos: Vec<DerivIndex> = DerivIndex::all_below(eta).into_iter().filter(|n| !n.is_zero()).collect();
        let norm = window.iter().map(|w| piy.at(*w).powi(2)).sum::<f64>().sqrt();
        let resid_vec: Vec<f64> = if monos.is_empty() {
            rhs.clone()
        } else {
            let a = DMatrix::from_fn(window.len(), monos.len(), |r, c| {
                let (d1, d2) = wpts[r];
                d1.powi(monos[c].n1 as i32) * d2.powi(monos[c].n2 as i32)
            });
            let rv = DVector::from_vec(rhs.clone());
            let svd = a.clone().svd(true, true);
            let coef = svd
                .solve(&rv, 1e-14)
                .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;
            for (k, n) in monos.iter().enumerate() {
                params.set(*n, b, coef[k])?;
            }
            (rv - a * coef).iter().copied().collect()
        };
        let r = resid_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = if norm > 0.0 { r / norm } else { r };
        if rel > opts.threshold {
            return Err(Error::FitResidual {
                beta: b.to_string(),
                residual: rel,
                threshold: opts.threshold,
            });
        }
        fit_residuals.push((b.clone(), rel));
    }
    let matrix = gamma_from_pis(&params)?;
    Ok(Reexpansion {
        params,
        matrix,
        window,
        fit_residuals,
    })
}

/// Relative residuals on the fit window, per populated `β`:
/// `Π_y - Γ* Π_x - Π_y(x)` and `(Π⁻_y - Γ* Π⁻_x)_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualRow {
    pub beta: MultiIndex,
    pub pi: f64,
    pub pi_minus: f64,
}

pub fn reexpansion_residual(
    mx: &ModelSample,
    my: &ModelSample,
    gamma: &GammaMatrix,
    window: &[Node],
    smoothing: f64,
) -> Vec<ResidualRow> {
    let trunc = mx.pi.truncation().clone();
    let x = mx.base;
    let gpi = gamma.apply(&mx.pi);
    let gpm = gamma.apply(&mx.pi_minus);
    let smooth = |f: &GridField| -> Spectrum {
        let mut s = f.spectrum();
        s.apply_real(|m| (-smoothing * m.norm4()).exp());
        s
    };
    let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
    let mut out = Vec::new();
    for b in trunc.populated() {
        let Some(piy) = my.pi.get(&b) else { continue };
        let c0 = piy.at(x);
        let (mut num, mut den) = (0.0, 0.0);
        for w in window {
            let lhs = piy.at(*w);
            let rhs = gpi.get(&b).map(|f| f.at(*w)).unwrap_or(0.0) + c0;
            num += (lhs - rhs).powi(2);
            den += lhs * lhs;
        }
        let pi_res = rel(num.sqrt(), den.sqrt());
        let pm_res = match (my.pi_minus.get(&b), gpm.get(&b)) {
            (Some(a), Some(bb)) => {
                let (sa, sb) = (smooth(a).to_field(), smooth(bb).to_field());
                let (mut num, mut den) = (0.0, 0.0);
                for w in window {
                    num += (sa.at(*w) - sb.at(*w)).powi(2);
                    den += sa.at(*w).powi(2);
                }
                rel(num.sqrt(), den.sqrt())
            }
            _ => 0.0,
        };
        out.push(ResidualRow {
            beta: b,
            pi: pi_res,
            pi_minus: pm_res,
        });
    }
    out
}
