//! Monte Carlo annealed moments, log-log scaling fits, and the experiment
//! drivers producing the scaling series and consistency checks.

use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::kernels::{heat_kernel, sobolev_dual_norm, Grid, GridField, Mode, Node, Spectrum};
use crate::model::{calibrate, CalibrationOptions, Counterterms, Model, ModelSpec};
use crate::multiindex::{DerivIndex, MultiIndex};
use crate::noise::{bump_direction, sample_white, NoiseSample};
use crate::reexpansion::{build_gamma_yx, reexpansion_residual, FitOptions, ResidualRow};

/// Smallest sample count accepted by [`annealed_moment`].
pub const MIN_SAMPLES: usize = 30;

/// `E^{1/p}|X|^p` with a jackknife standard error.
pub fn annealed_moment(samples: &[f64], p: u32) -> Result<(f64, f64)> {
    let powers: Vec<f64> = samples.iter().map(|x| x.abs().powi(p as i32)).collect();
    annealed_moment_from_powers(&powers, p)
}

/// As [`annealed_moment`], from per-sample values of `|X|^p` (which may
/// already be spatial averages).
pub fn annealed_moment_from_powers(powers: &[f64], p: u32) -> Result<(f64, f64)> {
    if p != 2 && p != 4 {
        return Err(Error::InvalidArgument(format!("moment order {p} not in {{2, 4}}")));
    }
    let n = powers.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "{n} samples, at least {MIN_SAMPLES} required"
        )));
    }
    let inv = 1.0 / p as f64;
    let sum: f64 = powers.iter().sum();
    let est = (sum / n as f64).powf(inv);
    let loo: Vec<f64> = powers
        .iter()
        .map(|x| ((sum - x) / (n - 1) as f64).max(0.0).powf(inv))
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Ok((est, var.sqrt()))
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleKind {
    Space,
    Time,
    Tau,
}

impl fmt::Display for ScaleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleKind::Space => "space",
            ScaleKind::Time => "time",
            ScaleKind::Tau => "tau",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub scale: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingSeries {
    pub quantity: String,
    pub beta: String,
    pub p: u32,
    pub scale_kind: ScaleKind,
    pub points: Vec<ScalingPoint>,
}

impl ScalingSeries {
    pub fn new(quantity: impl Into<String>, beta: impl Into<String>, p: u32, scale_kind: ScaleKind) -> Self {
        ScalingSeries {
            quantity: quantity.into(),
            beta: beta.into(),
            p,
            scale_kind,
            points: Vec::new(),
        }
    }

    pub fn push(&mut self, scale: f64, estimate: f64, stderr: f64, n_samples: usize) {
        self.points.push(ScalingPoint {
            scale,
            estimate,
            stderr,
            n_samples,
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Weighted least-squares slope of `log estimate` against `log scale`.
///
/// Weights are `(estimate/stderr)²` when every point has a positive stderr,
/// uniform otherwise. The slope error is the formal one, inflated by the
/// reduced chi-square when that exceeds one.
pub fn scaling_fit(s: &ScalingSeries) -> Result<LogLogFit> {
    let n = s.points.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "{} {}: {n} scales, at least 3 required",
            s.quantity, s.beta
        )));
    }
    if let Some(pt) = s.points.iter().find(|pt| !(pt.estimate > 0.0) || !(pt.scale > 0.0)) {
        return Err(Error::NonPositiveEstimate(format!(
            "{} {} at scale {}: {}",
            s.quantity, s.beta, pt.scale, pt.estimate
        )));
    }
    let weighted = s.points.iter().all(|pt| pt.stderr > 0.0 && pt.stderr.is_finite());
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let xs: Vec<f64> = s.points.iter().map(|pt| pt.scale.ln()).collect();
    let ys: Vec<f64> = s.points.iter().map(|pt| pt.estimate.ln()).collect();
    let ws: Vec<f64> = s
        .points
        .iter()
        .map(|pt| if weighted { (pt.estimate / pt.stderr).powi(2) } else { 1.0 })
        .collect();
    for i in 0..n {
        sw += ws[i];
        sx += ws[i] * xs[i];
        sy += ws[i] * ys[i];
        sxx += ws[i] * xs[i] * xs[i];
        sxy += ws[i] * xs[i] * ys[i];
    }
    let delta = sw * sxx - sx * sx;
    if delta <= 0.0 {
        return Err(Error::InvalidArgument("degenerate scales".into()));
    }
    let slope = (sw * sxy - sx * sy) / delta;
    let intercept = (sy - slope * sx) / sw;
    let chi2: f64 = (0..n).map(|i| ws[i] * (ys[i] - intercept - slope * xs[i]).powi(2)).sum();
    let red = chi2 / (n - 2) as f64;
    let formal = (sw / delta).sqrt();
    let stderr = if weighted { formal * red.max(1.0).sqrt() } else { formal * red.sqrt() };
    Ok(LogLogFit {
        slope,
        stderr,
        intercept,
    })
}

/// One fitted slope against its target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitRow {
    pub quantity: String,
    pub beta: String,
    pub slope: f64,
    pub stderr: f64,
    pub target: f64,
    pub tol: f64,
    pub pass: bool,
}

/// A non-slope consistency check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub series: Vec<ScalingSeries>,
    pub fits: Vec<FitRow>,
    pub checks: Vec<CheckRow>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    quantity: &'a str,
    beta: &'a str,
    p: u32,
    scale_kind: ScaleKind,
    scale: f64,
    estimate: f64,
    stderr: f64,
    n_samples: usize,
}

impl Report {
    /// Fits `series`, records the row, and keeps the series.
    pub fn add_fit(&mut self, series: ScalingSeries, target: f64, tol: f64) -> Result<FitRow> {
        let fit = scaling_fit(&series)?;
        let row = FitRow {
            quantity: series.quantity.clone(),
            beta: series.beta.clone(),
            slope: fit.slope,
            stderr: fit.stderr,
            target,
            tol,
            pass: (fit.slope - target).abs() <= tol,
        };
        self.fits.push(row.clone());
        self.series.push(series);
        Ok(row)
    }

    pub fn add_check(&mut self, name: impl Into<String>, value: f64, bound: f64, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckRow {
            name: name.into(),
            value,
            bound,
            pass,
            detail: detail.into(),
        });
    }

    pub fn all_pass(&self) -> bool {
        self.fits.iter().all(|f| f.pass) && self.checks.iter().all(|c| c.pass)
    }

    pub fn extend(&mut self, other: Report) {
        self.series.extend(other.series);
        self.fits.extend(other.fits);
        self.checks.extend(other.checks);
    }

    /// Series points with columns
    /// `quantity, beta, p, scale_kind, scale, estimate, stderr, n_samples`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for s in &self.series {
            for pt in &s.points {
                wr.serialize(CsvRow {
                    quantity: &s.quantity,
                    beta: &s.beta,
                    p: s.p,
                    scale_kind: s.scale_kind,
                    scale: pt.scale,
                    estimate: pt.estimate,
                    stderr: pt.stderr,
                    n_samples: pt.n_samples,
                })?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// `{config, fits, checks}`.
    pub fn summary_json(&self, config: &Config) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "config": serde_json::to_value(config)?,
            "fits": serde_json::to_value(&self.fits)?,
            "checks": serde_json::to_value(&self.checks)?,
        }))
    }
}

fn model_for(cfg: &Config, tau: f64, cutoff: f64) -> Result<Model> {
    Model::new(ModelSpec {
        grading: cfg.grading(),
        grid: cfg.grid,
        tau,
        cutoff,
    })
}

/// Model at the configured `τ` and cutoff.
pub fn config_model(cfg: &Config) -> Result<Model> {
    model_for(cfg, cfg.model_tau, cfg.cutoff)
}

/// `(1/N) Σ_x f(x)²` for `f` with spectrum `spec · m`, by Parseval.
fn spatial_mean_square(spec: &Spectrum, m: impl Fn(Mode) -> f64) -> f64 {
    let n = spec.grid.len() as f64;
    spec.weighted_energy(|md| m(md).powi(2)) / (n * n)
}

fn d1_a_inverse(m: Mode) -> f64 {
    (m.derivative_symbol(DerivIndex::new(1, 0)) * m.a_inverse_symbol()).norm()
}

/// `E (∂₁v_τ)²` for `A v_τ = ξ_τ`, per `τ`, each sample averaged over
/// all nodes.
pub fn uv_divergence(cfg: &Config, taus: &[f64], samples: usize, first_index: u64) -> Result<ScalingSeries> {
    let grid = cfg.grid;
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let xi = sample_white(grid, cfg.seed, first_index + i as u64);
            let spec = xi.field.spectrum();
            taus.iter()
                .map(|&tau| spatial_mean_square(&spec, |m| d1_a_inverse(m) * (-tau * m.norm4()).exp()))
                .collect()
        })
        .collect();
    let mut s = ScalingSeries::new("uv_d1v_sq", "1", 2, ScaleKind::Tau);
    for (k, &tau) in taus.iter().enumerate() {
        let v: Vec<f64> = per_sample.iter().map(|r| r[k]).collect();
        let (m, e) = mean_stderr(&v);
        s.push(tau, m, e, samples);
    }
    Ok(s)
}

/// `E ξ_t(x)²` per `t`, each sample averaged over all nodes.
pub fn noise_time_series(cfg: &Config, ts: &[f64], samples: usize, first_index: u64) -> ScalingSeries {
    let grid = cfg.grid;
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let spec = sample_white(grid, cfg.seed, first_index + i as u64).field.spectrum();
            ts.iter()
                .map(|&t| spatial_mean_square(&spec, |m| (-t * m.norm4()).exp()))
                .collect()
        })
        .collect();
    let mut s = ScalingSeries::new("xi_t_sq", "1", 2, ScaleKind::Time);
    for (k, &t) in ts.iter().enumerate() {
        let v: Vec<f64> = per_sample.iter().map(|r| r[k]).collect();
        let (m, e) = mean_stderr(&v);
        s.push(t, m, e, samples);
    }
    s
}

/// Monte Carlo `E(ξ, ζ)²` with its standard error (`E(ξ, ζ) = 0` is used).
pub fn white_noise_pairing(cfg: &Config, zeta: &GridField, samples: usize, first_index: u64) -> (f64, f64) {
    let v: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let xi = sample_white(cfg.grid, cfg.seed, first_index + i as u64);
            xi.field.pairing(zeta).powi(2)
        })
        .collect();
    mean_stderr(&v)
}

/// Runs [`calibrate`] with the configured base points and BPHZ time.
pub fn calibrate_config(model: &Model, cfg: &Config, samples: usize, first_index: u64, reflect: bool) -> Result<Counterterms> {
    calibrate(
        model,
        &CalibrationOptions {
            seed: cfg.seed,
            first_index,
            samples,
            base_points: cfg.base_points.clone(),
            t_bphz: cfg.t_bphz(),
            reflect,
        },
    )
}

/// Cutoff just admitting `z1` and nothing that needs a later counterterm.
fn e1_cutoff(cfg: &Config) -> f64 {
    let g = cfg.grading();
    MultiIndex::e_k(1).order_key(&g) + 0.1
}

/// `|c_{z1}|(τ)` over the τ scan.
pub fn counterterm_scan(cfg: &Config, taus: &[f64], samples: usize) -> Result<(ScalingSeries, Vec<Counterterms>)> {
    let e1 = MultiIndex::e_k(1);
    let mut s = ScalingSeries::new("c", e1.to_string(), 1, ScaleKind::Tau);
    let mut all = Vec::new();
    for &tau in taus {
        let model = model_for(cfg, tau, e1_cutoff(cfg))?;
        let c = calibrate_config(&model, cfg, samples, 0, false)?;
        s.push(tau, c.value(&e1).abs(), c.stderr.value(&e1), samples);
        all.push(c);
    }
    Ok((s, all))
}

/// `E^{1/2}|(Π⁻_{x0})_t(x)|²` against `⁴√t`, averaged over nodes.
pub fn cw02_series(model: &Model, c: &Counterterms, ts: &[f64], samples: usize, first_index: u64, seed: u64) -> Result<ScalingSeries> {
    let grid = model.spec.grid;
    let zero = MultiIndex::zero();
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let xi = sample_white(grid, seed, first_index + i as u64);
            let s = model.build_prefix(&xi, Node::new(0, 0), c, 1)?;
            let spec = s.pi_minus.get(&zero).expect("built").spectrum();
            Ok(ts
                .iter()
                .map(|&t| spatial_mean_square(&spec, |m| (-t * m.norm4()).exp()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut s = ScalingSeries::new("cw02", zero.to_string(), 2, ScaleKind::Time);
    for (k, &t) in ts.iter().enumerate() {
        let v: Vec<f64> = per_sample.iter().map(|r| r[k]).collect();
        let (est, err) = annealed_moment_from_powers(&v, 2)?;
        s.push(t.powf(0.25), est, err, samples);
    }
    Ok(s)
}

/// Spatial offsets realizing Carnot distance `r` along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X1,
    X2,
}

impl Axis {
    pub fn label(&self) -> &'static str {
        match self {
            Axis::X1 => "x1",
            Axis::X2 => "x2",
        }
    }

    /// Node offset and realized Carnot distance for nominal distance `r`.
    pub fn offset(&self, grid: &Grid, r: f64) -> Result<((i64, i64), f64)> {
        let (k, d) = match self {
            Axis::X1 => {
                let k = (r / grid.h1()).round() as i64;
                ((k, 0), k as f64 * grid.h1())
            }
            Axis::X2 => {
                let k = (r * r / grid.h2()).round() as i64;
                ((0, k), (k as f64 * grid.h2()).sqrt())
            }
        };
        if d <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scale {r} not resolved along {}",
                self.label()
            )));
        }
        Ok((k, d))
    }
}

/// `E^{1/p}|Π_{xβ}(y)|^p` against `d(x, y)` for every built index, along
/// both axes. Units `z_n` are skipped on axes where they vanish identically.
pub fn cw01_series(
    model: &Model,
    c: &Counterterms,
    cfg: &Config,
    count: usize,
    samples: usize,
    first_index: u64,
) -> Result<Vec<ScalingSeries>> {
    let grid = model.spec.grid;
    let betas: Vec<MultiIndex> = model.index_set().iter().take(count).cloned().collect();
    let mut offsets = Vec::new();
    for axis in [Axis::X1, Axis::X2] {
        for &r in &cfg.scales {
            let (k, d) = axis.offset(&grid, r)?;
            offsets.push((axis, k, d));
        }
    }
    // values[sample][beta][offset]
    let values: Vec<Vec<Vec<f64>>> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<f64>>> {
            let xi = sample_white(grid, cfg.seed, first_index + i as u64);
            let x = cfg.base_points[i % cfg.base_points.len()];
            let s = model.build_prefix(&xi, x, c, count)?;
            Ok(betas
                .iter()
                .map(|b| {
                    let f = s.pi.get(b);
                    offsets
                        .iter()
                        .map(|(_, (k1, k2), _)| f.map(|f| f.at(grid.offset(x, *k1, *k2))).unwrap_or(0.0))
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for &p in &cfg.p {
        for (bi, b) in betas.iter().enumerate() {
            for axis in [Axis::X1, Axis::X2] {
                if let Some(n) = b.as_unit_deriv() {
                    let vanishes = match axis {
                        Axis::X1 => n.n2 > 0,
                        Axis::X2 => n.n1 > 0,
                    };
                    if vanishes {
                        continue;
                    }
                }
                let mut s = ScalingSeries::new(format!("cw01_{}", axis.label()), b.to_string(), p, ScaleKind::Space);
                for (oi, (ax, _, d)) in offsets.iter().enumerate() {
                    if *ax != axis {
                        continue;
                    }
                    let v: Vec<f64> = values.iter().map(|r| r[bi][oi]).collect();
                    let (est, err) = annealed_moment(&v, p)?;
                    s.push(*d, est, err, samples);
                }
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Spectral gap equality case for `F = ξ_t(y)`: Monte Carlo `Var F` against
/// `‖ψ_t(y - ·)‖²` in the dual norm of order `1/2 - α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SgCheck {
    pub t: f64,
    pub variance: f64,
    pub stderr: f64,
    pub dual_norm_sq: f64,
}

pub fn sg_check(cfg: &Config, t: f64, samples: usize, first_index: u64) -> SgCheck {
    let grid = cfg.grid;
    let y = cfg.base_points[0];
    let v: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let spec = sample_white(grid, cfg.seed, first_index + i as u64).field.spectrum();
            spec.eval_at(y, |m| Complex64::new((-t * m.norm4()).exp(), 0.0)).powi(2)
        })
        .collect();
    let (variance, stderr) = mean_stderr(&v);
    let psi = heat_kernel(grid, t, grid.node_point(y));
    let dual = sobolev_dual_norm(&psi, 0.5 - cfg.alpha);
    SgCheck {
        t,
        variance,
        stderr,
        dual_norm_sq: dual * dual,
    }
}

/// Dual norm of `ψ_t` against `⁴√t`.
pub fn dual_norm_series(cfg: &Config, ts: &[f64]) -> ScalingSeries {
    let grid = cfg.grid;
    let mut s = ScalingSeries::new("psi_dual_norm", "1", 2, ScaleKind::Time);
    for &t in ts {
        let psi = heat_kernel(grid, t, grid.node_point(Node::new(0, 0)));
        s.push(t.powf(0.25), sobolev_dual_norm(&psi, 0.5 - cfg.alpha), 0.0, 1);
    }
    s
}

/// Largest relative residuals of the base-point identities over the
/// samples: `(Π⁻ identity, linearized identity)`.
pub fn base_point_identities(model: &Model, c: &Counterterms, seed: u64, samples: usize, bases: &[Node]) -> Result<(f64, f64)> {
    let grid = model.spec.grid;
    let dxi = bump_direction(grid, 1e-4, grid.node_point(Node::new(grid.n1 / 3, grid.n2 / 5)));
    let rows: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let xi = sample_white(grid, seed, i as u64);
            let x = bases[i % bases.len()];
            let s = model.build(&xi, x, c)?;
            let v = model.linearize(&s, &dxi, c)?;
            let a = model.base_point_residuals(&s, c).iter().fold(0.0f64, |m, r| m.max(r.1));
            let b = model
                .linearized_base_point_residuals(&s, &v)
                .iter()
                .fold(0.0f64, |m, r| m.max(r.1));
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().fold((0.0, 0.0), |m, r| (m.0.max(r.0), m.1.max(r.1))))
}

/// Finite differences against the linearized pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdRow {
    pub sample: u64,
    pub direction: usize,
    pub err_coarse: f64,
    pub err_fine: f64,
    pub ratio: f64,
}

/// Smooth unit-`L²` perturbation directions.
pub fn fd_directions(grid: Grid) -> Vec<GridField> {
    let specs = [
        (1e-4, Node::new(grid.n1 / 3, grid.n2 / 5)),
        (4e-5, Node::new(grid.n1 / 2 + 3, grid.n2 / 2 + 17)),
        (2e-4, Node::new(grid.n1 / 8, 7 * grid.n2 / 8)),
    ];
    specs
        .iter()
        .map(|(sigma, z)| {
            let mut d = bump_direction(grid, *sigma, grid.node_point(*z));
            let n = d.l2_norm();
            d.scale(1.0 / n);
            d
        })
        .collect()
}

/// Relative error of `(Π(ξ + s δξ) - Π(ξ))/s` against `δΠ` for
/// `s = steps.0` and `s = steps.1`, over every built index.
pub fn fd_check(
    model: &Model,
    c: &Counterterms,
    seed: u64,
    samples: usize,
    directions: &[GridField],
    steps: (f64, f64),
) -> Result<Vec<FdRow>> {
    let grid = model.spec.grid;
    let jobs: Vec<(u64, usize)> = (0..samples as u64)
        .flat_map(|i| (0..directions.len()).map(move |d| (i, d)))
        .collect();
    jobs.into_par_iter()
        .map(|(i, di)| -> Result<FdRow> {
            let xi = sample_white(grid, seed, i);
            let x = Node::new((5 + 7 * i as usize) % grid.n1, (11 + 131 * i as usize) % grid.n2);
            let base = model.build(&xi, x, c)?;
            let v = model.linearize(&base, &directions[di], c)?;
            let err = |s: f64| -> Result<f64> {
                let mut f = xi.field.clone();
                f.axpy(s, &directions[di]);
                let pert = NoiseSample {
                    seed: xi.seed,
                    sample_index: xi.sample_index,
                    field: f,
                };
                let p = model.build(&pert, x, c)?;
                let (mut num, mut den) = (0.0, 0.0);
                for (b, dp) in v.dpi.iter() {
                    let (Some(a), Some(z)) = (p.pi.get(b), base.pi.get(b)) else { continue };
                    for k in 0..dp.values.len() {
                        let fd = (a.values[k] - z.values[k]) / s;
                        num += (fd - dp.values[k]).powi(2);
                        den += dp.values[k].powi(2);
                    }
                }
                Ok((num / den).sqrt())
            };
            let ec = err(steps.0)?;
            let ef = err(steps.1)?;
            Ok(FdRow {
                sample: i,
                direction: di,
                err_coarse: ec,
                err_fine: ef,
                ratio: ec / ef,
            })
        })
        .collect()
}

/// Re-expansion residuals and transitivity for one triple `(x, y, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReexpansionCheck {
    /// Largest residuals per index over the samples.
    pub residuals: Vec<ResidualRow>,
    pub transitivity: f64,
    pub fit_residual: f64,
}

impl ReexpansionCheck {
    pub fn max_pi(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.pi))
    }

    pub fn max_pi_minus(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.pi_minus))
    }
}

pub fn fit_options(cfg: &Config) -> FitOptions {
    FitOptions {
        radius_factor: cfg.fit_radius_factor,
        max_radius: cfg.window,
        threshold: cfg.fit_threshold,
        ..FitOptions::default()
    }
}

/// A triple `(x, y, z)` inside the validity window around `x`:
/// `y - x = (N1/16, N2/64)` and `z - x = (-N1/32, 5 N2/128)` in nodes.
pub fn reexpansion_triple(grid: &Grid, x: Node) -> (Node, Node, Node) {
    let y = grid.offset(x, (grid.n1 / 16) as i64, (grid.n2 / 64) as i64);
    let z = grid.offset(x, -((grid.n1 / 32) as i64), (5 * grid.n2 / 128) as i64);
    (x, y, z)
}

/// Builds models at `x`, `y`, `z` in the chart around `x` and checks
/// `Π_y = Γ*_{yx}Π_x + Π_y(x)`, `Π⁻_y = Γ*_{yx}Π⁻_x` (after smoothing by
/// `smoothing`) and `Γ*_{zx} = Γ*_{zy}Γ*_{yx}`.
#[allow(clippy::too_many_arguments)]
pub fn reexpansion_check(
    model: &Model,
    c: &Counterterms,
    seed: u64,
    samples: usize,
    pts: (Node, Node, Node),
    opts: &FitOptions,
    smoothing: f64,
) -> Result<ReexpansionCheck> {
    let grid = model.spec.grid;
    let (x, y, z) = pts;
    let per: Vec<(Vec<ResidualRow>, f64, f64)> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let xi = sample_white(grid, seed, i);
            let mx = model.build_in_chart(&xi, x, c, x)?;
            let my = model.build_in_chart(&xi, y, c, x)?;
            let mz = model.build_in_chart(&xi, z, c, x)?;
            let yx = build_gamma_yx(&mx, &my, opts)?;
            let zy = build_gamma_yx(&my, &mz, opts)?;
            let zx = build_gamma_yx(&mx, &mz, opts)?;
            let rows = reexpansion_residual(&mx, &my, &yx.matrix, &yx.window, smoothing);
            let prod = zy.matrix.matmul(&yx.matrix);
            let id = crate::reexpansion::GammaMatrix::identity(model.truncation().clone());
            let scale = zx.matrix.frobenius_diff(&id);
            let trans = prod.frobenius_diff(&zx.matrix) / if scale > 0.0 { scale } else { 1.0 };
            let fit = yx
                .fit_residuals
                .iter()
                .chain(&zy.fit_residuals)
                .chain(&zx.fit_residuals)
                .fold(0.0f64, |m, r| m.max(r.1));
            Ok((rows, trans, fit))
        })
        .collect::<Result<_>>()?;
    let mut residuals: Vec<ResidualRow> = per[0].0.clone();
    for (rows, _, _) in &per[1..] {
        for (acc, r) in residuals.iter_mut().zip(rows) {
            acc.pi = acc.pi.max(r.pi);
            acc.pi_minus = acc.pi_minus.max(r.pi_minus);
        }
    }
    Ok(ReexpansionCheck {
        residuals,
        transitivity: per.iter().fold(0.0, |m, r| m.max(r.1)),
        fit_residual: per.iter().fold(0.0, |m, r| m.max(r.2)),
    })
}

/// `E^{1/2}|π^(0)_{yx,0}|²` (from the parameters) and
/// `E^{1/2}|(Γ*_{yx})_{z1}^{z0}|²` (from the matrix) against `d(x, y)`,
/// along both axes.
pub fn reexpansion_scaling(model: &Model, c: &Counterterms, cfg: &Config, samples: usize, first_index: u64) -> Result<Vec<ScalingSeries>> {
    let grid = model.spec.grid;
    let count = model
        .prefix_len(&MultiIndex::e_k(0))
        .ok_or_else(|| Error::InvalidArgument("truncation lacks z0".into()))?;
    let opts = fit_options(cfg);
    let mut offsets = Vec::new();
    for axis in [Axis::X1, Axis::X2] {
        for &r in &cfg.scales {
            let (k, d) = axis.offset(&grid, r)?;
            offsets.push((axis, k, d));
        }
    }
    let (e0, e1, zero) = (MultiIndex::e_k(0), MultiIndex::e_k(1), MultiIndex::zero());
    let values: Vec<Vec<(f64, f64)>> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<(f64, f64)>> {
            let xi = sample_white(grid, cfg.seed, first_index + i as u64);
            let x = cfg.base_points[i % cfg.base_points.len()];
            let mx = model.build_prefix_in_chart(&xi, x, c, count, x)?;
            offsets
                .iter()
                .map(|(_, (k1, k2), _)| {
                    let y = grid.offset(x, *k1, *k2);
                    let my = model.build_prefix_in_chart(&xi, y, c, count, x)?;
                    let r = build_gamma_yx(&mx, &my, &opts)?;
                    Ok((r.params.get(DerivIndex::ZERO, &zero), r.matrix.get(&e1, &e0)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for axis in [Axis::X1, Axis::X2] {
        let mut a = ScalingSeries::new(format!("mt94_{}", axis.label()), zero.to_string(), 2, ScaleKind::Space);
        let mut b = ScalingSeries::new(format!("ks93_{}", axis.label()), format!("{e1}|{e0}"), 2, ScaleKind::Space);
        for (oi, (ax, _, d)) in offsets.iter().enumerate() {
            if *ax != axis {
                continue;
            }
            let va: Vec<f64> = values.iter().map(|r| r[oi].0).collect();
            let vb: Vec<f64> = values.iter().map(|r| r[oi].1).collect();
            let (ea, sa) = annealed_moment(&va, 2)?;
            let (eb, sb) = annealed_moment(&vb, 2)?;
            a.push(*d, ea, sa, samples);
            b.push(*d, eb, sb, samples);
        }
        out.push(a);
        out.push(b);
    }
    Ok(out)
}

fn target_of(b: &str, model: &Model) -> f64 {
    let g = model.spec.grading;
    let b: MultiIndex = b.parse().expect("canonical string");
    b.homogeneity().value(&g)
}

/// All statistical experiments at the configured sizes.
pub fn run_experiment(cfg: &Config, c: &Counterterms) -> Result<Report> {
    let mut rep = Report::default();
    let model = config_model(cfg)?;
    let g = cfg.grading();
    let tol = &cfg.tol;
    let n = cfg.samples;
    let n_moments = if cfg.p.contains(&4) { cfg.samples_fourth.max(n) } else { n };

    rep.add_fit(uv_divergence(cfg, &cfg.tau, n, 0)?, -0.25, tol.uv)?;
    rep.add_fit(noise_time_series(cfg, &cfg.t, n, 0), -0.75, tol.cw02)?;

    let (cs, _) = counterterm_scan(cfg, &cfg.tau, n)?;
    rep.add_fit(cs, -0.25, tol.counterterm)?;
    for b in model.index_set() {
        if crate::model::counterterm_slot(b, &g) && !crate::model::counterterm_active(b, &g) {
            let v = c.value(b);
            rep.add_check(format!("c_parity {b}"), v.abs(), 0.0, v == 0.0, "odd components vanish exactly");
        }
    }

    rep.add_fit(cw02_series(&model, c, &cfg.t, n, 0, cfg.seed)?, g.alpha - 2.0, tol.cw02)?;

    for s in cw01_series(&model, c, cfg, model.index_set().len(), n_moments, 0)? {
        let target = target_of(&s.beta, &model);
        rep.add_fit(s, target, tol.cw01)?;
    }

    // τ-uniformity probe for z1: slopes at τ and 4τ
    let e1 = MultiIndex::e_k(1);
    let mut probe = Vec::new();
    for tau in [cfg.model_tau, 4.0 * cfg.model_tau] {
        let m = model_for(cfg, tau, e1_cutoff(cfg))?;
        let cc = calibrate_config(&m, cfg, n, 0, false)?;
        let count = m.prefix_len(&e1).unwrap();
        let s = cw01_series(&m, &cc, cfg, count, n, 0)?
            .into_iter()
            .find(|s| s.beta == e1.to_string() && s.quantity == "cw01_x1" && s.p == 2)
            .expect("z1 series");
        probe.push(scaling_fit(&s)?);
    }
    let joint = (probe[0].stderr.powi(2) + probe[1].stderr.powi(2)).sqrt();
    let diff = (probe[0].slope - probe[1].slope).abs();
    rep.add_check(
        format!("tau_uniformity {e1}"),
        diff,
        3.0 * joint,
        diff <= 3.0 * joint,
        format!("slopes {:.4} and {:.4} at tau and 4 tau", probe[0].slope, probe[1].slope),
    );

    let t_sg = cfg.t[cfg.t.len() / 2];
    let sg = sg_check(cfg, t_sg, n, 0);
    let dev = (sg.variance - sg.dual_norm_sq).abs();
    rep.add_check(
        "sg_equality",
        dev,
        5.0 * sg.stderr,
        dev <= 5.0 * sg.stderr,
        format!("Var F = {:.6e}, dual norm^2 = {:.6e}, t = {:e}", sg.variance, sg.dual_norm_sq, t_sg),
    );
    rep.add_fit(dual_norm_series(cfg, &cfg.t), g.alpha - 2.0, tol.dual)?;

    for s in reexpansion_scaling(&model, c, cfg, n, 0)? {
        let tol = if s.quantity.starts_with("mt94") { tol.mt94 } else { tol.ks93 };
        rep.add_fit(s, g.alpha, tol)?;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_constants_and_scaling() {
        let v = vec![-3.0; 40];
        let (e, s) = annealed_moment(&v, 4).unwrap();
        assert!((e - 3.0).abs() < 1e-12 && s.abs() < 1e-12);
        let w: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, _) = annealed_moment(&w, 2).unwrap();
        let w2: Vec<f64> = w.iter().map(|x| -2.5 * x).collect();
        let (b, _) = annealed_moment(&w2, 2).unwrap();
        assert!((b - 2.5 * a).abs() < 1e-12);
        assert!(matches!(annealed_moment(&v[..10], 2), Err(Error::InsufficientSamples(_))));
        assert!(matches!(annealed_moment(&v, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn exact_power_law_and_flat_series() {
        let mut s = ScalingSeries::new("q", "1", 2, ScaleKind::Space);
        for k in 2..6 {
            let r = 2f64.powi(-k);
            s.push(r, 3.0 * r.powf(0.7), 0.0, 1);
        }
        assert!((scaling_fit(&s).unwrap().slope - 0.7).abs() < 1e-12);
        let mut f = ScalingSeries::new("q", "1", 2, ScaleKind::Space);
        for k in 2..6 {
            f.push(2f64.powi(-k), 1.5, 0.1, 100);
        }
        assert!(scaling_fit(&f).unwrap().slope.abs() < 1e-12);
        f.points[1].estimate = 0.0;
        assert!(matches!(scaling_fit(&f), Err(Error::NonPositiveEstimate(_))));
    }
}
