//! Centered model `Π_x` built index by index from a noise sample, the BPHZ
//! counterterms, and the linearization along noise perturbations.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{monomial_in_chart, semigroup_convolve, Grid, GridField, LocalPolynomial, Node, Spectrum};
use crate::multiindex::{Grading, MultiIndex};
use crate::noise::{reflected, sample_white, NoiseSample};
use crate::schauder::solve;
use crate::series::{PiMinusPlan, Series, Truncation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub grading: Grading,
    pub grid: Grid,
    pub tau: f64,
    pub cutoff: f64,
}

/// Constants `c_β` (population-only, `|β| < 2`) with their Monte Carlo errors.
#[derive(Clone, Debug)]
pub struct Counterterms {
    pub tau: f64,
    pub t_bphz: f64,
    pub samples: usize,
    pub values: Series<f64>,
    pub stderr: Series<f64>,
}

#[derive(Serialize, Deserialize)]
struct CountertermEntry {
    beta: MultiIndex,
    c: f64,
    stderr: f64,
}

#[derive(Serialize, Deserialize)]
struct CountertermFile {
    alpha: f64,
    epsilon: f64,
    lambda: f64,
    cutoff: f64,
    tau: f64,
    t_bphz: f64,
    samples: usize,
    entries: Vec<CountertermEntry>,
}

impl Counterterms {
    pub fn zero(trunc: Arc<Truncation>, tau: f64) -> Self {
        Counterterms {
            tau,
            t_bphz: 0.0,
            samples: 0,
            values: Series::new(trunc.clone()),
            stderr: Series::new(trunc),
        }
    }

    pub fn value(&self, b: &MultiIndex) -> f64 {
        self.values.value(b)
    }

    pub fn to_json(&self) -> Result<String> {
        let t = self.values.truncation();
        let file = CountertermFile {
            alpha: t.grading.alpha,
            epsilon: t.grading.epsilon,
            lambda: t.grading.lambda,
            cutoff: t.cutoff,
            tau: self.tau,
            t_bphz: self.t_bphz,
            samples: self.samples,
            entries: t
                .indices()
                .iter()
                .filter(|b| counterterm_slot(b, &t.grading))
                .map(|b| CountertermEntry {
                    beta: b.clone(),
                    c: self.values.value(b),
                    stderr: self.stderr.value(b),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str, trunc: Arc<Truncation>) -> Result<Self> {
        let file: CountertermFile = serde_json::from_str(s)?;
        if file.cutoff < trunc.cutoff {
            return Err(Error::InvalidArgument(format!(
                "counterterms calibrated to cutoff {} but model needs {}",
                file.cutoff, trunc.cutoff
            )));
        }
        let mut c = Counterterms::zero(trunc, file.tau);
        c.t_bphz = file.t_bphz;
        c.samples = file.samples;
        for e in file.entries {
            if c.values.truncation().contains(&e.beta) {
                c.values.set(&e.beta, e.c)?;
                c.stderr.set(&e.beta, e.stderr)?;
            }
        }
        Ok(c)
    }
}

/// Indices that carry a counterterm slot: population-only with `|β| < 2`.
pub fn counterterm_slot(b: &MultiIndex, g: &Grading) -> bool {
    b.is_pop_only() && b.brackets() >= 0 && b.homogeneity().value(g) < 2.0
}

/// Slots whose constant can be nonzero: the noise degree `1 + [β]` is even.
pub fn counterterm_active(b: &MultiIndex, g: &Grading) -> bool {
    counterterm_slot(b, g) && (1 + b.brackets()) % 2 == 0
}

/// One realization of the hierarchy at base point `x`.
#[derive(Clone, Debug)]
pub struct ModelSample {
    pub base: Node,
    /// Polynomials are unwrapped at the antipode of this node.
    pub chart: Node,
    pub tau: f64,
    pub xi_tau: GridField,
    pub pi: Series<GridField>,
    /// `∂₁² Π_β` where it enters a later expansion.
    pub pi_prime: Series<GridField>,
    pub pi_minus: Series<GridField>,
    /// Number of leading index-set entries that were built.
    pub built: usize,
}

/// Linearized hierarchy `δΠ_x` along one noise direction.
#[derive(Clone, Debug)]
pub struct ModelVariation {
    pub dxi_tau: GridField,
    pub dpi: Series<GridField>,
    pub dpi_prime: Series<GridField>,
    pub dpi_minus: Series<GridField>,
}

/// Builder for [`ModelSample`]s with a fixed truncation and `τ`.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    trunc: Arc<Truncation>,
    index_set: Vec<MultiIndex>,
    positions: Vec<usize>,
    plan: PiMinusPlan,
    needs_prime: Vec<bool>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Model> {
        spec.grading.validate()?;
        spec.grid.validate()?;
        let floor = spec.grid.resolved_tau_floor();
        if spec.tau < floor {
            return Err(Error::UnresolvedTau { tau: spec.tau, floor });
        }
        let trunc = Truncation::new(spec.grading, spec.cutoff);
        let index_set = trunc.populated();
        let positions: Vec<usize> = index_set.iter().map(|b| trunc.position(b).unwrap()).collect();
        let g = spec.grading;
        let plan = PiMinusPlan::new(
            trunc.clone(),
            &index_set,
            |b| b.is_populated(),
            |b| b.is_populated() && b.as_unit_deriv().map(|n| n.n1 >= 2).unwrap_or(true),
            |b| counterterm_active(b, &g),
        );
        let mut needs_prime = vec![false; trunc.len()];
        for &p in &positions {
            for d in plan.prime_dependencies(p) {
                needs_prime[d] = true;
            }
        }
        Ok(Model {
            spec,
            trunc,
            index_set,
            positions,
            plan,
            needs_prime,
        })
    }

    pub fn truncation(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    /// Populated indices in `≺` order.
    pub fn index_set(&self) -> &[MultiIndex] {
        &self.index_set
    }

    pub fn plan(&self) -> &PiMinusPlan {
        &self.plan
    }

    /// Number of leading index-set entries needed to reach `b`.
    pub fn prefix_len(&self, b: &MultiIndex) -> Option<usize> {
        self.index_set.iter().position(|x| x == b).map(|i| i + 1)
    }

    fn check_counterterms(&self, c: &Counterterms) -> Result<()> {
        if !Arc::ptr_eq(c.values.truncation(), &self.trunc) && **c.values.truncation() != *self.trunc {
            return Err(Error::TruncationMismatch);
        }
        Ok(())
    }

    /// Builds all indices of the index set.
    pub fn build(&self, noise: &NoiseSample, x: Node, c: &Counterterms) -> Result<ModelSample> {
        self.build_prefix(noise, x, c, self.index_set.len())
    }

    /// Builds the first `count` indices of the index set.
    pub fn build_prefix(&self, noise: &NoiseSample, x: Node, c: &Counterterms, count: usize) -> Result<ModelSample> {
        self.build_prefix_in_chart(noise, x, c, count, x)
    }

    /// Builds all indices with polynomials in the chart around `chart`.
    /// Models at different base points built in a common chart are related
    /// exactly by re-expansion.
    pub fn build_in_chart(&self, noise: &NoiseSample, x: Node, c: &Counterterms, chart: Node) -> Result<ModelSample> {
        self.build_prefix_in_chart(noise, x, c, self.index_set.len(), chart)
    }

    pub fn build_prefix_in_chart(
        &self,
        noise: &NoiseSample,
        x: Node,
        c: &Counterterms,
        count: usize,
        chart: Node,
    ) -> Result<ModelSample> {
        self.check_counterterms(c)?;
        if noise.field.grid != self.spec.grid {
            return Err(Error::Grid("noise grid differs from model grid".into()));
        }
        let grid = self.spec.grid;
        let g = self.spec.grading;
        let xp = grid.node_point(x);
        let cp = grid.node_point(chart);
        let xi_tau = semigroup_convolve(&noise.field, self.spec.tau);
        let dlc = self.plan.counter_powers(&c.values);
        let mut pi = Series::new(self.trunc.clone());
        let mut pi_prime = Series::new(self.trunc.clone());
        let mut pi_minus = Series::new(self.trunc.clone());
        let count = count.min(self.index_set.len());
        for (b, &pos) in self.index_set.iter().zip(&self.positions).take(count) {
            if let Some(n) = b.as_unit_deriv() {
                pi.set_at(pos, Some(monomial_in_chart(grid, xp, n, cp)));
                if self.needs_prime[pos] && n.n1 >= 2 {
                    let mut p = LocalPolynomial::new(xp).in_chart(cp);
                    p.terms.push((n, 1.0));
                    pi_prime.set_at(pos, Some(p.d11().to_field(grid)));
                }
                continue;
            }
            let m = self
                .plan
                .evaluate(pos, &pi, &pi_prime, &dlc, &xi_tau)
                .unwrap_or_else(|| GridField::zeros(grid));
            let mut sol = solve(&m.spectrum(), x, b.homogeneity().value(&g))?;
            sol.jet.chart = cp;
            pi.set_at(pos, Some(sol.field()));
            if self.needs_prime[pos] {
                pi_prime.set_at(pos, Some(sol.d11_field()));
            }
            pi_minus.set_at(pos, Some(m));
        }
        Ok(ModelSample {
            base: x,
            chart,
            tau: self.spec.tau,
            xi_tau,
            pi,
            pi_prime,
            pi_minus,
            built: count,
        })
    }

    /// `δΠ_x` along `dxi` with `δc = 0` (Leibniz rule on every product).
    pub fn linearize(&self, sample: &ModelSample, dxi: &GridField, c: &Counterterms) -> Result<ModelVariation> {
        self.check_counterterms(c)?;
        let grid = self.spec.grid;
        let g = self.spec.grading;
        let x = sample.base;
        let dxi_tau = semigroup_convolve(dxi, self.spec.tau);
        let dlc = self.plan.counter_powers(&c.values);
        let mut dpi = Series::new(self.trunc.clone());
        let mut dpi_prime = Series::new(self.trunc.clone());
        let mut dpi_minus = Series::new(self.trunc.clone());
        for (b, &pos) in self.index_set.iter().zip(&self.positions).take(sample.built) {
            if b.as_unit_deriv().is_some() {
                continue;
            }
            let m = self
                .plan
                .evaluate_linearized(pos, &sample.pi, &sample.pi_prime, &dpi, &dpi_prime, &dlc, &dxi_tau)
                .unwrap_or_else(|| GridField::zeros(grid));
            let mut sol = solve(&m.spectrum(), x, b.homogeneity().value(&g))?;
            sol.jet.chart = grid.node_point(sample.chart);
            dpi.set_at(pos, Some(sol.field()));
            if self.needs_prime[pos] {
                dpi_prime.set_at(pos, Some(sol.d11_field()));
            }
            dpi_minus.set_at(pos, Some(m));
        }
        Ok(ModelVariation {
            dxi_tau,
            dpi,
            dpi_prime,
            dpi_minus,
        })
    }

    /// Relative mismatch in `Π⁻_x(x) = z_0 ∂₁²Π_x(x) - c + ξ_τ(x) 𝟙`, per
    /// built non-unit index.
    pub fn base_point_residuals(&self, s: &ModelSample, c: &Counterterms) -> Vec<(MultiIndex, f64)> {
        let x = s.base;
        let mut out = Vec::new();
        for b in self.index_set.iter().take(s.built) {
            if b.as_unit_deriv().is_some() {
                continue;
            }
            let lhs = s.pi_minus.get(b).map(|f| f.at(x)).unwrap_or(0.0);
            let mut rhs = -c.value(b);
            if let Some(rest) = b.checked_sub(&MultiIndex::e_k(0)) {
                rhs += self.d11_at(s, &rest, x);
            }
            if b.is_zero() {
                rhs += s.xi_tau.at(x);
            }
            out.push((b.clone(), relative(lhs, rhs)));
        }
        out
    }

    /// Relative mismatch in `δΠ⁻_x(x) = z_0 ∂₁²δΠ_x(x) + δξ_τ(x) 𝟙`.
    pub fn linearized_base_point_residuals(&self, s: &ModelSample, v: &ModelVariation) -> Vec<(MultiIndex, f64)> {
        let x = s.base;
        let mut out = Vec::new();
        for b in self.index_set.iter().take(s.built) {
            if b.as_unit_deriv().is_some() {
                continue;
            }
            let lhs = v.dpi_minus.get(b).map(|f| f.at(x)).unwrap_or(0.0);
            let mut rhs = 0.0;
            if let Some(rest) = b.checked_sub(&MultiIndex::e_k(0)) {
                if let Some(f) = v.dpi_prime.get(&rest) {
                    rhs += f.at(x);
                } else if let Some(f) = v.dpi.get(&rest) {
                    rhs += crate::kernels::spectral_derivative(f, crate::DerivIndex::new(2, 0)).at(x);
                }
            }
            if b.is_zero() {
                rhs += v.dxi_tau.at(x);
            }
            out.push((b.clone(), relative(lhs, rhs)));
        }
        out
    }

    fn d11_at(&self, s: &ModelSample, b: &MultiIndex, x: Node) -> f64 {
        if let Some(f) = s.pi_prime.get(b) {
            return f.at(x);
        }
        match s.pi.get(b) {
            Some(f) => crate::kernels::spectral_derivative(f, crate::DerivIndex::new(2, 0)).at(x),
            None => 0.0,
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// `(f)_T(x) = (ψ_T * f)(x)` via a direct mode sum.
pub fn smoothed_at(spec: &Spectrum, x: Node, t: f64) -> f64 {
    spec.eval_at(x, |m| Complex64::new((-t * m.norm4()).exp(), 0.0))
}

/// Ensemble settings for [`calibrate`].
#[derive(Clone, Debug)]
pub struct CalibrationOptions {
    pub seed: u64,
    pub first_index: u64,
    pub samples: usize,
    /// Base points cycled through the samples.
    pub base_points: Vec<Node>,
    /// Large smoothing time at which `E(Π⁻_β)_T(x) = 0` is imposed.
    pub t_bphz: f64,
    /// Calibrate on the x1-reflected ensemble (reflection through column 0).
    pub reflect: bool,
}

impl CalibrationOptions {
    /// `T = t_max / 4` with `t_max = (L1/4)⁴`.
    pub fn default_t_bphz(grid: &Grid) -> f64 {
        (grid.l1 / 4.0).powi(4) / 4.0
    }
}

/// BPHZ counterterms: for each active slot in `≺` order, `c_β` is the
/// ensemble and base-point average of `(Π⁻_β)_T(x)` assembled with
/// `c_β = 0` and the already-calibrated lower constants.
pub fn calibrate(model: &Model, opts: &CalibrationOptions) -> Result<Counterterms> {
    if opts.samples < 2 {
        return Err(Error::InsufficientSamples(format!(
            "calibration needs at least 2 samples, got {}",
            opts.samples
        )));
    }
    if opts.base_points.is_empty() {
        return Err(Error::InvalidArgument("no base points".into()));
    }
    let g = model.spec.grading;
    let mut c = Counterterms::zero(model.trunc.clone(), model.spec.tau);
    c.t_bphz = opts.t_bphz;
    c.samples = opts.samples;
    for b in model.index_set.clone() {
        if counterterm_slot(&b, &g) {
            c.values.set(&b, 0.0)?;
            c.stderr.set(&b, 0.0)?;
        }
    }
    for b in model.index_set.clone() {
        if !counterterm_active(&b, &g) {
            continue;
        }
        let count = model.prefix_len(&b).unwrap();
        let values: Vec<f64> = (0..opts.samples)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut xi = sample_white(model.spec.grid, opts.seed, opts.first_index + i as u64);
                if opts.reflect {
                    xi = reflected(&xi, 0);
                }
                let x = opts.base_points[i % opts.base_points.len()];
                let s = model.build_prefix(&xi, x, &c, count)?;
                let m = s.pi_minus.get(&b).expect("built");
                Ok(smoothed_at(&m.spectrum(), x, opts.t_bphz))
            })
            .collect::<Result<Vec<f64>>>()?;
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        c.values.set(&b, mean)?;
        c.stderr.set(&b, (var / n).sqrt())?;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(cutoff: f64) -> Model {
        Model::new(ModelSpec {
            grading: Grading::default(),
            grid: Grid::new(16, 128, 1.0, 1.0).unwrap(),
            tau: 2f64.powi(-12),
            cutoff,
        })
        .unwrap()
    }

    #[test]
    fn parity_slots() {
        let g = Grading::default();
        let active: Vec<String> = crate::multiindex::enumerate_index_set(1.6, &g)
            .into_iter()
            .filter(|b| counterterm_active(b, &g))
            .map(|b| b.to_string())
            .collect();
        assert_eq!(active, ["z1", "z0 z1", "z0^2 z1"]);
    }

    #[test]
    fn vanishes_at_base_point() {
        let m = small_model(1.6);
        let xi = sample_white(m.spec.grid, 3, 0);
        let c = Counterterms::zero(m.truncation().clone(), m.spec.tau);
        let x = Node::new(5, 17);
        let s = m.build(&xi, x, &c).unwrap();
        for (b, f) in s.pi.iter() {
            assert_eq!(f.at(x), 0.0, "{b}");
        }
        // unpopulated indices stay empty
        assert!(s.pi.get(&"z0 z(1,0)".parse().unwrap()).is_none());
    }

    #[test]
    fn counterterm_json_roundtrip() {
        let m = small_model(1.1);
        let mut c = Counterterms::zero(m.truncation().clone(), m.spec.tau);
        c.values.set(&MultiIndex::e_k(1), -1.25).unwrap();
        c.stderr.set(&MultiIndex::e_k(1), 0.5).unwrap();
        let s = c.to_json().unwrap();
        let back = Counterterms::from_json(&s, m.truncation().clone()).unwrap();
        assert_eq!(back.value(&MultiIndex::e_k(1)), -1.25);
        assert_eq!(back.to_json().unwrap(), s);
    }
}
