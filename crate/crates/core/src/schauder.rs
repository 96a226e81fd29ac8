//! Inversion of `A = ∂₂ - ∂₁²` modulo polynomials, anchored at a base point:
//! `u = ∫_0^∞ dt (id - T_x^η)(-∂₂ - ∂₁²) ψ_t * f` with `u(x) = 0`.
//!
//! On the torus the t-integral of the symbol is
//! `(-i q2 + q1²) ∫ e^{-t|q|⁴} dt = 1/(i q2 + q1²)` for `q != 0`, so the
//! main path applies `A⁻¹` in Fourier space and subtracts the Taylor jet.
//! [`integrate_levels`] splits the same integral into geometric t-bands.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::{taylor_jet, GridField, LocalPolynomial, Node, Spectrum};
use crate::multiindex::{Grading, Homogeneity};

/// Ratio between consecutive t-levels.
pub const LEVEL_RATIO: f64 = std::f64::consts::SQRT_2;

/// Output of [`solve`]: the periodic part and the subtracted Taylor jet.
#[derive(Clone, Debug)]
pub struct Solution {
    /// `A⁻¹ f` in Fourier space (zero mode dropped).
    pub spectrum: Spectrum,
    /// `T_x^η A⁻¹ f`.
    pub jet: LocalPolynomial,
    pub base: Node,
}

impl Solution {
    /// `u = A⁻¹ f - T_x^η A⁻¹ f`, with `u(x)` set to exactly zero.
    pub fn field(&self) -> GridField {
        let mut u = self.spectrum.to_field();
        self.jet.subtract_from(&mut u);
        let ux = u.at(self.base);
        u.add_constant(-ux);
        u
    }

    /// `∂₁² u`, with the jet differentiated exactly.
    pub fn d11_field(&self) -> GridField {
        let mut d = self.spectrum.with(|m| -Complex64::new(m.q1 * m.q1, 0.0)).to_field();
        self.jet.d11().subtract_from(&mut d);
        d
    }

    /// `A u` with the periodic part differentiated spectrally and the jet
    /// exactly.
    pub fn apply_a(&self) -> GridField {
        let mut d = self.spectrum.with(|m| m.a_symbol()).to_field();
        self.jet.apply_a().subtract_from(&mut d);
        d
    }
}

fn check_eta(eta: Homogeneity, g: &Grading) -> Result<f64> {
    if eta.is_integer(g) {
        return Err(Error::IntegerHomogeneity(eta.value(g)));
    }
    let v = eta.value(g);
    if v < 0.0 {
        return Err(Error::InvalidArgument(format!("negative homogeneity {v}")));
    }
    Ok(v)
}

fn check_tau(f: &GridField, tau_floor: f64) -> Result<()> {
    let floor = f.grid.resolved_tau_floor();
    if tau_floor < floor {
        return Err(Error::UnresolvedTau {
            tau: tau_floor,
            floor,
        });
    }
    Ok(())
}

/// Solves from a precomputed spectrum of `f`.
pub fn solve(spec: &Spectrum, x: Node, eta: f64) -> Result<Solution> {
    let mut u = spec.clone();
    u.apply(|m| m.a_inverse_symbol());
    // Degrees are strictly below eta since eta is not an integer.
    let jet = taylor_jet(&u, x, eta)?;
    Ok(Solution {
        spectrum: u,
        jet,
        base: x,
    })
}

/// `u` with `A u = f - (mean of f)` modulo polynomials of degree `< η - 2`,
/// vanishing to order `η` at `x`.
pub fn integrate(f: &GridField, x: Node, eta: Homogeneity, g: &Grading, tau_floor: f64) -> Result<GridField> {
    let e = check_eta(eta, g)?;
    check_tau(f, tau_floor)?;
    Ok(solve(&f.spectrum(), x, e)?.field())
}

/// Geometric t-levels `[t_j, t_{j+1}]` from `t_min` to `t_max = (L1/4)⁴`,
/// plus the tails `[0, t_min]` and `[t_max, ∞)`.
pub fn t_levels(f: &GridField, tau_floor: f64) -> Vec<(f64, f64)> {
    let g = f.grid;
    let t_min = tau_floor.min(g.h1().powi(4)).min(g.h2().powi(2)) / 8.0;
    let t_max = (g.l1 / 4.0).powi(4);
    let mut out = vec![(0.0, t_min)];
    let mut t = t_min;
    while t < t_max {
        let next = (t * LEVEL_RATIO).min(t_max);
        out.push((t, next));
        t = next;
    }
    out.push((t_max, f64::INFINITY));
    out
}

/// Contribution of each t-level to `u`, each with its own Taylor
/// subtraction; they sum to [`integrate`].
pub fn integrate_levels(
    f: &GridField,
    x: Node,
    eta: Homogeneity,
    g: &Grading,
    tau_floor: f64,
) -> Result<Vec<((f64, f64), GridField)>> {
    let e = check_eta(eta, g)?;
    check_tau(f, tau_floor)?;
    let spec = f.spectrum();
    let mut out = Vec::new();
    for (a, b) in t_levels(f, tau_floor) {
        let mut s = spec.clone();
        s.apply(|m| {
            if m.is_zero() {
                return Complex64::new(0.0, 0.0);
            }
            let w = m.norm4();
            let ea = (-a * w).exp();
            let eb = if b.is_finite() { (-b * w).exp() } else { 0.0 };
            m.a_inverse_symbol() * (ea - eb)
        });
        let jet = taylor_jet(&s, x, e)?;
        let mut u = s.to_field();
        jet.subtract_from(&mut u);
        let ux = u.at(x);
        u.add_constant(-ux);
        out.push(((a, b), u));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Grid;

    fn field(g: Grid) -> GridField {
        let tp = 2.0 * std::f64::consts::PI;
        GridField::from_fn(g, |p| (tp * p.x1).sin() * (tp * 2.0 * p.x2).cos() + 0.4 * (tp * 3.0 * p.x1 + tp * p.x2).cos())
    }

    #[test]
    fn zero_in_zero_out() {
        let g = Grid::new(16, 64, 1.0, 1.0).unwrap();
        let gr = Grading::default();
        let u = integrate(&GridField::zeros(g), Node::new(3, 7), Homogeneity::new(1, 0), &gr, 1e-3).unwrap();
        assert!(u.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_integer_eta_and_unresolved_tau() {
        let g = Grid::new(16, 64, 1.0, 1.0).unwrap();
        let gr = Grading::default();
        let f = field(g);
        assert!(matches!(
            integrate(&f, Node::new(0, 0), Homogeneity::new(0, 1), &gr, 1e-3),
            Err(Error::IntegerHomogeneity(_))
        ));
        assert!(matches!(
            integrate(&f, Node::new(0, 0), Homogeneity::new(1, 0), &gr, 1e-12),
            Err(Error::UnresolvedTau { .. })
        ));
    }

    #[test]
    fn levels_sum_to_solution() {
        let g = Grid::new(16, 64, 1.0, 1.0).unwrap();
        let gr = Grading::default();
        let f = field(g);
        let x = Node::new(5, 9);
        let eta = Homogeneity::new(2, 0);
        let u = integrate(&f, x, eta, &gr, 1e-3).unwrap();
        let mut sum = GridField::zeros(g);
        for (_, part) in integrate_levels(&f, x, eta, &gr, 1e-3).unwrap() {
            sum.add_assign(&part);
        }
        let scale = u.max_abs();
        for (a, b) in u.values.iter().zip(&sum.values) {
            assert!((a - b).abs() < 1e-10 * scale);
        }
        assert_eq!(u.at(x), 0.0);
    }
}
