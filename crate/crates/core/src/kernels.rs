//! Periodic grids, grid fields and the Fourier-side operators of the
//! anisotropic heat semigroup `exp(-t(∂₁⁴ - ∂₂²))`.
//!
//! Spectra are stored half-sized along x1 (real-to-complex) with the x2
//! wavenumber contiguous: mode `(i, j)` lives at `i * n2 + j`, `i < n1/2 + 1`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::DerivIndex;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Periodic rectangle `[0, l1) x [0, l2)` with `n1 x n2` nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n1: usize,
    pub n2: usize,
    pub l1: f64,
    pub l2: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n1: 64,
            n2: 1024,
            l1: 1.0,
            l2: 1.0,
        }
    }
}

impl Grid {
    pub fn new(n1: usize, n2: usize, l1: f64, l2: f64) -> Result<Self> {
        let g = Grid { n1, n2, l1, l2 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("n1", self.n1), ("n2", self.n2)] {
            if n < 4 || !n.is_power_of_two() {
                return Err(Error::Grid(format!("{name} = {n} must be a power of two >= 4")));
            }
        }
        if !(self.l1 > 0.0 && self.l2 > 0.0 && self.l1.is_finite() && self.l2.is_finite()) {
            return Err(Error::Grid("periods must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h1(&self) -> f64 {
        self.l1 / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        self.l2 / self.n2 as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h1() * self.h2()
    }

    pub fn area(&self) -> f64 {
        self.l1 * self.l2
    }

    /// Number of stored x1 wavenumbers.
    pub fn m1(&self) -> usize {
        self.n1 / 2 + 1
    }

    pub fn spectrum_len(&self) -> usize {
        self.m1() * self.n2
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i2 * self.n1 + i1
    }

    pub fn node_point(&self, node: Node) -> Point {
        Point::new(node.i1 as f64 * self.h1(), node.i2 as f64 * self.h2())
    }

    /// Node nearest to `p` (after wrapping into the torus).
    pub fn nearest_node(&self, p: Point) -> Node {
        let i1 = (p.x1 / self.h1()).round().rem_euclid(self.n1 as f64) as usize;
        let i2 = (p.x2 / self.h2()).round().rem_euclid(self.n2 as f64) as usize;
        Node { i1, i2 }
    }

    /// x1 wavenumber of stored column `i`.
    pub fn q1(&self, i: usize) -> f64 {
        TWO_PI * i as f64 / self.l1
    }

    /// x2 wavenumber of row `j`; the Nyquist row gets the positive sign.
    pub fn q2(&self, j: usize) -> f64 {
        let s = if j <= self.n2 / 2 {
            j as f64
        } else {
            j as f64 - self.n2 as f64
        };
        TWO_PI * s / self.l2
    }

    pub fn q1_max(&self) -> f64 {
        self.q1(self.n1 / 2)
    }

    pub fn q2_max(&self) -> f64 {
        self.q2(self.n2 / 2)
    }

    /// Smallest tau for which the mollifier damps the Nyquist amplitude in
    /// both directions by at least `e^-2`.
    pub fn resolved_tau_floor(&self) -> f64 {
        let a = 2.0 / self.q1_max().powi(4);
        let b = 2.0 / self.q2_max().powi(2);
        a.max(b)
    }

    /// Nearest-image difference `y - x`, components in `[-l/2, l/2)`.
    pub fn diff(&self, x: Point, y: Point) -> (f64, f64) {
        (wrap(y.x1 - x.x1, self.l1), wrap(y.x2 - x.x2, self.l2))
    }

    /// `y - x` in the chart that unwraps the torus at the antipode of
    /// `origin`; equals [`Grid::diff`] when `origin == x`.
    pub fn chart_diff(&self, origin: Point, x: Point, y: Point) -> (f64, f64) {
        let (a1, a2) = self.diff(origin, x);
        let (b1, b2) = self.diff(origin, y);
        (b1 - a1, b2 - a2)
    }

    pub fn carnot_distance(&self, x: Point, y: Point) -> f64 {
        let (d1, d2) = self.diff(x, y);
        carnot_norm(d1, d2)
    }

    /// Node `x + (k1 h1, k2 h2)` with periodic wrap.
    pub fn offset(&self, x: Node, k1: i64, k2: i64) -> Node {
        Node {
            i1: (x.i1 as i64 + k1).rem_euclid(self.n1 as i64) as usize,
            i2: (x.i2 as i64 + k2).rem_euclid(self.n2 as i64) as usize,
        }
    }

    /// Nodes within Carnot distance `r` of `x`.
    pub fn ball(&self, x: Node, r: f64) -> Vec<Node> {
        let k1max = (r / self.h1()).floor() as i64;
        let k2max = (r * r / self.h2()).floor() as i64;
        let k1max = k1max.min(self.n1 as i64 / 2 - 1);
        let k2max = k2max.min(self.n2 as i64 / 2 - 1);
        let mut out = Vec::new();
        for k2 in -k2max..=k2max {
            for k1 in -k1max..=k1max {
                let d1 = k1 as f64 * self.h1();
                let d2 = k2 as f64 * self.h2();
                if carnot_norm(d1, d2) <= r {
                    out.push(self.offset(x, k1, k2));
                }
            }
        }
        out
    }
}

fn wrap(d: f64, l: f64) -> f64 {
    let w = d - l * (d / l).round();
    if w >= l / 2.0 {
        w - l
    } else {
        w
    }
}

/// `(d1⁴ + d2²)^{1/4}`.
pub fn carnot_norm(d1: f64, d2: f64) -> f64 {
    (d1.powi(4) + d2 * d2).sqrt().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x1: f64,
    pub x2: f64,
}

impl Point {
    pub fn new(x1: f64, x2: f64) -> Self {
        Point { x1, x2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub i1: usize,
    pub i2: usize,
}

impl Node {
    pub fn new(i1: usize, i2: usize) -> Self {
        Node { i1, i2 }
    }
}

struct FftPlan {
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn plan(grid: &Grid) -> Arc<FftPlan> {
    static PLANS: OnceLock<Mutex<HashMap<(usize, usize), Arc<FftPlan>>>> = OnceLock::new();
    let mut map = PLANS.get_or_init(Default::default).lock().unwrap();
    map.entry((grid.n1, grid.n2))
        .or_insert_with(|| {
            let mut rp = RealFftPlanner::<f64>::new();
            let mut cp = FftPlanner::<f64>::new();
            Arc::new(FftPlan {
                r2c: rp.plan_fft_forward(grid.n1),
                c2r: rp.plan_fft_inverse(grid.n1),
                fwd: cp.plan_fft_forward(grid.n2),
                inv: cp.plan_fft_inverse(grid.n2),
            })
        })
        .clone()
}

/// Real samples on a [`Grid`], row-major with x1 fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: Grid) -> Self {
        GridField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        GridField {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Point) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i2 in 0..grid.n2 {
            for i1 in 0..grid.n1 {
                values.push(f(grid.node_point(Node::new(i1, i2))));
            }
        }
        GridField { grid, values }
    }

    pub fn at(&self, x: Node) -> f64 {
        self.values[self.grid.index(x.i1, x.i2)]
    }

    pub fn set(&mut self, x: Node, v: f64) {
        let i = self.grid.index(x.i1, x.i2);
        self.values[i] = v;
    }

    pub fn add_assign(&mut self, other: &GridField) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, other: &GridField) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
    }

    pub fn mul_assign(&mut self, other: &GridField) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a *= b;
        }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &GridField) {
        debug_assert_eq!(self.grid, x.grid);
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        for v in &mut self.values {
            *v += c;
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫ f g` by the node rule.
    pub fn pairing(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_area()
    }

    /// `(∫ f²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.pairing(self).sqrt()
    }

    pub fn spectrum(&self) -> Spectrum {
        let g = self.grid;
        let p = plan(&g);
        let m1 = g.m1();
        let mut data = vec![Complex64::new(0.0, 0.0); g.spectrum_len()];
        let mut row = p.r2c.make_input_vec();
        let mut out = p.r2c.make_output_vec();
        let mut scratch = p.r2c.make_scratch_vec();
        for j in 0..g.n2 {
            row.copy_from_slice(&self.values[j * g.n1..(j + 1) * g.n1]);
            p.r2c
                .process_with_scratch(&mut row, &mut out, &mut scratch)
                .expect("real fft length");
            for (i, c) in out.iter().enumerate() {
                data[i * g.n2 + j] = *c;
            }
        }
        let mut cs = vec![Complex64::new(0.0, 0.0); p.fwd.get_inplace_scratch_len()];
        p.fwd.process_with_scratch(&mut data[..m1 * g.n2], &mut cs);
        Spectrum { grid: g, data }
    }

    /// Writes the little-endian dump: n1, n2 (u64), l1, l2 (f64), values.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.grid.n1 as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n2 as u64).to_le_bytes())?;
        w.write_all(&self.grid.l1.to_le_bytes())?;
        w.write_all(&self.grid.l2.to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<GridField> {
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let n1 = u64::from_le_bytes(next(&mut r)?) as usize;
        let n2 = u64::from_le_bytes(next(&mut r)?) as usize;
        let l1 = f64::from_le_bytes(next(&mut r)?);
        let l2 = f64::from_le_bytes(next(&mut r)?);
        let grid = Grid::new(n1, n2, l1, l2)?;
        let mut buf = vec![0u8; 8 * grid.len()];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(GridField { grid, values })
    }
}

/// One Fourier mode as seen by a multiplier.
#[derive(Clone, Copy, Debug)]
pub struct Mode {
    pub q1: f64,
    pub q2: f64,
    /// Column is the x1 Nyquist column.
    pub nyq1: bool,
    /// Row is the x2 Nyquist row.
    pub nyq2: bool,
}

impl Mode {
    pub fn is_zero(&self) -> bool {
        self.q1 == 0.0 && self.q2 == 0.0
    }

    /// `|q|⁴ = q1⁴ + q2²`.
    pub fn norm4(&self) -> f64 {
        self.q1.powi(4) + self.q2 * self.q2
    }

    /// Symbol of `(∂₁)^{n1} (∂₂)^{n2}`, zeroed on a Nyquist line whenever
    /// the order along that axis is odd.
    pub fn derivative_symbol(&self, n: DerivIndex) -> Complex64 {
        if (n.n1 % 2 == 1 && self.nyq1) || (n.n2 % 2 == 1 && self.nyq2) {
            return Complex64::new(0.0, 0.0);
        }
        ipow(self.q1, n.n1) * ipow(self.q2, n.n2)
    }

    /// Symbol of `A = ∂₂ - ∂₁²`: `i q2 + q1²`.
    pub fn a_symbol(&self) -> Complex64 {
        let q2 = if self.nyq2 { 0.0 } else { self.q2 };
        Complex64::new(self.q1 * self.q1, q2)
    }

    /// Symbol of `A⁻¹` with the zero mode dropped.
    pub fn a_inverse_symbol(&self) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        let a = self.a_symbol();
        if a.norm_sqr() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        a.inv()
    }
}

fn ipow(q: f64, n: u32) -> Complex64 {
    let r = q.powi(n as i32);
    match n % 4 {
        0 => Complex64::new(r, 0.0),
        1 => Complex64::new(0.0, r),
        2 => Complex64::new(-r, 0.0),
        _ => Complex64::new(0.0, -r),
    }
}

/// Unnormalized DFT `F(q) = Σ_y f(y) e^{-i q·y}` of a real field.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub grid: Grid,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn mode(&self, i: usize, j: usize) -> Mode {
        let g = &self.grid;
        Mode {
            q1: g.q1(i),
            q2: g.q2(j),
            nyq1: i == g.n1 / 2,
            nyq2: j == g.n2 / 2,
        }
    }

    /// Multiplies every mode by `m(mode)`.
    pub fn apply(&mut self, m: impl Fn(Mode) -> Complex64) {
        let g = self.grid;
        for i in 0..g.m1() {
            for j in 0..g.n2 {
                let f = m(self.mode(i, j));
                self.data[i * g.n2 + j] *= f;
            }
        }
    }

    /// Multiplies every mode by the real factor `m(mode)`.
    pub fn apply_real(&mut self, m: impl Fn(Mode) -> f64) {
        let g = self.grid;
        for i in 0..g.m1() {
            for j in 0..g.n2 {
                let f = m(self.mode(i, j));
                self.data[i * g.n2 + j] *= f;
            }
        }
    }

    pub fn with(&self, m: impl Fn(Mode) -> Complex64) -> Spectrum {
        let mut s = self.clone();
        s.apply(m);
        s
    }

    pub fn to_field(&self) -> GridField {
        let g = self.grid;
        let p = plan(&g);
        let m1 = g.m1();
        let mut data = self.data.clone();
        let mut cs = vec![Complex64::new(0.0, 0.0); p.inv.get_inplace_scratch_len()];
        p.inv.process_with_scratch(&mut data[..m1 * g.n2], &mut cs);
        let mut row = p.c2r.make_input_vec();
        let mut out = p.c2r.make_output_vec();
        let mut scratch = p.c2r.make_scratch_vec();
        let norm = 1.0 / g.len() as f64;
        let mut values = vec![0.0; g.len()];
        for j in 0..g.n2 {
            for (i, c) in row.iter_mut().enumerate() {
                *c = data[i * g.n2 + j];
            }
            row[0].im = 0.0;
            row[m1 - 1].im = 0.0;
            p.c2r
                .process_with_scratch(&mut row, &mut out, &mut scratch)
                .expect("real inverse fft length");
            for (v, o) in values[j * g.n1..(j + 1) * g.n1].iter_mut().zip(&out) {
                *v = o * norm;
            }
        }
        GridField { grid: g, values }
    }

    /// `(1/N) Σ_q m(q) F(q) e^{i q·x}` evaluated directly at one node.
    pub fn eval_at(&self, x: Node, m: impl Fn(Mode) -> Complex64) -> f64 {
        let g = self.grid;
        let ph1: Vec<Complex64> = (0..g.m1())
            .map(|i| Complex64::from_polar(1.0, TWO_PI * (i * x.i1) as f64 / g.n1 as f64))
            .collect();
        let ph2: Vec<Complex64> = (0..g.n2)
            .map(|j| Complex64::from_polar(1.0, TWO_PI * ((j * x.i2) % g.n2) as f64 / g.n2 as f64))
            .collect();
        let mut acc = 0.0;
        for i in 0..g.m1() {
            let w = if i == 0 || i == g.n1 / 2 { 1.0 } else { 2.0 };
            let mut col = Complex64::new(0.0, 0.0);
            for j in 0..g.n2 {
                col += m(self.mode(i, j)) * self.data[i * g.n2 + j] * ph2[j];
            }
            acc += w * (col * ph1[i]).re;
        }
        acc / g.len() as f64
    }

    /// `∂^n f(x)` from the spectrum.
    pub fn derivative_at(&self, x: Node, n: DerivIndex) -> f64 {
        self.eval_at(x, |m| m.derivative_symbol(n))
    }

    /// `Σ_q w(q) |F(q)|²` over the full (Hermitian) spectrum.
    pub fn weighted_energy(&self, w: impl Fn(Mode) -> f64) -> f64 {
        let g = self.grid;
        let mut acc = 0.0;
        for i in 0..g.m1() {
            let mult = if i == 0 || i == g.n1 / 2 { 1.0 } else { 2.0 };
            for j in 0..g.n2 {
                acc += mult * w(self.mode(i, j)) * self.data[i * g.n2 + j].norm_sqr();
            }
        }
        acc
    }
}

/// Sampled periodized kernel `ψ_t(· - c)`.
pub fn heat_kernel(grid: Grid, t: f64, c: Point) -> GridField {
    let mut s = Spectrum {
        grid,
        data: vec![Complex64::new(1.0 / grid.cell_area(), 0.0); grid.spectrum_len()],
    };
    s.apply(|m| {
        let phase = Complex64::from_polar(1.0, -(m.q1 * c.x1 + m.q2 * c.x2));
        phase * (-t * m.norm4()).exp()
    });
    s.to_field()
}

/// `f_t = ψ_t * f`.
pub fn semigroup_convolve(f: &GridField, t: f64) -> GridField {
    let mut s = f.spectrum();
    s.apply_real(|m| (-t * m.norm4()).exp());
    s.to_field()
}

/// `∂^n f` by Fourier multiplication.
pub fn spectral_derivative(f: &GridField, n: DerivIndex) -> GridField {
    let mut s = f.spectrum();
    s.apply(|m| m.derivative_symbol(n));
    s.to_field()
}

/// `A f = (∂₂ - ∂₁²) f`.
pub fn apply_a(f: &GridField) -> GridField {
    let mut s = f.spectrum();
    s.apply(|m| m.a_symbol());
    s.to_field()
}

/// `A⁻¹ f` on mean-free periodic fields (zero mode dropped).
pub fn apply_a_inverse(f: &GridField) -> GridField {
    let mut s = f.spectrum();
    s.apply(|m| m.a_inverse_symbol());
    s.to_field()
}

/// Homogeneous dual Sobolev norm `(Σ |q|^{2s} |f̂(q)|² / (L1 L2))^{1/2}` with
/// `|q|⁴ = q1⁴ + q2²` and `f̂ = h1 h2 F`. The zero mode is dropped for
/// `s != 0` and kept for `s = 0`, where the norm is the `L²` norm.
pub fn sobolev_dual_norm(f: &GridField, s: f64) -> f64 {
    let g = f.grid;
    let spec = f.spectrum();
    let e = spec.weighted_energy(|m| {
        if s == 0.0 {
            1.0
        } else if m.is_zero() {
            0.0
        } else {
            m.norm4().powf(s / 2.0)
        }
    });
    (e * g.cell_area() * g.cell_area() / g.area()).sqrt()
}

/// `g(y) = f(s y1, s² y2)` by periodic decimation; `s` a power of two.
pub fn parabolic_rescale(f: &GridField, s: usize) -> Result<GridField> {
    let g = f.grid;
    if s == 0 || !s.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("rescale factor {s} is not a power of two")));
    }
    let mut out = GridField::zeros(g);
    for i2 in 0..g.n2 {
        let j2 = (i2 * s * s) % g.n2;
        for i1 in 0..g.n1 {
            let j1 = (i1 * s) % g.n1;
            out.values[g.index(i1, i2)] = f.values[g.index(j1, j2)];
        }
    }
    Ok(out)
}

/// Nearest-image monomial `(y - x)^n` as a field.
pub fn monomial(grid: Grid, x: Point, n: DerivIndex) -> GridField {
    monomial_in_chart(grid, x, n, x)
}

/// Monomial `(y - x)^n` in the chart unwrapped at the antipode of `origin`.
pub fn monomial_in_chart(grid: Grid, x: Point, n: DerivIndex, origin: Point) -> GridField {
    GridField::from_fn(grid, |y| {
        let (d1, d2) = grid.chart_diff(origin, x, y);
        d1.powi(n.n1 as i32) * d2.powi(n.n2 as i32)
    })
}

/// `Σ_n a_n (y - x)^n`, with `y - x` taken in the chart around `chart`
/// (by default the center itself, i.e. nearest-image differences).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPolynomial {
    pub center: Point,
    pub chart: Point,
    pub terms: Vec<(DerivIndex, f64)>,
}

impl LocalPolynomial {
    pub fn new(center: Point) -> Self {
        LocalPolynomial {
            center,
            chart: center,
            terms: Vec::new(),
        }
    }

    pub fn in_chart(mut self, chart: Point) -> Self {
        self.chart = chart;
        self
    }

    pub fn eval_diff(&self, d1: f64, d2: f64) -> f64 {
        self.terms
            .iter()
            .map(|(n, a)| a * d1.powi(n.n1 as i32) * d2.powi(n.n2 as i32))
            .sum()
    }

    pub fn eval(&self, grid: &Grid, y: Point) -> f64 {
        let (d1, d2) = grid.chart_diff(self.chart, self.center, y);
        self.eval_diff(d1, d2)
    }

    pub fn to_field(&self, grid: Grid) -> GridField {
        GridField::from_fn(grid, |y| self.eval(&grid, y))
    }

    /// Subtracts the polynomial from `f` in place.
    pub fn subtract_from(&self, f: &mut GridField) {
        if self.terms.is_empty() {
            return;
        }
        let g = f.grid;
        for i2 in 0..g.n2 {
            for i1 in 0..g.n1 {
                let y = g.node_point(Node::new(i1, i2));
                f.values[g.index(i1, i2)] -= self.eval(&g, y);
            }
        }
    }

    /// `∂₁² p`, exact.
    pub fn d11(&self) -> LocalPolynomial {
        let mut out = LocalPolynomial::new(self.center).in_chart(self.chart);
        for (n, a) in &self.terms {
            if n.n1 >= 2 {
                out.terms.push((
                    DerivIndex::new(n.n1 - 2, n.n2),
                    a * (n.n1 * (n.n1 - 1)) as f64,
                ));
            }
        }
        out
    }

    /// `A p = ∂₂ p - ∂₁² p`, exact.
    pub fn apply_a(&self) -> LocalPolynomial {
        let mut out = self.d11();
        for t in &mut out.terms {
            t.1 = -t.1;
        }
        for (n, a) in &self.terms {
            if n.n2 >= 1 {
                out.terms.push((DerivIndex::new(n.n1, n.n2 - 1), a * n.n2 as f64));
            }
        }
        out
    }
}

/// Largest parabolic degree accepted by [`taylor_truncate`].
pub const MAX_TAYLOR_DEGREE: f64 = 8.0;

/// Taylor jet of `f` at `x` up to parabolic degree `<= eta`.
pub fn taylor_jet(spec: &Spectrum, x: Node, eta: f64) -> Result<LocalPolynomial> {
    if !(0.0..=MAX_TAYLOR_DEGREE).contains(&eta) {
        return Err(Error::InvalidArgument(format!(
            "Taylor degree {eta} outside [0, {MAX_TAYLOR_DEGREE}]"
        )));
    }
    let mut p = LocalPolynomial::new(spec.grid.node_point(x));
    for n in DerivIndex::all_up_to(eta.floor() as u32) {
        let c = spec.derivative_at(x, n) / n.factorial();
        p.terms.push((n, c));
    }
    Ok(p)
}

/// `f - T_x^η f` with `T_x^η f(y) = Σ_{|n| <= η} ∂^n f(x) (y - x)^n / n!`.
pub fn taylor_truncate(f: &GridField, x: Node, eta: f64) -> Result<GridField> {
    let spec = f.spectrum();
    let p = taylor_jet(&spec, x, eta)?;
    let mut out = f.clone();
    p.subtract_from(&mut out);
    Ok(out)
}

/// `x1 -> 2 c - x1` about the node column `c`.
pub fn reflect_x1(f: &GridField, c: usize) -> GridField {
    let g = f.grid;
    let mut out = GridField::zeros(g);
    for i2 in 0..g.n2 {
        for i1 in 0..g.n1 {
            let j1 = (2 * c + g.n1 - i1 % g.n1) % g.n1;
            out.values[g.index(i1, i2)] = f.values[g.index(j1, i2)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Grid {
        Grid::new(16, 32, 1.0, 1.0).unwrap()
    }

    #[test]
    fn fft_roundtrip_and_normalization() {
        let g = small();
        let f = GridField::from_fn(g, |p| (TWO_PI * p.x1).sin() + 0.3 * (TWO_PI * 3.0 * p.x2).cos() + 0.7);
        let s = f.spectrum();
        // F(0) = Σ f = N * mean
        assert!((s.data[0].re - 0.7 * g.len() as f64).abs() < 1e-9);
        let back = s.to_field();
        for (a, b) in f.values.iter().zip(&back.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_of_trig_polynomial() {
        let g = small();
        let f = GridField::from_fn(g, |p| (TWO_PI * 2.0 * p.x1).sin() * (TWO_PI * p.x2).cos());
        let d = spectral_derivative(&f, DerivIndex::new(1, 1));
        let expect = GridField::from_fn(g, |p| {
            -(TWO_PI * 2.0) * TWO_PI * (TWO_PI * 2.0 * p.x1).cos() * (TWO_PI * p.x2).sin()
        });
        for (a, b) in d.values.iter().zip(&expect.values) {
            assert!((a - b).abs() < 1e-9);
        }
        let x = Node::new(3, 5);
        let v = f.spectrum().derivative_at(x, DerivIndex::new(1, 1));
        assert!((v - expect.at(x)).abs() < 1e-9);
    }

    #[test]
    fn nearest_image_and_carnot() {
        let g = small();
        let (d1, d2) = g.diff(Point::new(0.9, 0.1), Point::new(0.1, 0.95));
        assert!((d1 - 0.2).abs() < 1e-12);
        assert!((d2 + 0.15).abs() < 1e-12);
        assert!((carnot_norm(0.5, 0.0) - 0.5).abs() < 1e-15);
        assert!((carnot_norm(0.0, 0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dump_roundtrip() {
        let g = small();
        let f = GridField::from_fn(g, |p| p.x1 * 3.0 - p.x2);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * g.len());
        let back = GridField::read_from(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rescale_identity_and_constants() {
        let g = small();
        let f = GridField::from_fn(g, |p| p.x1 + 10.0 * p.x2);
        assert_eq!(parabolic_rescale(&f, 1).unwrap(), f);
        let c = GridField::constant(g, 2.5);
        assert_eq!(parabolic_rescale(&c, 4).unwrap(), c);
        assert!(parabolic_rescale(&f, 3).is_err());
    }

    #[test]
    fn local_polynomial_operators() {
        let mut p = LocalPolynomial::new(Point::new(0.0, 0.0));
        p.terms.push((DerivIndex::new(3, 1), 2.0));
        let a = p.apply_a();
        // A (y1³ y2) = y1³ - 6 y1 y2
        assert!((a.eval_diff(0.5, 0.25) - (0.125 - 6.0 * 0.5 * 0.25) * 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(12, 16, 1.0, 1.0).is_err());
        assert!(Grid::new(16, 16, 0.0, 1.0).is_err());
    }
}
