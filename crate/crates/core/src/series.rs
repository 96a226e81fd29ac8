//! Truncated formal power series in the multi-index variables, with
//! coefficients in any [`Coefficient`] ring (reals or grid fields).

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::GridField;
use crate::multiindex::{
    decompositions, enumerate_pop_truncation, enumerate_truncation, factorial, DerivIndex, Grading, Key,
    MultiIndex,
};

/// Commutative coefficient ring used by [`Series`].
///
/// Grid fields have no free-standing zero, so zeros and constants are
/// produced from an existing element.
pub trait Coefficient: Clone {
    fn zero_like(&self) -> Self;
    fn constant_like(&self, v: f64) -> Self;
    fn add_assign_ref(&mut self, other: &Self);
    fn mul_assign_ref(&mut self, other: &Self);
    fn scale(&mut self, a: f64);
    /// `self += a * x`.
    fn axpy(&mut self, a: f64, x: &Self) {
        let mut t = x.clone();
        t.scale(a);
        self.add_assign_ref(&t);
    }
}

impl Coefficient for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn constant_like(&self, v: f64) -> Self {
        v
    }
    fn add_assign_ref(&mut self, other: &Self) {
        *self += other;
    }
    fn mul_assign_ref(&mut self, other: &Self) {
        *self *= other;
    }
    fn scale(&mut self, a: f64) {
        *self *= a;
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
}

impl Coefficient for GridField {
    fn zero_like(&self) -> Self {
        GridField::zeros(self.grid)
    }
    fn constant_like(&self, v: f64) -> Self {
        GridField::constant(self.grid, v)
    }
    fn add_assign_ref(&mut self, other: &Self) {
        GridField::add_assign(self, other);
    }
    fn mul_assign_ref(&mut self, other: &Self) {
        GridField::mul_assign(self, other);
    }
    fn scale(&mut self, a: f64) {
        GridField::scale(self, a);
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        GridField::axpy(self, a, x);
    }
}

/// The index set `{β : |β|_≺ < cutoff}` in `≺` order.
#[derive(Debug)]
pub struct Truncation {
    pub grading: Grading,
    pub cutoff: f64,
    pub pop_only: bool,
    indices: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
}

impl PartialEq for Truncation {
    fn eq(&self, other: &Self) -> bool {
        self.grading == other.grading && self.cutoff == other.cutoff && self.pop_only == other.pop_only
    }
}

impl Truncation {
    pub fn new(grading: Grading, cutoff: f64) -> Arc<Truncation> {
        Self::build(grading, cutoff, enumerate_truncation(cutoff, &grading), false)
    }

    /// Population-only variables; closed under products and `D⁽⁰⁾`.
    pub fn pop_only(grading: Grading, cutoff: f64) -> Arc<Truncation> {
        Self::build(grading, cutoff, enumerate_pop_truncation(cutoff, &grading), true)
    }

    fn build(grading: Grading, cutoff: f64, indices: Vec<MultiIndex>, pop_only: bool) -> Arc<Truncation> {
        let position = indices.iter().cloned().enumerate().map(|(i, b)| (b, i)).collect();
        Arc::new(Truncation {
            grading,
            cutoff,
            pop_only,
            indices,
            position,
        })
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, b: &MultiIndex) -> Option<usize> {
        self.position.get(b).copied()
    }

    pub fn contains(&self, b: &MultiIndex) -> bool {
        self.position.contains_key(b)
    }

    /// Populated indices in `≺` order.
    pub fn populated(&self) -> Vec<MultiIndex> {
        self.indices.iter().filter(|b| b.is_populated()).cloned().collect()
    }
}

fn same_truncation(a: &Arc<Truncation>, b: &Arc<Truncation>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// A series `Σ_β c_β z^β` restricted to a truncation. Absent entries are zero.
#[derive(Clone, Debug)]
pub struct Series<C> {
    trunc: Arc<Truncation>,
    coeffs: Vec<Option<C>>,
}

impl<C: Coefficient> Series<C> {
    pub fn new(trunc: Arc<Truncation>) -> Self {
        let n = trunc.len();
        Series {
            trunc,
            coeffs: vec![None; n],
        }
    }

    pub fn truncation(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    pub fn get(&self, b: &MultiIndex) -> Option<&C> {
        self.trunc.position(b).and_then(|i| self.coeffs[i].as_ref())
    }

    pub fn get_at(&self, i: usize) -> Option<&C> {
        self.coeffs[i].as_ref()
    }

    pub fn set(&mut self, b: &MultiIndex, c: C) -> Result<()> {
        let i = self
            .trunc
            .position(b)
            .ok_or_else(|| Error::OutsideTruncation(b.to_string()))?;
        self.coeffs[i] = Some(c);
        Ok(())
    }

    pub fn set_at(&mut self, i: usize, c: Option<C>) {
        self.coeffs[i] = c;
    }

    pub fn remove(&mut self, b: &MultiIndex) {
        if let Some(i) = self.trunc.position(b) {
            self.coeffs[i] = None;
        }
    }

    /// Stored entries in `≺` order.
    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &C)> {
        self.trunc
            .indices()
            .iter()
            .zip(&self.coeffs)
            .filter_map(|(b, c)| c.as_ref().map(|c| (b, c)))
    }

    pub fn support(&self) -> Vec<MultiIndex> {
        self.iter().map(|(b, _)| b.clone()).collect()
    }

    fn add_at(&mut self, i: usize, a: f64, x: &C) {
        match &mut self.coeffs[i] {
            Some(c) => c.axpy(a, x),
            slot @ None => {
                let mut c = x.zero_like();
                c.axpy(a, x);
                *slot = Some(c);
            }
        }
    }

    pub fn add(&self, other: &Series<C>) -> Result<Series<C>> {
        if !same_truncation(&self.trunc, &other.trunc) {
            return Err(Error::TruncationMismatch);
        }
        let mut out = self.clone();
        for (i, c) in other.coeffs.iter().enumerate() {
            if let Some(c) = c {
                out.add_at(i, 1.0, c);
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, a: f64) -> Series<C> {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut().flatten() {
            c.scale(a);
        }
        out
    }

    /// Truncated Cauchy product `(xy)_β = Σ_{β'+β''=β} x_{β'} y_{β''}`.
    pub fn multiply(&self, other: &Series<C>) -> Result<Series<C>> {
        if !same_truncation(&self.trunc, &other.trunc) {
            return Err(Error::TruncationMismatch);
        }
        let mut out = Series::new(self.trunc.clone());
        for (b1, x) in self.iter() {
            for (b2, y) in other.iter() {
                let b = b1.add(b2);
                if let Some(i) = self.trunc.position(&b) {
                    let mut t = x.clone();
                    t.mul_assign_ref(y);
                    out.add_at(i, 1.0, &t);
                }
            }
        }
        Ok(out)
    }

    /// Multiplication by the monomial `z^γ` (a shift of indices).
    pub fn shift(&self, gamma: &MultiIndex) -> Series<C> {
        let mut out = Series::new(self.trunc.clone());
        for (b, c) in self.iter() {
            if let Some(i) = self.trunc.position(&b.add(gamma)) {
                out.coeffs[i] = Some(c.clone());
            }
        }
        out
    }

    /// `D⁽⁰⁾ c` with `(D⁽⁰⁾)_β^γ = Σ_k (k+1) γ(k) [γ + e_{k+1} = β + e_k]`.
    pub fn derivation_d0(&self) -> Series<C> {
        let mut out = Series::new(self.trunc.clone());
        for (gamma, c) in self.iter() {
            for (k, m) in gamma.pop_entries() {
                let beta = gamma
                    .remove_key(Key::Pop(k), 1)
                    .expect("present")
                    .add(&MultiIndex::e_k(k + 1));
                if let Some(i) = self.trunc.position(&beta) {
                    out.add_at(i, ((k + 1) * m) as f64, c);
                }
            }
        }
        out
    }

    /// `(D⁽⁰⁾)^l c`.
    pub fn iterated_d0(&self, l: u32) -> Series<C> {
        let mut out = self.clone();
        for _ in 0..l {
            out = out.derivation_d0();
        }
        out
    }

    pub fn map<D: Coefficient>(&self, f: impl Fn(&C) -> D) -> Series<D> {
        Series {
            trunc: self.trunc.clone(),
            coeffs: self.coeffs.iter().map(|c| c.as_ref().map(&f)).collect(),
        }
    }
}

impl Series<f64> {
    /// Largest absolute coefficient difference.
    pub fn max_diff(&self, other: &Series<f64>) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.trunc.len() {
            let a = self.coeffs[i].unwrap_or(0.0);
            let b = other.coeffs.get(i).copied().flatten().unwrap_or(0.0);
            m = m.max((a - b).abs());
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn value(&self, b: &MultiIndex) -> f64 {
        self.get(b).copied().unwrap_or(0.0)
    }
}

/// The single entry `(D⁽⁰⁾)_β^γ`, straight from the defining formula.
pub fn d0_entry(beta: &MultiIndex, gamma: &MultiIndex) -> f64 {
    let max_k = gamma
        .pop_entries()
        .map(|(k, _)| k)
        .chain(beta.pop_entries().map(|(k, _)| k))
        .max()
        .unwrap_or(0);
    let mut acc = 0.0;
    for k in 0..=max_k {
        let lhs = gamma.add(&MultiIndex::e_k(k + 1));
        let rhs = beta.add(&MultiIndex::e_k(k));
        if lhs == rhs {
            acc += ((k + 1) * gamma.pop(k)) as f64;
        }
    }
    acc
}

/// Values `z_k[a] = a^{(k)}(0)/k!` and `z_n[p] = ∂^n p(0)/n!`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FunctionalJet {
    pub a_coeffs: Vec<f64>,
    pub p_coeffs: Vec<(DerivIndex, f64)>,
}

impl FunctionalJet {
    fn value(&self, key: Key) -> Result<f64> {
        match key {
            Key::Pop(k) => self
                .a_coeffs
                .get(k as usize)
                .copied()
                .ok_or_else(|| Error::JetTooShort(key.to_string())),
            Key::Deriv(n) => self
                .p_coeffs
                .iter()
                .find(|(m, _)| *m == n)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::JetTooShort(key.to_string())),
        }
    }
}

/// `c[a, p] = Σ_β c_β Π z_k[a]^{β(k)} Π z_n[p]^{β(n)}`.
pub fn evaluate_series(c: &Series<f64>, jet: &FunctionalJet) -> Result<f64> {
    let mut acc = 0.0;
    for (b, v) in c.iter() {
        let mut term = *v;
        for (key, m) in b.entries() {
            term *= jet.value(key)?.powi(m as i32);
        }
        acc += term;
    }
    Ok(acc)
}

/// Taylor coefficients of `a(· + v)` from those of `a`.
pub fn shift_polynomial(a: &[f64], v: f64) -> Vec<f64> {
    let d = a.len();
    let mut out = vec![0.0; d];
    for (j, aj) in a.iter().enumerate() {
        for (k, o) in out.iter_mut().enumerate().take(j + 1) {
            *o += crate::multiindex::binomial(j as u32, k as u32) * aj * v.powi((j - k) as i32);
        }
    }
    out
}

/// Both sides of `c[a(· + v)] = Σ_l (v^l / l!) (D⁽⁰⁾^l c)[a]` for a
/// polynomial `a` and a population-only series `c`.
///
/// The powers of `D⁽⁰⁾` are taken without truncation; monomials containing
/// some `z_k` with `k >= a_coeffs.len()` vanish on `a` and are dropped, which
/// makes the sum finite.
pub fn taylor_shift_check(c: &Series<f64>, a_coeffs: &[f64], v: f64) -> Result<(f64, f64)> {
    for (b, _) in c.iter() {
        if !b.is_pop_only() {
            return Err(Error::InvalidArgument(format!("{b} carries derivative variables")));
        }
    }
    let padded = |a: Vec<f64>| FunctionalJet {
        a_coeffs: a,
        p_coeffs: Vec::new(),
    };
    let deg = a_coeffs.len() as u32;
    let live = |b: &MultiIndex| b.pop_entries().all(|(k, _)| k < deg);
    let eval = |m: &HashMap<MultiIndex, f64>, jet: &FunctionalJet| -> Result<f64> {
        let mut acc = 0.0;
        for (b, x) in m {
            let mut term = *x;
            for (key, e) in b.entries() {
                term *= jet.value(key)?.powi(e as i32);
            }
            acc += term;
        }
        Ok(acc)
    };
    let mut dl: HashMap<MultiIndex, f64> = c.iter().filter(|(b, _)| live(b)).map(|(b, x)| (b.clone(), *x)).collect();
    let lhs = eval(&dl, &padded(shift_polynomial(a_coeffs, v)))?;
    let jet = padded(a_coeffs.to_vec());
    let mut rhs = 0.0;
    let mut l = 0u32;
    while !dl.is_empty() {
        rhs += v.powi(l as i32) / factorial(l) * eval(&dl, &jet)?;
        let mut next: HashMap<MultiIndex, f64> = HashMap::new();
        for (gamma, x) in &dl {
            for (k, m) in gamma.pop_entries() {
                let beta = gamma.remove_key(Key::Pop(k), 1).expect("present").add(&MultiIndex::e_k(k + 1));
                if live(&beta) {
                    *next.entry(beta).or_insert(0.0) += ((k + 1) * m) as f64 * x;
                }
            }
        }
        dl = next;
        l += 1;
    }
    Ok((lhs, rhs))
}

/// One grouped term of the `Π⁻_β` assembly.
#[derive(Clone, Debug)]
enum PlanTerm {
    /// `weight · π_{f_1} ⋯ π_{f_k} · π'_{last}`.
    Product { weight: f64, factors: Vec<usize>, last: usize },
    /// `-weight · π_{f_1} ⋯ π_{f_l} · (D^l c)_{target}` (weight includes `1/l!`).
    Counter { weight: f64, factors: Vec<usize>, l: u32, target: usize },
    /// `+ ξ` (only for `β = 0`).
    Noise,
}

/// Precompiled expansion
///
/// `Π⁻_β = Σ_k Σ_{e_k+β_1+…+β_{k+1}=β} π_{β_1}⋯π_{β_k} π'_{β_{k+1}}
///        - Σ_l (1/l!) Σ_{β_1+…+β_{l+1}=β} π_{β_1}⋯π_{β_l} (D^l c)_{β_{l+1}} + ξ δ_β^0`
///
/// for every target in the truncation, with ordered tuples merged into
/// multisets. Terms whose factors lie outside the declared supports are
/// dropped at compile time.
#[derive(Clone, Debug)]
pub struct PiMinusPlan {
    trunc: Arc<Truncation>,
    terms: Vec<Vec<PlanTerm>>,
    max_l: u32,
}

impl PiMinusPlan {
    /// `pi_support`, `prime_support`, `c_support` say which indices may be
    /// nonzero in `π`, `π'` and `c`.
    pub fn new(
        trunc: Arc<Truncation>,
        targets: &[MultiIndex],
        pi_support: impl Fn(&MultiIndex) -> bool,
        prime_support: impl Fn(&MultiIndex) -> bool,
        c_support: impl Fn(&MultiIndex) -> bool,
    ) -> PiMinusPlan {
        let n = trunc.len();
        let mut terms = vec![Vec::new(); n];
        let mut max_l = 0;
        // (D^l c)_γ can be nonzero only if γ is population-only with
        // [γ]_0 >= l and some c-support index lies below it.
        let c_nonzero_l = |g: &MultiIndex, l: u32| -> bool {
            g.is_pop_only() && (g.brackets0() as u32) >= l && trunc.indices().iter().any(|h| c_support(h) && h.len() == g.len())
        };
        for beta in targets {
            let bi = match trunc.position(beta) {
                Some(i) => i,
                None => continue,
            };
            let mut list = Vec::new();
            for (k, _) in beta.pop_entries() {
                let rest = beta.remove_key(Key::Pop(k), 1).unwrap();
                let mut grouped: HashMap<(Vec<usize>, usize), f64> = HashMap::new();
                for d in decompositions(&rest, k as usize + 1) {
                    let (last, factors) = d.split_last().unwrap();
                    if !prime_support(last) || !factors.iter().all(&pi_support) {
                        continue;
                    }
                    let mut f: Vec<usize> = factors.iter().map(|b| trunc.position(b).unwrap()).collect();
                    f.sort_unstable();
                    *grouped.entry((f, trunc.position(last).unwrap())).or_insert(0.0) += 1.0;
                }
                let mut g: Vec<_> = grouped.into_iter().collect();
                g.sort_by(|a, b| a.0.cmp(&b.0));
                for ((factors, last), weight) in g {
                    list.push(PlanTerm::Product { weight, factors, last });
                }
            }
            for l in 0..=beta.brackets0() as u32 {
                let mut grouped: HashMap<(Vec<usize>, usize), f64> = HashMap::new();
                for d in decompositions(beta, l as usize + 1) {
                    let (target, factors) = d.split_last().unwrap();
                    if !c_nonzero_l(target, l) || !factors.iter().all(&pi_support) {
                        continue;
                    }
                    let mut f: Vec<usize> = factors.iter().map(|b| trunc.position(b).unwrap()).collect();
                    f.sort_unstable();
                    *grouped.entry((f, trunc.position(target).unwrap())).or_insert(0.0) += 1.0;
                }
                let mut g: Vec<_> = grouped.into_iter().collect();
                g.sort_by(|a, b| a.0.cmp(&b.0));
                for ((factors, target), count) in g {
                    max_l = max_l.max(l);
                    list.push(PlanTerm::Counter {
                        weight: count / factorial(l),
                        factors,
                        l,
                        target,
                    });
                }
            }
            if beta.is_zero() {
                list.push(PlanTerm::Noise);
            }
            terms[bi] = list;
        }
        PiMinusPlan { trunc, terms, max_l }
    }

    pub fn truncation(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    /// `(D^l c)` for `l = 0..=max_l`.
    pub fn counter_powers(&self, c: &Series<f64>) -> Vec<Series<f64>> {
        let mut out = vec![c.clone()];
        for l in 1..=self.max_l {
            let next = out[l as usize - 1].derivation_d0();
            out.push(next);
        }
        out
    }

    /// Indices whose `π` or `π'` enter the expansion of target `i`.
    pub fn dependencies(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for t in &self.terms[i] {
            match t {
                PlanTerm::Product { factors, last, .. } => {
                    out.extend(factors);
                    out.push(*last);
                }
                PlanTerm::Counter { factors, .. } => out.extend(factors),
                PlanTerm::Noise => {}
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Indices whose `π'` enters the expansion of target `i`.
    pub fn prime_dependencies(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.terms[i]
            .iter()
            .filter_map(|t| match t {
                PlanTerm::Product { last, .. } => Some(*last),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `Π⁻` at position `i`; `None` when every term vanishes.
    pub fn evaluate<C: Coefficient>(
        &self,
        i: usize,
        pi: &Series<C>,
        pi_prime: &Series<C>,
        dlc: &[Series<f64>],
        xi: &C,
    ) -> Option<C> {
        let mut acc: Option<C> = None;
        let push = |acc: &mut Option<C>, a: f64, x: &C| match acc {
            Some(s) => s.axpy(a, x),
            None => {
                let mut s = x.zero_like();
                s.axpy(a, x);
                *acc = Some(s);
            }
        };
        for t in &self.terms[i] {
            match t {
                PlanTerm::Product { weight, factors, last } => {
                    let Some(mut prod) = pi_prime.get_at(*last).cloned() else { continue };
                    let mut ok = true;
                    for f in factors {
                        match pi.get_at(*f) {
                            Some(v) => prod.mul_assign_ref(v),
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok {
                        push(&mut acc, *weight, &prod);
                    }
                }
                PlanTerm::Counter { weight, factors, l, target } => {
                    let s = dlc.get(*l as usize).and_then(|d| d.get_at(*target)).copied().unwrap_or(0.0);
                    if s == 0.0 {
                        continue;
                    }
                    let prod = if factors.is_empty() {
                        Some(xi.constant_like(1.0))
                    } else {
                        let mut p = match pi.get_at(factors[0]) {
                            Some(v) => v.clone(),
                            None => continue,
                        };
                        let mut ok = true;
                        for f in &factors[1..] {
                            match pi.get_at(*f) {
                                Some(v) => p.mul_assign_ref(v),
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        ok.then_some(p)
                    };
                    if let Some(p) = prod {
                        push(&mut acc, -weight * s, &p);
                    }
                }
                PlanTerm::Noise => push(&mut acc, 1.0, xi),
            }
        }
        acc
    }

    /// Linearization of [`PiMinusPlan::evaluate`] along `(dpi, dpi', dxi)`
    /// with the counterterms held fixed.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate_linearized<C: Coefficient>(
        &self,
        i: usize,
        pi: &Series<C>,
        pi_prime: &Series<C>,
        dpi: &Series<C>,
        dpi_prime: &Series<C>,
        dlc: &[Series<f64>],
        dxi: &C,
    ) -> Option<C> {
        let mut acc: Option<C> = None;
        let push = |acc: &mut Option<C>, a: f64, x: &C| match acc {
            Some(s) => s.axpy(a, x),
            None => {
                let mut s = x.zero_like();
                s.axpy(a, x);
                *acc = Some(s);
            }
        };
        // Leibniz: replace one factor at a time by its variation.
        let leibniz = |factors: &[Option<&C>], dfactors: &[Option<&C>]| -> Option<C> {
            let mut total: Option<C> = None;
            for j in 0..factors.len() {
                let Some(d) = dfactors[j] else { continue };
                let mut p = d.clone();
                let mut ok = true;
                for (m, f) in factors.iter().enumerate() {
                    if m == j {
                        continue;
                    }
                    match f {
                        Some(v) => p.mul_assign_ref(v),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    match &mut total {
                        Some(t) => t.add_assign_ref(&p),
                        None => total = Some(p),
                    }
                }
            }
            total
        };
        for t in &self.terms[i] {
            match t {
                PlanTerm::Product { weight, factors, last } => {
                    let mut fs: Vec<Option<&C>> = factors.iter().map(|f| pi.get_at(*f)).collect();
                    let mut ds: Vec<Option<&C>> = factors.iter().map(|f| dpi.get_at(*f)).collect();
                    fs.push(pi_prime.get_at(*last));
                    ds.push(dpi_prime.get_at(*last));
                    if let Some(v) = leibniz(&fs, &ds) {
                        push(&mut acc, *weight, &v);
                    }
                }
                PlanTerm::Counter { weight, factors, l, target } => {
                    let s = dlc.get(*l as usize).and_then(|d| d.get_at(*target)).copied().unwrap_or(0.0);
                    if s == 0.0 || factors.is_empty() {
                        continue;
                    }
                    let fs: Vec<Option<&C>> = factors.iter().map(|f| pi.get_at(*f)).collect();
                    let ds: Vec<Option<&C>> = factors.iter().map(|f| dpi.get_at(*f)).collect();
                    if let Some(v) = leibniz(&fs, &ds) {
                        push(&mut acc, -weight * s, &v);
                    }
                }
                PlanTerm::Noise => push(&mut acc, 1.0, dxi),
            }
        }
        acc
    }
}

/// `Π⁻` on the whole truncation from given `π`, `π'`, `c` and noise value.
pub fn assemble_pi_minus<C: Coefficient>(
    pi: &Series<C>,
    pi_prime: &Series<C>,
    c: &Series<f64>,
    xi: &C,
) -> Result<Series<C>> {
    let trunc = pi.truncation().clone();
    if !same_truncation(&trunc, pi_prime.truncation()) || !same_truncation(&trunc, c.truncation()) {
        return Err(Error::TruncationMismatch);
    }
    for (b, _) in c.iter() {
        if !b.is_pop_only() {
            return Err(Error::InvalidArgument(format!(
                "counterterm entry {b} carries derivative variables"
            )));
        }
    }
    let pi_s: Vec<bool> = trunc.indices().iter().map(|b| pi.get(b).is_some()).collect();
    let pr_s: Vec<bool> = trunc.indices().iter().map(|b| pi_prime.get(b).is_some()).collect();
    let c_s: Vec<bool> = trunc.indices().iter().map(|b| c.get(b).is_some()).collect();
    let pos = |b: &MultiIndex| trunc.position(b);
    let plan = PiMinusPlan::new(
        trunc.clone(),
        trunc.indices(),
        |b| pos(b).map(|i| pi_s[i]).unwrap_or(false),
        |b| pos(b).map(|i| pr_s[i]).unwrap_or(false),
        |b| pos(b).map(|i| c_s[i]).unwrap_or(false),
    );
    let dlc = plan.counter_powers(c);
    let mut out = Series::new(trunc.clone());
    for i in 0..trunc.len() {
        out.set_at(i, plan.evaluate(i, pi, pi_prime, &dlc, xi));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(s: &str) -> MultiIndex {
        s.parse().unwrap()
    }

    fn series(trunc: &Arc<Truncation>, entries: &[(&str, f64)]) -> Series<f64> {
        let mut s = Series::new(trunc.clone());
        for (b, v) in entries {
            s.set(&mi(b), *v).unwrap();
        }
        s
    }

    #[test]
    fn d0_on_generators() {
        let t = Truncation::pop_only(Grading::default(), 4.0);
        // D z_k = (k+1) z_{k+1}
        for k in 0..4u32 {
            let s = series(&t, &[(&format!("z{k}"), 1.0)]);
            let d = s.derivation_d0();
            let target = MultiIndex::e_k(k + 1);
            if t.contains(&target) {
                assert_eq!(d.value(&target), (k + 1) as f64);
                assert_eq!(d.support().len(), 1);
            }
        }
    }

    #[test]
    fn d0_entry_matches_action() {
        let t = Truncation::pop_only(Grading::default(), 3.0);
        for g in t.indices() {
            let mut s = Series::new(t.clone());
            s.set(g, 1.0).unwrap();
            let d = s.derivation_d0();
            for b in t.indices() {
                assert_eq!(d.value(b), d0_entry(b, g), "{b} <- {g}");
            }
        }
    }

    #[test]
    fn evaluate_simple() {
        let t = Truncation::pop_only(Grading::default(), 3.0);
        let c = series(&t, &[("z0^2 z1", 2.0), ("1", -1.0)]);
        let jet = FunctionalJet {
            a_coeffs: vec![3.0, 0.5],
            p_coeffs: Vec::new(),
        };
        assert_eq!(evaluate_series(&c, &jet).unwrap(), 2.0 * 9.0 * 0.5 - 1.0);
        let short = FunctionalJet {
            a_coeffs: vec![3.0],
            p_coeffs: Vec::new(),
        };
        assert!(evaluate_series(&c, &short).is_err());
    }

    #[test]
    fn pi_minus_low_orders_by_hand() {
        let g = Grading::default();
        let t = Truncation::new(g, 1.6);
        let pi = series(&t, &[("1", 2.0), ("z0", 3.0), ("z1", 5.0), ("z(1,0)", 7.0)]);
        let pp = series(&t, &[("1", 11.0), ("z0", 13.0), ("z1", 17.0), ("z(1,0)", 0.0)]);
        let c = series(&t, &[("1", 0.5), ("z0", 0.25), ("z1", 0.125)]);
        let m = assemble_pi_minus(&pi, &pp, &c, &1.5).unwrap();
        // Π⁻_0 = ξ - c_0
        assert_eq!(m.value(&mi("1")), 1.5 - 0.5);
        // Π⁻_{e0} = π'_0 - c_{e0}
        assert_eq!(m.value(&mi("z0")), 11.0 - 0.25);
        // Π⁻_{e1} = π_0 π'_0 - c_{e1} - π_0 (Dc)_{e1}, (Dc)_{e1} = c_{e0}
        assert_eq!(m.value(&mi("z1")), 2.0 * 11.0 - 0.125 - 2.0 * 0.25);
        // Π⁻_{e1 + e(1,0)} = π_{(1,0)} π'_0 - π_{(1,0)} c_{e0}
        assert_eq!(m.value(&mi("z1 z(1,0)")), 7.0 * 11.0 - 7.0 * 0.25);
    }
}
