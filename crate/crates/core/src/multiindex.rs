//! Multi-indices over the abstract variables `z_k` (k >= 0) and `z_n`
//! (n a nonzero derivative index), with the homogeneity bookkeeping used to
//! order them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A derivative index `n = (n1, n2)` with parabolic length `n1 + 2 n2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DerivIndex {
    pub n1: u32,
    pub n2: u32,
}

impl DerivIndex {
    pub const ZERO: DerivIndex = DerivIndex { n1: 0, n2: 0 };

    pub const fn new(n1: u32, n2: u32) -> Self {
        DerivIndex { n1, n2 }
    }

    pub fn degree(&self) -> u32 {
        self.n1 + 2 * self.n2
    }

    pub fn is_zero(&self) -> bool {
        self.n1 == 0 && self.n2 == 0
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &DerivIndex) -> bool {
        self.n1 <= other.n1 && self.n2 <= other.n2
    }

    pub fn checked_sub(&self, other: &DerivIndex) -> Option<DerivIndex> {
        Some(DerivIndex::new(
            self.n1.checked_sub(other.n1)?,
            self.n2.checked_sub(other.n2)?,
        ))
    }

    /// `n! = n1! n2!`.
    pub fn factorial(&self) -> f64 {
        factorial(self.n1) * factorial(self.n2)
    }

    /// All derivative indices (including zero) with `degree <= max_degree`,
    /// sorted by degree then lexicographically.
    pub fn all_up_to(max_degree: u32) -> Vec<DerivIndex> {
        let mut out = Vec::new();
        for n2 in 0..=max_degree / 2 {
            for n1 in 0..=(max_degree - 2 * n2) {
                out.push(DerivIndex::new(n1, n2));
            }
        }
        out.sort_by_key(|n| (n.degree(), *n));
        out
    }

    /// All derivative indices (including zero) with `degree < eta`.
    pub fn all_below(eta: f64) -> Vec<DerivIndex> {
        if eta <= 0.0 {
            return Vec::new();
        }
        let max = eta.ceil() as u32;
        DerivIndex::all_up_to(max)
            .into_iter()
            .filter(|n| (n.degree() as f64) < eta)
            .collect()
    }
}

impl fmt::Display for DerivIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.n1, self.n2)
    }
}

pub fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `binom(m, n) = binom(m1, n1) binom(m2, n2)` for derivative indices.
pub fn binomial_deriv(m: &DerivIndex, n: &DerivIndex) -> f64 {
    binomial(m.n1, n.n1) * binomial(m.n2, n.n2)
}

/// One abstract variable: `z_k` or `z_n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    Pop(u32),
    Deriv(DerivIndex),
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Pop(k) => write!(f, "z{k}"),
            Key::Deriv(n) => write!(f, "z{n}"),
        }
    }
}

/// Parameters fixing the numerical homogeneity and the order `≺`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grading {
    pub alpha: f64,
    pub epsilon: f64,
    pub lambda: f64,
}

impl Default for Grading {
    fn default() -> Self {
        Grading::new(0.5)
    }
}

impl Grading {
    pub const DEFAULT_EPSILON: f64 = 1.0 / 1_048_576.0;

    /// `lambda` defaults to `alpha / 2` computed from the nominal alpha.
    pub fn new(alpha: f64) -> Self {
        Grading {
            alpha,
            epsilon: Self::DEFAULT_EPSILON,
            lambda: alpha / 2.0,
        }
    }

    pub fn alpha_hat(&self) -> f64 {
        self.alpha - self.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.25 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} not in (1/4, 1)", self.alpha)));
        }
        if !(self.lambda > 0.0 && self.lambda < self.alpha) {
            return Err(Error::Config(format!(
                "lambda = {} not in (0, alpha)",
                self.lambda
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1e-3) {
            return Err(Error::Config(format!("epsilon = {} not in (0, 1e-3)", self.epsilon)));
        }
        Ok(())
    }
}

/// Exact homogeneity `alpha_count * alpha_hat + int_part`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Homogeneity {
    pub alpha_count: i64,
    pub int_part: i64,
}

impl Homogeneity {
    pub fn new(alpha_count: i64, int_part: i64) -> Self {
        Homogeneity {
            alpha_count,
            int_part,
        }
    }

    pub fn value(&self, g: &Grading) -> f64 {
        self.alpha_count as f64 * g.alpha_hat() + self.int_part as f64
    }

    /// Whether the value is (numerically) an integer under the perturbed alpha.
    pub fn is_integer(&self, g: &Grading) -> bool {
        let v = self.value(g);
        (v - v.round()).abs() < 1e-12
    }
}

/// A finitely supported multi-index `β`.
///
/// The derived `Ord` compares the sorted `(k, β(k))` pairs first and then the
/// sorted `(n, β(n))` pairs; it is the tie-break for the order `≺`.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex {
    pop: BTreeMap<u32, u32>,
    deriv: BTreeMap<DerivIndex, u32>,
}

impl MultiIndex {
    pub fn zero() -> Self {
        MultiIndex::default()
    }

    pub fn e_k(k: u32) -> Self {
        let mut b = MultiIndex::zero();
        b.pop.insert(k, 1);
        b
    }

    /// The unit `e_n`; `n` must be nonzero.
    pub fn e_n(n: DerivIndex) -> Self {
        assert!(!n.is_zero(), "e_n requires a nonzero derivative index");
        let mut b = MultiIndex::zero();
        b.deriv.insert(n, 1);
        b
    }

    pub fn unit(key: Key) -> Self {
        match key {
            Key::Pop(k) => MultiIndex::e_k(k),
            Key::Deriv(n) => MultiIndex::e_n(n),
        }
    }

    pub fn from_parts(pop: &[(u32, u32)], deriv: &[(DerivIndex, u32)]) -> Self {
        let mut b = MultiIndex::zero();
        for &(k, m) in pop {
            b.add_key(Key::Pop(k), m);
        }
        for &(n, m) in deriv {
            b.add_key(Key::Deriv(n), m);
        }
        b
    }

    pub fn pop(&self, k: u32) -> u32 {
        self.pop.get(&k).copied().unwrap_or(0)
    }

    pub fn deriv(&self, n: &DerivIndex) -> u32 {
        self.deriv.get(n).copied().unwrap_or(0)
    }

    pub fn get(&self, key: Key) -> u32 {
        match key {
            Key::Pop(k) => self.pop(k),
            Key::Deriv(n) => self.deriv(&n),
        }
    }

    pub fn pop_entries(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.pop.iter().map(|(k, m)| (*k, *m))
    }

    pub fn deriv_entries(&self) -> impl Iterator<Item = (DerivIndex, u32)> + '_ {
        self.deriv.iter().map(|(n, m)| (*n, *m))
    }

    /// All `(key, multiplicity)` pairs, population keys first.
    pub fn entries(&self) -> Vec<(Key, u32)> {
        self.pop
            .iter()
            .map(|(k, m)| (Key::Pop(*k), *m))
            .chain(self.deriv.iter().map(|(n, m)| (Key::Deriv(*n), *m)))
            .collect()
    }

    pub fn add_key(&mut self, key: Key, m: u32) {
        if m == 0 {
            return;
        }
        match key {
            Key::Pop(k) => *self.pop.entry(k).or_insert(0) += m,
            Key::Deriv(n) => {
                assert!(!n.is_zero(), "z_n requires a nonzero derivative index");
                *self.deriv.entry(n).or_insert(0) += m
            }
        }
    }

    /// Removes `m` copies of `key`; `None` if not enough are present.
    pub fn remove_key(&self, key: Key, m: u32) -> Option<MultiIndex> {
        let have = self.get(key);
        if have < m {
            return None;
        }
        let mut b = self.clone();
        let rest = have - m;
        match key {
            Key::Pop(k) => {
                if rest == 0 {
                    b.pop.remove(&k);
                } else {
                    b.pop.insert(k, rest);
                }
            }
            Key::Deriv(n) => {
                if rest == 0 {
                    b.deriv.remove(&n);
                } else {
                    b.deriv.insert(n, rest);
                }
            }
        }
        Some(b)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        let mut b = self.clone();
        for (k, m) in other.entries() {
            b.add_key(k, m);
        }
        b
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        let mut b = self.clone();
        for (k, m) in other.entries() {
            b = b.remove_key(k, m)?;
        }
        Some(b)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.entries().iter().all(|&(k, m)| other.get(k) >= m)
    }

    pub fn is_zero(&self) -> bool {
        self.pop.is_empty() && self.deriv.is_empty()
    }

    /// Total number of variables `Σ β(k) + Σ β(n)`.
    pub fn len(&self) -> u32 {
        self.pop.values().sum::<u32>() + self.deriv.values().sum::<u32>()
    }

    pub fn is_empty(&self) -> bool {
        self.is_zero()
    }

    pub fn is_pop_only(&self) -> bool {
        self.deriv.is_empty()
    }

    /// `Some(n)` if `self == e_n`.
    pub fn as_unit_deriv(&self) -> Option<DerivIndex> {
        if self.pop.is_empty() && self.deriv.len() == 1 {
            let (n, m) = self.deriv.iter().next().unwrap();
            if *m == 1 {
                return Some(*n);
            }
        }
        None
    }

    /// `Some(k)` if `self == e_k`.
    pub fn as_unit_pop(&self) -> Option<u32> {
        if self.deriv.is_empty() && self.pop.len() == 1 {
            let (k, m) = self.pop.iter().next().unwrap();
            if *m == 1 {
                return Some(*k);
            }
        }
        None
    }

    /// `|β|_p = Σ_n |n| β(n)`.
    pub fn plength(&self) -> u32 {
        self.deriv.iter().map(|(n, m)| n.degree() * m).sum()
    }

    /// `[β] = Σ_k k β(k) - Σ_n β(n)`.
    pub fn brackets(&self) -> i64 {
        let a: i64 = self.pop.iter().map(|(k, m)| (*k as i64) * (*m as i64)).sum();
        let b: i64 = self.deriv.values().map(|m| *m as i64).sum();
        a - b
    }

    /// `[β]_0 = Σ_k k β(k)`.
    pub fn brackets0(&self) -> u64 {
        self.pop.iter().map(|(k, m)| (*k as u64) * (*m as u64)).sum()
    }

    /// `|β| = α (1 + [β]) + |β|_p`.
    pub fn homogeneity(&self) -> Homogeneity {
        Homogeneity::new(1 + self.brackets(), self.plength() as i64)
    }

    pub fn is_populated(&self) -> bool {
        self.brackets() >= 0 || self.as_unit_deriv().is_some()
    }

    /// `|β|_≺ = |β| + λ β(0)`, evaluated at the perturbed alpha.
    pub fn order_key(&self, g: &Grading) -> f64 {
        self.homogeneity().value(g) + g.lambda * self.pop(0) as f64
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "1");
        }
        let mut first = true;
        for (key, m) in self.entries() {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            if m == 1 {
                write!(f, "{key}")?;
            } else {
                write!(f, "{key}^{m}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut b = MultiIndex::zero();
        if s == "1" || s.is_empty() {
            return Ok(b);
        }
        for tok in s.split_whitespace() {
            let bad = || Error::Parse(format!("bad multi-index token `{tok}`"));
            let body = tok.strip_prefix('z').ok_or_else(bad)?;
            let (var, mult) = match body.rsplit_once('^') {
                Some((v, m)) => (v, m.parse::<u32>().map_err(|_| bad())?),
                None => (body, 1),
            };
            let key = if let Some(inner) = var.strip_prefix('(').and_then(|v| v.strip_suffix(')')) {
                let (a, c) = inner.split_once(',').ok_or_else(bad)?;
                let n = DerivIndex::new(
                    a.trim().parse().map_err(|_| bad())?,
                    c.trim().parse().map_err(|_| bad())?,
                );
                if n.is_zero() {
                    return Err(bad());
                }
                Key::Deriv(n)
            } else {
                Key::Pop(var.parse().map_err(|_| bad())?)
            };
            b.add_key(key, mult);
        }
        Ok(b)
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sorts by `(|β|_≺, β)`.
pub fn sort_by_order(indices: &mut [MultiIndex], g: &Grading) {
    indices.sort_by(|a, b| {
        a.order_key(g)
            .partial_cmp(&b.order_key(g))
            .unwrap()
            .then_with(|| a.cmp(b))
    });
}

/// All multi-indices with `|β|_≺ < cutoff`, sorted by `≺`.
///
/// The result is closed under componentwise `<=`: every variable adds a
/// strictly positive amount to the order key.
pub fn enumerate_truncation(cutoff: f64, g: &Grading) -> Vec<MultiIndex> {
    enumerate_with(cutoff, g, true)
}

/// Population-only part of [`enumerate_truncation`].
pub fn enumerate_pop_truncation(cutoff: f64, g: &Grading) -> Vec<MultiIndex> {
    enumerate_with(cutoff, g, false)
}

/// Populated multi-indices (`[β] >= 0` or `β = e_n`) with `|β|_≺ < cutoff`,
/// sorted by `≺`.
pub fn enumerate_index_set(cutoff: f64, g: &Grading) -> Vec<MultiIndex> {
    enumerate_truncation(cutoff, g)
        .into_iter()
        .filter(|b| b.is_populated())
        .collect()
}

fn enumerate_with(cutoff: f64, g: &Grading, with_deriv: bool) -> Vec<MultiIndex> {
    let ah = g.alpha_hat();
    let base = ah;
    if !(base < cutoff) {
        return Vec::new();
    }
    let budget = cutoff - base;
    // (key, increment of the order key per unit)
    let mut units: Vec<(Key, f64)> = vec![(Key::Pop(0), g.lambda)];
    let mut k = 1u32;
    while (k as f64) * ah < budget {
        units.push((Key::Pop(k), k as f64 * ah));
        k += 1;
    }
    if with_deriv {
        let max_deg = cutoff.ceil() as u32;
        for n in DerivIndex::all_up_to(max_deg) {
            if n.is_zero() {
                continue;
            }
            let inc = n.degree() as f64 - ah;
            if inc < budget {
                units.push((Key::Deriv(n), inc));
            }
        }
    }
    let mut out = Vec::new();
    let mut cur = MultiIndex::zero();
    dfs(&units, 0, 0.0, budget, &mut cur, &mut out);
    out.retain(|b| b.order_key(g) < cutoff);
    sort_by_order(&mut out, g);
    out
}

fn dfs(
    units: &[(Key, f64)],
    i: usize,
    used: f64,
    budget: f64,
    cur: &mut MultiIndex,
    out: &mut Vec<MultiIndex>,
) {
    if i == units.len() {
        out.push(cur.clone());
        return;
    }
    let (key, inc) = units[i];
    let mut m = 0u32;
    loop {
        let total = used + m as f64 * inc;
        if total >= budget + 1e-9 {
            break;
        }
        let mut next = cur.clone();
        next.add_key(key, m);
        let mut tmp = next;
        std::mem::swap(cur, &mut tmp);
        dfs(units, i + 1, total, budget, cur, out);
        std::mem::swap(cur, &mut tmp);
        m += 1;
    }
}

/// All ordered tuples `(β_1, ..., β_parts)` with `Σ β_i = b`.
///
/// The count is `Π_key binom(b(key) + parts - 1, parts - 1)`.
pub fn decompositions(b: &MultiIndex, parts: usize) -> Vec<Vec<MultiIndex>> {
    if parts == 0 {
        return if b.is_zero() { vec![Vec::new()] } else { Vec::new() };
    }
    let mut acc: Vec<Vec<MultiIndex>> = vec![vec![MultiIndex::zero(); parts]];
    for (key, m) in b.entries() {
        let comps = weak_compositions(m, parts);
        let mut next = Vec::with_capacity(acc.len() * comps.len());
        for tuple in &acc {
            for comp in &comps {
                let mut t = tuple.clone();
                for (slot, &c) in t.iter_mut().zip(comp.iter()) {
                    slot.add_key(key, c);
                }
                next.push(t);
            }
        }
        acc = next;
    }
    acc
}

/// All `parts`-tuples of nonnegative integers summing to `m`.
pub fn weak_compositions(m: u32, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; parts];
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[i] = v;
            rec(i + 1, left - v, cur, out);
        }
    }
    if parts > 0 {
        rec(0, m, &mut cur, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(s: &str) -> MultiIndex {
        s.parse().unwrap()
    }

    #[test]
    fn homogeneity_of_units() {
        let g = Grading::default();
        assert_eq!(MultiIndex::zero().homogeneity(), Homogeneity::new(1, 0));
        assert_eq!(MultiIndex::e_k(1).homogeneity(), Homogeneity::new(2, 0));
        assert_eq!(MultiIndex::e_k(0).homogeneity(), Homogeneity::new(1, 0));
        let en = MultiIndex::e_n(DerivIndex::new(1, 0));
        assert_eq!(en.homogeneity(), Homogeneity::new(0, 1));
        assert_eq!(en.homogeneity().value(&g), 1.0);
        assert!(en.is_populated());
        assert_eq!(MultiIndex::e_k(0).order_key(&g), g.alpha_hat() + 0.25);
    }

    #[test]
    fn canonical_strings_roundtrip() {
        let b = MultiIndex::from_parts(&[(0, 2), (1, 1)], &[(DerivIndex::new(1, 0), 1)]);
        assert_eq!(b.to_string(), "z0^2 z1 z(1,0)");
        assert_eq!(mi("z0^2 z1 z(1,0)"), b);
        assert_eq!(mi("1"), MultiIndex::zero());
        assert!("z(0,0)".parse::<MultiIndex>().is_err());
        assert!("y1".parse::<MultiIndex>().is_err());
    }

    #[test]
    fn index_set_at_cutoff_1_1() {
        let g = Grading::default();
        let set = enumerate_index_set(1.1, &g);
        let names: Vec<String> = set.iter().map(|b| b.to_string()).collect();
        assert_eq!(names, ["1", "z0", "z1", "z0^2", "z(1,0)"]);
    }

    #[test]
    fn index_set_at_cutoff_1_6() {
        let g = Grading::default();
        let set = enumerate_index_set(1.6, &g);
        let names: Vec<String> = set.iter().map(|b| b.to_string()).collect();
        // Keys by hand: 1 -> .5, z0 -> .75, z1 -> 1-2eps, z0^2 -> 1-eps,
        // z(1,0) -> 1, z0^3 -> 1.25-eps, z0 z1 -> 1.25-2eps, then the five
        // indices near 1.5 ordered by eps-multiplicity, then the
        // lexicographic tie-break (z1^2 < z2, z0^4 < z1 z(1,0)).
        assert_eq!(
            names,
            [
                "1",
                "z0",
                "z1",
                "z0^2",
                "z(1,0)",
                "z0 z1",
                "z0^3",
                "z1^2",
                "z2",
                "z0^2 z1",
                "z0^4",
                "z1 z(1,0)"
            ]
        );
    }

    #[test]
    fn truncation_contains_unpopulated() {
        let g = Grading::default();
        let t = enumerate_truncation(1.6, &g);
        assert!(t.contains(&mi("z0 z(1,0)")));
        assert!(t.contains(&mi("z0^2 z(1,0)")));
        assert!(!mi("z0 z(1,0)").is_populated());
        for b in &t {
            assert!(b.order_key(&g) < 1.6);
        }
    }

    #[test]
    fn decomposition_counts() {
        let b = mi("z0^2 z1");
        // binom(2+2,2) * binom(1+2,2) = 6 * 3
        assert_eq!(decompositions(&b, 3).len(), 18);
        for d in decompositions(&b, 3) {
            let s = d.iter().fold(MultiIndex::zero(), |a, x| a.add(x));
            assert_eq!(s, b);
        }
        assert_eq!(decompositions(&MultiIndex::zero(), 4).len(), 1);
        assert_eq!(decompositions(&b, 0).len(), 0);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(2, 3), 0.0);
        assert_eq!(binomial(0, 0), 1.0);
    }
}
