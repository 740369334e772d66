//! Sparse polynomials in the three state variables `(δ, ω, ω_g)`.
//!
//! Everything downstream (the Taylor-expanded vector field, the Zubov
//! energy function and its time derivative) is a [`Poly3`]. Terms are kept in
//! a `BTreeMap` ordered by total degree and then lexicographically by
//! exponent, so iteration order and the text dump are deterministic.
//!
//! [`CompiledPoly`] is a flattened read-only form used in hot loops
//! (ray bracketing, trajectory scans, sampling).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::ops::{Add, Neg, Sub};

use crate::error::{Error, Result};

pub const DEFAULT_PRUNE: f64 = 1e-15;

/// Threshold for series and energy-function coefficients. State components
/// reach ~10 rad/s, so a degree-16 coefficient of 1e-16 still matters; only
/// denormal-scale noise is dropped.
pub const SERIES_PRUNE: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Delta,
    Omega,
    OmegaG,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Delta, Axis::Omega, Axis::OmegaG];

    pub fn index(self) -> usize {
        match self {
            Axis::Delta => 0,
            Axis::Omega => 1,
            Axis::OmegaG => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trig {
    Sin,
    Cos,
}

/// Exponents of `δ^a ω^b ω_g^c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Exponent3 {
    pub delta: u32,
    pub omega: u32,
    pub omega_g: u32,
}

impl Exponent3 {
    pub const ZERO: Exponent3 = Exponent3::new(0, 0, 0);

    pub const fn new(delta: u32, omega: u32, omega_g: u32) -> Self {
        Self {
            delta,
            omega,
            omega_g,
        }
    }

    pub fn degree(&self) -> u32 {
        self.delta + self.omega + self.omega_g
    }

    pub fn get(&self, axis: Axis) -> u32 {
        match axis {
            Axis::Delta => self.delta,
            Axis::Omega => self.omega,
            Axis::OmegaG => self.omega_g,
        }
    }

    fn with(mut self, axis: Axis, value: u32) -> Self {
        match axis {
            Axis::Delta => self.delta = value,
            Axis::Omega => self.omega = value,
            Axis::OmegaG => self.omega_g = value,
        }
        self
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.delta, self.omega, self.omega_g]
    }

    fn product(self, other: Exponent3) -> Exponent3 {
        Exponent3::new(
            self.delta + other.delta,
            self.omega + other.omega,
            self.omega_g + other.omega_g,
        )
    }

    /// All exponents of total degree `m`, in `Exponent3` order.
    pub fn homogeneous(m: u32) -> Vec<Exponent3> {
        let mut out = Vec::with_capacity(((m + 1) * (m + 2) / 2) as usize);
        for delta in (0..=m).rev() {
            for omega in (0..=m - delta).rev() {
                out.push(Exponent3::new(delta, omega, m - delta - omega));
            }
        }
        out
    }
}

impl Ord for Exponent3 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.delta.cmp(&self.delta))
            .then_with(|| other.omega.cmp(&self.omega))
            .then_with(|| other.omega_g.cmp(&self.omega_g))
    }
}

impl PartialOrd for Exponent3 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
pub struct Poly3 {
    terms: BTreeMap<Exponent3, f64>,
    prune: f64,
}

impl PartialEq for Poly3 {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms
    }
}

impl Default for Poly3 {
    fn default() -> Self {
        Self::zero()
    }
}

impl Poly3 {
    pub fn zero() -> Self {
        Self {
            terms: BTreeMap::new(),
            prune: DEFAULT_PRUNE,
        }
    }

    pub fn with_prune(mut self, prune: f64) -> Self {
        self.prune = prune;
        self.prune_small();
        self
    }

    pub fn prune_threshold(&self) -> f64 {
        self.prune
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial(c, Exponent3::ZERO)
    }

    pub fn monomial(coeff: f64, exp: Exponent3) -> Self {
        let mut p = Self::zero();
        p.add_term(exp, coeff);
        p.prune_small();
        p
    }

    pub fn var(axis: Axis) -> Self {
        Self::monomial(1.0, Exponent3::ZERO.with(axis, 1))
    }

    pub fn from_terms<I: IntoIterator<Item = (Exponent3, f64)>>(terms: I) -> Self {
        let mut p = Self::zero();
        for (e, c) in terms {
            p.add_term(e, c);
        }
        p.prune_small();
        p
    }

    fn add_term(&mut self, exp: Exponent3, coeff: f64) {
        *self.terms.entry(exp).or_insert(0.0) += coeff;
    }

    fn prune_small(&mut self) {
        let prune = self.prune;
        self.terms.retain(|_, c| c.abs() >= prune && *c != 0.0);
    }

    pub fn terms(&self) -> impl Iterator<Item = (Exponent3, f64)> + '_ {
        self.terms.iter().map(|(e, c)| (*e, *c))
    }

    pub fn coeff(&self, exp: Exponent3) -> f64 {
        self.terms.get(&exp).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().next_back().map(Exponent3::degree)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn scale(&self, k: f64) -> Poly3 {
        let mut p = Poly3 {
            terms: self.terms.iter().map(|(e, c)| (*e, c * k)).collect(),
            prune: self.prune,
        };
        p.prune_small();
        p
    }

    fn combine(&self, other: &Poly3, sign: f64) -> Poly3 {
        let mut p = self.clone();
        p.prune = self.prune.min(other.prune);
        for (e, c) in &other.terms {
            p.add_term(*e, sign * c);
        }
        p.prune_small();
        p
    }

    /// Product with every term of total degree above `degree_cap` discarded.
    pub fn mul(&self, other: &Poly3, degree_cap: u32) -> Poly3 {
        let mut acc: HashMap<Exponent3, f64> = HashMap::new();
        for (ea, ca) in &self.terms {
            let da = ea.degree();
            if da > degree_cap {
                // keys are degree-ordered
                break;
            }
            for (eb, cb) in &other.terms {
                if da + eb.degree() > degree_cap {
                    break;
                }
                *acc.entry(ea.product(*eb)).or_insert(0.0) += ca * cb;
            }
        }
        let mut p = Poly3 {
            terms: acc.into_iter().collect(),
            prune: self.prune.min(other.prune),
        };
        p.prune_small();
        p
    }

    pub fn partial(&self, axis: Axis) -> Poly3 {
        let mut p = Poly3 {
            terms: BTreeMap::new(),
            prune: self.prune,
        };
        for (e, c) in &self.terms {
            let k = e.get(axis);
            if k > 0 {
                p.add_term(e.with(axis, k - 1), c * k as f64);
            }
        }
        p.prune_small();
        p
    }

    pub fn gradient(&self) -> [Poly3; 3] {
        Axis::ALL.map(|a| self.partial(a))
    }

    /// Direct monomial evaluation at `(δ, ω, ω_g)`.
    pub fn eval(&self, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                c * x[0].powi(e.delta as i32)
                    * x[1].powi(e.omega as i32)
                    * x[2].powi(e.omega_g as i32)
            })
            .sum()
    }

    /// The terms of total degree exactly `m`.
    pub fn degree_slice(&self, m: u32) -> Poly3 {
        Poly3 {
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e.degree() == m)
                .map(|(e, c)| (*e, *c))
                .collect(),
            prune: self.prune,
        }
    }

    /// Keeps the terms selected by `keep`, preserving the prune threshold.
    pub fn filter_terms(&self, keep: impl Fn(Exponent3) -> bool) -> Poly3 {
        Poly3 {
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| keep(**e))
                .map(|(e, c)| (*e, *c))
                .collect(),
            prune: self.prune,
        }
    }

    pub fn truncate(&self, degree_cap: u32) -> Poly3 {
        Poly3 {
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e.degree() <= degree_cap)
                .map(|(e, c)| (*e, *c))
                .collect(),
            prune: self.prune,
        }
    }

    /// Taylor polynomial of `sin(δ + phase)` or `cos(δ + phase)` about
    /// `δ = 0`, keeping powers up to and including `truncation`.
    pub fn trig_series(kind: Trig, phase: f64, truncation: u32) -> Poly3 {
        let (s, c) = phase.sin_cos();
        // n-th derivative at 0 cycles with period 4
        let cycle = match kind {
            Trig::Sin => [s, c, -s, -c],
            Trig::Cos => [c, -s, -c, s],
        };
        let mut inv_fact = 1.0;
        let mut p = Poly3::zero().with_prune(SERIES_PRUNE);
        for n in 0..=truncation {
            if n > 0 {
                inv_fact /= n as f64;
            }
            p.add_term(Exponent3::new(n, 0, 0), cycle[(n % 4) as usize] * inv_fact);
        }
        p.prune_small();
        p
    }

    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly::new(self)
    }

    /// One `coeff * d^a w^b g^c` line per term in key order.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (e, c) in &self.terms {
            let _ = writeln!(s, "{}", format_term(*e, *c));
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Poly3> {
        Self::parse_dump_with_prune(text, DEFAULT_PRUNE)
    }

    pub fn parse_dump_with_prune(text: &str, prune: f64) -> Result<Poly3> {
        let mut p = Poly3::zero().with_prune(prune);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (e, c) = parse_term(line).map_err(|m| Error::parse(i + 1, m))?;
            p.add_term(e, c);
        }
        p.prune_small();
        Ok(p)
    }
}

pub(crate) fn format_term(e: Exponent3, c: f64) -> String {
    format!("{:.17e} * d^{} w^{} g^{}", c, e.delta, e.omega, e.omega_g)
}

pub(crate) fn parse_term(line: &str) -> std::result::Result<(Exponent3, f64), String> {
    let (coeff, mono) = line
        .split_once('*')
        .ok_or_else(|| format!("expected `coeff * d^a w^b g^c`, got `{line}`"))?;
    let c: f64 = coeff
        .trim()
        .parse()
        .map_err(|_| format!("bad coefficient `{}`", coeff.trim()))?;
    let mut exps = [0u32; 3];
    let parts: Vec<&str> = mono.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(format!("expected three factors in `{}`", mono.trim()));
    }
    for (slot, (part, var)) in exps.iter_mut().zip(parts.iter().zip(["d^", "w^", "g^"])) {
        let digits = part
            .strip_prefix(var)
            .ok_or_else(|| format!("expected `{var}..`, got `{part}`"))?;
        *slot = digits
            .parse()
            .map_err(|_| format!("bad exponent in `{part}`"))?;
    }
    Ok((Exponent3::new(exps[0], exps[1], exps[2]), c))
}

impl fmt::Display for Poly3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (i, (e, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (name, k) in ["d", "w", "g"].iter().zip(e.as_array()) {
                match k {
                    0 => {}
                    1 => write!(f, "*{name}")?,
                    _ => write!(f, "*{name}^{k}")?,
                }
            }
        }
        Ok(())
    }
}

impl Add for &Poly3 {
    type Output = Poly3;
    fn add(self, rhs: &Poly3) -> Poly3 {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &Poly3 {
    type Output = Poly3;
    fn sub(self, rhs: &Poly3) -> Poly3 {
        self.combine(rhs, -1.0)
    }
}

impl Add for Poly3 {
    type Output = Poly3;
    fn add(self, rhs: Poly3) -> Poly3 {
        &self + &rhs
    }
}

impl Sub for Poly3 {
    type Output = Poly3;
    fn sub(self, rhs: Poly3) -> Poly3 {
        &self - &rhs
    }
}

impl Neg for &Poly3 {
    type Output = Poly3;
    fn neg(self) -> Poly3 {
        self.scale(-1.0)
    }
}

/// Flattened polynomial with per-axis power tables for fast evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    exps: Vec<[u16; 3]>,
    coeffs: Vec<f64>,
    max_exp: [usize; 3],
    degree: usize,
}

impl CompiledPoly {
    pub fn new(p: &Poly3) -> Self {
        let mut exps = Vec::with_capacity(p.len());
        let mut coeffs = Vec::with_capacity(p.len());
        let mut max_exp = [0usize; 3];
        let mut degree = 0;
        for (e, c) in p.terms() {
            let a = e.as_array();
            for k in 0..3 {
                max_exp[k] = max_exp[k].max(a[k] as usize);
            }
            degree = degree.max(e.degree() as usize);
            exps.push([a[0] as u16, a[1] as u16, a[2] as u16]);
            coeffs.push(c);
        }
        Self {
            exps,
            coeffs,
            max_exp,
            degree,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn powers(&self, x: [f64; 3]) -> [Vec<f64>; 3] {
        std::array::from_fn(|k| {
            let mut v = Vec::with_capacity(self.max_exp[k] + 1);
            let mut acc = 1.0;
            for _ in 0..=self.max_exp[k] {
                v.push(acc);
                acc *= x[k];
            }
            v
        })
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let [pd, pw, pg] = self.powers(x);
        self.exps
            .iter()
            .zip(&self.coeffs)
            .map(|(e, c)| c * pd[e[0] as usize] * pw[e[1] as usize] * pg[e[2] as usize])
            .sum()
    }

    /// Coefficients `c_k` of the univariate restriction `p(r·dir) = Σ c_k r^k`.
    pub fn ray_coefficients(&self, dir: [f64; 3]) -> Vec<f64> {
        let [pd, pw, pg] = self.powers(dir);
        let mut out = vec![0.0; self.degree + 1];
        for (e, c) in self.exps.iter().zip(&self.coeffs) {
            let k = (e[0] + e[1] + e[2]) as usize;
            out[k] += c * pd[e[0] as usize] * pw[e[1] as usize] * pg[e[2] as usize];
        }
        out
    }

    /// For a fixed `(ω, ω_g)`, the coefficients of the restriction as a
    /// polynomial in `δ`.
    pub fn delta_line_coefficients(&self, omega: f64, omega_g: f64) -> Vec<f64> {
        let [_, pw, pg] = self.powers([0.0, omega, omega_g]);
        let mut out = vec![0.0; self.max_exp[0] + 1];
        for (e, c) in self.exps.iter().zip(&self.coeffs) {
            out[e[0] as usize] += c * pw[e[1] as usize] * pg[e[2] as usize];
        }
        out
    }
}

/// Horner evaluation of `Σ c_k r^k`.
pub fn horner(coeffs: &[f64], r: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
}
