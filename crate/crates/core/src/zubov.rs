//! Truncated Zubov energy function.
//!
//! The post-fault field is expanded about the SEP into a polynomial field
//! `F'` and the Zubov identity `∇V·F' = −φ(1 − V)` is matched degree by
//! degree. At each degree `m` the unknown homogeneous slice `V_m` solves a
//! dense linear system `L_m V_m = R_m`, where `L_m` is the action of the
//! linear part of the field on degree-`m` forms and `R_m` collects the
//! contributions of the lower slices.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{max_real_eigenvalue, OdeParams};
use crate::poly::{Axis, CompiledPoly, Exponent3, Poly3, Trig, SERIES_PRUNE};

pub const DEFAULT_TAYLOR_ORDER: u32 = 30;
pub const DEFAULT_ORDER: u32 = 16;
const CONDITION_WARN: f64 = 1e10;
/// Relative size of the smallest eigenvalue sum below which `L_m` is resonant.
const RESONANCE_TOLERANCE: f64 = 1e-10;

/// Polynomial vector field `(δ̇, ω̇, ω̇_g)` with no constant terms.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorField {
    pub linear: Matrix3<f64>,
    pub equations: [Poly3; 3],
    pub truncation: u32,
    /// Largest constant term dropped from the expansion.
    pub equilibrium_residual: f64,
}

impl TaylorField {
    pub fn from_equations(equations: [Poly3; 3], truncation: u32) -> Self {
        let mut residual: f64 = 0.0;
        let equations = equations.map(|p| {
            residual = residual.max(p.coeff(Exponent3::ZERO).abs());
            p.filter_terms(|e| e.degree() > 0)
        });
        let mut linear = Matrix3::zeros();
        for (n, eqn) in equations.iter().enumerate() {
            for axis in Axis::ALL {
                let mut e = [0u32; 3];
                e[axis.index()] = 1;
                linear[(n, axis.index())] = eqn.coeff(Exponent3::new(e[0], e[1], e[2]));
            }
        }
        Self {
            linear,
            equations,
            truncation,
            equilibrium_residual: residual,
        }
    }

    pub fn linear(b: Matrix3<f64>) -> Self {
        let eqs = std::array::from_fn(|n| {
            Poly3::from_terms(Axis::ALL.iter().map(|a| {
                let mut e = [0u32; 3];
                e[a.index()] = 1;
                (Exponent3::new(e[0], e[1], e[2]), b[(n, a.index())])
            }))
            .with_prune(SERIES_PRUNE)
        });
        Self::from_equations(eqs, 1)
    }

    /// `F'_{n,m}`: the degree-`m` part of equation `n`.
    pub fn slice(&self, n: usize, m: u32) -> Poly3 {
        self.equations[n].degree_slice(m)
    }

    pub fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|n| self.equations[n].eval(x))
    }
}

/// Expands the post-fault field about its shifted origin. The trigonometric
/// terms use `sin/cos(δ + offset)` series whose offsets absorb `δ_sep`,
/// `θ2`, `φ` and `φ1`; the damping product keeps total degree `≤ truncation`.
pub fn taylor_expand(ode: &OdeParams, truncation: u32) -> TaylorField {
    let t = truncation.max(1);
    let ds = ode.origin.delta_sep;
    let wgs = ode.origin.omega_g_sep;
    let omega = Poly3::var(Axis::Omega);
    let omega_g = Poly3::var(Axis::OmegaG);

    let d_delta = omega.clone().with_prune(SERIES_PRUNE);

    let d_omega = Poly3::constant(ode.p_ma_c + ode.d_g * wgs).with_prune(SERIES_PRUNE)
        + omega_g.scale(ode.d_g)
        - Poly3::trig_series(Trig::Sin, ds + ode.phi - ode.theta2, t).scale(ode.p_el_c)
        - omega
            .mul(&Poly3::trig_series(Trig::Cos, ds - ode.theta2, t - 1), t)
            .scale(ode.d_c);

    let d_omega_g = Poly3::constant(ode.p_ma_g - ode.d_g * wgs).with_prune(SERIES_PRUNE)
        + Poly3::trig_series(Trig::Cos, ode.theta2 + ds + ode.phi1, t).scale(ode.p_el_g)
        - omega_g.scale(ode.d_g);

    TaylorField::from_equations([d_delta, d_omega, d_omega_g], t)
}

/// Positive (semi)definite quadratic weight `φ` of the Zubov identity.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiFunction {
    pub id: String,
    pub poly: Poly3,
}

impl PhiFunction {
    /// Rejects anything that is not a positive definite quadratic form.
    pub fn new(id: impl Into<String>, poly: Poly3) -> Result<Self> {
        let phi = Self::semidefinite(id, poly)?;
        let min = phi.min_eigenvalue();
        if min <= 0.0 {
            return Err(Error::PhiNotPositiveDefinite(min));
        }
        Ok(phi)
    }

    /// Accepts a positive semidefinite form, logging a warning when it is
    /// not strictly definite.
    pub fn semidefinite(id: impl Into<String>, poly: Poly3) -> Result<Self> {
        if poly.terms().any(|(e, _)| e.degree() != 2) {
            return Err(Error::Config("phi must be a homogeneous quadratic".into()));
        }
        let phi = Self {
            id: id.into(),
            poly,
        };
        let min = phi.min_eigenvalue();
        if min < -1e-12 {
            return Err(Error::PhiNotPositiveDefinite(min));
        }
        if min <= 1e-12 {
            log::warn!("phi `{}` is only positive semidefinite", phi.id);
        }
        Ok(phi)
    }

    /// `0.03·(δ² + ω² + ω_g²)`.
    pub fn phi1() -> Self {
        Self::diagonal("phi1", [0.03, 0.03, 0.03])
    }

    /// `0.01·(δ + ω + ω_g)²`.
    pub fn phi2() -> Self {
        let s = &(&Poly3::var(Axis::Delta) + &Poly3::var(Axis::Omega)) + &Poly3::var(Axis::OmegaG);
        Self {
            id: "phi2".into(),
            poly: s.mul(&s, 2).scale(0.01),
        }
    }

    /// `0.03·δ² + 0.01·(ω + ω_g)²`.
    pub fn phi3() -> Self {
        let s = &Poly3::var(Axis::Omega) + &Poly3::var(Axis::OmegaG);
        let d2 = Poly3::monomial(0.03, Exponent3::new(2, 0, 0));
        Self {
            id: "phi3".into(),
            poly: &d2 + &s.mul(&s, 2).scale(0.01),
        }
    }

    pub fn diagonal(id: &str, w: [f64; 3]) -> Self {
        Self {
            id: id.into(),
            poly: Poly3::from_terms([
                (Exponent3::new(2, 0, 0), w[0]),
                (Exponent3::new(0, 2, 0), w[1]),
                (Exponent3::new(0, 0, 2), w[2]),
            ]),
        }
    }

    /// `1`, `2`, `3` select the presets; six comma-separated numbers give the
    /// coefficients of `δ², ω², ω_g², δω, δω_g, ωω_g` (must be definite).
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec.trim() {
            "1" | "phi1" => Ok(Self::phi1()),
            "2" | "phi2" => Ok(Self::phi2()),
            "3" | "phi3" => Ok(Self::phi3()),
            other => {
                let c: Vec<f64> = other
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad phi specification `{other}`")))?;
                if c.len() != 6 {
                    return Err(Error::Config(
                        "custom phi needs six coefficients: dd,ww,gg,dw,dg,wg".into(),
                    ));
                }
                let poly = Poly3::from_terms([
                    (Exponent3::new(2, 0, 0), c[0]),
                    (Exponent3::new(0, 2, 0), c[1]),
                    (Exponent3::new(0, 0, 2), c[2]),
                    (Exponent3::new(1, 1, 0), c[3]),
                    (Exponent3::new(1, 0, 1), c[4]),
                    (Exponent3::new(0, 1, 1), c[5]),
                ]);
                Self::new("custom", poly)
            }
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        quadratic_matrix(&self.poly)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Symmetric matrix `P` with `p(x) = xᵀ P x` for the quadratic part of `p`.
pub fn quadratic_matrix(p: &Poly3) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for (e, c) in p.degree_slice(2).terms() {
        let a = e.as_array();
        let idx: Vec<usize> = (0..3).flat_map(|k| std::iter::repeat_n(k, a[k] as usize)).collect();
        let (i, j) = (idx[0], idx[1]);
        if i == j {
            m[(i, i)] += c;
        } else {
            m[(i, j)] += c / 2.0;
            m[(j, i)] += c / 2.0;
        }
    }
    m
}

/// Dense matrix of `V ↦ Σ_n ∂V/∂x_n · (b x)_n` on degree-`m` forms.
fn linear_operator(b: &Matrix3<f64>, m: u32) -> (DMatrix<f64>, Vec<Exponent3>) {
    let basis = Exponent3::homogeneous(m);
    let index: HashMap<Exponent3, usize> = basis.iter().enumerate().map(|(i, e)| (*e, i)).collect();
    let mut op = DMatrix::zeros(basis.len(), basis.len());
    for (col, e) in basis.iter().enumerate() {
        let a = e.as_array();
        for n in 0..3 {
            if a[n] == 0 {
                continue;
            }
            for k in 0..3 {
                let bnk = b[(n, k)];
                if bnk == 0.0 {
                    continue;
                }
                let mut img = a;
                img[n] -= 1;
                img[k] += 1;
                let row = index[&Exponent3::new(img[0], img[1], img[2])];
                op[(row, col)] += a[n] as f64 * bnk;
            }
        }
    }
    (op, basis)
}

/// Row and column scalings `(r, c)` such that `diag(r)·A·diag(c)` has
/// entries of unit max-norm in every row and column (Ruiz iteration).
fn equilibrate(a: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let (nr, nc) = a.shape();
    let mut r = DVector::from_element(nr, 1.0);
    let mut c = DVector::from_element(nc, 1.0);
    for _ in 0..20 {
        let mut row_max = vec![0.0f64; nr];
        let mut col_max = vec![0.0f64; nc];
        for j in 0..nc {
            for i in 0..nr {
                let v = (r[i] * a[(i, j)] * c[j]).abs();
                row_max[i] = row_max[i].max(v);
                col_max[j] = col_max[j].max(v);
            }
        }
        for i in 0..nr {
            if row_max[i] > 0.0 {
                r[i] /= row_max[i].sqrt();
            }
        }
        for j in 0..nc {
            if col_max[j] > 0.0 {
                c[j] /= col_max[j].sqrt();
            }
        }
    }
    (r, c)
}

/// The eigenvalues of `L_m` are the sums `Σ k_i λ_i` with `|k| = m` over the
/// eigenvalues `λ_i` of `b`; returns the smallest one relative to `m·max|λ|`.
pub fn resonance_margin(b: &Matrix3<f64>, m: u32) -> f64 {
    let lambda = b.complex_eigenvalues();
    let scale = m as f64 * lambda.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    Exponent3::homogeneous(m)
        .into_iter()
        .map(|e| {
            let k = e.as_array();
            (0..3).map(|i| lambda[i] * k[i] as f64).sum::<nalgebra::Complex<f64>>().norm()
        })
        .fold(f64::INFINITY, f64::min)
        / scale
}

/// Solves `L_m V = rhs` for a degree-`m` form and returns it with the
/// condition number of the equilibrated operator. Equilibration removes the
/// spread that comes only from the different units of `δ`, `ω` and `ω_g`.
fn solve_homogeneous(b: &Matrix3<f64>, m: u32, rhs: &Poly3) -> Result<(Poly3, f64)> {
    let (op, basis) = linear_operator(b, m);
    let (rs, cs) = equilibrate(&op);
    let scaled = DMatrix::from_fn(op.nrows(), op.ncols(), |i, j| rs[i] * op[(i, j)] * cs[j]);
    let sv = scaled.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if resonance_margin(b, m) < RESONANCE_TOLERANCE {
        return Err(Error::Resonance {
            degree: m as usize,
            condition,
        });
    }
    if condition > CONDITION_WARN {
        log::warn!("Zubov operator at degree {m} is ill-conditioned ({condition:.3e})");
    } else {
        log::debug!("Zubov operator at degree {m}: condition {condition:.3e}");
    }
    let r = DVector::from_iterator(basis.len(), basis.iter().enumerate().map(|(i, e)| rs[i] * rhs.coeff(*e)));
    let y = scaled.lu().solve(&r).ok_or(Error::Resonance {
        degree: m as usize,
        condition,
    })?;
    let mut v = Poly3::zero().with_prune(SERIES_PRUNE);
    for (j, e) in basis.into_iter().enumerate() {
        v = &v + &Poly3::monomial(cs[j] * y[j], e).with_prune(SERIES_PRUNE);
    }
    Ok((v, condition))
}

pub fn check_hurwitz(b: &Matrix3<f64>) -> Result<()> {
    let max_real = max_real_eigenvalue(b);
    if max_real < 0.0 {
        Ok(())
    } else {
        Err(Error::NotHurwitz { max_real })
    }
}

/// Quadratic slice: `Σ_n ∂V₂/∂x_n (b x)_n = −φ`.
pub fn solve_v2(field: &TaylorField, phi: &PhiFunction) -> Result<Poly3> {
    check_hurwitz(&field.linear)?;
    Ok(solve_homogeneous(&field.linear, 2, &-&phi.poly)?.0)
}

/// Right-hand side `R_m = φ·V_{m−2} − Σ_{k=2}^{m−1} ∇V_k · F'_{m−k+1}`.
pub fn recursion_rhs(field: &TaylorField, phi: &PhiFunction, previous: &[Poly3], m: u32) -> Poly3 {
    let slice = |k: u32| -> Option<&Poly3> { k.checked_sub(2).and_then(|i| previous.get(i as usize)) };
    let mut r = match slice(m - 2) {
        Some(v) => phi.poly.mul(v, m),
        None => Poly3::zero(),
    };
    for k in 2..m {
        let Some(vk) = slice(k) else { continue };
        for axis in Axis::ALL {
            let f = field.slice(axis.index(), m - k + 1);
            if f.is_zero() {
                continue;
            }
            r = &r - &vk.partial(axis).mul(&f, m);
        }
    }
    r
}

/// Degree-`m` slice given `previous = [V₂, …, V_{m−1}]`.
pub fn solve_vm(field: &TaylorField, phi: &PhiFunction, previous: &[Poly3], m: u32) -> Result<Poly3> {
    assert!(m >= 3 && previous.len() + 2 == m as usize, "need V_2..V_{{m-1}}");
    let rhs = recursion_rhs(field, phi, previous, m);
    Ok(solve_homogeneous(&field.linear, m, &rhs)?.0)
}

/// `V⁽ᴹ⁾ = V₂ + … + V_M` together with `V̇⁽ᴹ⁾ = ∇V⁽ᴹ⁾·F'`.
#[derive(Clone, Debug)]
pub struct EnergyFunction {
    pub order: u32,
    pub phi: PhiFunction,
    pub field: TaylorField,
    /// `slices[i]` is the homogeneous part of degree `i + 2`.
    pub slices: Vec<Poly3>,
    pub v: Poly3,
    pub vdot: Poly3,
    pub conditions: Vec<f64>,
    v_fast: CompiledPoly,
    vdot_fast: CompiledPoly,
    grad_v_fast: [CompiledPoly; 3],
    grad_vdot_fast: [CompiledPoly; 3],
}

pub fn build_energy(field: &TaylorField, phi: &PhiFunction, order: u32) -> Result<EnergyFunction> {
    assert!(order >= 2, "order must be at least 2");
    check_hurwitz(&field.linear)?;
    let mut slices = Vec::with_capacity(order as usize - 1);
    let mut conditions = Vec::with_capacity(order as usize - 1);
    let (v2, c2) = solve_homogeneous(&field.linear, 2, &-&phi.poly)?;
    slices.push(v2);
    conditions.push(c2);
    for m in 3..=order {
        let rhs = recursion_rhs(field, phi, &slices, m);
        let (vm, c) = solve_homogeneous(&field.linear, m, &rhs)?;
        slices.push(vm);
        conditions.push(c);
    }
    Ok(EnergyFunction::assemble(order, phi.clone(), field.clone(), slices, conditions))
}

impl EnergyFunction {
    fn assemble(
        order: u32,
        phi: PhiFunction,
        field: TaylorField,
        slices: Vec<Poly3>,
        conditions: Vec<f64>,
    ) -> Self {
        let v = slices.iter().fold(Poly3::zero(), |acc, s| &acc + s);
        let cap = order + field.truncation.max(1) - 1;
        let grad = v.gradient();
        let mut vdot = Poly3::zero();
        for (n, g) in grad.iter().enumerate() {
            vdot = &vdot + &g.mul(&field.equations[n], cap);
        }
        let grad_vdot = vdot.gradient();
        Self {
            order,
            v_fast: v.compile(),
            vdot_fast: vdot.compile(),
            grad_v_fast: grad.each_ref().map(Poly3::compile),
            grad_vdot_fast: grad_vdot.each_ref().map(Poly3::compile),
            phi,
            field,
            slices,
            v,
            vdot,
            conditions,
        }
    }

    pub fn v2(&self) -> &Poly3 {
        &self.slices[0]
    }

    pub fn slice(&self, m: u32) -> Option<&Poly3> {
        m.checked_sub(2).and_then(|i| self.slices.get(i as usize))
    }

    pub fn value(&self, x: [f64; 3]) -> f64 {
        self.v_fast.eval(x)
    }

    pub fn derivative(&self, x: [f64; 3]) -> f64 {
        self.vdot_fast.eval(x)
    }

    pub fn grad_value(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| self.grad_v_fast[k].eval(x))
    }

    pub fn grad_derivative(&self, x: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| self.grad_vdot_fast[k].eval(x))
    }

    pub fn compiled_value(&self) -> &CompiledPoly {
        &self.v_fast
    }

    pub fn compiled_derivative(&self) -> &CompiledPoly {
        &self.vdot_fast
    }

    /// `V̇⁽ᴹ⁾ + φ(1 − V⁽ᴹ⁾)`; its slices of degree `≤ M` vanish by construction.
    pub fn residual(&self) -> Poly3 {
        let cap = self.vdot.degree().unwrap_or(0) + 2;
        &(&self.vdot + &self.phi.poly) - &self.phi.poly.mul(&self.v, cap)
    }

    /// Largest coefficient of the residual in degrees `2..=M`.
    pub fn residual_norm(&self) -> f64 {
        self.residual().truncate(self.order).max_abs_coeff()
    }

    pub fn v2_min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(quadratic_matrix(self.v2()))
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Text export: order, phi id and every polynomial in dump format.
    pub fn export(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# zubov energy function");
        let _ = writeln!(s, "order {}", self.order);
        let _ = writeln!(s, "truncation {}", self.field.truncation);
        let _ = writeln!(s, "phi {}", self.phi.id);
        let section = |s: &mut String, name: &str, p: &Poly3| {
            let _ = writeln!(s, "[{name}]");
            s.push_str(&p.dump());
        };
        section(&mut s, "phi", &self.phi.poly);
        for (name, eqn) in ["field delta", "field omega", "field omega_g"]
            .iter()
            .zip(&self.field.equations)
        {
            section(&mut s, name, eqn);
        }
        for (i, sl) in self.slices.iter().enumerate() {
            section(&mut s, &format!("slice {}", i + 2), sl);
        }
        s
    }

    pub fn import(text: &str) -> Result<Self> {
        let mut order = None;
        let mut truncation = None;
        let mut phi_id = None;
        let mut sections: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), String::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                crate::poly::parse_term(line).map_err(|m| Error::parse(i + 1, m))?;
                body.push_str(line);
                body.push('\n');
            } else {
                let (k, v) = line
                    .split_once(' ')
                    .ok_or_else(|| Error::parse(i + 1, format!("bad header `{line}`")))?;
                let num = || v.trim().parse::<u32>().map_err(|_| Error::parse(i + 1, "bad integer"));
                match k {
                    "order" => order = Some(num()?),
                    "truncation" => truncation = Some(num()?),
                    "phi" => phi_id = Some(v.trim().to_string()),
                    _ => return Err(Error::parse(i + 1, format!("unknown header `{k}`"))),
                }
            }
        }
        let missing = |what: &str| Error::parse(0, format!("missing {what}"));
        let order = order.ok_or_else(|| missing("order"))?;
        let truncation = truncation.ok_or_else(|| missing("truncation"))?;
        let phi_id = phi_id.ok_or_else(|| missing("phi"))?;
        let mut get = |name: &str| -> Result<Poly3> {
            let pos = sections
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| missing(name))?;
            Poly3::parse_dump_with_prune(&sections.remove(pos).1, SERIES_PRUNE)
        };
        let phi = PhiFunction::semidefinite(phi_id, get("phi")?)?;
        let eqs = [get("field delta")?, get("field omega")?, get("field omega_g")?];
        let field = TaylorField::from_equations(eqs, truncation);
        let slices = (2..=order)
            .map(|m| get(&format!("slice {m}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(order, phi, field, slices, Vec::new()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.export())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::import(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(k: usize, deg: u32) -> Exponent3 {
        let mut e = [0; 3];
        e[k] = deg;
        Exponent3::new(e[0], e[1], e[2])
    }

    fn decoupled() -> TaylorField {
        TaylorField::linear(Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, -2.0, -3.0)))
    }

    #[test]
    fn resonance_margin_of_decoupled_and_resonant_spectra() {
        let b = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, -2.0, -3.0));
        // Smallest |sum| at degree 2 is 2·1 = 2, scaled by 2·3.
        assert!((resonance_margin(&b, 2) - 2.0 / 6.0).abs() < 1e-12);
        let centre = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, -1.0, -2.0));
        assert!(resonance_margin(&centre, 2) < 1e-12);
    }

    #[test]
    fn equilibration_balances_rows_and_columns() {
        let a = DMatrix::from_row_slice(2, 2, &[1e6, 2.0, 3.0, 1e-4]);
        let (r, c) = equilibrate(&a);
        for i in 0..2 {
            let row = (0..2).map(|j| (r[i] * a[(i, j)] * c[j]).abs()).fold(0.0, f64::max);
            let col = (0..2).map(|j| (r[j] * a[(j, i)] * c[i]).abs()).fold(0.0, f64::max);
            assert!((row - 1.0).abs() < 1e-6 && (col - 1.0).abs() < 1e-6, "{row} {col}");
        }
    }

    #[test]
    fn diagonal_lyapunov_solve() {
        let v2 = solve_v2(&decoupled(), &PhiFunction::diagonal("unit", [1.0, 1.0, 1.0])).unwrap();
        assert!((v2.coeff(x(0, 2)) - 0.5).abs() < 1e-14);
        assert!((v2.coeff(x(1, 2)) - 0.25).abs() < 1e-14);
        assert!((v2.coeff(x(2, 2)) - 1.0 / 6.0).abs() < 1e-14);
        assert_eq!(v2.len(), 3);
    }

    #[test]
    fn non_hurwitz_is_rejected() {
        let f = TaylorField::linear(Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, 0.5, -3.0)));
        assert!(matches!(solve_v2(&f, &PhiFunction::phi1()), Err(Error::NotHurwitz { .. })));
    }

    #[test]
    fn linear_field_has_no_cubic_slice() {
        let f = decoupled();
        let phi = PhiFunction::phi1();
        let v2 = solve_v2(&f, &phi).unwrap();
        assert!(solve_vm(&f, &phi, &[v2], 3).unwrap().is_zero());
    }

    #[test]
    fn one_dimensional_closed_form() {
        // ẋ = −x with φ = 2x² gives V = 1 − exp(−x²).
        let f = decoupled();
        let phi = PhiFunction::semidefinite("2x^2", Poly3::monomial(2.0, x(0, 2))).unwrap();
        let e = build_energy(&f, &phi, 8).unwrap();
        let expect = [1.0, -0.5, 1.0 / 6.0, -1.0 / 24.0];
        for (i, c) in expect.iter().enumerate() {
            let m = 2 * (i as u32 + 1);
            let s = e.slice(m).unwrap();
            assert!((s.coeff(x(0, m)) - c).abs() < 1e-13, "degree {m}");
            assert_eq!(s.len(), 1);
        }
        for m in [3, 5, 7] {
            assert!(e.slice(m).unwrap().is_zero());
        }
    }

    #[test]
    fn quadratic_on_linear_field_is_exact() {
        let f = decoupled();
        let e = build_energy(&f, &PhiFunction::phi1(), 2).unwrap();
        let r = &e.vdot + &PhiFunction::phi1().poly;
        assert!(r.max_abs_coeff() < 1e-15);
    }

    #[test]
    fn phi_presets() {
        assert!(PhiFunction::phi1().min_eigenvalue() > 0.0);
        assert!(PhiFunction::phi2().min_eigenvalue().abs() < 1e-12);
        assert!(PhiFunction::phi3().min_eigenvalue().abs() < 1e-12);
        assert!(PhiFunction::new("p2", PhiFunction::phi2().poly).is_err());
        let c = PhiFunction::from_spec("0.03,0.03,0.03,0,0,0").unwrap();
        assert_eq!(c.poly, PhiFunction::phi1().poly);
        assert!(PhiFunction::from_spec("1,2").is_err());
        assert!(PhiFunction::from_spec("-1,1,1,0,0,0").is_err());
    }

    #[test]
    fn random_hurwitz_matches_kronecker_solve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut b = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let shift = max_real_eigenvalue(&b) + rng.gen_range(0.1..1.0);
            b -= Matrix3::identity() * shift;
            let v2 = solve_v2(&TaylorField::linear(b), &PhiFunction::phi1()).unwrap();
            // bᵀP + Pb = −Q as a 9×9 Kronecker system.
            let q = PhiFunction::phi1().matrix();
            let mut k = DMatrix::<f64>::zeros(9, 9);
            for i in 0..3 {
                for j in 0..3 {
                    for l in 0..3 {
                        k[(i * 3 + j, l * 3 + j)] += b[(l, i)];
                        k[(i * 3 + j, i * 3 + l)] += b[(l, j)];
                    }
                }
            }
            let rhs = DVector::from_iterator(9, (0..9).map(|n| -q[(n / 3, n % 3)]));
            let p = k.lu().solve(&rhs).unwrap();
            let got = quadratic_matrix(&v2);
            for n in 0..9 {
                assert!((got[(n / 3, n % 3)] - p[n]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn export_import_preserves_function() {
        let f = decoupled();
        let phi = PhiFunction::phi3();
        let e = build_energy(&f, &phi, 5).unwrap();
        let back = EnergyFunction::import(&e.export()).unwrap();
        assert_eq!(back.order, 5);
        assert_eq!(back.slices, e.slices);
        assert_eq!(back.vdot, e.vdot);
        assert_eq!(back.phi.id, "phi3");
        assert!(EnergyFunction::import("order 3\n").is_err());
    }
}
