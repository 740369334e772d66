//! Level-set estimate of the attraction domain, containment queries, plane
//! slices and the classical energy-function baseline.
//!
//! The critical level is the smallest value of `V` on the set where `V̇`
//! vanishes (excluding the SEP). It is located by casting rays from the
//! origin, bracketing the first sign change of `V̇` along each, and refining
//! the best hits by constrained descent on `V̇ = 0`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{OdeParams, State};
use crate::poly::{horner, CompiledPoly};
use crate::zubov::{quadratic_matrix, EnergyFunction};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchConfig {
    pub n_rays: usize,
    pub top_k: usize,
    /// Hard cap on the search radius in `V₂`-metric units (`V₂ = r²`).
    pub radius_cap: f64,
    /// Bracketing samples per ray.
    pub ray_samples: usize,
    pub root_tolerance: f64,
    pub refine_iterations: usize,
    /// When set, each ray is also limited to three times the radius at which
    /// the expanded field departs from this exact field.
    #[serde(skip)]
    pub exact_field: Option<OdeParams>,
    pub validity_tolerance: f64,
    /// For a semidefinite `φ`, directions with `φ(x) < κ·λ_max(φ)·|x|²` are
    /// skipped: near the null set of `φ` the sign of `V̇` is decided by the
    /// truncation remainder alone. Ignored for definite `φ`.
    pub degenerate_cone: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_rays: 2000,
            top_k: 32,
            radius_cap: 6.0,
            ray_samples: 600,
            root_tolerance: 1e-10,
            refine_iterations: 300,
            exact_field: None,
            validity_tolerance: 1e-6,
            degenerate_cone: 0.1,
        }
    }
}

impl SearchConfig {
    pub fn with_field(ode: &OdeParams) -> Self {
        Self {
            exact_field: Some(*ode),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SearchReport {
    pub n_rays: usize,
    pub rays_with_root: usize,
    pub seeds_refined: usize,
    pub refinement_iterations: usize,
    /// `|V̇|` at the witness.
    pub constraint_residual: f64,
    /// Smallest per-ray radius bound, metric units.
    pub min_radius_bound: f64,
    pub radius_cap: f64,
    pub degenerate_cone: f64,
    /// Smallest radial maximum of `V` below 1 over all rays; sublevel sets
    /// above it are not bounded along that ray.
    pub ridge_level: f64,
    /// Best value among the unrefined ray hits.
    pub best_ray_value: f64,
    /// No sign change on any ray; the level is capped at 1.
    pub unbounded: bool,
    /// The minimum exceeded 1 or the ridge level and was capped.
    pub capped: bool,
}

#[derive(Clone, Debug)]
pub struct DomainEstimate {
    pub energy: Arc<EnergyFunction>,
    pub c1: f64,
    pub witness: Option<State>,
    pub search_report: SearchReport,
    metric: Metric,
}

/// `x = T·u` with `V₂(x) = |u|²`.
#[derive(Clone, Copy, Debug)]
struct Metric {
    t: Matrix3<f64>,
    t_inv: Matrix3<f64>,
}

impl Metric {
    fn new(energy: &EnergyFunction) -> Result<Self> {
        let p = quadratic_matrix(energy.v2());
        let chol = p.cholesky().ok_or_else(|| {
            Error::Config("quadratic part of V is not positive definite".into())
        })?;
        let l = chol.l();
        let t = l
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::Config("singular V2 metric".into()))?;
        Ok(Self { t, t_inv: l.transpose() })
    }

    fn to_state(&self, u: &Vector3<f64>) -> [f64; 3] {
        let x = self.t * u;
        [x[0], x[1], x[2]]
    }

    fn radius(&self, x: [f64; 3]) -> f64 {
        (self.t_inv * Vector3::from(x)).norm()
    }

    /// Gradient with respect to `u` from a gradient with respect to `x`.
    fn pull_back(&self, g: [f64; 3]) -> Vector3<f64> {
        self.t.transpose() * Vector3::from(g)
    }
}

/// Quasi-uniform unit vectors.
pub fn fibonacci_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let th = golden * i as f64;
            [r * th.cos(), y, r * th.sin()]
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct RayHit {
    index: usize,
    u: Vector3<f64>,
    value: f64,
}

#[derive(Clone, Copy, Debug)]
struct Refined {
    index: usize,
    u: Vector3<f64>,
    value: f64,
    residual: f64,
    iterations: usize,
}

pub fn find_c1(energy: Arc<EnergyFunction>, config: &SearchConfig) -> Result<DomainEstimate> {
    if config.n_rays == 0 || config.ray_samples < 2 || !(config.radius_cap > 0.0) {
        return Err(Error::Config("degenerate search configuration".into()));
    }
    let metric = Metric::new(&energy)?;
    let cone = if energy.phi.min_eigenvalue() > 1e-12 {
        0.0
    } else {
        config.degenerate_cone
    };
    let config = &SearchConfig {
        degenerate_cone: cone,
        ..config.clone()
    };
    let dirs = fibonacci_sphere(config.n_rays);
    let vdot = energy.compiled_derivative();
    let v = energy.compiled_value();

    let per_ray: Vec<(f64, f64, Option<RayHit>)> = dirs
        .par_iter()
        .enumerate()
        .map(|(index, d)| {
            let u = Vector3::from(*d);
            let x_dir = metric.to_state(&u);
            if phi_ratio(&energy, x_dir) < config.degenerate_cone {
                return (config.radius_cap, f64::INFINITY, None);
            }
            let mut bound = match &config.exact_field {
                Some(ode) => (3.0 * validity_radius(&energy, ode, x_dir, config))
                    .min(config.radius_cap),
                None => config.radius_cap,
            };
            let mut ridge = f64::INFINITY;
            if let Some((r, value)) = radial_limit(v, x_dir, bound, config.ray_samples) {
                bound = r;
                ridge = value;
            }
            let coeffs = vdot.ray_coefficients(x_dir);
            let hit = first_sign_change(&coeffs, bound, config.ray_samples, config.root_tolerance)
                .map(|r| RayHit {
                    index,
                    u: u * r,
                    value: v.eval(metric.to_state(&(u * r))),
                });
            (bound, ridge, hit)
        })
        .collect();

    let min_radius_bound = per_ray.iter().map(|(b, _, _)| *b).fold(f64::INFINITY, f64::min);
    let ridge_level = per_ray.iter().map(|(_, r, _)| *r).fold(f64::INFINITY, f64::min);
    let mut hits: Vec<RayHit> = per_ray.into_iter().filter_map(|(_, _, h)| h).collect();
    let mut report = SearchReport {
        n_rays: config.n_rays,
        rays_with_root: hits.len(),
        min_radius_bound,
        radius_cap: config.radius_cap,
        degenerate_cone: cone,
        ridge_level,
        ..SearchReport::default()
    };
    if hits.is_empty() {
        report.unbounded = true;
        report.best_ray_value = f64::INFINITY;
        return Ok(DomainEstimate {
            energy,
            c1: 1.0,
            witness: None,
            search_report: report,
            metric,
        });
    }
    hits.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)));
    report.best_ray_value = hits[0].value;
    hits.truncate(config.top_k.max(1));

    let refined: Vec<Refined> = hits
        .par_iter()
        .map(|h| refine(&energy, &metric, h, config))
        .collect();
    let best = refined
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)))
        .copied()
        .expect("non-empty seeds");
    report.seeds_refined = refined.len();
    report.refinement_iterations = refined.iter().map(|r| r.iterations).sum();
    report.constraint_residual = best.residual;
    let mut c1 = best.value;
    if c1 > ridge_level.min(1.0) {
        report.capped = true;
        c1 = ridge_level.min(1.0);
    }
    Ok(DomainEstimate {
        energy,
        c1,
        witness: Some(State::from_array(metric.to_state(&best.u))),
        search_report: report,
        metric,
    })
}

/// `φ(x) / (λ_max(φ)·|x|²)`, constant along rays.
fn phi_ratio(energy: &EnergyFunction, x: [f64; 3]) -> f64 {
    let m = energy.phi.matrix();
    let lmax = m.symmetric_eigenvalues().max();
    let n2 = x.iter().map(|c| c * c).sum::<f64>();
    if lmax <= 0.0 || n2 == 0.0 {
        return 0.0;
    }
    energy.phi.poly.eval(x) / (lmax * n2)
}

/// Radius along `x_dir` (metric units) where the expanded field first departs
/// from the exact field by more than the validity tolerance.
fn validity_radius(energy: &EnergyFunction, ode: &OdeParams, x_dir: [f64; 3], c: &SearchConfig) -> f64 {
    let n = 200;
    for k in 1..=n {
        let r = c.radius_cap * k as f64 / n as f64;
        let x = x_dir.map(|d| d * r);
        let approx = energy.field.eval(x);
        let exact = ode.rhs(&State::from_array(x)).to_array();
        let scale = 1.0 + exact.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        let dev = (0..3).fold(0.0f64, |m, i| m.max((approx[i] - exact[i]).abs()));
        if dev > c.validity_tolerance * scale {
            return c.radius_cap * (k - 1).max(1) as f64 / n as f64;
        }
    }
    c.radius_cap
}

/// First radius along `x_dir` where `V` reaches 1 or stops increasing,
/// with the value of `V` there.
fn radial_limit(v: &CompiledPoly, x_dir: [f64; 3], bound: f64, samples: usize) -> Option<(f64, f64)> {
    let coeffs = v.ray_coefficients(x_dir);
    let slope: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
    // dV/dr > 0 near the origin, so negate it to reuse the sign-change search
    let neg_slope: Vec<f64> = slope.iter().map(|c| -c).collect();
    let turn = first_sign_change(&neg_slope, bound, samples, 1e-12);
    let one = level_crossing(v, x_dir, 1.0, turn.unwrap_or(bound), samples);
    one.or(turn).map(|r| (r, horner(&coeffs, r)))
}

/// First radius along `x_dir` where `V` reaches `level`. Beyond it the
/// truncated `V` no longer describes the attraction region.
fn level_crossing(v: &CompiledPoly, x_dir: [f64; 3], level: f64, bound: f64, samples: usize) -> Option<f64> {
    let mut coeffs = v.ray_coefficients(x_dir);
    coeffs[0] -= level;
    first_sign_change(&coeffs, bound, samples, 1e-12)
}

/// First `r ∈ (0, bound]` where the polynomial turns non-negative after
/// being negative near the origin.
fn first_sign_change(coeffs: &[f64], bound: f64, samples: usize, tol: f64) -> Option<f64> {
    let mut prev_r = 0.0;
    let mut seen_negative = false;
    for k in 1..=samples {
        let r = bound * k as f64 / samples as f64;
        let val = horner(coeffs, r);
        if val < 0.0 {
            seen_negative = true;
        } else if seen_negative {
            return Some(bisect(|r| horner(coeffs, r), prev_r, r, tol));
        }
        prev_r = r;
    }
    None
}

/// Root of `f` in `[a, b]` with `f(a) < 0 <= f(b)`.
fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm.abs() < tol * 1e-3 || b - a < 1e-15 * b.abs().max(1.0) {
            return m;
        }
        if fm < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Constrained descent of `V` on `V̇ = 0` in metric coordinates: a tangent
/// gradient step followed by Newton projection back onto the constraint.
fn refine(energy: &EnergyFunction, metric: &Metric, hit: &RayHit, c: &SearchConfig) -> Refined {
    let f = |u: &Vector3<f64>| energy.value(metric.to_state(u));
    let g = |u: &Vector3<f64>| energy.derivative(metric.to_state(u));
    let grad_f = |u: &Vector3<f64>| metric.pull_back(energy.grad_value(metric.to_state(u)));
    let grad_g = |u: &Vector3<f64>| metric.pull_back(energy.grad_derivative(metric.to_state(u)));
    let floor = 0.2 * hit.u.norm();
    // the point must precede the first `V = 1` crossing on its own ray
    let admissible = |u: &Vector3<f64>| {
        let r = u.norm();
        let x_dir = metric.to_state(&(u / r));
        r <= c.radius_cap
            && phi_ratio(energy, x_dir) >= c.degenerate_cone
            && radial_limit(energy.compiled_value(), x_dir, r, 64).is_none()
    };
    let project = |mut u: Vector3<f64>| -> Option<Vector3<f64>> {
        for _ in 0..50 {
            let gv = g(&u);
            if gv.abs() <= c.root_tolerance {
                return (u.norm() > floor).then_some(u);
            }
            let n = grad_g(&u);
            let n2 = n.norm_squared();
            if n2 == 0.0 || !n2.is_finite() {
                return None;
            }
            u -= n * (gv / n2);
        }
        None
    };

    let mut u = project(hit.u).unwrap_or(hit.u);
    let mut fu = f(&u);
    let mut alpha = 0.05 * u.norm();
    let mut iterations = 0;
    for _ in 0..c.refine_iterations {
        iterations += 1;
        let gf = grad_f(&u);
        let n = grad_g(&u);
        let nn = n.norm();
        if nn == 0.0 {
            break;
        }
        let nhat = n / nn;
        let p = gf - nhat * gf.dot(&nhat);
        let pn = p.norm();
        if pn < 1e-12 || alpha < 1e-12 * u.norm() {
            break;
        }
        match project(u - p * (alpha / pn)) {
            Some(cand) if f(&cand) < fu && admissible(&cand) => {
                u = cand;
                fu = f(&u);
                alpha *= 1.5;
            }
            _ => alpha *= 0.5,
        }
    }
    Refined {
        index: hit.index,
        u,
        value: fu,
        residual: g(&u).abs(),
        iterations,
    }
}

impl DomainEstimate {
    /// A level set at a prescribed `c1`, e.g. to study sensitivity.
    pub fn with_level(&self, c1: f64) -> DomainEstimate {
        DomainEstimate {
            c1,
            ..self.clone()
        }
    }

    pub fn value(&self, s: &State) -> f64 {
        self.energy.value(s.to_array())
    }

    /// `V(s) ≤ c1` on the admissible region.
    pub fn contains(&self, s: &State) -> bool {
        self.energy.value(s.to_array()) <= self.c1 && self.admissible(s)
    }

    /// Whether the state lies before the radial limit on its ray from the
    /// origin: inside the searched radius, with `V` below 1 and increasing
    /// all the way out.
    pub fn admissible(&self, s: &State) -> bool {
        let x = s.to_array();
        let r = self.metric.radius(x);
        if r == 0.0 {
            return true;
        }
        if r > self.search_report.radius_cap {
            return false;
        }
        let x_dir = x.map(|c| c / r);
        radial_limit(self.energy.compiled_value(), x_dir, r, 256).is_none()
    }

    /// `V₂`-metric radius of a state.
    pub fn metric_radius(&self, s: &State) -> f64 {
        self.metric.radius(s.to_array())
    }

    /// State at metric radius `r` along the unit metric direction `u`.
    pub fn metric_point(&self, u: [f64; 3], r: f64) -> State {
        State::from_array(self.metric.to_state(&(Vector3::from(u) * r)))
    }

    /// Metric radius where `V` first reaches `c1` along direction `u`.
    pub fn exit_radius(&self, u: [f64; 3]) -> f64 {
        let x_dir = self.metric.to_state(&Vector3::from(u).normalize());
        let cap = self.search_report.radius_cap;
        level_crossing(self.energy.compiled_value(), x_dir, self.c1, cap, 2000).unwrap_or(cap)
    }

    /// Axis-aligned half-widths of the ellipsoid `V₂ ≤ r²`.
    pub fn ellipsoid_extent(&self, r: f64) -> [f64; 3] {
        let tt = self.metric.t * self.metric.t.transpose();
        std::array::from_fn(|i| r * tt[(i, i)].sqrt())
    }

    pub fn slice(&self, omega_g: f64, grid: &GridSpec) -> SliceData {
        slice(self, omega_g, grid)
    }
}

/// Brute-force check of the critical level: on each line of an `n×n`
/// lattice in `(ω, ω_g)` over the box, every sign change of `V̇` in `δ` is
/// bracketed on `n` samples and bisected; the smallest `V` found is returned
/// with its point.
pub fn grid_c1(domain: &DomainEstimate, half: [f64; 3], n: usize) -> Option<(f64, State)> {
    let energy = &domain.energy;
    let vdot = energy.compiled_derivative();
    let v = energy.compiled_value();
    let axis = |k: usize, i: usize| -half[k] + 2.0 * half[k] * i as f64 / (n - 1) as f64;
    let min_radius = 1e-3;
    let best = (0..n * n)
        .into_par_iter()
        .filter_map(|idx| {
            let (w, g) = (axis(1, idx / n), axis(2, idx % n));
            let line = vdot.delta_line_coefficients(w, g);
            let mut best: Option<(f64, State)> = None;
            let mut prev = (axis(0, 0), horner(&line, axis(0, 0)));
            for i in 1..n {
                let d = axis(0, i);
                let val = horner(&line, d);
                if (prev.1 < 0.0) != (val < 0.0) {
                    let sign = if prev.1 < 0.0 { 1.0 } else { -1.0 };
                    let root = bisect(|x| sign * horner(&line, x), prev.0, d, 1e-12);
                    let s = State::new(root, w, g);
                    if domain.metric_radius(&s) > min_radius && domain.admissible(&s) {
                        let value = v.eval(s.to_array());
                        if best.is_none_or(|(b, _)| value < b) {
                            best = Some((value, s));
                        }
                    }
                }
                prev = (d, val);
            }
            best
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub delta: (f64, f64),
    pub omega: (f64, f64),
    pub n_delta: usize,
    pub n_omega: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && b > a;
        if !ok(self.delta) || !ok(self.omega) || self.n_delta < 2 || self.n_omega < 2 {
            return Err(Error::Config("grid needs finite increasing bounds and ≥ 2 points".into()));
        }
        Ok(())
    }

    fn delta_at(&self, i: usize) -> f64 {
        self.delta.0 + (self.delta.1 - self.delta.0) * i as f64 / (self.n_delta - 1) as f64
    }

    fn omega_at(&self, j: usize) -> f64 {
        self.omega.0 + (self.omega.1 - self.omega.0) * j as f64 / (self.n_omega - 1) as f64
    }
}

/// Values on an `ω_g = const` plane and the `V = c1` contour.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SliceData {
    pub omega_g: f64,
    pub level: f64,
    pub grid: GridSpec,
    /// Row-major over `(δ_i, ω_j)`, index `i * n_omega + j`.
    pub values: Vec<f64>,
    pub inside: Vec<bool>,
    /// Contour polylines as `(δ, ω)` points; closed ones repeat the first point.
    pub contours: Vec<Vec<(f64, f64)>>,
}

impl SliceData {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("delta,omega,omega_g,V,inside\n");
        for i in 0..self.grid.n_delta {
            for j in 0..self.grid.n_omega {
                let k = i * self.grid.n_omega + j;
                let _ = writeln!(
                    out,
                    "{:.9e},{:.9e},{:.9e},{:.12e},{}",
                    self.grid.delta_at(i),
                    self.grid.omega_at(j),
                    self.omega_g,
                    self.values[k],
                    u8::from(self.inside[k])
                );
            }
        }
        out
    }

    pub fn contour_csv(&self) -> String {
        let mut out = String::from("contour,delta,omega\n");
        for (c, line) in self.contours.iter().enumerate() {
            for (d, w) in line {
                let _ = writeln!(out, "{c},{d:.9e},{w:.9e}");
            }
        }
        out
    }
}

/// Edge of a grid cell: `(i, j, vertical)`; a horizontal edge joins
/// `(i, j)–(i+1, j)`, a vertical one `(i, j)–(i, j+1)`.
type EdgeKey = (usize, usize, bool);

pub fn slice(domain: &DomainEstimate, omega_g: f64, grid: &GridSpec) -> SliceData {
    let (nd, nw) = (grid.n_delta.max(2), grid.n_omega.max(2));
    let grid = GridSpec {
        n_delta: nd,
        n_omega: nw,
        ..*grid
    };
    let level = domain.c1;
    let mut values = Vec::with_capacity(nd * nw);
    let mut inside = Vec::with_capacity(nd * nw);
    for i in 0..nd {
        for j in 0..nw {
            let s = State::new(grid.delta_at(i), grid.omega_at(j), omega_g);
            values.push(domain.value(&s));
            inside.push(domain.contains(&s));
        }
    }
    let f = |i: usize, j: usize| values[i * nw + j] - level;
    let point = |e: EdgeKey| -> (f64, f64) {
        let (i, j, vertical) = e;
        let (i2, j2) = if vertical { (i, j + 1) } else { (i + 1, j) };
        let (a, b) = (f(i, j), f(i2, j2));
        let t = if a == b { 0.5 } else { a / (a - b) };
        let d = grid.delta_at(i) + t * (grid.delta_at(i2) - grid.delta_at(i));
        let w = grid.omega_at(j) + t * (grid.omega_at(j2) - grid.omega_at(j));
        (d, w)
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for i in 0..nd - 1 {
        for j in 0..nw - 1 {
            // corners counter-clockwise from (i, j); edges bottom, right, top, left
            let c = [f(i, j), f(i + 1, j), f(i + 1, j + 1), f(i, j + 1)];
            let edges: [EdgeKey; 4] = [(i, j, false), (i + 1, j, true), (i, j + 1, false), (i, j, true)];
            let crosses: Vec<usize> =
                (0..4).filter(|&k| (c[k] < 0.0) != (c[(k + 1) % 4] < 0.0)).collect();
            match crosses.len() {
                2 => segments.push((edges[crosses[0]], edges[crosses[1]])),
                4 => {
                    let centre = 0.25 * c.iter().sum::<f64>();
                    if (centre < 0.0) == (c[0] < 0.0) {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[0], edges[3]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }

    let contours = join_segments(&segments)
        .into_iter()
        .map(|keys| keys.into_iter().map(point).collect())
        .collect();
    SliceData {
        omega_g,
        level,
        grid,
        values,
        inside,
        contours,
    }
}

fn join_segments(segments: &[(EdgeKey, EdgeKey)]) -> Vec<Vec<EdgeKey>> {
    let mut adjacency: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(k);
        adjacency.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let other = |k: usize, e: EdgeKey| if segments[k].0 == e { segments[k].1 } else { segments[k].0 };
    let extend = |start: EdgeKey, used: &mut Vec<bool>, line: &mut Vec<EdgeKey>| {
        let mut cur = start;
        while let Some(&k) = adjacency[&cur].iter().find(|&&k| !used[k]) {
            used[k] = true;
            cur = other(k, cur);
            line.push(cur);
        }
    };
    // open chains start at an end point, then closed loops
    let mut starts: Vec<EdgeKey> = adjacency
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(e, _)| *e)
        .collect();
    starts.sort();
    let mut loops: Vec<EdgeKey> = adjacency.keys().copied().collect();
    loops.sort();
    for start in starts.into_iter().chain(loops) {
        if adjacency[&start].iter().all(|&k| used[k]) {
            continue;
        }
        let mut line = vec![start];
        extend(start, &mut used, &mut line);
        lines.push(line);
    }
    lines
}

/// Classical energy `V_tr = ½ω² − P'_ma,c·δ − P'_el,c·(cos(δ + ψ) − cos ψ)`
/// with `ψ = δ_sep + φ − θ2`, for the two-state model without grid damping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraditionalEnergy {
    pub p_ma_c: f64,
    pub p_el_c: f64,
    pub psi: f64,
    /// Energy at the controlling unstable equilibrium.
    pub level: f64,
    /// Shifted angle of the controlling UEP.
    pub uep: f64,
    /// Shifted angles of the UEPs on either side of the SEP.
    pub well: (f64, f64),
}

pub fn traditional_energy(ode: &OdeParams) -> Result<TraditionalEnergy> {
    let psi = ode.origin.delta_sep + ode.phi - ode.theta2;
    if !(ode.p_el_c > 0.0) {
        return Err(Error::BaselineUnavailable("no synchronizing power".into()));
    }
    let ratio = ode.p_ma_c / ode.p_el_c;
    if ratio.abs() >= 1.0 {
        return Err(Error::BaselineUnavailable(format!(
            "P'_ma,c/P'_el,c = {ratio:.4} admits no unstable equilibrium"
        )));
    }
    // the two-state model's own SEP sits at ψ + δ = asin(ratio); its UEPs at
    // π − asin(ratio) one period either way
    let x_s = ratio.asin();
    let upper = PI - x_s - psi;
    let lower = upper - 2.0 * PI;
    let mut e = TraditionalEnergy {
        p_ma_c: ode.p_ma_c,
        p_el_c: ode.p_el_c,
        psi,
        level: 0.0,
        uep: 0.0,
        well: (lower, upper),
    };
    let (vu, vl) = (e.value(upper, 0.0), e.value(lower, 0.0));
    (e.level, e.uep) = if vu <= vl { (vu, upper) } else { (vl, lower) };
    if !(e.level > 0.0) {
        return Err(Error::BaselineUnavailable(format!(
            "unstable equilibrium energy {:.4e} is not positive",
            e.level
        )));
    }
    Ok(e)
}

impl TraditionalEnergy {
    pub fn value(&self, delta: f64, omega: f64) -> f64 {
        0.5 * omega * omega
            - self.p_ma_c * delta
            - self.p_el_c * ((delta + self.psi).cos() - self.psi.cos())
    }

    /// Inside the potential well with energy below the critical level.
    pub fn contains(&self, s: &State) -> bool {
        s.delta > self.well.0 && s.delta < self.well.1 && self.value(s.delta, s.omega) < self.level
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GflcSystem, SystemParams};
    use crate::zubov::{build_energy, taylor_expand, PhiFunction, TaylorField};

    fn reference_domain() -> DomainEstimate {
        let sys = GflcSystem::with_default_fault(&SystemParams::reference()).unwrap();
        let field = taylor_expand(&sys.post.ode, 30);
        let e = build_energy(&field, &PhiFunction::phi1(), 16).unwrap();
        let cfg = SearchConfig {
            n_rays: 400,
            top_k: 8,
            ..SearchConfig::with_field(&sys.post.ode)
        };
        find_c1(Arc::new(e), &cfg).unwrap()
    }

    fn linear_domain() -> DomainEstimate {
        let b = Matrix3::new(0.0, 1.0, 0.0, -2.0, -0.5, 0.3, -0.2, 0.0, -1.0);
        let e = build_energy(&TaylorField::linear(b), &PhiFunction::phi1(), 2).unwrap();
        find_c1(Arc::new(e), &SearchConfig { n_rays: 200, ..SearchConfig::default() }).unwrap()
    }

    #[test]
    fn fibonacci_points_are_unit_and_spread() {
        let pts = fibonacci_sphere(500);
        assert!(pts.iter().all(|p| ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs() < 1e-12));
        let mean: [f64; 3] = std::array::from_fn(|k| pts.iter().map(|p| p[k]).sum::<f64>() / 500.0);
        assert!(mean.iter().all(|m| m.abs() < 1e-2));
    }

    #[test]
    fn first_sign_change_on_known_polynomial() {
        // −r² + r³ changes sign at r = 1
        let r = first_sign_change(&[0.0, 0.0, -1.0, 1.0], 3.0, 100, 1e-12).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
        assert!(first_sign_change(&[0.0, 0.0, -1.0], 3.0, 100, 1e-12).is_none());
    }

    #[test]
    fn linear_field_gives_capped_estimate() {
        let d = linear_domain();
        assert!(d.search_report.unbounded);
        assert_eq!(d.c1, 1.0);
        assert!(d.contains(&State::new(0.5, 0.5, 0.5)));
        let s = d.slice(0.0, &GridSpec { delta: (-1.0, 1.0), omega: (-1.0, 1.0), n_delta: 11, n_omega: 11 });
        assert!(s.inside.iter().all(|b| *b));
    }

    #[test]
    fn reference_level_and_witness() {
        let d = reference_domain();
        let w = d.witness.unwrap();
        assert!((d.c1 - 0.572).abs() < 0.01, "c1 = {}", d.c1);
        assert!((d.value(&w) - d.c1).abs() < 1e-9);
        assert!(d.energy.derivative(w.to_array()).abs() < 1e-8);
        assert!(w.norm_inf() > 1e-3);
        assert!(d.contains(&State::ORIGIN));
        assert!(!d.contains(&w.scale(1.5)));
    }

    #[test]
    fn grid_oracle_agrees() {
        let d = reference_domain();
        let r = d.metric_radius(&d.witness.unwrap());
        let (g, _) = grid_c1(&d, d.ellipsoid_extent(1.5 * r), 101).unwrap();
        assert!((g - d.c1).abs() / d.c1 < 0.02, "grid {g} vs {}", d.c1);
        assert!(g >= d.c1 - 1e-9);
    }

    #[test]
    fn slice_contour_is_closed_and_on_level() {
        let d = reference_domain();
        let ext = d.ellipsoid_extent(2.0);
        let grid = GridSpec { delta: (-ext[0], ext[0]), omega: (-ext[1], ext[1]), n_delta: 161, n_omega: 161 };
        let s = d.slice(0.0, &grid);
        let longest = s.contours.iter().max_by_key(|c| c.len()).unwrap();
        assert_eq!(longest.first(), longest.last());
        // winds once around the origin
        let mut winding = 0.0;
        for w in longest.windows(2) {
            let (a, b) = (w[0].1.atan2(w[0].0), w[1].1.atan2(w[1].0));
            let mut da = b - a;
            if da > PI { da -= 2.0 * PI; }
            if da < -PI { da += 2.0 * PI; }
            winding += da;
        }
        assert!((winding.abs() - 2.0 * PI).abs() < 1e-6);
        let cell = (grid.delta.1 - grid.delta.0) / 160.0 + (grid.omega.1 - grid.omega.0) / 160.0;
        for (dl, om) in longest {
            let v = d.value(&State::new(*dl, *om, 0.0));
            assert!((v - d.c1).abs() < 0.05 * cell.max(0.01), "contour V {v}");
        }
        let csv = s.to_csv();
        assert!(csv.starts_with("delta,omega,omega_g,V,inside\n"));
        assert_eq!(csv.lines().count(), 161 * 161 + 1);
    }

    #[test]
    fn traditional_energy_structure() {
        let sys = GflcSystem::with_default_fault(&SystemParams::reference()).unwrap();
        let tr = traditional_energy(&sys.post.ode).unwrap();
        assert!(tr.value(0.0, 0.0).abs() < 1e-15);
        assert!((tr.value(0.0, 3.0) - 4.5).abs() < 1e-12);
        assert!(tr.level > 0.0);
        assert!(tr.contains(&State::ORIGIN));
        assert!(!tr.contains(&State::new(tr.uep, 0.0, 0.0)));
    }

    #[test]
    fn traditional_energy_without_uep_is_unavailable() {
        let sys = GflcSystem::with_default_fault(&SystemParams::reference()).unwrap();
        let mut ode = sys.post.ode;
        ode.p_ma_c = 2.0 * ode.p_el_c;
        assert!(matches!(traditional_energy(&ode), Err(Error::BaselineUnavailable(_))));
    }

    #[test]
    fn join_builds_closed_loop() {
        let s = vec![((0, 0, false), (1, 0, true)), ((1, 0, true), (0, 1, false)), ((0, 1, false), (0, 0, true)), ((0, 0, true), (0, 0, false))];
        let lines = join_segments(&s);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].first(), lines[0].last());
    }
}
