//! Converter / low-inertia-grid model.
//!
//! The circuit is a current-source converter behind `Z_c`, a synchronous
//! generator (the low-inertia grid) behind `Z_g`, and a shunt load `Z_l`
//! (resistance in parallel with inductance) at the common bus. A fault puts
//! `R_f` in parallel with the load. Network reduction yields three complex
//! equivalents from which the coefficients of the three-state ODE in
//! `(δ, ω, ω_g)` are formed.
//!
//! States handed to [`OdeParams::rhs`] are measured from an [`Origin`] (the
//! post-fault stable equilibrium) so the post-fault SEP sits at `(0, 0, 0)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical circuit, machine and control constants in SI units (VA, V, W,
/// Ω, H), except `ug` and `ic` which are per-unit on their own ratings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub base_power: f64,
    pub base_voltage: f64,
    pub omega0: f64,
    pub rc: f64,
    pub lc: f64,
    pub rg: f64,
    pub lg: f64,
    pub rl: f64,
    pub ll: f64,
    /// Default fault resistance (Ω).
    pub rf: f64,
    /// Generator rating; the swing-equation inertia and damping are quoted on it.
    pub sg: f64,
    /// Converter rating; `ic` is quoted on it.
    pub sc: f64,
    pub p_ma_g: f64,
    pub ug: f64,
    pub jg: f64,
    pub dg: f64,
    pub ki: f64,
    pub kp: f64,
    pub ic: f64,
    pub phi1: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self::reference()
    }
}

const PARAM_KEYS: [&str; 20] = [
    "sb", "ub", "omega0", "rc", "lc", "rg", "lg", "rl", "ll", "rf", "sg", "sc", "pmag", "ug", "jg",
    "dg", "ki", "kp", "ic", "phi1",
];

impl SystemParams {
    /// The 100 MVA / 230 kV reference test system.
    pub fn reference() -> Self {
        Self {
            base_power: 100e6,
            base_voltage: 230e3,
            omega0: 120.0 * PI,
            rc: 8.928,
            lc: 0.113,
            rg: 10.631,
            lg: 0.122,
            rl: 75.571,
            ll: 7.016,
            rf: 1.0,
            sg: 400e6,
            sc: 400e6,
            p_ma_g: 366.56e6,
            ug: 1.1,
            jg: 0.4,
            dg: 0.4,
            ki: 200.0,
            kp: 10.0,
            ic: 0.760,
            phi1: -0.165,
        }
    }

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "sb" => &mut self.base_power,
            "ub" => &mut self.base_voltage,
            "omega0" => &mut self.omega0,
            "rc" => &mut self.rc,
            "lc" => &mut self.lc,
            "rg" => &mut self.rg,
            "lg" => &mut self.lg,
            "rl" => &mut self.rl,
            "ll" => &mut self.ll,
            "rf" => &mut self.rf,
            "sg" => &mut self.sg,
            "sc" => &mut self.sc,
            "pmag" => &mut self.p_ma_g,
            "ug" => &mut self.ug,
            "jg" => &mut self.jg,
            "dg" => &mut self.dg,
            "ki" => &mut self.ki,
            "kp" => &mut self.kp,
            "ic" => &mut self.ic,
            "phi1" => &mut self.phi1,
            _ => return None,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.clone().slot(key).map(|v| *v)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = self
            .slot(key)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{key}`")))?;
        *slot = value;
        Ok(())
    }

    /// Parses a flat `key = value` document. Every key except `sg` and `sc`
    /// is required; those two default to `sb`. Unknown or repeated keys are
    /// rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: BTreeMap<String, f64> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_ascii_lowercase();
            if !PARAM_KEYS.contains(&key.as_str()) {
                return Err(Error::parse(i + 1, format!("unknown key `{key}`")));
            }
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad number for `{key}`")))?;
            if !value.is_finite() {
                return Err(Error::parse(i + 1, format!("non-finite value for `{key}`")));
            }
            if seen.insert(key.clone(), value).is_some() {
                return Err(Error::parse(i + 1, format!("duplicate key `{key}`")));
            }
        }
        let mut p = SystemParams::reference();
        for key in PARAM_KEYS {
            match seen.get(key) {
                Some(v) => p.set(key, *v)?,
                None if key == "sg" || key == "sc" => {}
                None => return Err(Error::Config(format!("missing parameter `{key}`"))),
            }
        }
        if !seen.contains_key("sg") {
            p.sg = p.base_power;
        }
        if !seen.contains_key("sc") {
            p.sc = p.base_power;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in PARAM_KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap_or(f64::NAN));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sb", self.base_power),
            ("ub", self.base_voltage),
            ("omega0", self.omega0),
            ("sg", self.sg),
            ("sc", self.sc),
            ("jg", self.jg),
            ("ki", self.ki),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("rc", self.rc),
            ("lc", self.lc),
            ("rg", self.rg),
            ("lg", self.lg),
            ("rl", self.rl),
            ("ll", self.ll),
            ("kp", self.kp),
            ("ic", self.ic),
            ("dg", self.dg),
        ];
        for (k, v) in non_negative {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("`{k}` must be non-negative, got {v}")));
            }
        }
        if !(self.rc > 0.0 || self.lc > 0.0) || !(self.rg > 0.0 || self.lg > 0.0) {
            return Err(Error::Config("line impedances must be non-zero".into()));
        }
        if !(self.rl > 0.0 && self.ll > 0.0) {
            return Err(Error::Config("load resistance and inductance must be positive".into()));
        }
        if !(self.rf > 0.0) {
            return Err(Error::Config(format!("`rf` must be positive, got {}", self.rf)));
        }
        Ok(())
    }

    pub fn impedance_base(&self) -> f64 {
        self.base_voltage * self.base_voltage / self.base_power
    }

    /// Normalizes on `(S_b, U_b)`: `X = ω0·L`, impedances over
    /// `Z_b = U_b²/S_b`, powers over `S_b`. The converter current moves from
    /// the converter rating to `S_b`; the generator inertia and damping are
    /// divided by `S_g/S_b`.
    pub fn to_per_unit(&self) -> Result<PerUnitParams> {
        if !(self.base_power > 0.0 && self.base_voltage > 0.0) {
            return Err(Error::Config("base power and voltage must be positive".into()));
        }
        self.validate()?;
        let zb = self.impedance_base();
        let series = |r: f64, l: f64| Complex64::new(r / zb, self.omega0 * l / zb);
        let load_r = Complex64::new(self.rl / zb, 0.0);
        let load_x = Complex64::new(0.0, self.omega0 * self.ll / zb);
        let rating = self.sg / self.base_power;
        Ok(PerUnitParams {
            zc: series(self.rc, self.lc),
            zg: series(self.rg, self.lg),
            zl: load_r * load_x / (load_r + load_x),
            rf: self.rf / zb,
            p_ma_g: self.p_ma_g / self.base_power,
            ug: self.ug,
            ic: self.ic * self.sc / self.base_power,
            phi1: self.phi1,
            inertia: self.jg / rating,
            damping: self.dg / rating,
            ki: self.ki,
            kp: self.kp,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerUnitParams {
    pub zc: Complex64,
    pub zg: Complex64,
    pub zl: Complex64,
    pub rf: f64,
    pub p_ma_g: f64,
    pub ug: f64,
    pub ic: f64,
    pub phi1: f64,
    pub inertia: f64,
    pub damping: f64,
    pub ki: f64,
    pub kp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NetworkConfig {
    Normal,
    /// Fault resistance in ohms, in parallel with the load.
    Faulted { rf_ohm: f64 },
}

impl NetworkConfig {
    pub fn effective_load(&self, params: &SystemParams, pu: &PerUnitParams) -> Complex64 {
        match *self {
            NetworkConfig::Normal => pu.zl,
            NetworkConfig::Faulted { rf_ohm } => {
                let rf = Complex64::new(rf_ohm / params.impedance_base(), 0.0);
                pu.zl * rf / (pu.zl + rf)
            }
        }
    }
}

/// Reduced-network equivalents: `I_g = Z_eq1·U_g − Z_eq2·I_c` and
/// `U_c = Z_eq2·U_g + Z_eq3·I_c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Equivalents {
    pub zeq1: Complex64,
    pub zeq2: Complex64,
    pub zeq3: Complex64,
}

impl Equivalents {
    pub fn theta1(&self) -> f64 {
        self.zeq1.arg()
    }
    pub fn theta2(&self) -> f64 {
        self.zeq2.arg()
    }
    pub fn theta3(&self) -> f64 {
        self.zeq3.arg()
    }
}

pub fn equivalents(
    params: &SystemParams,
    pu: &PerUnitParams,
    config: NetworkConfig,
) -> Result<Equivalents> {
    let zl = config.effective_load(params, pu);
    let denom = pu.zg + zl;
    if !(denom.norm() > 1e-12) || !zl.is_finite() {
        return Err(Error::DegenerateNetwork(format!(
            "Z_g + Z'_l = {denom} is singular"
        )));
    }
    let zeq1 = denom.inv();
    let zeq2 = zl / denom;
    let zeq3 = zl * pu.zg / denom + pu.zc;
    if !(zeq2.norm() > 0.0 && zeq3.norm() > 0.0) {
        return Err(Error::DegenerateNetwork("vanishing transfer impedance".into()));
    }
    Ok(Equivalents { zeq1, zeq2, zeq3 })
}

/// The shift that places the post-fault stable equilibrium at the origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub delta_sep: f64,
    pub omega_g_sep: f64,
}

/// `(δ, ω, ω_g)` with `δ = δ_c − δ_g` and `ω = ω_c − ω_g`, measured from an [`Origin`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub delta: f64,
    pub omega: f64,
    pub omega_g: f64,
}

impl State {
    pub const ORIGIN: State = State::new(0.0, 0.0, 0.0);

    pub const fn new(delta: f64, omega: f64, omega_g: f64) -> Self {
        Self {
            delta,
            omega,
            omega_g,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.delta, self.omega, self.omega_g]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.omega.is_finite() && self.omega_g.is_finite()
    }

    pub fn norm_inf(&self) -> f64 {
        self.delta.abs().max(self.omega.abs()).max(self.omega_g.abs())
    }

    pub fn scale(self, k: f64) -> State {
        State::new(self.delta * k, self.omega * k, self.omega_g * k)
    }
}

impl Add for State {
    type Output = State;
    fn add(self, o: State) -> State {
        State::new(self.delta + o.delta, self.omega + o.omega, self.omega_g + o.omega_g)
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, o: State) -> State {
        State::new(self.delta - o.delta, self.omega - o.omega, self.omega_g - o.omega_g)
    }
}

impl Mul<State> for f64 {
    type Output = State;
    fn mul(self, s: State) -> State {
        s.scale(self)
    }
}

/// Coefficients of the three-state ODE for one network configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeParams {
    pub p_ma_g: f64,
    pub p_el_g: f64,
    pub d_g: f64,
    pub p_ma_c: f64,
    pub p_el_c: f64,
    pub d_c: f64,
    pub phi: f64,
    pub theta2: f64,
    pub phi1: f64,
    pub origin: Origin,
}

pub fn ode_params(pu: &PerUnitParams, eq: &Equivalents) -> OdeParams {
    let j = pu.inertia;
    let (z1, t1) = (eq.zeq1.norm(), eq.theta1());
    let (z2, t2) = (eq.zeq2.norm(), eq.theta2());
    let (z3, t3) = (eq.zeq3.norm(), eq.theta3());
    let kj = pu.ki * j;
    let (s2, c2) = (2.0 * t2 + pu.phi1).sin_cos();

    let p_ma_g = (pu.p_ma_g - z1 * pu.ug * pu.ug * t1.cos()) / j;
    let p_el_g = z2 * pu.ug * pu.ic / j;
    let amplitude = (kj * kj + pu.ic * pu.ic - 2.0 * kj * pu.ic * s2).max(0.0).sqrt();
    OdeParams {
        p_ma_g,
        p_el_g,
        d_g: pu.damping / j,
        p_ma_c: pu.ki * z3 * pu.ic * (t3 + pu.phi1).sin() - p_ma_g,
        p_el_c: z2 * pu.ug / j * amplitude,
        d_c: pu.kp * z2 * pu.ug,
        phi: (pu.ic * c2).atan2(kj - pu.ic * s2),
        theta2: t2,
        phi1: pu.phi1,
        origin: Origin::default(),
    }
}

impl OdeParams {
    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// Derivative at absolute coordinates `(δ, ω, ω_g)`.
    pub fn rhs_absolute(&self, delta: f64, omega: f64, omega_g: f64) -> [f64; 3] {
        let d_omega = self.p_ma_c - self.p_el_c * (delta + self.phi - self.theta2).sin()
            - omega * self.d_c * (delta - self.theta2).cos()
            + self.d_g * omega_g;
        let d_omega_g =
            self.p_ma_g + self.p_el_g * (self.theta2 + delta + self.phi1).cos() - self.d_g * omega_g;
        [omega, d_omega, d_omega_g]
    }

    pub fn rhs(&self, s: &State) -> State {
        let o = self.origin;
        State::from_array(self.rhs_absolute(s.delta + o.delta_sep, s.omega, s.omega_g + o.omega_g_sep))
    }

    /// Jacobian of [`Self::rhs`]; rows are `(δ̇, ω̇, ω̇_g)`.
    pub fn jacobian(&self, s: &State) -> Matrix3<f64> {
        let delta = s.delta + self.origin.delta_sep;
        Matrix3::new(
            0.0,
            1.0,
            0.0,
            -self.p_el_c * (delta + self.phi - self.theta2).cos()
                + s.omega * self.d_c * (delta - self.theta2).sin(),
            -self.d_c * (delta - self.theta2).cos(),
            self.d_g,
            -self.p_el_g * (self.theta2 + delta + self.phi1).sin(),
            0.0,
            -self.d_g,
        )
    }

    /// Solves `ω̇ = ω̇_g = 0` at `ω = 0` by Newton from 16 seeds spread over
    /// `(−π, π]`, keeps Hurwitz solutions and returns the one with the
    /// smallest `|δ_sep|`. The returned parameters carry the new origin.
    pub fn find_equilibrium(&self) -> Result<OdeParams> {
        let base = self.with_origin(Origin::default());
        let mut best: Option<(Origin, f64)> = None;
        for k in 0..16 {
            let seed = -PI + 2.0 * PI * (k + 1) as f64 / 16.0;
            let Some(origin) = base.newton_equilibrium(seed) else {
                continue;
            };
            let jac = base.jacobian(&State::new(origin.delta_sep, 0.0, origin.omega_g_sep));
            let max_real = max_real_eigenvalue(&jac);
            if max_real >= 0.0 {
                continue;
            }
            if best.is_none_or(|(b, _)| origin.delta_sep.abs() < b.delta_sep.abs() - 1e-12) {
                best = Some((origin, max_real));
            }
        }
        let (origin, _) = best.ok_or_else(|| {
            Error::NoEquilibrium("no Hurwitz equilibrium found from any seed".into())
        })?;
        if origin.omega_g_sep.abs() > 1e-6 {
            log::info!(
                "equilibrium has ω_g = {:.3e} rad/s; shifting all three states",
                origin.omega_g_sep
            );
        }
        Ok(self.with_origin(origin))
    }

    fn newton_equilibrium(&self, seed: f64) -> Option<Origin> {
        let (mut delta, mut omega_g) = (seed, 0.0);
        for _ in 0..100 {
            let f = self.rhs_absolute(delta, 0.0, omega_g);
            let (r1, r2) = (f[1], f[2]);
            if r1.abs().max(r2.abs()) < 1e-10 {
                return Some(Origin {
                    delta_sep: wrap_angle(delta),
                    omega_g_sep: omega_g,
                });
            }
            let j = self.jacobian(&State::new(delta, 0.0, omega_g));
            let (a, b, c, d) = (j[(1, 0)], j[(1, 2)], j[(2, 0)], j[(2, 2)]);
            let det = a * d - b * c;
            if det.abs() < 1e-14 {
                return None;
            }
            delta -= (d * r1 - b * r2) / det;
            omega_g -= (-c * r1 + a * r2) / det;
            if !delta.is_finite() || !omega_g.is_finite() || delta.abs() > 1e3 {
                return None;
            }
        }
        None
    }
}

pub fn max_real_eigenvalue(m: &Matrix3<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Wraps into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// q-axis PCC voltage `Z_eq2·U_g·sin(θ2 − δ_abs) + Z_eq3·I_c·sin(θ3 + φ1)`.
pub fn u_cq(s: &State, eq: &Equivalents, pu: &PerUnitParams, origin: Origin) -> f64 {
    let delta = s.delta + origin.delta_sep;
    eq.zeq2.norm() * pu.ug * (eq.theta2() - delta).sin()
        + eq.zeq3.norm() * pu.ic * (eq.theta3() + pu.phi1).sin()
}

/// Frequency step of the PLL when the network switches from `before` to
/// `after`: the proportional path follows the `U_cq` step, so
/// `Δω = K_p·(U_cq,after − U_cq,before)`.
pub fn pll_jump_delta(
    s: &State,
    before: &Equivalents,
    after: &Equivalents,
    pu: &PerUnitParams,
    origin: Origin,
) -> f64 {
    pu.kp * (u_cq(s, after, pu, origin) - u_cq(s, before, pu, origin))
}

pub fn pll_jump(
    s: &State,
    before: &Equivalents,
    after: &Equivalents,
    pu: &PerUnitParams,
    origin: Origin,
) -> State {
    State::new(
        s.delta,
        s.omega + pll_jump_delta(s, before, after, pu, origin),
        s.omega_g,
    )
}

/// One network configuration with its equivalents and ODE coefficients.
#[derive(Clone, Debug, Serialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub equivalents: Equivalents,
    pub ode: OdeParams,
}

impl Network {
    pub fn rhs(&self, s: &State) -> State {
        self.ode.rhs(s)
    }
}

/// Pre/post-fault (normal) and on-fault networks sharing the post-fault origin.
#[derive(Clone, Debug, Serialize)]
pub struct GflcSystem {
    pub params: SystemParams,
    pub pu: PerUnitParams,
    pub post: Network,
    pub fault: Network,
}

impl GflcSystem {
    pub fn new(params: &SystemParams, fault: NetworkConfig) -> Result<Self> {
        let pu = params.to_per_unit()?;
        let eq_post = equivalents(params, &pu, NetworkConfig::Normal)?;
        let post_ode = ode_params(&pu, &eq_post).find_equilibrium()?;
        let origin = post_ode.origin;
        let eq_fault = equivalents(params, &pu, fault)?;
        let fault_ode = ode_params(&pu, &eq_fault).with_origin(origin);
        Ok(Self {
            params: params.clone(),
            pu,
            post: Network {
                config: NetworkConfig::Normal,
                equivalents: eq_post,
                ode: post_ode,
            },
            fault: Network {
                config: fault,
                equivalents: eq_fault,
                ode: fault_ode,
            },
        })
    }

    /// Fault with the parameter set's own `rf`.
    pub fn with_default_fault(params: &SystemParams) -> Result<Self> {
        Self::new(params, NetworkConfig::Faulted { rf_ohm: params.rf })
    }

    pub fn origin(&self) -> Origin {
        self.post.ode.origin
    }

    pub fn fault_on_jump(&self, s: &State) -> State {
        pll_jump(s, &self.post.equivalents, &self.fault.equivalents, &self.pu, self.origin())
    }

    pub fn clearing_jump(&self, s: &State) -> State {
        pll_jump(s, &self.fault.equivalents, &self.post.equivalents, &self.pu, self.origin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn impedance_base_and_load_resistance() {
        let p = SystemParams::reference();
        assert!((p.impedance_base() - 529.0).abs() < 1e-9);
        let pu = p.to_per_unit().unwrap();
        let zb = 529.0;
        let r = Complex64::new(75.571 / zb, 0.0);
        let x = Complex64::new(0.0, 120.0 * PI * 7.016 / zb);
        assert!((pu.zl - r * x / (r + x)).norm() < 1e-15);
    }

    #[test]
    fn non_positive_base_is_config_error() {
        let mut p = SystemParams::reference();
        p.base_power = 0.0;
        assert!(matches!(p.to_per_unit(), Err(Error::Config(_))));
    }

    #[test]
    fn equivalents_defining_relations() {
        let p = SystemParams::reference();
        let pu = p.to_per_unit().unwrap();
        for cfg in [NetworkConfig::Normal, NetworkConfig::Faulted { rf_ohm: 1.0 }] {
            let eq = equivalents(&p, &pu, cfg).unwrap();
            let zl = cfg.effective_load(&p, &pu);
            assert!((eq.zeq1 * (pu.zg + zl) - 1.0).norm() < 1e-14);
            assert!((eq.zeq3 - (zl * pu.zg / (zl + pu.zg) + pu.zc)).norm() < 1e-14);
        }
        let normal = equivalents(&p, &pu, NetworkConfig::Normal).unwrap();
        let huge = equivalents(&p, &pu, NetworkConfig::Faulted { rf_ohm: 1e18 }).unwrap();
        assert!((normal.zeq2 - huge.zeq2).norm() < 1e-12);
    }

    #[test]
    fn damping_ratio_independent_of_fault() {
        let p = SystemParams::reference();
        let pu = p.to_per_unit().unwrap();
        for cfg in [NetworkConfig::Normal, NetworkConfig::Faulted { rf_ohm: 10.0 }] {
            let ode = ode_params(&pu, &equivalents(&p, &pu, cfg).unwrap());
            assert_eq!(ode.d_g, 1.0);
            assert!(ode.p_el_c >= 0.0);
        }
    }

    #[test]
    fn tabulated_swing_coefficients() {
        let p = SystemParams::reference();
        let pu = p.to_per_unit().unwrap();
        let cases = [
            (NetworkConfig::Normal, -19.9608, 25.6091),
            (NetworkConfig::Faulted { rf_ohm: 1.0 }, 3.6105, 0.6906),
            (NetworkConfig::Faulted { rf_ohm: 10.0 }, -13.2370, 5.9128),
        ];
        for (cfg, pmag, pelg) in cases {
            let ode = ode_params(&pu, &equivalents(&p, &pu, cfg).unwrap());
            assert!(rel(ode.p_ma_g, pmag) < 0.01, "{cfg:?}: {}", ode.p_ma_g);
            assert!(rel(ode.p_el_g, pelg) < 0.01, "{cfg:?}: {}", ode.p_el_g);
        }
    }

    #[test]
    fn equilibrium_is_hurwitz_and_at_origin() {
        let sys = GflcSystem::with_default_fault(&SystemParams::reference()).unwrap();
        let r = sys.post.rhs(&State::ORIGIN);
        assert!(r.norm_inf() < 1e-9, "{r:?}");
        assert!(max_real_eigenvalue(&sys.post.ode.jacobian(&State::ORIGIN)) < 0.0);
    }

    #[test]
    fn zero_transfer_equilibrium() {
        // No converter current and no net mechanical power: the sine argument
        // of the converter equation vanishes at the equilibrium.
        let mut p = SystemParams::reference();
        p.ic = 0.0;
        let pu = p.to_per_unit().unwrap();
        let eq = equivalents(&p, &pu, NetworkConfig::Normal).unwrap();
        let mut ode = ode_params(&pu, &eq);
        ode.p_ma_g = 0.0;
        ode.p_ma_c = 0.0;
        let sep = ode.find_equilibrium().unwrap();
        let arg = wrap_angle(sep.origin.delta_sep + sep.phi - sep.theta2);
        assert!(arg.abs() < 1e-9, "{arg}");
        assert!(sep.origin.omega_g_sep.abs() < 1e-9);
    }

    #[test]
    fn acceleration_sign_at_fault_onset() {
        let p = SystemParams::reference();
        for (rf, sign) in [(1.0, 1.0), (10.0, -1.0)] {
            let sys = GflcSystem::new(&p, NetworkConfig::Faulted { rf_ohm: rf }).unwrap();
            // pre-fault equilibrium with ω_g = 0 in absolute terms
            let s = State::new(0.0, 0.0, -sys.origin().omega_g_sep);
            let d = sys.fault.rhs(&s).omega_g;
            assert!(d * sign > 0.0, "rf={rf}: {d}");
        }
    }

    #[test]
    fn identical_networks_do_not_jump() {
        let sys = GflcSystem::with_default_fault(&SystemParams::reference()).unwrap();
        let s = State::new(0.2, -0.3, 0.1);
        let eq = sys.post.equivalents;
        assert_eq!(pll_jump(&s, &eq, &eq, &sys.pu, sys.origin()), s);
    }

    #[test]
    fn jump_antisymmetry() {
        let sys = GflcSystem::with_default_fault(&SystemParams::reference()).unwrap();
        for s in [State::ORIGIN, State::new(0.7, 3.2, -0.4), State::new(-1.3, -8.0, 2.0)] {
            let a = pll_jump_delta(&s, &sys.post.equivalents, &sys.fault.equivalents, &sys.pu, sys.origin());
            let b = pll_jump_delta(&s, &sys.fault.equivalents, &sys.post.equivalents, &sys.pu, sys.origin());
            assert_eq!(a, -b);
            let back = sys.clearing_jump(&sys.fault_on_jump(&s));
            assert_eq!(back.delta, s.delta);
            assert_eq!(back.omega_g, s.omega_g);
            assert!((back.omega - s.omega).abs() <= 4.0 * f64::EPSILON * (1.0 + s.omega.abs() + a.abs()));
        }
    }

    #[test]
    fn u_cq_vanishes_without_sources() {
        let mut p = SystemParams::reference();
        p.ic = 0.0;
        p.ug = 0.0;
        let pu = p.to_per_unit().unwrap();
        let eq = equivalents(&p, &pu, NetworkConfig::Normal).unwrap();
        assert_eq!(u_cq(&State::new(0.3, 1.0, 2.0), &eq, &pu, Origin::default()), 0.0);
    }

    #[test]
    fn pll_in_steady_state_at_equilibrium() {
        // ω̇ = K_i·U_cq − ω̇_g and ω̇_g = 0 at the SEP, so U_cq = 0 there.
        let sys = GflcSystem::with_default_fault(&SystemParams::reference()).unwrap();
        let u = u_cq(&State::ORIGIN, &sys.post.equivalents, &sys.pu, sys.origin());
        assert!(u.abs() < 1e-10, "{u}");
    }

    #[test]
    fn parameter_file_round_trip_and_rejections() {
        let p = SystemParams::reference();
        assert_eq!(SystemParams::parse(&p.to_text()).unwrap(), p);
        let mut text = p.to_text();
        text.push_str("bogus = 1\n");
        assert!(SystemParams::parse(&text).is_err());
        let missing: String = p.to_text().lines().filter(|l| !l.starts_with("jg")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(SystemParams::parse(&missing), Err(Error::Config(_))));
        assert!(SystemParams::parse("sb = abc").is_err());
        let no_ratings: String = p
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("sg") && !l.starts_with("sc"))
            .map(|l| format!("{l}\n"))
            .collect();
        let q = SystemParams::parse(&no_ratings).unwrap();
        assert_eq!(q.sg, q.base_power);
    }
}
