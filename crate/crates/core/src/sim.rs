//! Fixed-step simulation of fault scenarios, stability verdicts, the
//! bisection CCT oracle and the energy-function CCT estimate.
//!
//! All states are in shifted coordinates: the post-fault SEP, which is also
//! the pre-fault operating point, sits at the origin.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::Serialize;

use crate::domain::DomainEstimate;
use crate::error::Result;
use crate::model::{GflcSystem, NetworkConfig, State, SystemParams};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_HORIZON: f64 = 5.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DELTA_BOUND: f64 = 10.0 * PI;
pub const OMEGA_BOUND: f64 = 1e4;
/// Trailing window checked by [`classify`].
pub const SETTLE_WINDOW: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegrationConfig {
    pub step: f64,
    pub delta_bound: f64,
    pub omega_bound: f64,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            delta_bound: DELTA_BOUND,
            omega_bound: OMEGA_BOUND,
        }
    }
}

impl IntegrationConfig {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    fn diverged(&self, s: &State) -> bool {
        !s.is_finite() || s.delta.abs() > self.delta_bound || s.omega.abs() > self.omega_bound
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefault,
    Onfault,
    Postfault,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Prefault => "prefault",
            Phase::Onfault => "onfault",
            Phase::Postfault => "postfault",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Occurrence,
    Clearing,
}

/// PLL frequency step at a switching instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub kind: EventKind,
    pub time: f64,
    /// Sample index of the post-jump state.
    pub index: usize,
    pub omega_before: f64,
    pub omega_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub phases: Vec<Phase>,
    pub events: Vec<JumpEvent>,
    pub divergent: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn last_state(&self) -> State {
        self.states.last().copied().unwrap_or(State::ORIGIN)
    }

    fn push(&mut self, t: f64, s: State, phase: Phase) {
        self.times.push(t);
        self.states.push(s);
        self.phases.push(phase);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,delta,omega,omega_g,phase\n");
        for ((t, s), p) in self.times.iter().zip(&self.states).zip(&self.phases) {
            let _ = writeln!(
                out,
                "{t:.6},{:.12e},{:.12e},{:.12e},{}",
                s.delta,
                s.omega,
                s.omega_g,
                p.as_str()
            );
        }
        out
    }

    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let kind = match e.kind {
                EventKind::Occurrence => "fault-on",
                EventKind::Clearing => "clearing",
            };
            let _ = writeln!(
                out,
                "{kind} t={:.6} omega_before={:.9e} omega_after={:.9e}",
                e.time, e.omega_before, e.omega_after
            );
        }
        out
    }
}

pub fn rk4_step(f: impl Fn(&State) -> State, s: &State, h: f64) -> State {
    let k1 = f(s);
    let k2 = f(&(*s + (0.5 * h) * k1));
    let k3 = f(&(*s + (0.5 * h) * k2));
    let k4 = f(&(*s + h * k3));
    *s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Classical RK4 from `t0` over `duration`. The last step is shortened so
/// the segment ends exactly at `t0 + duration`. Stops early, flagged
/// divergent, once the state leaves the divergence bounds.
pub fn integrate_from(
    f: impl Fn(&State) -> State,
    initial: State,
    t0: f64,
    duration: f64,
    config: &IntegrationConfig,
    phase: Phase,
) -> Trajectory {
    let mut traj = Trajectory::default();
    traj.push(t0, initial, phase);
    if config.diverged(&initial) {
        traj.divergent = true;
        return traj;
    }
    let h = config.step;
    let n_full = (duration / h * (1.0 + 1e-12)).floor() as usize;
    let remainder = duration - n_full as f64 * h;
    let mut s = initial;
    let steps = (0..n_full)
        .map(|k| (t0 + (k + 1) as f64 * h, h))
        .chain((remainder > 1e-12 * h.max(duration)).then_some((t0 + duration, remainder)));
    for (t, dt) in steps {
        s = rk4_step(&f, &s, dt);
        traj.push(t, s, phase);
        if config.diverged(&s) {
            traj.divergent = true;
            break;
        }
    }
    traj
}

pub fn integrate(
    f: impl Fn(&State) -> State,
    initial: State,
    config: &IntegrationConfig,
    horizon: f64,
) -> Trajectory {
    integrate_from(f, initial, 0.0, horizon, config, Phase::Postfault)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "seconds", rename_all = "snake_case")]
pub enum ClearingTime {
    At(f64),
    Sustained,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub params: SystemParams,
    pub fault_config: NetworkConfig,
    pub clearing_time: ClearingTime,
    pub horizon: f64,
    pub step: f64,
}

impl Scenario {
    pub fn new(params: SystemParams, clearing: f64) -> Self {
        let fault_config = NetworkConfig::Faulted { rf_ohm: params.rf };
        Self {
            params,
            fault_config,
            clearing_time: ClearingTime::At(clearing),
            horizon: DEFAULT_HORIZON,
            step: DEFAULT_STEP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.step > 0.0) {
            return Err(Error::Config("step must be positive".into()));
        }
        if let ClearingTime::At(tc) = self.clearing_time {
            if !(tc >= 0.0) || tc > self.horizon {
                return Err(Error::Config(format!(
                    "clearing time {tc} must lie in [0, horizon = {}]",
                    self.horizon
                )));
            }
        }
        Ok(())
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let system = GflcSystem::new(&scenario.params, scenario.fault_config)?;
    let config = IntegrationConfig::with_step(scenario.step);
    Ok(simulate(&system, scenario.clearing_time, scenario.horizon, &config))
}

/// Pre-fault operating point, fault-on jump, on-fault segment, clearing jump
/// and post-fault segment up to `horizon`.
pub fn simulate(
    system: &GflcSystem,
    clearing: ClearingTime,
    horizon: f64,
    config: &IntegrationConfig,
) -> Trajectory {
    let mut traj = Trajectory::default();
    traj.push(0.0, State::ORIGIN, Phase::Prefault);
    let on = system.fault_on_jump(&State::ORIGIN);
    traj.events.push(JumpEvent {
        kind: EventKind::Occurrence,
        time: 0.0,
        index: 1,
        omega_before: 0.0,
        omega_after: on.omega,
    });
    let tc = match clearing {
        ClearingTime::At(tc) => tc.min(horizon),
        ClearingTime::Sustained => horizon,
    };
    let fault = integrate_from(|s| system.fault.rhs(s), on, 0.0, tc, config, Phase::Onfault);
    let divergent = fault.divergent;
    traj.append_keeping_first(fault);
    if divergent || matches!(clearing, ClearingTime::Sustained) {
        return traj;
    }
    let before = traj.last_state();
    let after = system.clearing_jump(&before);
    traj.events.push(JumpEvent {
        kind: EventKind::Clearing,
        time: tc,
        index: traj.len(),
        omega_before: before.omega,
        omega_after: after.omega,
    });
    let post = integrate_from(
        |s| system.post.rhs(s),
        after,
        tc,
        horizon - tc,
        config,
        Phase::Postfault,
    );
    traj.append_keeping_first(post);
    traj
}

impl Trajectory {
    /// Appends a segment whose first sample is the post-jump state at the
    /// same time as the current last sample.
    fn append_keeping_first(&mut self, other: Trajectory) {
        let offset = self.len();
        self.times.extend(other.times);
        self.states.extend(other.states);
        self.phases.extend(other.phases);
        self.events.extend(other.events.into_iter().map(|e| JumpEvent {
            index: e.index + offset,
            ..e
        }));
        self.divergent |= other.divergent;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Indeterminate,
}

/// Stable iff the last [`SETTLE_WINDOW`] seconds stay within `tolerance`
/// of the SEP on every component. Divergence, or settling at an angle
/// `2kπ` away from the SEP (a pole slip), is unstable.
pub fn classify(traj: &Trajectory, tolerance: f64) -> Verdict {
    if traj.divergent {
        return Verdict::Unstable;
    }
    let Some(&t_end) = traj.times.last() else {
        return Verdict::Indeterminate;
    };
    let window: Vec<&State> = traj
        .times
        .iter()
        .zip(&traj.states)
        .rev()
        .take_while(|(t, _)| **t >= t_end - SETTLE_WINDOW)
        .map(|(_, s)| s)
        .collect();
    if t_end < SETTLE_WINDOW {
        return Verdict::Indeterminate;
    }
    let within = |k: f64| {
        window.iter().all(|s| {
            (s.delta - 2.0 * PI * k).abs() <= tolerance
                && s.omega.abs() <= tolerance
                && s.omega_g.abs() <= tolerance
        })
    };
    if within(0.0) {
        return Verdict::Stable;
    }
    let k = (traj.last_state().delta / (2.0 * PI)).round();
    if k != 0.0 && within(k) {
        return Verdict::Unstable;
    }
    Verdict::Indeterminate
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerdictConfig {
    pub integration: IntegrationConfig,
    pub horizon: f64,
    /// Indeterminate runs are continued, doubling the horizon, up to this.
    pub max_horizon: f64,
    pub tolerance: f64,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        Self {
            integration: IntegrationConfig::default(),
            horizon: DEFAULT_HORIZON,
            max_horizon: 40.0,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Verdict for one clearing time. Only the tail needed for classification
/// is retained while the horizon is extended.
pub fn clearing_verdict(system: &GflcSystem, clearing: f64, config: &VerdictConfig) -> Verdict {
    let mut traj = simulate(
        system,
        ClearingTime::At(clearing),
        config.horizon.max(clearing + SETTLE_WINDOW),
        &config.integration,
    );
    let mut horizon = traj.last_time();
    loop {
        let verdict = classify(&traj, config.tolerance);
        if verdict != Verdict::Indeterminate || horizon >= config.max_horizon {
            return verdict;
        }
        let next = (2.0 * horizon).min(config.max_horizon);
        let more = integrate_from(
            |s| system.post.rhs(s),
            traj.last_state(),
            horizon,
            next - horizon,
            &config.integration,
            Phase::Postfault,
        );
        traj = more;
        if traj.last_time() - horizon < SETTLE_WINDOW && !traj.divergent {
            return Verdict::Indeterminate;
        }
        horizon = next;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CctMethod {
    ZubovEstimate,
    SimulationOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CctOutcome {
    Finite,
    /// Unstable (oracle) or outside the domain (estimate) from the start.
    Zero,
    /// Stable up to the largest clearing time examined.
    AlwaysStable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub clearing_time: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CctResult {
    pub value: f64,
    pub method: CctMethod,
    pub outcome: CctOutcome,
    /// Candidate post-clear state at the returned time (estimate only).
    pub exit_state: Option<State>,
    /// `(stable, unstable)` clearing times (oracle only).
    pub bracket: Option<(f64, f64)>,
    pub probes: Vec<Probe>,
    /// False when some probe was stable above an unstable probe.
    pub monotone: bool,
}

impl CctResult {
    pub fn bracket_width(&self) -> Option<f64> {
        self.bracket.map(|(a, b)| b - a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleConfig {
    pub precision: f64,
    pub verdict: VerdictConfig,
    /// Forward scan spacing used to find the first unstable clearing time.
    pub scan_step: f64,
    pub initial_upper: f64,
    pub max_clearing: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            precision: 1e-4,
            verdict: VerdictConfig::default(),
            scan_step: 0.01,
            initial_upper: 0.4,
            max_clearing: 5.0,
        }
    }
}

pub fn oracle_cct(
    params: &SystemParams,
    fault: NetworkConfig,
    config: &OracleConfig,
) -> Result<CctResult> {
    let system = GflcSystem::new(params, fault)?;
    Ok(oracle_cct_for(&system, config))
}

/// Bisection CCT. A forward scan over `(0, initial_upper]` at `scan_step`
/// (continued at five times that spacing up to `max_clearing`) locates the
/// first unstable clearing time; bisection then narrows the bracket to
/// `precision`. The scan keeps the oracle on the first stability boundary
/// when the stable set of clearing times is not an interval.
pub fn oracle_cct_for(system: &GflcSystem, config: &OracleConfig) -> CctResult {
    let mut probes = Vec::new();
    let probe = |tc: f64, probes: &mut Vec<Probe>| {
        let verdict = clearing_verdict(system, tc, &config.verdict);
        probes.push(Probe {
            clearing_time: tc,
            verdict,
        });
        verdict
    };
    let is_stable = |v: Verdict| v == Verdict::Stable;

    let mut lo = 0.0;
    let mut hi = None;
    let mut k = 1;
    loop {
        let tc = if (k as f64) * config.scan_step <= config.initial_upper + 1e-12 {
            k as f64 * config.scan_step
        } else {
            let n_fine = (config.initial_upper / config.scan_step + 1e-9).floor();
            (n_fine + (k as f64 - n_fine) * 5.0) * config.scan_step
        };
        if tc > config.max_clearing + 1e-12 {
            break;
        }
        if is_stable(probe(tc, &mut probes)) {
            lo = tc;
        } else {
            hi = Some(tc);
            break;
        }
        k += 1;
    }
    let Some(mut hi) = hi else {
        return CctResult {
            value: lo,
            method: CctMethod::SimulationOracle,
            outcome: CctOutcome::AlwaysStable,
            exit_state: None,
            bracket: Some((lo, f64::INFINITY)),
            monotone: monotone(&probes),
            probes,
        };
    };
    while hi - lo > config.precision {
        let mid = 0.5 * (lo + hi);
        if is_stable(probe(mid, &mut probes)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let outcome = if lo == 0.0 && hi <= config.precision {
        CctOutcome::Zero
    } else {
        CctOutcome::Finite
    };
    CctResult {
        value: 0.5 * (lo + hi),
        method: CctMethod::SimulationOracle,
        outcome,
        exit_state: None,
        bracket: Some((lo, hi)),
        monotone: monotone(&probes),
        probes,
    }
}

fn monotone(probes: &[Probe]) -> bool {
    let first_unstable = probes
        .iter()
        .filter(|p| p.verdict != Verdict::Stable)
        .map(|p| p.clearing_time)
        .fold(f64::INFINITY, f64::min);
    probes
        .iter()
        .all(|p| p.verdict != Verdict::Stable || p.clearing_time < first_unstable)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateConfig {
    pub integration: IntegrationConfig,
    /// Scan limit; reaching it inside the domain is "always stable".
    pub max_time: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            integration: IntegrationConfig::default(),
            max_time: DEFAULT_HORIZON,
        }
    }
}

pub fn estimate_cct(
    params: &SystemParams,
    fault: NetworkConfig,
    domain: &DomainEstimate,
    config: &EstimateConfig,
) -> Result<CctResult> {
    let system = GflcSystem::new(params, fault)?;
    Ok(estimate_cct_for(&system, domain, config))
}

/// Integrates the on-fault system only. At every sample the state that
/// clearing would produce is tested against the domain; the last time it is
/// inside is the estimate.
pub fn estimate_cct_for(
    system: &GflcSystem,
    domain: &DomainEstimate,
    config: &EstimateConfig,
) -> CctResult {
    let h = config.integration.step;
    let on = system.fault_on_jump(&State::ORIGIN);
    let mut s = on;
    let mut last_inside: Option<(f64, State)> = None;
    let n = (config.max_time / h).round() as usize;
    let mut outcome = CctOutcome::AlwaysStable;
    for k in 0..=n {
        let t = k as f64 * h;
        let candidate = system.clearing_jump(&s);
        if !domain.contains(&candidate) {
            outcome = if last_inside.is_none() {
                CctOutcome::Zero
            } else {
                CctOutcome::Finite
            };
            break;
        }
        last_inside = Some((t, candidate));
        if k < n {
            s = rk4_step(|x| system.fault.rhs(x), &s, h);
            if config.integration.diverged(&s) {
                outcome = CctOutcome::Finite;
                break;
            }
        }
    }
    let (value, exit) = last_inside.map_or((0.0, None), |(t, c)| (t, Some(c)));
    CctResult {
        value,
        method: CctMethod::ZubovEstimate,
        outcome,
        exit_state: exit,
        bracket: None,
        probes: Vec::new(),
        monotone: true,
    }
}

/// Observed convergence order from three step sizes `h, h/2, h/4`.
pub fn observed_order(
    f: impl Fn(&State) -> State + Copy,
    initial: State,
    duration: f64,
    h: f64,
) -> f64 {
    let end = |step: f64| {
        integrate(f, initial, &IntegrationConfig::with_step(step), duration).last_state()
    };
    let (a, b, c) = (end(h), end(h / 2.0), end(h / 4.0));
    ((a - b).norm_inf() / (b - c).norm_inf()).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> GflcSystem {
        GflcSystem::with_default_fault(&SystemParams::reference()).unwrap()
    }

    #[test]
    fn zero_field_gives_constant_trajectory() {
        let s0 = State::new(0.3, -1.0, 2.0);
        let traj = integrate(|_| State::ORIGIN, s0, &IntegrationConfig::with_step(0.01), 1.0);
        assert_eq!(traj.len(), 101);
        assert!(traj.states.iter().all(|s| *s == s0));
        assert!(!traj.divergent);
    }

    #[test]
    fn segment_ends_exactly_on_duration() {
        let traj = integrate(|_| State::ORIGIN, State::ORIGIN, &IntegrationConfig::with_step(0.03), 0.1);
        assert_eq!(traj.last_time(), 0.1);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn divergence_stops_integration() {
        let traj = integrate(
            |_| State::new(100.0, 0.0, 0.0),
            State::ORIGIN,
            &IntegrationConfig::with_step(0.01),
            5.0,
        );
        assert!(traj.divergent);
        assert!(traj.last_time() < 0.5);
        assert_eq!(classify(&traj, 1e-3), Verdict::Unstable);
    }

    #[test]
    fn rk4_order_on_fault_system() {
        let sys = reference();
        let on = sys.fault_on_jump(&State::ORIGIN);
        let order = observed_order(|s| sys.fault.rhs(s), on, 0.2, 0.01);
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn zero_clearing_time_stays_at_equilibrium() {
        let sys = reference();
        let traj = simulate(&sys, ClearingTime::At(0.0), 1.0, &IntegrationConfig::default());
        assert_eq!(traj.events.len(), 2);
        let clear = traj.events[1].index;
        assert!(traj.states[clear..].iter().all(|s| s.norm_inf() < 1e-12));
        assert_eq!(classify(&traj, 1e-3), Verdict::Stable);
    }

    #[test]
    fn clearing_event_is_a_pure_omega_jump() {
        let sys = reference();
        let traj = simulate(&sys, ClearingTime::At(0.1), 0.3, &IntegrationConfig::default());
        let e = traj.events.iter().find(|e| e.kind == EventKind::Clearing).unwrap();
        let (b, a) = (traj.states[e.index - 1], traj.states[e.index]);
        assert_eq!(traj.times[e.index - 1], traj.times[e.index]);
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.omega_g, b.omega_g);
        assert_eq!(a.omega - b.omega, e.omega_after - e.omega_before);
        assert_eq!(traj.phases[e.index - 1], Phase::Onfault);
        assert_eq!(traj.phases[e.index], Phase::Postfault);
    }

    #[test]
    fn verdicts_around_reference_cct() {
        let sys = reference();
        let cfg = VerdictConfig::default();
        assert_eq!(clearing_verdict(&sys, 0.23, &cfg), Verdict::Stable);
        assert_eq!(clearing_verdict(&sys, 0.24, &cfg), Verdict::Unstable);
    }

    #[test]
    fn csv_header_and_rows() {
        let sys = reference();
        let traj = simulate(&sys, ClearingTime::At(0.001), 0.002, &IntegrationConfig::default());
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,delta,omega,omega_g,phase"));
        assert_eq!(lines.count(), traj.len());
        assert_eq!(traj.event_log().lines().count(), 2);
    }

    #[test]
    fn monotonicity_flag() {
        let p = |t, v| Probe {
            clearing_time: t,
            verdict: v,
        };
        assert!(monotone(&[p(0.1, Verdict::Stable), p(0.2, Verdict::Unstable)]));
        assert!(!monotone(&[p(0.2, Verdict::Unstable), p(0.3, Verdict::Stable)]));
    }

    #[test]
    fn scenario_rejects_bad_step_and_clearing() {
        let mut s = Scenario::new(SystemParams::reference(), 0.1);
        s.step = 0.0;
        assert!(run_scenario(&s).is_err());
        let mut s = Scenario::new(SystemParams::reference(), 6.0);
        s.horizon = 5.0;
        assert!(run_scenario(&s).is_err());
    }
}
