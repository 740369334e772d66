//! Command-line front end: the full analysis pipeline, the simulation
//! oracle, parameter sweeps and the classical-energy baseline comparison.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gflc_zubov::domain::{find_c1, traditional_energy, DomainEstimate, GridSpec, SearchConfig};
use gflc_zubov::model::{GflcSystem, State, SystemParams};
use gflc_zubov::sim::{
    clearing_verdict, estimate_cct_for, oracle_cct_for, simulate, CctResult, ClearingTime,
    EstimateConfig, IntegrationConfig, OracleConfig, Verdict, VerdictConfig,
};
use gflc_zubov::zubov::{build_energy, taylor_expand, EnergyFunction, PhiFunction};
use gflc_zubov::Error;

pub mod sweep;

#[derive(Debug, Parser)]
#[command(name = "gflc", version, about = "Zubov-based transient stability analysis of a grid-following converter on a low-inertia grid")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Energy function, critical level and estimated CCT.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Also run the simulation oracle for comparison.
        #[arg(long)]
        with_oracle: bool,
    },
    /// Bisection CCT from repeated simulation.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// One row per configuration: estimated CCT, oracle CCT and error.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// `PARAM=V1,V2,...` with PARAM one of jg, dg, rf, kp_ki, ic_phi1;
        /// paired parameters take `A:B` values. Repeat for a product.
        #[arg(long = "sweep", required = true)]
        specs: Vec<String>,
    },
    /// Compare the Zubov domain with the classical energy function.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
        /// Clearing times to classify.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.237, 0.2295, 0.1])]
        clearing: Vec<f64>,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Parameter file (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Truncation order M of the energy function.
    #[arg(long, default_value_t = 16)]
    pub order: u32,
    /// Taylor truncation order of the vector field.
    #[arg(long, default_value_t = 30)]
    pub taylor_order: u32,
    /// 1, 2, 3 or six coefficients `dd,ww,gg,dw,dg,wg`.
    #[arg(long, default_value = "1", allow_hyphen_values = true)]
    pub phi: String,
    /// Oracle bracket width in seconds.
    #[arg(long, default_value_t = 1e-4)]
    pub precision: f64,
    /// Output directory for reports and CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of rays in the critical-level search.
    #[arg(long, default_value_t = 2000)]
    pub seed_count: usize,
    /// Integration step in seconds.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Configuration,
    Modeling,
    Recursion,
    Search,
    Simulation,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Configuration => 2,
            Stage::Modeling => 3,
            Stage::Recursion => 4,
            Stage::Search => 5,
            Stage::Simulation => 6,
            Stage::Output => 7,
        }
    }

    fn hint(self) -> &'static str {
        match self {
            Stage::Configuration => "check the parameter file and command-line values",
            Stage::Modeling => "the network or operating point is degenerate; check impedances and power set points",
            Stage::Recursion => "the post-fault linearization must be Hurwitz; try another phi or a lower order",
            Stage::Search => "try more rays (--seed-count) or a lower order",
            Stage::Simulation => "try a smaller --step",
            Stage::Output => "check that the output directory is writable",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Configuration => "configuration",
            Stage::Modeling => "modeling",
            Stage::Recursion => "recursion",
            Stage::Search => "search",
            Stage::Simulation => "simulation",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: Stage,
    pub message: String,
}

impl CliError {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}\nhint: {}", self.stage, self.message, self.stage.hint())
    }
}

impl std::error::Error for CliError {}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

impl<T> AtStage<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| {
            let stage = match e {
                Error::Config(_) | Error::Parse { .. } | Error::PhiNotPositiveDefinite(_) => {
                    Stage::Configuration
                }
                Error::Io(_) if stage == Stage::Output => Stage::Output,
                Error::Io(_) => Stage::Configuration,
                _ => stage,
            };
            CliError::new(stage, e.to_string())
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Default)]
struct Clock {
    timings: Vec<Timing>,
}

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

/// Everything needed to replay a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: PathBuf,
    pub params: SystemParams,
    pub phi: String,
    pub order: u32,
    pub taylor_order: u32,
    pub seed_count: usize,
    pub step: f64,
    pub precision: f64,
    pub search: SearchConfig,
    pub verdict_tolerance: f64,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<Timing>,
}

/// Result of a command: the JSON report, a short human summary and the
/// manifest.
#[derive(Debug)]
pub struct Output {
    pub report: serde_json::Value,
    pub summary: String,
    pub manifest: RunManifest,
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Analyze {
            common,
            with_oracle,
        } => analyze(common, *with_oracle),
        Command::Oracle { common } => oracle(common),
        Command::Sweep { common, specs } => sweep::run(common, specs),
        Command::Baseline { common, clearing } => baseline(common, clearing),
    }
}

pub(crate) struct Prepared {
    pub params: SystemParams,
    pub phi: PhiFunction,
}

pub(crate) fn prepare(common: &CommonArgs) -> Result<Prepared, CliError> {
    let params = SystemParams::load(&common.config).at(Stage::Configuration)?;
    let phi = PhiFunction::from_spec(&common.phi).at(Stage::Configuration)?;
    let positive = [
        ("--precision", common.precision),
        ("--step", common.step),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::new(Stage::Configuration, format!("{name} must be positive")));
        }
    }
    if common.order < 2 || common.taylor_order < 1 {
        return Err(CliError::new(
            Stage::Configuration,
            "--order must be at least 2 and --taylor-order at least 1",
        ));
    }
    if common.seed_count == 0 {
        return Err(CliError::new(Stage::Configuration, "--seed-count must be positive"));
    }
    Ok(Prepared { params, phi })
}

pub(crate) fn search_config(common: &CommonArgs, sys: &GflcSystem) -> SearchConfig {
    SearchConfig {
        n_rays: common.seed_count,
        ..SearchConfig::with_field(&sys.post.ode)
    }
}

pub(crate) fn oracle_config(common: &CommonArgs) -> OracleConfig {
    let mut c = OracleConfig {
        precision: common.precision,
        ..OracleConfig::default()
    };
    c.verdict.integration = IntegrationConfig::with_step(common.step);
    c
}

pub(crate) fn estimate_config(common: &CommonArgs) -> EstimateConfig {
    EstimateConfig {
        integration: IntegrationConfig::with_step(common.step),
        ..EstimateConfig::default()
    }
}

/// Model, energy function and critical level.
pub(crate) struct Built {
    pub system: GflcSystem,
    pub energy: std::sync::Arc<EnergyFunction>,
    pub domain: DomainEstimate,
}

fn build(common: &CommonArgs, prep: &Prepared, clock: &mut Clock) -> Result<Built, CliError> {
    let system = clock
        .time("model", || GflcSystem::with_default_fault(&prep.params))
        .at(Stage::Modeling)?;
    let energy = clock
        .time("energy-build", || {
            let field = taylor_expand(&system.post.ode, common.taylor_order);
            build_energy(&field, &prep.phi, common.order)
        })
        .at(Stage::Recursion)?;
    let energy = std::sync::Arc::new(energy);
    let search = search_config(common, &system);
    let domain = clock
        .time("c1-search", || find_c1(energy.clone(), &search))
        .at(Stage::Search)?;
    Ok(Built {
        system,
        energy,
        domain,
    })
}

fn manifest(command: &str, common: &CommonArgs, prep: &Prepared, search: SearchConfig) -> RunManifest {
    RunManifest {
        command: command.into(),
        config_path: common.config.clone(),
        params: prep.params.clone(),
        phi: prep.phi.id.clone(),
        order: common.order,
        taylor_order: common.taylor_order,
        seed_count: common.seed_count,
        step: common.step,
        precision: common.precision,
        search,
        verdict_tolerance: VerdictConfig::default().tolerance,
        outputs: Vec::new(),
        timings: Vec::new(),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::new(Stage::Output, format!("{}: {e}", path.display())))?;
    outputs.push(path);
    Ok(())
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::new(Stage::Output, format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Writes `report.json` and `manifest.json` when an output directory is set.
fn finish(
    common: &CommonArgs,
    report: serde_json::Value,
    summary: String,
    mut manifest: RunManifest,
    extra: Vec<(&str, String)>,
    clock: Clock,
) -> Result<Output, CliError> {
    manifest.timings = clock.timings;
    if let Some(dir) = &common.out {
        create_out(dir)?;
        let mut outputs = Vec::new();
        for (name, contents) in &extra {
            write_file(dir, name, contents, &mut outputs)?;
        }
        let report_text = serde_json::to_string_pretty(&report).expect("json");
        write_file(dir, "report.json", &report_text, &mut outputs)?;
        outputs.push(dir.join("manifest.json"));
        manifest.outputs = outputs;
        let manifest_text = serde_json::to_string_pretty(&manifest).expect("json");
        std::fs::write(dir.join("manifest.json"), manifest_text)
            .map_err(|e| CliError::new(Stage::Output, e.to_string()))?;
    }
    Ok(Output {
        report,
        summary,
        manifest,
    })
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub order: u32,
    pub taylor_order: u32,
    pub phi: String,
    pub c1: f64,
    pub witness: Option<State>,
    pub estimate: CctResult,
    /// `V` at the exit state.
    pub exit_value: Option<f64>,
    pub zubov_residual: f64,
    pub equilibrium_residual: f64,
    pub v2_min_eigenvalue: f64,
    pub max_condition: f64,
    pub search: gflc_zubov::domain::SearchReport,
    pub oracle: Option<CctResult>,
    pub error_pct: Option<f64>,
    pub warnings: Vec<String>,
    pub timings: Vec<Timing>,
}

pub fn analyze(common: &CommonArgs, with_oracle: bool) -> Result<Output, CliError> {
    let prep = prepare(common)?;
    let mut clock = Clock::default();
    let built = build(common, &prep, &mut clock)?;
    let est_cfg = estimate_config(common);
    let estimate = clock.time("on-fault-scan", || {
        estimate_cct_for(&built.system, &built.domain, &est_cfg)
    });
    let oracle = with_oracle.then(|| {
        clock.time("oracle", || oracle_cct_for(&built.system, &oracle_config(common)))
    });

    let mut warnings = Vec::new();
    if common.order < gflc_zubov::zubov::DEFAULT_ORDER {
        warnings.push(format!(
            "degraded accuracy: order M = {} is below {}; the domain estimate is markedly more conservative",
            common.order,
            gflc_zubov::zubov::DEFAULT_ORDER
        ));
    }
    let sr = &built.domain.search_report;
    if sr.unbounded {
        warnings.push("no V-derivative sign change found; critical level capped at 1".into());
    } else if sr.capped {
        warnings.push(format!("critical level capped at {:.6}", built.domain.c1));
    }
    if !prep.phi.poly.is_zero() && prep.phi.min_eigenvalue() <= 1e-12 {
        warnings.push(format!(
            "phi `{}` is only semidefinite; directions near its null set are excluded from the search",
            prep.phi.id
        ));
    }
    let max_condition = built.energy.conditions.iter().copied().fold(0.0, f64::max);
    if max_condition > 1e10 {
        warnings.push(format!("ill-conditioned recursion (largest condition number {max_condition:.2e})"));
    }

    let error_pct = oracle
        .as_ref()
        .filter(|o| o.value > 0.0)
        .map(|o| 100.0 * (o.value - estimate.value) / o.value);
    let report = AnalyzeReport {
        order: common.order,
        taylor_order: common.taylor_order,
        phi: prep.phi.id.clone(),
        c1: built.domain.c1,
        witness: built.domain.witness,
        exit_value: estimate.exit_state.map(|s| built.domain.value(&s)),
        estimate,
        zubov_residual: built.energy.residual_norm(),
        equilibrium_residual: built.energy.field.equilibrium_residual,
        v2_min_eigenvalue: built.energy.v2_min_eigenvalue(),
        max_condition,
        search: sr.clone(),
        error_pct,
        oracle,
        warnings,
        timings: clock.timings.clone(),
    };

    let mut summary = format!(
        "c1           {:.6}\nestimated    {:.4} s ({:?})\n",
        report.c1, report.estimate.value, report.estimate.outcome
    );
    if let Some(o) = &report.oracle {
        summary += &format!("oracle       {:.4} s\n", o.value);
    }
    if let Some(e) = report.error_pct {
        summary += &format!("error        {e:.2} %\n");
    }
    for t in &report.timings {
        summary += &format!("time {:<14} {:.3} s\n", t.stage, t.seconds);
    }
    for w in &report.warnings {
        summary += &format!("warning: {w}\n");
    }

    let mut extra = Vec::new();
    if common.out.is_some() {
        extra.push(("energy.txt", built.energy.export()));
        let ext = built.domain.ellipsoid_extent(2.0);
        let grid = GridSpec {
            delta: (-ext[0], ext[0]),
            omega: (-ext[1], ext[1]),
            n_delta: 201,
            n_omega: 201,
        };
        let slice = built.domain.slice(0.0, &grid);
        extra.push(("slice.csv", slice.to_csv()));
        extra.push(("contour.csv", slice.contour_csv()));
        let traj = simulate(
            &built.system,
            ClearingTime::At(report.estimate.value),
            gflc_zubov::sim::DEFAULT_HORIZON,
            &IntegrationConfig::with_step(common.step),
        );
        extra.push(("trajectory.csv", traj.to_csv()));
        extra.push(("events.log", traj.event_log()));
    }
    let m = manifest("analyze", common, &prep, search_config(common, &built.system));
    finish(common, to_json(&report), summary, m, extra, clock)
}

pub fn oracle(common: &CommonArgs) -> Result<Output, CliError> {
    let prep = prepare(common)?;
    let mut clock = Clock::default();
    let system = clock
        .time("model", || GflcSystem::with_default_fault(&prep.params))
        .at(Stage::Modeling)?;
    let result = clock.time("oracle", || oracle_cct_for(&system, &oracle_config(common)));
    let width = result.bracket_width();
    let summary = format!(
        "oracle CCT   {:.4} s ({:?})\nbracket      {:?} width {:?}\nprobes       {}\nmonotone     {}\n",
        result.value,
        result.outcome,
        result.bracket,
        width,
        result.probes.len(),
        result.monotone
    );
    let report = serde_json::json!({
        "cct": result.value,
        "outcome": result.outcome,
        "bracket": result.bracket,
        "bracket_width": width,
        "precision": common.precision,
        "monotone": result.monotone,
        "probes": result.probes,
        "timings": clock.timings,
    });
    let m = manifest("oracle", common, &prep, search_config(common, &system));
    finish(common, report, summary, m, Vec::new(), clock)
}

#[derive(Debug, Serialize)]
pub struct BaselineRow {
    pub clearing_time: f64,
    pub post_clear_state: State,
    pub zubov_value: f64,
    pub traditional_value: f64,
    pub traditional: Verdict,
    pub zubov: Verdict,
    pub actual: Verdict,
    /// Classical method says stable while simulation does not.
    pub radical_error: bool,
}

pub fn baseline(common: &CommonArgs, clearing: &[f64]) -> Result<Output, CliError> {
    let prep = prepare(common)?;
    if clearing.iter().any(|t| !(*t >= 0.0)) {
        return Err(CliError::new(Stage::Configuration, "clearing times must be non-negative"));
    }
    let mut clock = Clock::default();
    let built = build(common, &prep, &mut clock)?;
    let tr = clock
        .time("baseline", || traditional_energy(&built.system.post.ode))
        .at(Stage::Modeling)?;
    let integration = IntegrationConfig::with_step(common.step);
    let verdict_cfg = VerdictConfig {
        integration,
        ..VerdictConfig::default()
    };
    let as_verdict = |inside: bool| if inside { Verdict::Stable } else { Verdict::Unstable };
    let rows: Vec<BaselineRow> = clock.time("simulation", || {
        clearing
            .iter()
            .map(|&tc| {
                let traj = simulate(&built.system, ClearingTime::At(tc), tc, &integration);
                let s = traj.last_state();
                let actual = clearing_verdict(&built.system, tc, &verdict_cfg);
                let traditional = as_verdict(!traj.divergent && tr.contains(&s));
                BaselineRow {
                    clearing_time: tc,
                    post_clear_state: s,
                    zubov_value: built.domain.value(&s),
                    traditional_value: tr.value(s.delta, s.omega),
                    traditional,
                    zubov: as_verdict(!traj.divergent && built.domain.contains(&s)),
                    actual,
                    radical_error: traditional == Verdict::Stable && actual != Verdict::Stable,
                }
            })
            .collect()
    });
    let mut summary = format!(
        "c1 {:.6}  traditional level {:.4} (UEP at {:.4} rad)\n{:>8} {:>12} {:>12} {:>12}\n",
        built.domain.c1, tr.level, tr.uep, "t_clear", "traditional", "zubov", "actual"
    );
    for r in &rows {
        summary += &format!(
            "{:>8.4} {:>12} {:>12} {:>12}{}\n",
            r.clearing_time,
            verdict_str(r.traditional),
            verdict_str(r.zubov),
            verdict_str(r.actual),
            if r.radical_error { "  radical error" } else { "" }
        );
    }
    let report = serde_json::json!({
        "c1": built.domain.c1,
        "traditional": tr,
        "rows": rows,
        "timings": clock.timings,
    });
    let m = manifest("baseline", common, &prep, search_config(common, &built.system));
    finish(common, report, summary, m, Vec::new(), clock)
}

pub(crate) fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Stable => "stable",
        Verdict::Unstable => "unstable",
        Verdict::Indeterminate => "indeterminate",
    }
}
