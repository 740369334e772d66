//! Cartesian parameter sweeps.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use gflc_zubov::domain::find_c1;
use gflc_zubov::model::{GflcSystem, SystemParams};
use gflc_zubov::sim::{estimate_cct_for, oracle_cct_for};
use gflc_zubov::zubov::{build_energy, taylor_expand, PhiFunction};

use crate::{
    estimate_config, finish, manifest, oracle_config, prepare, search_config, Clock, CliError,
    CommonArgs, Stage,
};

/// One `--sweep` argument: parameter keys joined by `_`, and for each point
/// one value per key joined by `:`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub keys: Vec<String>,
    pub points: Vec<Vec<f64>>,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::new(Stage::Configuration, format!("sweep `{text}`: {m}"));
        let (lhs, rhs) = text
            .split_once('=')
            .ok_or_else(|| bad("expected PARAM=VALUES".into()))?;
        let reference = SystemParams::reference();
        let keys: Vec<String> = lhs.trim().split('_').map(|k| k.trim().to_string()).collect();
        for k in &keys {
            if reference.get(k).is_none() {
                return Err(bad(format!("unknown parameter `{k}`")));
            }
        }
        let mut points = Vec::new();
        for item in rhs.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let values = item
                .split(':')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{v}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != keys.len() {
                return Err(bad(format!(
                    "`{item}` has {} values for {} parameters",
                    values.len(),
                    keys.len()
                )));
            }
            points.push(values);
        }
        Ok(Self { keys, points })
    }
}

/// All combinations, first spec varying slowest.
pub fn product(specs: &[SweepSpec]) -> Vec<Vec<(String, f64)>> {
    let mut rows: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for spec in specs {
        let mut next = Vec::with_capacity(rows.len() * spec.points.len());
        for row in &rows {
            for point in &spec.points {
                let mut r = row.clone();
                r.extend(spec.keys.iter().cloned().zip(point.iter().copied()));
                next.push(r);
            }
        }
        rows = next;
    }
    rows
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub params: String,
    pub c1: Option<f64>,
    pub estimated_cct: Option<f64>,
    pub oracle_cct: Option<f64>,
    pub error_pct: Option<f64>,
    pub conservative: Option<bool>,
    pub error: Option<String>,
}

pub const CSV_HEADER: &str = "params,c1,estimated_cct,oracle_cct,error_pct,conservative,error";

pub fn to_csv(rows: &[SweepRow]) -> String {
    fn opt<T: ToString>(v: &Option<T>) -> String {
        v.as_ref().map(ToString::to_string).unwrap_or_default()
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace('"', "'");
        out += &format!(
            "\"{}\",{},{},{},{},{},\"{}\"\n",
            r.params,
            opt(&r.c1),
            opt(&r.estimated_cct),
            opt(&r.oracle_cct),
            opt(&r.error_pct),
            opt(&r.conservative),
            err
        );
    }
    out
}

fn label(assign: &[(String, f64)]) -> String {
    assign
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn run_row(common: &CommonArgs, base: &SystemParams, phi: &PhiFunction, assign: &[(String, f64)]) -> SweepRow {
    let mut row = SweepRow {
        params: label(assign),
        c1: None,
        estimated_cct: None,
        oracle_cct: None,
        error_pct: None,
        conservative: None,
        error: None,
    };
    let result = (|| -> Result<(), CliError> {
        let mut params = base.clone();
        for (k, v) in assign {
            params
                .set(k, *v)
                .map_err(|e| CliError::new(Stage::Configuration, e.to_string()))?;
        }
        params
            .validate()
            .map_err(|e| CliError::new(Stage::Configuration, e.to_string()))?;
        let system = GflcSystem::with_default_fault(&params)
            .map_err(|e| CliError::new(Stage::Modeling, e.to_string()))?;
        let field = taylor_expand(&system.post.ode, common.taylor_order);
        let energy = build_energy(&field, phi, common.order)
            .map_err(|e| CliError::new(Stage::Recursion, e.to_string()))?;
        let domain = find_c1(Arc::new(energy), &search_config(common, &system))
            .map_err(|e| CliError::new(Stage::Search, e.to_string()))?;
        row.c1 = Some(domain.c1);
        let est = estimate_cct_for(&system, &domain, &estimate_config(common)).value;
        row.estimated_cct = Some(est);
        let oracle = oracle_cct_for(&system, &oracle_config(common)).value;
        row.oracle_cct = Some(oracle);
        if oracle > 0.0 {
            row.error_pct = Some(100.0 * (oracle - est) / oracle);
        }
        row.conservative = Some(est <= oracle);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(format!("{}: {}", e.stage, e.message));
    }
    row
}

pub fn run(common: &CommonArgs, specs: &[String]) -> Result<crate::Output, CliError> {
    let prep = prepare(common)?;
    let specs = specs
        .iter()
        .map(|s| SweepSpec::parse(s))
        .collect::<Result<Vec<_>, _>>()?;
    let combos = product(&specs);
    let mut clock = Clock::default();
    let rows: Vec<SweepRow> = clock.time("sweep", || {
        combos
            .par_iter()
            .map(|a| run_row(common, &prep.params, &prep.phi, a))
            .collect()
    });
    let csv = to_csv(&rows);
    let report = serde_json::json!({ "rows": rows, "timings": clock.timings });
    let system = GflcSystem::with_default_fault(&prep.params)
        .map_err(|e| CliError::new(Stage::Modeling, e.to_string()))?;
    let m = manifest("sweep", common, &prep, search_config(common, &system));
    finish(common, report, csv.clone(), m, vec![("sweep.csv", csv)], clock)
}
