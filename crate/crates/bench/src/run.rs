//! Per-seed pipeline, method dispatch and result files.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use spc_core::dynamics::default_param_box;
use spc_core::identification::{
    estimate_disturbances, fit_tpc, prediction_mse, theta_emp_from_solves, training_scenarios, Split,
};
use spc_core::surrogate::{run_spc, run_updated_spc, RunRecord, SurrogateConfig, Variant};
use spc_core::{Dataset, ParamBox, ScenarioSet, SharedModel};

use crate::baselines::{run_baseline_cwreg, run_baseline_diffctrl};
use crate::config::{BenchConfig, Method};
use crate::data::generate_dataset;
use crate::error::{BenchError, Result};
use crate::mpc::{closed_loop_rollout, Episode};
use crate::reference::{generate_reference, Reference};
use crate::report::{summarize, Summary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub seed: u64,
    pub rmse: f64,
    pub closed_loop_cost: f64,
    pub control_effort: f64,
    pub prediction_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: Method,
    pub seed: u64,
    pub error: String,
}

/// What a method produced besides its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDetail {
    pub method: Method,
    pub seed: u64,
    pub theta: Vec<f64>,
    /// Train-split prediction MSE, used to confirm that TPC minimizes it.
    pub train_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

/// Everything shared by the methods of one seed.
pub struct SeedContext {
    pub seed: u64,
    pub data: Dataset,
    pub model: SharedModel,
    pub set: ScenarioSet,
    pub bx: ParamBox,
    pub theta_tpc: Vec<f64>,
    pub theta_emp: Vec<f64>,
}

pub fn prepare_seed(cfg: &BenchConfig, seed: u64) -> Result<SeedContext> {
    let data = generate_dataset(cfg, seed)?;
    let model: SharedModel = Arc::new(cfg.truth()?);
    let bx = default_param_box::<f64>(&cfg.model)?;
    let costs = cfg.costs.matrices(model.state_dim(), model.control_dim())?;
    let tpc = fit_tpc(&data, model.as_ref(), &bx, &cfg.surrogate.fit)?;
    let residuals = estimate_disturbances(&data, model.as_ref(), &tpc.theta)?;
    let set = training_scenarios(&data, &residuals, model.clone(), costs)?;
    let solves = set.solve_all(&tpc.theta, &cfg.surrogate.solver, None)?;
    let emp = theta_emp_from_solves(&set, &tpc.theta, &solves, &bx, &cfg.surrogate.fit)?;
    Ok(SeedContext {
        seed,
        data,
        model,
        set,
        bx,
        theta_tpc: tpc.theta,
        theta_emp: emp.theta,
    })
}

pub struct MethodOutcome {
    pub row: MetricsRow,
    pub detail: MethodDetail,
    pub episode: Episode,
    pub run: Option<RunRecord>,
}

fn evaluate(cfg: &BenchConfig, ctx: &SeedContext, reference: &Reference, method: Method, theta: &[f64]) -> Result<(MetricsRow, MethodDetail, Episode)> {
    let truth = cfg.truth()?;
    let episode = closed_loop_rollout(
        &truth,
        &cfg.theta_true(),
        |k| truth.wind_disturbance::<f64>(k),
        ctx.model.as_ref(),
        theta,
        reference,
        ctx.set.costs(),
        cfg.horizon,
    )?;
    let model = ctx.model.as_ref();
    let row = MetricsRow {
        method,
        seed: ctx.seed,
        rmse: episode.metrics.rmse,
        closed_loop_cost: episode.metrics.cost,
        control_effort: episode.metrics.effort,
        prediction_mse: prediction_mse(&ctx.data, Split::Test, model, theta)?,
    };
    let detail = MethodDetail {
        method,
        seed: ctx.seed,
        theta: theta.to_vec(),
        train_mse: prediction_mse(&ctx.data, Split::Train, model, theta)?,
        lambda: None,
        final_loss: None,
    };
    Ok((row, detail, episode))
}

fn spc_config(cfg: &BenchConfig, variant: Variant) -> SurrogateConfig {
    SurrogateConfig {
        variant,
        ..cfg.surrogate.clone()
    }
}

/// Fits and evaluates one method.
///
/// A failed F-SPC or U-SPC run still returns its partial record through the
/// error path of [`run_method`]'s caller, which writes whatever was logged.
pub fn run_method(
    cfg: &BenchConfig,
    ctx: &SeedContext,
    reference: &Reference,
    method: Method,
) -> std::result::Result<MethodOutcome, (BenchError, Option<RunRecord>)> {
    let plain = |e: BenchError| (e, None);
    match method {
        Method::Tpc => {
            let (row, detail, episode) = evaluate(cfg, ctx, reference, method, &ctx.theta_tpc).map_err(plain)?;
            Ok(MethodOutcome { row, detail, episode, run: None })
        }
        Method::CwReg => {
            let mut best: Option<MethodOutcome> = None;
            for &lambda in &cfg.cwreg_lambdas {
                let fit = run_baseline_cwreg(&ctx.data, &ctx.set, &ctx.bx, lambda, &cfg.surrogate.fit).map_err(plain)?;
                let (row, mut detail, episode) = evaluate(cfg, ctx, reference, method, &fit.theta).map_err(plain)?;
                detail.lambda = Some(lambda);
                detail.final_loss = Some(fit.objective);
                if best.as_ref().is_none_or(|b| row.rmse < b.row.rmse) {
                    best = Some(MethodOutcome { row, detail, episode, run: None });
                }
            }
            best.ok_or_else(|| plain(BenchError::Config("no CW-Reg weights".into())))
        }
        Method::DiffCtrl => {
            let run = run_baseline_diffctrl(
                &ctx.set,
                &ctx.bx,
                &ctx.theta_tpc,
                &ctx.theta_tpc,
                cfg.surrogate.iterations,
                &cfg.surrogate.solver,
            )
            .map_err(plain)?;
            let (row, mut detail, episode) = evaluate(cfg, ctx, reference, method, &run.theta).map_err(plain)?;
            detail.final_loss = run.losses.last().copied();
            Ok(MethodOutcome { row, detail, episode, run: None })
        }
        Method::FSpc | Method::USpc => {
            let variant = if method == Method::FSpc { Variant::Fixed } else { Variant::Updated };
            let scfg = spc_config(cfg, variant);
            let result = match variant {
                Variant::Fixed => run_spc(&ctx.set, &ctx.bx, &ctx.theta_tpc, &ctx.theta_emp, &scfg),
                Variant::Updated => run_updated_spc(&ctx.set, &ctx.bx, &ctx.theta_tpc, &ctx.theta_emp, &scfg),
            };
            let (theta, record) = result.map_err(|f| (BenchError::Core(f.error), Some(f.record)))?;
            let evaluated = evaluate(cfg, ctx, reference, method, &theta);
            let (row, mut detail, episode) = match evaluated {
                Ok(v) => v,
                Err(e) => return Err((e, Some(record))),
            };
            detail.final_loss = record.final_row().map(|r| r.loss);
            Ok(MethodOutcome {
                row,
                detail,
                episode,
                run: Some(record),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub rows: Vec<MetricsRow>,
    pub details: Vec<MethodDetail>,
    pub failures: Vec<MethodFailure>,
    pub summary: Summary,
}

impl BenchOutcome {
    pub fn any_failed(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Runs every requested method on every seed, writing result files into
/// `cfg.output_dir`. Stage failures are recorded per method; the remaining
/// methods still run.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("trajectories"))?;
    fs::create_dir_all(out.join("runs"))?;
    let reference = generate_reference(cfg);
    let mut rows = Vec::new();
    let mut details = Vec::new();
    let mut failures = Vec::new();
    let mut timing = serde_json::Map::new();
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let ctx = match prepare_seed(cfg, seed) {
            Ok(c) => c,
            Err(e) => {
                for &method in &cfg.methods {
                    failures.push(MethodFailure {
                        method,
                        seed,
                        error: format!("seed preparation: {e}"),
                    });
                }
                continue;
            }
        };
        timing.insert(format!("prepare-{seed}"), start.elapsed().as_secs_f64().into());
        for &method in &cfg.methods {
            let start = Instant::now();
            let name = format!("{}-{seed}", method.label());
            match run_method(cfg, &ctx, &reference, method) {
                Ok(o) => {
                    write_episode(&out.join("trajectories").join(format!("{name}.csv")), &o.episode, &reference)?;
                    if let Some(run) = &o.run {
                        run.write_csv(&out.join("runs").join(format!("{name}.csv")))?;
                    }
                    rows.push(o.row);
                    details.push(o.detail);
                }
                Err((e, record)) => {
                    if let Some(run) = record {
                        run.write_csv(&out.join("runs").join(format!("{name}.csv")))?;
                    }
                    failures.push(MethodFailure {
                        method,
                        seed,
                        error: e.to_string(),
                    });
                }
            }
            timing.insert(name, start.elapsed().as_secs_f64().into());
        }
    }
    let summary = summarize(&rows, &details, &failures);
    write_metrics(&out.join("metrics.csv"), &rows)?;
    write_atomic(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    write_atomic(&out.join("timing.json"), serde_json::to_string_pretty(&timing)?.as_bytes())?;
    Ok(BenchOutcome {
        rows,
        details,
        failures,
        summary,
    })
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const METRICS_HEADER: [&str; 6] = ["method", "seed", "rmse", "closed_loop_cost", "control_effort", "prediction_mse"];

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.label().to_string(),
            r.seed.to_string(),
            fmt(r.rmse),
            fmt(r.closed_loop_cost),
            fmt(r.control_effort),
            fmt(r.prediction_mse),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != METRICS_HEADER.len() {
            return Err(BenchError::Format(format!("metrics row has {} fields", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| BenchError::Format(format!("cannot parse {:?} as a number", &rec[i])))
        };
        rows.push(MetricsRow {
            method: rec[0].parse()?,
            seed: rec[1].parse().map_err(|_| BenchError::Format(format!("bad seed {:?}", &rec[1])))?,
            rmse: num(2)?,
            closed_loop_cost: num(3)?,
            control_effort: num(4)?,
            prediction_mse: num(5)?,
        });
    }
    Ok(rows)
}

/// Columns `k, t, ref_x, ref_y, ref_z, x_0..x_5, u_0..u_2`; the final row
/// leaves the controls empty.
pub fn write_episode(path: &Path, episode: &Episode, reference: &Reference) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["k", "t", "ref_x", "ref_y", "ref_z"].iter().map(|s| s.to_string()).collect();
    let n = episode.states.first().map_or(0, Vec::len);
    let m = episode.controls.first().map_or(0, Vec::len);
    header.extend((0..n).map(|j| format!("x_{j}")));
    header.extend((0..m).map(|j| format!("u_{j}")));
    w.write_record(&header)?;
    for (k, x) in episode.states.iter().enumerate() {
        let mut rec = vec![k.to_string(), fmt(k as f64 * reference.dt)];
        rec.extend(reference.positions[k].iter().map(|&v| fmt(v)));
        rec.extend(x.iter().map(|&v| fmt(v)));
        match episode.controls.get(k) {
            Some(u) => rec.extend(u.iter().map(|&v| fmt(v))),
            None => rec.extend((0..m).map(|_| String::new())),
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}
