//! Aggregates over seeds, the misalignment ordering check and a plain-text table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::Result;
use crate::run::{read_metrics, MethodDetail, MethodFailure, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: usize,
    pub rmse: Stat,
    pub closed_loop_cost: Stat,
    pub control_effort: Stat,
    pub prediction_mse: Stat,
}

/// Orderings expected from the misalignment pattern, on mean values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub tpc_min_prediction_mse: bool,
    pub rmse_order_uspc_fspc_tpc: bool,
    /// `1 − RMSE(U-SPC)/RMSE(TPC)`.
    pub rmse_reduction: Option<f64>,
    /// `1 − cost(U-SPC)/cost(TPC)`.
    pub cost_reduction: Option<f64>,
    pub rmse_reduction_ok: bool,
    pub cost_reduction_ok: bool,
    /// The method with the lowest prediction MSE is not the one with the
    /// lowest RMSE.
    pub misalignment_witness: bool,
    pub holds: bool,
}

/// Slack for ties at rounding level, e.g. a method that stays at θ_TPC.
pub const TRAIN_MSE_RTOL: f64 = 1e-9;

pub const MIN_RMSE_REDUCTION: f64 = 0.4;
pub const MIN_COST_REDUCTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub methods: Vec<MethodSummary>,
    pub pattern: PatternReport,
    /// Train-split prediction MSE at θ_TPC is no larger than at any other
    /// method's estimate, seed by seed, up to [`TRAIN_MSE_RTOL`].
    pub tpc_train_optimal: bool,
    pub details: Vec<MethodDetail>,
    pub failures: Vec<MethodFailure>,
}

pub fn aggregate(rows: &[MetricsRow]) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    methods
        .into_iter()
        .map(|method| {
            let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == method).collect();
            let col = |f: fn(&MetricsRow) -> f64| Stat::of(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            MethodSummary {
                method,
                seeds: sel.len(),
                rmse: col(|r| r.rmse),
                closed_loop_cost: col(|r| r.closed_loop_cost),
                control_effort: col(|r| r.control_effort),
                prediction_mse: col(|r| r.prediction_mse),
            }
        })
        .collect()
}

pub fn pattern(methods: &[MethodSummary]) -> PatternReport {
    let get = |m: Method| methods.iter().find(|s| s.method == m);
    let argmin = |f: fn(&MethodSummary) -> f64| {
        methods
            .iter()
            .min_by(|a, b| f(a).total_cmp(&f(b)))
            .map(|s| s.method)
    };
    let best_mse = argmin(|s| s.prediction_mse.mean);
    let best_rmse = argmin(|s| s.rmse.mean);
    let (tpc, fspc, uspc) = (get(Method::Tpc), get(Method::FSpc), get(Method::USpc));
    let tpc_min = tpc.is_some_and(|t| methods.iter().all(|s| t.prediction_mse.mean <= s.prediction_mse.mean));
    let order = matches!((uspc, fspc, tpc), (Some(u), Some(f), Some(t)) if u.rmse.mean < f.rmse.mean && f.rmse.mean < t.rmse.mean);
    let reduction = |f: fn(&MethodSummary) -> f64| match (uspc, tpc) {
        (Some(u), Some(t)) if f(t) > 0.0 => Some(1.0 - f(u) / f(t)),
        _ => None,
    };
    let rmse_reduction = reduction(|s| s.rmse.mean);
    let cost_reduction = reduction(|s| s.closed_loop_cost.mean);
    let rmse_ok = rmse_reduction.is_some_and(|r| r >= MIN_RMSE_REDUCTION);
    let cost_ok = cost_reduction.is_some_and(|r| r >= MIN_COST_REDUCTION);
    let witness = best_mse.is_some() && best_mse != best_rmse;
    PatternReport {
        tpc_min_prediction_mse: tpc_min,
        rmse_order_uspc_fspc_tpc: order,
        rmse_reduction,
        cost_reduction,
        rmse_reduction_ok: rmse_ok,
        cost_reduction_ok: cost_ok,
        misalignment_witness: witness,
        holds: tpc_min && order && rmse_ok && cost_ok,
    }
}

pub fn summarize(rows: &[MetricsRow], details: &[MethodDetail], failures: &[MethodFailure]) -> Summary {
    let methods = aggregate(rows);
    let tpc_train_optimal = details.iter().filter(|d| d.method == Method::Tpc).all(|tpc| {
        details
            .iter()
            .filter(|d| d.seed == tpc.seed)
            .all(|d| tpc.train_mse <= d.train_mse * (1.0 + TRAIN_MSE_RTOL))
    });
    Summary {
        pattern: pattern(&methods),
        methods,
        tpc_train_optimal,
        details: details.to_vec(),
        failures: failures.to_vec(),
    }
}

pub fn format_table(methods: &[MethodSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9} {:>5}  {:>22}  {:>24}  {:>24}  {:>24}",
        "method", "seeds", "RMSE (m)", "closed-loop cost", "control effort", "prediction MSE"
    );
    for m in methods {
        let _ = writeln!(
            s,
            "{:<9} {:>5}  {:>10.4} ± {:<9.4}  {:>11.4} ± {:<10.4}  {:>11.2} ± {:<10.2}  {:>11.3e} ± {:<10.3e}",
            m.method.label(),
            m.seeds,
            m.rmse.mean,
            m.rmse.std,
            m.closed_loop_cost.mean,
            m.closed_loop_cost.std,
            m.control_effort.mean,
            m.control_effort.std,
            m.prediction_mse.mean,
            m.prediction_mse.std,
        );
    }
    s
}

pub fn format_pattern(p: &PatternReport) -> String {
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |r| format!("{:.1}%", 100.0 * r));
    format!(
        "TPC lowest prediction MSE: {}\nRMSE U-SPC < F-SPC < TPC: {}\nU-SPC RMSE reduction vs TPC: {} (need {:.0}%)\nU-SPC cost reduction vs TPC: {} (need {:.0}%)\nmisalignment witness: {}\npattern holds: {}\n",
        p.tpc_min_prediction_mse,
        p.rmse_order_uspc_fspc_tpc,
        pct(p.rmse_reduction),
        100.0 * MIN_RMSE_REDUCTION,
        pct(p.cost_reduction),
        100.0 * MIN_COST_REDUCTION,
        p.misalignment_witness,
        p.holds,
    )
}

/// Recomputes the aggregate from `metrics.csv` in `dir` and renders it.
pub fn report_dir(dir: &Path) -> Result<String> {
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    let methods = aggregate(&rows);
    let mut out = format_table(&methods);
    out.push('\n');
    out.push_str(&format_pattern(&pattern(&methods)));
    let summary_path = dir.join("summary.json");
    if summary_path.exists() {
        let summary: Summary = serde_json::from_str(&std::fs::read_to_string(summary_path)?)?;
        for f in &summary.failures {
            let _ = writeln!(out, "FAILED {} seed {}: {}", f.method, f.seed, f.error);
        }
    }
    Ok(out)
}
