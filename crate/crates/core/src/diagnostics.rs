//! Deployment metric, bias decomposition, conditional-transfer check and
//! convergence certificates.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::total_cost;
use crate::dynamics::ParamBox;
use crate::error::{Result, SpcError};
use crate::scalar::{norm, Real};
use crate::scenario::{Scenario, ScenarioSet, SolverConfig};
use crate::surrogate::{fmt_f64, max_difference_quotient, sample_box, surrogate_loss, RunRecord};

/// Deployment scenarios `(x₀ᵢ, Wᵢ^true)` and the true parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentSet<T> {
    scenarios: Vec<Scenario<T>>,
    theta_true: Vec<T>,
}

impl<T: Real> DeploymentSet<T> {
    pub fn new(scenarios: Vec<Scenario<T>>, theta_true: Vec<T>, bx: Option<&ParamBox<T>>) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(SpcError::InvalidArgument("deployment set must be nonempty".into()));
        }
        if let Some(bx) = bx {
            bx.check(&theta_true)?;
        }
        Ok(Self { scenarios, theta_true })
    }

    pub fn scenarios(&self) -> &[Scenario<T>] {
        &self.scenarios
    }

    pub fn theta_true(&self) -> &[T] {
        &self.theta_true
    }
}

/// `V(θ) = (1/N_dep) Σ_i J(x₀ᵢ, U*(x₀ᵢ; θ); θ_true, Wᵢ^true)`, where `U*`
/// minimizes the scenario objective built from the training residuals.
pub fn deployment_metric<T: Real>(
    dep: &DeploymentSet<T>,
    set: &ScenarioSet<T>,
    theta: &[T],
    cfg: &SolverConfig,
) -> Result<T> {
    let model = set.model().as_ref();
    let costs: Vec<T> = dep
        .scenarios
        .par_iter()
        .map(|s| {
            if s.w.steps() != set.horizon() {
                return Err(SpcError::dims("deployment horizon", set.horizon(), s.w.steps()));
            }
            let u = set.solve_at(&s.x0, theta, cfg, None)?;
            total_cost(model, set.costs(), &s.x0, &u.controls, &dep.theta_true, &s.w)
        })
        .collect::<Result<_>>()?;
    Ok(costs.into_iter().sum::<T>() / T::from_count(dep.scenarios.len()))
}

/// `V`, `L̃` and `B = V − L̃` at one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEval<T> {
    pub v: T,
    pub l_tilde: T,
    pub b: T,
}

pub fn bias<T: Real>(
    theta: &[T],
    theta_emp: &[T],
    dep: &DeploymentSet<T>,
    set: &ScenarioSet<T>,
    cfg: &SolverConfig,
) -> Result<BiasEval<T>> {
    let v = deployment_metric(dep, set, theta, cfg)?;
    let solves = set.solve_all(theta, cfg, None)?;
    let l_tilde = surrogate_loss(set, theta, theta_emp, &solves)?;
    Ok(BiasEval { v, l_tilde, b: v - l_tilde })
}

/// Where a bias Lipschitz constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzSource {
    /// Random box samples with a safety factor of 2. Diagnostic, not a
    /// certificate.
    Sampled,
    /// Largest difference quotient over a dense grid.
    GridOracle,
    /// Supplied by the caller.
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasLipschitz {
    pub value: f64,
    pub source: LipschitzSource,
}

/// Sampled estimate of the bias Lipschitz constant: the largest `|ΔB|/‖Δθ‖`
/// over all pairs of seeded box samples, times 2.
pub fn estimate_bias_lipschitz<T: Real>(
    dep: &DeploymentSet<T>,
    set: &ScenarioSet<T>,
    theta_emp: &[T],
    bx: &ParamBox<T>,
    samples: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<BiasLipschitz> {
    if samples < 2 {
        return Err(SpcError::InvalidArgument("bias Lipschitz estimate needs at least 2 samples".into()));
    }
    let points = sample_box(bx, samples, seed);
    let values: Vec<Vec<T>> = points
        .iter()
        .map(|th| Ok(vec![bias(th, theta_emp, dep, set, cfg)?.b]))
        .collect::<Result<_>>()?;
    Ok(BiasLipschitz {
        value: 2.0 * max_difference_quotient(&points, &values).as_f64(),
        source: LipschitzSource::Sampled,
    })
}

/// One point of a grid sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub v: f64,
    pub l_tilde: f64,
    pub b: f64,
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Tensor grid over the box with `n` points per axis.
pub fn box_grid<T: Real>(bx: &ParamBox<T>, n: usize) -> Vec<Vec<T>> {
    let axes: Vec<Vec<f64>> = bx
        .lo()
        .iter()
        .zip(bx.hi())
        .map(|(&lo, &hi)| linspace(lo.as_f64(), hi.as_f64(), n))
        .collect();
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(T::lit(v));
                    p
                })
            })
            .collect();
    }
    out
}

/// Evaluates `V`, `L̃`, `B` at every grid parameter.
pub fn grid_sweep<T: Real>(
    dep: &DeploymentSet<T>,
    set: &ScenarioSet<T>,
    theta_emp: &[T],
    grid: &[Vec<T>],
    cfg: &SolverConfig,
) -> Result<Vec<GridPoint>> {
    grid.iter()
        .map(|th| {
            let e = bias(th, theta_emp, dep, set, cfg)?;
            Ok(GridPoint {
                theta: th.iter().map(|x| x.as_f64()).collect(),
                v: e.v.as_f64(),
                l_tilde: e.l_tilde.as_f64(),
                b: e.b.as_f64(),
            })
        })
        .collect()
}

/// Largest `|ΔB|/‖Δθ‖` over all pairs of swept points.
pub fn grid_bias_lipschitz(points: &[GridPoint]) -> BiasLipschitz {
    let thetas: Vec<Vec<f64>> = points.iter().map(|p| p.theta.clone()).collect();
    let values: Vec<Vec<f64>> = points.iter().map(|p| vec![p.b]).collect();
    BiasLipschitz {
        value: max_difference_quotient(&thetas, &values),
        source: LipschitzSource::GridOracle,
    }
}

/// CSV with columns `theta` (or `theta_0..`), `V`, `L_tilde`, `B`.
pub fn write_grid_csv(points: &[GridPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = points.first().map_or(1, |g| g.theta.len());
    let mut header: Vec<String> = if p == 1 {
        vec!["theta".into()]
    } else {
        (0..p).map(|j| format!("theta_{j}")).collect()
    };
    header.extend(["V", "L_tilde", "B"].map(String::from));
    w.write_record(&header)?;
    for g in points {
        let mut rec: Vec<String> = g.theta.iter().map(|&x| fmt_f64(x)).collect();
        rec.extend([fmt_f64(g.v), fmt_f64(g.l_tilde), fmt_f64(g.b)]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Condition holds and `V` decreased.
    Certified,
    /// Condition does not hold; nothing is implied.
    Inconclusive,
    /// Condition holds but `V` did not decrease.
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub surrogate_decrease: f64,
    pub step_norm: f64,
    pub lipschitz: BiasLipschitz,
    /// `L̃(θ⁰) − L̃(θ^K) − L_B ‖θ^K − θ⁰‖`; the condition holds when positive.
    pub condition_margin: f64,
    pub condition_holds: bool,
    pub v_initial: f64,
    pub v_final: f64,
    pub v_decreased: bool,
    pub verdict: Verdict,
}

/// Evaluates `L̃(θ⁰) − L̃(θ^K) > L_B ‖θ^K − θ⁰‖` for a completed fixed run and
/// compares with the observed change in `V`.
pub fn transfer_check<T: Real>(
    run: &RunRecord,
    dep: &DeploymentSet<T>,
    set: &ScenarioSet<T>,
    lipschitz: BiasLipschitz,
    cfg: &SolverConfig,
) -> Result<TransferReport> {
    let (first, last) = match (run.rows.first(), run.rows.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(SpcError::InvalidArgument("run record is empty".into())),
    };
    let theta0: Vec<T> = first.theta.iter().map(|&x| T::lit(x)).collect();
    let theta_k: Vec<T> = last.theta.iter().map(|&x| T::lit(x)).collect();
    let v_initial = deployment_metric(dep, set, &theta0, cfg)?.as_f64();
    let v_final = deployment_metric(dep, set, &theta_k, cfg)?.as_f64();
    Ok(transfer_report(first.loss, last.loss, &first.theta, &last.theta, lipschitz, v_initial, v_final))
}

/// The transfer verdict from precomputed quantities.
pub fn transfer_report(
    loss_initial: f64,
    loss_final: f64,
    theta_initial: &[f64],
    theta_final: &[f64],
    lipschitz: BiasLipschitz,
    v_initial: f64,
    v_final: f64,
) -> TransferReport {
    let surrogate_decrease = loss_initial - loss_final;
    let diff: Vec<f64> = theta_final.iter().zip(theta_initial).map(|(a, b)| a - b).collect();
    let step_norm = norm(&diff);
    let condition_margin = surrogate_decrease - lipschitz.value * step_norm;
    let condition_holds = condition_margin > 0.0;
    let v_decreased = v_final < v_initial;
    let verdict = match (condition_holds, v_decreased) {
        (true, true) => Verdict::Certified,
        (true, false) => Verdict::Violated,
        (false, _) => Verdict::Inconclusive,
    };
    TransferReport {
        surrogate_decrease,
        step_norm,
        lipschitz,
        condition_margin,
        condition_holds,
        v_initial,
        v_final,
        v_decreased,
        verdict,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub iterations: usize,
    /// `min_k [L̃_k − (η_k/2)‖𝒢_k‖² − L̃_{k+1}]`; the descent inequalities hold
    /// when this is at least `−tolerance`.
    pub worst_descent_slack: f64,
    pub descent_holds: bool,
    pub min_gm_norm_sq: f64,
    /// `2 (L̃_0 − L̃*) / Σ_k η_k` with `L̃*` the smaller of the best observed
    /// value and the hint.
    pub rate_bound: f64,
    pub rate_holds: bool,
    pub lstar: f64,
    /// Set when `η` exceeds `1/L̂`, in which case failures are expected.
    pub step_size_warning: Option<String>,
}

/// Replays the per-iteration descent inequality and the `O(1/K)` rate bound
/// on a run record.
pub fn convergence_certificate(
    run: &RunRecord,
    lipschitz: Option<f64>,
    lstar_hint: Option<f64>,
    tolerance: f64,
) -> CertificateReport {
    let rows = &run.rows;
    let k = rows.len().saturating_sub(1);
    let mut worst = f64::INFINITY;
    for w in rows.windows(2) {
        let slack = w[0].loss - 0.5 * w[0].step_size * w[0].gm_norm_sq - w[1].loss;
        worst = worst.min(slack);
    }
    let best = run.best_loss().unwrap_or(f64::NAN);
    let lstar = lstar_hint.map_or(best, |h| h.min(best));
    let eta_sum: f64 = rows.iter().take(k).map(|r| r.step_size).sum();
    let min_gm = rows.iter().take(k).map(|r| r.gm_norm_sq).fold(f64::INFINITY, f64::min);
    let rate_bound = if k > 0 {
        2.0 * (rows[0].loss - lstar) / eta_sum
    } else {
        f64::INFINITY
    };
    let lhat = lipschitz.or(run.lipschitz_estimate);
    let step_size_warning = lhat.and_then(|l| {
        rows.iter()
            .any(|r| r.step_size * l > 1.0 + 1e-12)
            .then(|| "step size above 1/L̂".to_string())
    });
    CertificateReport {
        iterations: k,
        worst_descent_slack: if k > 0 { worst } else { 0.0 },
        descent_holds: k == 0 || worst >= -tolerance,
        min_gm_norm_sq: if k > 0 { min_gm } else { 0.0 },
        rate_bound,
        rate_holds: k == 0 || min_gm <= rate_bound + tolerance,
        lstar,
        step_size_warning,
    }
}
