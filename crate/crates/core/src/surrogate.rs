//! Surrogate loss, its gradient through the optimal controls, and projected
//! gradient descent over the parameter box.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diagnostics::box_grid;
use crate::dynamics::ParamBox;
use crate::error::{Result, SpcError};
use crate::identification::{theta_emp_from_solves, FitConfig};
use crate::scalar::{norm, norm_sq, Real};
use crate::scenario::{ScenarioSet, SolveReport, SolverConfig};

/// `η`, either explicit or `1/L̂` from [`estimate_lipschitz`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepSize {
    #[default]
    Auto,
    Fixed(f64),
}

impl FromStr for StepSize {
    type Err = SpcError;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(StepSize::Auto);
        }
        s.parse::<f64>()
            .map(StepSize::Fixed)
            .map_err(|_| SpcError::InvalidArgument(format!("step size must be 'auto' or a number, got '{s}'")))
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Auto => f.write_str("auto"),
            StepSize::Fixed(x) => write!(f, "{x}"),
        }
    }
}

impl Serialize for StepSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(x) => s.serialize_f64(*x),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(StepSize::Fixed(x)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `θ_emp` frozen for the whole run.
    #[default]
    Fixed,
    /// `θ_emp` recomputed every `refresh_period` iterations.
    Updated,
}

impl FromStr for Variant {
    type Err = SpcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Variant::Fixed),
            "updated" => Ok(Variant::Updated),
            _ => Err(SpcError::InvalidArgument(format!("unknown variant '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub step_size: StepSize,
    /// Outer iteration budget `K`.
    pub iterations: usize,
    /// Box samples used by the automatic Lipschitz estimate.
    pub lipschitz_samples: usize,
    pub lipschitz_seed: u64,
    /// Points per axis; when set, the automatic estimate uses the tensor
    /// grid over the box (faces included) instead of random samples.
    pub lipschitz_grid: Option<usize>,
    pub variant: Variant,
    /// Refresh period `τ` of the updated variant.
    pub refresh_period: usize,
    /// Halve `η` whenever the descent inequality fails.
    pub backtracking: bool,
    /// Stop once `‖𝒢_η‖ ≤ early_stop`.
    pub early_stop: Option<f64>,
    pub solver: SolverConfig,
    /// Fit settings used when the updated variant refreshes `θ_emp`.
    pub fit: FitConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            step_size: StepSize::Auto,
            iterations: 50,
            lipschitz_samples: 8,
            lipschitz_seed: 0,
            lipschitz_grid: None,
            variant: Variant::Fixed,
            refresh_period: 10,
            backtracking: false,
            early_stop: None,
            solver: SolverConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if let StepSize::Fixed(eta) = self.step_size {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(SpcError::InvalidArgument(format!("step size must be positive, got {eta}")));
            }
        }
        if self.refresh_period == 0 {
            return Err(SpcError::InvalidArgument("refresh period must be at least 1".into()));
        }
        if self.step_size == StepSize::Auto && self.lipschitz_samples < 2 {
            return Err(SpcError::InvalidArgument("Lipschitz estimate needs at least 2 samples".into()));
        }
        if self.lipschitz_grid.is_some_and(|n| n < 2) {
            return Err(SpcError::InvalidArgument("Lipschitz grid needs at least 2 points per axis".into()));
        }
        Ok(())
    }
}

/// One row of a [`RunRecord`]; values are stored in `f64` whatever the
/// working precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub loss: f64,
    pub gm_norm_sq: f64,
    /// Step size used to form `𝒢_η` and the next iterate.
    pub step_size: f64,
    pub theta_emp: Vec<f64>,
    pub refreshed: bool,
    pub inner_iterations_max: usize,
    pub inner_grad_norm_max: f64,
}

/// Log of an outer run. Row `k` describes `θ^(k)`; a completed run of budget
/// `K` has rows `0..=K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub step_size: f64,
    /// Sampled Lipschitz estimate when `η` was chosen automatically.
    pub lipschitz_estimate: Option<f64>,
    pub rows: Vec<IterationRecord>,
    pub backtracking_halvings: usize,
    pub stopped_early: bool,
    pub wall_time_s: f64,
}

impl RunRecord {
    fn new(variant: Variant, step_size: f64, lipschitz_estimate: Option<f64>) -> Self {
        Self {
            variant,
            step_size,
            lipschitz_estimate,
            rows: Vec::new(),
            backtracking_halvings: 0,
            stopped_early: false,
            wall_time_s: 0.0,
        }
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn final_row(&self) -> Option<&IterationRecord> {
        self.rows.last()
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.loss).reduce(f64::min)
    }

    pub fn refresh_iterations(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.refreshed).map(|r| r.iteration).collect()
    }

    /// CSV with columns `iteration, loss, gm_norm_sq, theta_0..theta_{p-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let p = self.rows.first().map_or(0, |r| r.theta.len());
        let mut header = vec!["iteration".to_string(), "loss".into(), "gm_norm_sq".into()];
        header.extend((0..p).map(|j| format!("theta_{j}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.iteration.to_string(), fmt_f64(r.loss), fmt_f64(r.gm_norm_sq)];
            rec.extend(r.theta.iter().map(|&x| fmt_f64(x)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let final_row = self.final_row();
        let summary = serde_json::json!({
            "variant": self.variant,
            "step_size": self.step_size,
            "lipschitz_estimate": self.lipschitz_estimate,
            "iterations": self.rows.len().saturating_sub(1),
            "initial_loss": self.initial_loss(),
            "final_loss": final_row.map(|r| r.loss),
            "best_loss": self.best_loss(),
            "final_theta": final_row.map(|r| r.theta.clone()),
            "final_gm_norm_sq": final_row.map(|r| r.gm_norm_sq),
            "refresh_iterations": self.refresh_iterations(),
            "backtracking_halvings": self.backtracking_halvings,
            "stopped_early": self.stopped_early,
            "wall_time_s": self.wall_time_s,
        });
        std::fs::write(path, serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn check_solves<T: Real>(set: &ScenarioSet<T>, theta: &[T], theta_emp: &[T], solves: &[SolveReport<T>]) -> Result<()> {
    let p = set.param_dim();
    if theta.len() != p || theta_emp.len() != p {
        return Err(SpcError::dims("parameter vector", p, theta.len().min(theta_emp.len())));
    }
    if solves.len() != set.len() {
        return Err(SpcError::dims("scenario solves", set.len(), solves.len()));
    }
    Ok(())
}

/// `(1/N) Σ_i [2 F_i(U_i*, θ) − F_i(U_i*, θ_emp)]` with `U_i*` solved under `θ`.
pub fn surrogate_loss<T: Real>(
    set: &ScenarioSet<T>,
    theta: &[T],
    theta_emp: &[T],
    solves: &[SolveReport<T>],
) -> Result<T> {
    check_solves(set, theta, theta_emp, solves)?;
    let two = T::lit(2.0);
    let terms: Vec<T> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let u = &solves[i].controls;
            Ok(two * set.objective(i, u, theta)? - set.objective(i, u, theta_emp)?)
        })
        .collect::<Result<_>>()?;
    Ok(terms.into_iter().sum::<T>() / T::from_count(set.len()))
}

/// `(1/N) Σ_i [2 ∂_θ F_i(U_i*, θ) − DU_i*(θ)ᵀ ∂_U F_i(U_i*, θ_emp)]`.
///
/// The self-evaluated term uses the envelope identity, so only its partial
/// derivative appears.
pub fn surrogate_gradient<T: Real>(
    set: &ScenarioSet<T>,
    theta: &[T],
    theta_emp: &[T],
    solves: &[SolveReport<T>],
    cfg: &SolverConfig,
) -> Result<Vec<T>> {
    check_solves(set, theta, theta_emp, solves)?;
    let p = set.param_dim();
    let two = T::lit(2.0);
    let terms: Vec<Vec<T>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let u = &solves[i].controls;
            let own = set.gradients(i, u, theta)?;
            let fixed = set.gradients(i, u, theta_emp)?;
            let du = set.optimizer_jacobian(i, u, theta, cfg)?;
            let mut g: Vec<T> = own.grad_theta.iter().map(|&v| two * v).collect();
            let mut chain = vec![T::zero(); p];
            du.tr_mul_vec_add(&fixed.grad_u, &mut chain);
            for (gj, cj) in g.iter_mut().zip(&chain) {
                *gj = *gj - *cj;
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let inv = T::one() / T::from_count(set.len());
    let mut out = vec![T::zero(); p];
    for t in &terms {
        for (o, &v) in out.iter_mut().zip(t) {
            *o = *o + v;
        }
    }
    out.iter_mut().for_each(|o| *o = *o * inv);
    Ok(out)
}

/// Surrogate value with fresh inner solves under `theta`.
pub fn surrogate_value<T: Real>(
    set: &ScenarioSet<T>,
    theta: &[T],
    theta_emp: &[T],
    cfg: &SolverConfig,
) -> Result<T> {
    let solves = set.solve_all(theta, cfg, None)?;
    surrogate_loss(set, theta, theta_emp, &solves)
}

/// Euclidean projection onto the box (componentwise clamp).
pub fn project_theta<T: Real>(raw: &[T], bx: &ParamBox<T>) -> Vec<T> {
    bx.project(raw)
}

/// `𝒢_η(θ) = (θ − Π[θ − η ∇]) / η`.
pub fn gradient_mapping<T: Real>(theta: &[T], grad: &[T], eta: T, bx: &ParamBox<T>) -> Vec<T> {
    let step: Vec<T> = theta.iter().zip(grad).map(|(&t, &g)| t - eta * g).collect();
    let proj = bx.project(&step);
    theta.iter().zip(&proj).map(|(&t, &q)| (t - q) / eta).collect()
}

/// Uniform samples in the box; the first `k` samples do not depend on the
/// total count.
pub fn sample_box<T: Real>(bx: &ParamBox<T>, samples: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            bx.lo()
                .iter()
                .zip(bx.hi())
                .map(|(&lo, &hi)| {
                    let s: f64 = rng.random();
                    lo + (hi - lo) * T::lit(s)
                })
                .collect()
        })
        .collect()
}

/// Largest difference quotient `‖∇L̃(θ) − ∇L̃(θ′)‖ / ‖θ − θ′‖` over all pairs
/// of sampled box points, times 2.
pub fn estimate_lipschitz<T: Real>(
    set: &ScenarioSet<T>,
    theta_emp: &[T],
    bx: &ParamBox<T>,
    samples: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<T> {
    if samples < 2 {
        return Err(SpcError::InvalidArgument("Lipschitz estimate needs at least 2 samples".into()));
    }
    estimate_lipschitz_at(set, theta_emp, &sample_box(bx, samples, seed), cfg)
}

/// [`estimate_lipschitz`] over given points.
pub fn estimate_lipschitz_at<T: Real>(
    set: &ScenarioSet<T>,
    theta_emp: &[T],
    points: &[Vec<T>],
    cfg: &SolverConfig,
) -> Result<T> {
    let grads: Vec<Vec<T>> = points
        .iter()
        .map(|th| {
            let solves = set.solve_all(th, cfg, None)?;
            surrogate_gradient(set, th, theta_emp, &solves, cfg)
        })
        .collect::<Result<_>>()?;
    Ok(T::lit(2.0) * max_difference_quotient(points, &grads))
}

pub(crate) fn max_difference_quotient<T: Real>(points: &[Vec<T>], values: &[Vec<T>]) -> T {
    let mut best = T::zero();
    for a in 0..points.len() {
        for b in (a + 1)..points.len() {
            let dx: Vec<T> = points[a].iter().zip(&points[b]).map(|(&x, &y)| x - y).collect();
            let dist = norm(&dx);
            if dist > T::zero() {
                let dg: Vec<T> = values[a].iter().zip(&values[b]).map(|(&x, &y)| x - y).collect();
                best = best.max(norm(&dg) / dist);
            }
        }
    }
    best
}

/// A run aborted by an inner failure, with everything logged before it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("outer run aborted after {} logged iterates: {error}", record.rows.len())]
pub struct RunFailure {
    pub error: SpcError,
    pub record: RunRecord,
}

pub type RunResult<T> = std::result::Result<(Vec<T>, RunRecord), Box<RunFailure>>;

struct Eval<T> {
    solves: Vec<SolveReport<T>>,
    loss: T,
    grad: Vec<T>,
}

fn evaluate<T: Real>(
    set: &ScenarioSet<T>,
    theta: &[T],
    theta_emp: &[T],
    cfg: &SolverConfig,
    warm: Option<&[SolveReport<T>]>,
) -> Result<Eval<T>> {
    let solves = set.solve_all(theta, cfg, warm)?;
    let loss = surrogate_loss(set, theta, theta_emp, &solves)?;
    let grad = surrogate_gradient(set, theta, theta_emp, &solves, cfg)?;
    Ok(Eval { solves, loss, grad })
}

struct Refresh<'a> {
    period: usize,
    fit: &'a FitConfig,
}

fn resolve_step<T: Real>(
    set: &ScenarioSet<T>,
    bx: &ParamBox<T>,
    theta_emp: &[T],
    cfg: &SurrogateConfig,
) -> Result<(T, Option<f64>)> {
    match cfg.step_size {
        StepSize::Fixed(eta) => Ok((T::lit(eta), None)),
        StepSize::Auto => {
            let l = match cfg.lipschitz_grid {
                Some(n) => estimate_lipschitz_at(set, theta_emp, &box_grid(bx, n), &cfg.solver)?,
                None => estimate_lipschitz(set, theta_emp, bx, cfg.lipschitz_samples, cfg.lipschitz_seed, &cfg.solver)?,
            };
            let eta = if l > T::zero() { T::one() / l } else { T::one() };
            Ok((eta, Some(l.as_f64())))
        }
    }
}

fn outer_loop<T: Real>(
    set: &ScenarioSet<T>,
    bx: &ParamBox<T>,
    theta0: &[T],
    theta_emp0: &[T],
    cfg: &SurrogateConfig,
    refresh: Option<Refresh<'_>>,
) -> RunResult<T> {
    let start = Instant::now();
    let fail = |error: SpcError, record: RunRecord| Box::new(RunFailure { error, record });
    let variant = if refresh.is_some() { Variant::Updated } else { Variant::Fixed };
    let mut record = RunRecord::new(variant, f64::NAN, None);
    if let Err(e) = cfg.validate().and_then(|_| bx.check(theta0)).and_then(|_| bx.check(theta_emp0)) {
        return Err(fail(e, record));
    }
    let (mut eta, lip) = match resolve_step(set, bx, theta_emp0, cfg) {
        Ok(v) => v,
        Err(e) => return Err(fail(e, record)),
    };
    record.step_size = eta.as_f64();
    record.lipschitz_estimate = lip;

    let mut theta = theta0.to_vec();
    let mut theta_emp = theta_emp0.to_vec();
    let mut ev = match evaluate(set, &theta, &theta_emp, &cfg.solver, None) {
        Ok(ev) => ev,
        Err(e) => return Err(fail(e, record)),
    };
    let slack = T::lit(1e-9);
    let half = T::lit(0.5);

    let mut k = 0;
    loop {
        let mut refreshed = false;
        if let Some(r) = &refresh {
            if k > 0 && k % r.period == 0 && k < cfg.iterations {
                let fit = theta_emp_from_solves(set, &theta, &ev.solves, bx, r.fit)
                    .and_then(|f| {
                        let loss = surrogate_loss(set, &theta, &f.theta, &ev.solves)?;
                        let grad = surrogate_gradient(set, &theta, &f.theta, &ev.solves, &cfg.solver)?;
                        Ok((f.theta, loss, grad))
                    });
                match fit {
                    Ok((te, loss, grad)) => {
                        theta_emp = te;
                        ev.loss = loss;
                        ev.grad = grad;
                        refreshed = true;
                    }
                    Err(e) => return Err(fail(e, record)),
                }
            }
        }
        let gm = gradient_mapping(&theta, &ev.grad, eta, bx);
        let gm_sq = norm_sq(&gm);
        record.rows.push(IterationRecord {
            iteration: k,
            theta: to_f64(&theta),
            loss: ev.loss.as_f64(),
            gm_norm_sq: gm_sq.as_f64(),
            step_size: eta.as_f64(),
            theta_emp: to_f64(&theta_emp),
            refreshed,
            inner_iterations_max: ev.solves.iter().map(|s| s.iterations).max().unwrap_or(0),
            inner_grad_norm_max: ev.solves.iter().map(|s| s.grad_norm).fold(0.0, f64::max),
        });
        if k >= cfg.iterations {
            break;
        }
        if let Some(tol) = cfg.early_stop {
            if gm_sq.sqrt() <= T::lit(tol) {
                record.stopped_early = true;
                break;
            }
        }

        let mut step_gm = gm;
        let next = loop {
            let trial: Vec<T> = theta.iter().zip(&step_gm).map(|(&t, &g)| t - eta * g).collect();
            let trial = bx.project(&trial);
            let nev = match evaluate(set, &trial, &theta_emp, &cfg.solver, Some(&ev.solves)) {
                Ok(v) => v,
                Err(e) => return Err(fail(e, record)),
            };
            let bound = ev.loss - half * eta * norm_sq(&step_gm) + slack;
            if !cfg.backtracking || nev.loss <= bound || eta < T::lit(1e-12) {
                break (trial, nev);
            }
            eta = eta * half;
            record.backtracking_halvings += 1;
            step_gm = gradient_mapping(&theta, &ev.grad, eta, bx);
            if let Some(row) = record.rows.last_mut() {
                row.step_size = eta.as_f64();
                row.gm_norm_sq = norm_sq(&step_gm).as_f64();
            }
        };
        theta = next.0;
        ev = next.1;
        k += 1;
    }
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok((theta, record))
}

/// Fixed-surrogate projected gradient descent:
/// `θ^(k+1) = Π[θ^(k) − η ∇L̃(θ^(k); θ_emp)]` for `K` iterations.
pub fn run_spc<T: Real>(
    set: &ScenarioSet<T>,
    bx: &ParamBox<T>,
    theta0: &[T],
    theta_emp: &[T],
    cfg: &SurrogateConfig,
) -> RunResult<T> {
    outer_loop(set, bx, theta0, theta_emp, cfg, None)
}

/// As [`run_spc`], but every `τ` iterations `θ_emp` is refitted on
/// counterfactual rollouts under the current iterate and its optimal
/// controls. The step size is fixed from the initial `θ_emp`.
pub fn run_updated_spc<T: Real>(
    set: &ScenarioSet<T>,
    bx: &ParamBox<T>,
    theta0: &[T],
    theta_emp: &[T],
    cfg: &SurrogateConfig,
) -> RunResult<T> {
    outer_loop(
        set,
        bx,
        theta0,
        theta_emp,
        cfg,
        Some(Refresh {
            period: cfg.refresh_period,
            fit: &cfg.fit,
        }),
    )
}

/// Dispatches on `cfg.variant`.
pub fn run<T: Real>(
    set: &ScenarioSet<T>,
    bx: &ParamBox<T>,
    theta0: &[T],
    theta_emp: &[T],
    cfg: &SurrogateConfig,
) -> RunResult<T> {
    match cfg.variant {
        Variant::Fixed => run_spc(set, bx, theta0, theta_emp, cfg),
        Variant::Updated => run_updated_spc(set, bx, theta0, theta_emp, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostMatrices;
    use crate::dynamics::{scalar_model, Disturbances};
    use crate::scenario::Scenario;
    use std::sync::Arc;

    fn scalar_set(x0: f64, ws: &[f64]) -> ScenarioSet<f64> {
        let scenarios = ws
            .iter()
            .enumerate()
            .map(|(id, &w)| Scenario {
                id,
                x0: vec![x0],
                w: Disturbances::from_flat(1, vec![w]).unwrap(),
            })
            .collect();
        ScenarioSet::new(
            Arc::new(scalar_model::<f64>()),
            CostMatrices::diagonal(&[1.0], &[1.0], &[1.0]).unwrap(),
            scenarios,
        )
        .unwrap()
    }

    #[test]
    fn loss_with_theta_emp_equal_theta_is_mean_objective() {
        let set = scalar_set(1.0, &[0.0, 0.5]);
        let cfg = SolverConfig::default();
        let solves = set.solve_all(&[0.7], &cfg, None).unwrap();
        let l = surrogate_loss(&set, &[0.7], &[0.7], &solves).unwrap();
        let mean = (set.objective(0, &solves[0].controls, &[0.7]).unwrap()
            + set.objective(1, &solves[1].controls, &[0.7]).unwrap())
            / 2.0;
        assert!((l - mean).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_single_scenario() {
        // T=1, x0=1, w=0: F(u, θ) = 1 + u² + (θ + u)², U*(θ) = −θ/2.
        let set = scalar_set(1.0, &[0.0]);
        let solves = set.solve_all(&[1.0], &SolverConfig::default(), None).unwrap();
        let l = surrogate_loss(&set, &[1.0], &[0.0], &solves).unwrap();
        // 2·F(−½, 1) − F(−½, 0) = 2·1.5 − 1.5
        assert!((l - 1.5).abs() < 1e-9);
    }

    #[test]
    fn gradient_mapping_cases() {
        let bx = ParamBox::uniform(2, -1.0, 1.0).unwrap();
        // Power-of-two step keeps the round trip exact.
        let g = gradient_mapping(&[0.0, 0.0], &[0.3, -0.2], 0.125, &bx);
        assert_eq!(g, vec![0.3, -0.2]);
        let g = gradient_mapping(&[1.0, -1.0], &[-5.0, 5.0], 0.1, &bx);
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(project_theta(&[2.0, 2.0], &bx), vec![1.0, 1.0]);
    }

    #[test]
    fn step_size_parsing() {
        assert_eq!("auto".parse::<StepSize>().unwrap(), StepSize::Auto);
        assert_eq!("0.5".parse::<StepSize>().unwrap(), StepSize::Fixed(0.5));
        assert!("fast".parse::<StepSize>().is_err());
        let s: StepSize = serde_json::from_str("0.25").unwrap();
        assert_eq!(s, StepSize::Fixed(0.25));
        let s: StepSize = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(s, StepSize::Auto);
        assert_eq!(serde_json::to_string(&StepSize::Auto).unwrap(), "\"auto\"");
    }

    #[test]
    fn zero_budget_returns_start() {
        let set = scalar_set(1.0, &[0.0, 0.3]);
        let bx = ParamBox::uniform(1, -2.0, 2.0).unwrap();
        let cfg = SurrogateConfig {
            step_size: StepSize::Fixed(0.1),
            iterations: 0,
            ..Default::default()
        };
        let (th, rec) = run_spc(&set, &bx, &[0.4], &[0.4], &cfg).unwrap();
        assert_eq!(th, vec![0.4]);
        assert_eq!(rec.rows.len(), 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SurrogateConfig {
            step_size: StepSize::Fixed(-1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SurrogateConfig {
            refresh_period: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
