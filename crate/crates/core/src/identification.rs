//! Prediction-oriented fitting, residual disturbance scenarios, counterfactual
//! rollouts and the auxiliary evaluation parameter.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::CostMatrices;
use crate::dynamics::{rollout, Disturbances, Model, ParamBox, SharedModel, StepJacobians, Trajectory};
use crate::error::{Result, SpcError};
use crate::linalg::{Cholesky, Mat};
use crate::scalar::{norm, Real};
use crate::scenario::{Scenario, ScenarioSet, SolveReport};

/// One recorded run: states `x_0..x_T` and the applied controls `u_0..u_{T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTrajectory<T> {
    pub states: Trajectory<T>,
    pub controls: Vec<T>,
}

impl<T: Real> RecordedTrajectory<T> {
    pub fn new(states: Trajectory<T>, controls: Vec<T>) -> Result<Self> {
        let horizon = states.horizon();
        if horizon == 0 || controls.len() % horizon != 0 {
            return Err(SpcError::dims("recorded controls (multiple of T)", horizon, controls.len()));
        }
        Ok(Self { states, controls })
    }

    pub fn horizon(&self) -> usize {
        self.states.horizon()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.len() / self.horizon()
    }

    pub fn control(&self, t: usize) -> &[T] {
        let m = self.control_dim();
        &self.controls[t * m..(t + 1) * m]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Recorded trajectories with a disjoint, exhaustive train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    trajectories: Vec<RecordedTrajectory<T>>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    pub fn new(
        trajectories: Vec<RecordedTrajectory<T>>,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = trajectories.len();
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n {
                return Err(SpcError::InvalidArgument(format!("split index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(SpcError::InvalidArgument(format!("trajectory {i} appears twice in the split")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(SpcError::InvalidArgument("split must cover every trajectory".into()));
        }
        if let Some(first) = trajectories.first() {
            let (dn, dm, dt) = (first.states.dim(), first.control_dim(), first.horizon());
            for tr in &trajectories {
                if tr.states.dim() != dn || tr.control_dim() != dm || tr.horizon() != dt {
                    return Err(SpcError::InvalidArgument(
                        "trajectories must share state/control dimensions and length".into(),
                    ));
                }
            }
        }
        Ok(Self {
            trajectories,
            train,
            test,
        })
    }

    /// Seeded shuffle, then the first `round(train_fraction · N)` go to training.
    pub fn split_shuffled(
        trajectories: Vec<RecordedTrajectory<T>>,
        train_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(SpcError::InvalidArgument("train fraction must lie in [0, 1]".into()));
        }
        let mut idx: Vec<usize> = (0..trajectories.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (train_fraction * trajectories.len() as f64).round() as usize;
        let test = idx.split_off(n_train);
        let mut train = idx;
        train.sort_unstable();
        let mut test = test;
        test.sort_unstable();
        Self::new(trajectories, train, test)
    }

    /// The default 80/20 split.
    pub fn split_default(trajectories: Vec<RecordedTrajectory<T>>, seed: u64) -> Result<Self> {
        Self::split_shuffled(trajectories, 0.8, seed)
    }

    pub fn trajectories(&self) -> &[RecordedTrajectory<T>] {
        &self.trajectories
    }
    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }
    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }
    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
    pub fn train(&self) -> impl Iterator<Item = &RecordedTrajectory<T>> {
        self.train.iter().map(|&i| &self.trajectories[i])
    }
    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, RecordedTrajectory::horizon)
    }
}

/// A single supervised transition: predict `target ≈ f(x, u; θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub target: Vec<T>,
}

/// Settings shared by the least-squares fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Stop once `‖θ − Π[θ − ∇S(θ)]‖ ≤ tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

/// Outcome of a box-constrained least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T> {
    pub theta: Vec<T>,
    pub objective: T,
    pub gradient_mapping_norm: T,
    pub iterations: usize,
}

struct LsEval<T> {
    value: T,
    grad: Vec<T>,
    gn_hessian: Mat<T>,
}

fn ls_value<T: Real>(model: &dyn Model<T>, data: &[Transition<T>], theta: &[T]) -> T {
    let mut out = vec![T::zero(); model.state_dim()];
    data.iter()
        .map(|tr| {
            model.eval(&tr.x, &tr.u, theta, &mut out);
            tr.target.iter().zip(&out).map(|(&y, &f)| (y - f) * (y - f)).sum::<T>()
        })
        .sum()
}

fn ls_eval<T: Real>(model: &dyn Model<T>, data: &[Transition<T>], theta: &[T]) -> LsEval<T> {
    let (n, p) = (model.state_dim(), model.param_dim());
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); p];
    let mut h = Mat::zeros(p, p);
    let mut out = vec![T::zero(); n];
    let mut jac = StepJacobians::for_model(model);
    for tr in data {
        model.eval(&tr.x, &tr.u, theta, &mut out);
        model.jacobians(&tr.x, &tr.u, theta, &mut jac);
        for i in 0..n {
            let r = tr.target[i] - out[i];
            value = value + r * r;
            let ci = jac.c.row(i);
            for a in 0..p {
                grad[a] = grad[a] - two * ci[a] * r;
                for b in 0..p {
                    h[(a, b)] = h[(a, b)] + two * ci[a] * ci[b];
                }
            }
        }
    }
    LsEval {
        value,
        grad,
        gn_hessian: h,
    }
}

fn unit_gradient_mapping<T: Real>(theta: &[T], grad: &[T], bx: &ParamBox<T>) -> T {
    let step: Vec<T> = theta.iter().zip(grad).map(|(&t, &g)| t - g).collect();
    let proj = bx.project(&step);
    norm(&theta.iter().zip(&proj).map(|(&a, &b)| a - b).collect::<Vec<_>>())
}

/// Minimizes `Σ ‖target − f(x, u; θ)‖²` over the box by projected
/// Gauss-Newton with an active-set split and Armijo backtracking.
pub fn fit_transitions<T: Real>(
    model: &dyn Model<T>,
    data: &[Transition<T>],
    bx: &ParamBox<T>,
    start: &[T],
    cfg: &FitConfig,
) -> Result<FitReport<T>> {
    let p = model.param_dim();
    if p == 0 {
        return Err(SpcError::DegenerateParameterization);
    }
    if bx.dim() != p {
        return Err(SpcError::dims("parameter box", p, bx.dim()));
    }
    if data.is_empty() {
        return Err(SpcError::InvalidArgument("no transitions to fit".into()));
    }
    let tol = T::lit(cfg.tolerance);
    let mut theta = bx.project(start);
    let mut ev = ls_eval(model, data, &theta);
    let mut gm = unit_gradient_mapping(&theta, &ev.grad, bx);

    for it in 0..cfg.max_iterations {
        if gm <= tol {
            return Ok(FitReport {
                theta,
                objective: ev.value,
                gradient_mapping_norm: gm,
                iterations: it,
            });
        }
        // Coordinates pinned at a bound with the gradient pushing outward.
        let eps = gm.min(T::lit(1e-3));
        let active: Vec<bool> = (0..p)
            .map(|k| {
                (theta[k] <= bx.lo()[k] + eps && ev.grad[k] > T::zero())
                    || (theta[k] >= bx.hi()[k] - eps && ev.grad[k] < T::zero())
            })
            .collect();
        let free: Vec<usize> = (0..p).filter(|&k| !active[k]).collect();
        let mut dir: Vec<T> = ev.grad.iter().map(|&g| -g).collect();
        if !free.is_empty() {
            let mut hf = Mat::zeros(free.len(), free.len());
            let mut trace = T::zero();
            for (a, &ka) in free.iter().enumerate() {
                trace = trace + ev.gn_hessian[(ka, ka)];
                for (b, &kb) in free.iter().enumerate() {
                    hf[(a, b)] = ev.gn_hessian[(ka, kb)];
                }
            }
            let gf: Vec<T> = free.iter().map(|&k| ev.grad[k]).collect();
            let mut ridge = T::zero();
            let sol = loop {
                let mut hr = hf.clone();
                for d in 0..free.len() {
                    hr[(d, d)] = hr[(d, d)] + ridge;
                }
                match Cholesky::new(&hr) {
                    Ok(ch) => break Some(ch.solve(&gf)),
                    Err(_) if ridge < trace.max(T::one()) => {
                        ridge = if ridge == T::zero() {
                            T::lit(1e-12) * trace.max(T::min_positive_value())
                        } else {
                            ridge * T::lit(100.0)
                        };
                    }
                    Err(_) => break None,
                }
            };
            if let Some(sol) = sol {
                for (a, &k) in free.iter().enumerate() {
                    dir[k] = -sol[a];
                }
            }
        }

        let sigma = T::lit(1e-4);
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = bx.project(
                &theta.iter().zip(&dir).map(|(&t, &d)| t + step * d).collect::<Vec<_>>(),
            );
            let decrease: T = ev.grad.iter().zip(trial.iter().zip(&theta)).map(|(&g, (&a, &b))| g * (a - b)).sum();
            let val = ls_value(model, data, &trial);
            if val <= ev.value + sigma * decrease {
                accepted = Some(trial);
                break;
            }
            step = step * T::lit(0.5);
        }
        let Some(trial) = accepted else {
            // No representable decrease left; accept the point if it is
            // stationary to the attainable precision.
            break;
        };
        theta = trial;
        ev = ls_eval(model, data, &theta);
        gm = unit_gradient_mapping(&theta, &ev.grad, bx);
    }
    if gm <= tol {
        return Ok(FitReport {
            theta,
            objective: ev.value,
            gradient_mapping_norm: gm,
            iterations: cfg.max_iterations,
        });
    }
    Err(SpcError::NonConvergence {
        context: "least-squares fit",
        iterations: cfg.max_iterations,
        residual: gm.as_f64(),
        best: theta.iter().map(|x| x.as_f64()).collect(),
    })
}

fn recorded_transitions<'a, T: Real>(
    trajs: impl Iterator<Item = &'a RecordedTrajectory<T>>,
) -> Vec<Transition<T>> {
    let mut out = Vec::new();
    for tr in trajs {
        for t in 0..tr.horizon() {
            out.push(Transition {
                x: tr.states.state(t).to_vec(),
                u: tr.control(t).to_vec(),
                target: tr.states.state(t + 1).to_vec(),
            });
        }
    }
    out
}

/// Prediction-oriented estimate on the training split, started from the box
/// center.
pub fn fit_tpc<T: Real>(
    data: &Dataset<T>,
    model: &dyn Model<T>,
    bx: &ParamBox<T>,
    cfg: &FitConfig,
) -> Result<FitReport<T>> {
    if model.param_dim() == 0 {
        return Err(SpcError::DegenerateParameterization);
    }
    if data.train_indices().is_empty() {
        return Err(SpcError::InvalidArgument("training split is empty".into()));
    }
    let transitions = recorded_transitions(data.train());
    fit_transitions(model, &transitions, bx, &bx.center(), cfg)
}

/// Residuals `w_t = x_{t+1} − f(x_t, u_t; θ⁰)` for every recorded trajectory,
/// in dataset order.
pub fn estimate_disturbances<T: Real>(
    data: &Dataset<T>,
    model: &dyn Model<T>,
    theta0: &[T],
) -> Result<Vec<Disturbances<T>>> {
    let n = model.state_dim();
    if theta0.len() != model.param_dim() {
        return Err(SpcError::dims("parameter vector", model.param_dim(), theta0.len()));
    }
    data.trajectories()
        .iter()
        .map(|tr| {
            if tr.states.dim() != n || tr.control_dim() != model.control_dim() {
                return Err(SpcError::dims("recorded state", n, tr.states.dim()));
            }
            let mut out = vec![T::zero(); n];
            let mut steps = Vec::with_capacity(n * tr.horizon());
            for t in 0..tr.horizon() {
                model.eval(tr.states.state(t), tr.control(t), theta0, &mut out);
                steps.extend(tr.states.state(t + 1).iter().zip(&out).map(|(&x, &f)| x - f));
            }
            Disturbances::from_flat(n, steps)
        })
        .collect()
}

/// Scenario set over the training trajectories: `x0_i` is the recorded
/// initial state and `W_i` its residual sequence.
pub fn training_scenarios<T: Real>(
    data: &Dataset<T>,
    residuals: &[Disturbances<T>],
    model: SharedModel<T>,
    costs: CostMatrices<T>,
) -> Result<ScenarioSet<T>> {
    if residuals.len() != data.trajectories().len() {
        return Err(SpcError::dims("residual sequences", data.trajectories().len(), residuals.len()));
    }
    let scenarios = data
        .train_indices()
        .iter()
        .map(|&i| Scenario {
            id: i,
            x0: data.trajectories()[i].states.state(0).to_vec(),
            w: residuals[i].clone(),
        })
        .collect();
    ScenarioSet::new(model, costs, scenarios)
}

/// `x̂_{t+1} = f(x̂_t, u*_t; θ⁰) + w_t` from the scenario's own initial state
/// and residuals, driven by the optimized controls.
pub fn counterfactual_rollout<T: Real>(
    set: &ScenarioSet<T>,
    i: usize,
    theta0: &[T],
    ustar: &[T],
) -> Result<Trajectory<T>> {
    let s = set
        .scenarios()
        .get(i)
        .ok_or_else(|| SpcError::InvalidArgument(format!("scenario index {i} out of range")))?;
    rollout(set.model().as_ref(), &s.x0, ustar, theta0, &s.w)
}

/// Auxiliary parameter fitted on counterfactual rollouts:
/// `argmin_θ Σ ‖x̂_{t+1} − f(x̂_t, u*_t; θ) − w_t‖²`.
pub fn fit_theta_emp<T: Real>(
    rollouts: &[Trajectory<T>],
    controls: &[Vec<T>],
    residuals: &[Disturbances<T>],
    model: &dyn Model<T>,
    bx: &ParamBox<T>,
    start: &[T],
    cfg: &FitConfig,
) -> Result<FitReport<T>> {
    if rollouts.len() != controls.len() || rollouts.len() != residuals.len() {
        return Err(SpcError::dims("counterfactual inputs", rollouts.len(), controls.len().min(residuals.len())));
    }
    let m = model.control_dim();
    let mut transitions = Vec::new();
    for ((traj, u), w) in rollouts.iter().zip(controls).zip(residuals) {
        if w.steps() != traj.horizon() || u.len() != m * traj.horizon() {
            return Err(SpcError::dims("counterfactual horizon", traj.horizon(), w.steps()));
        }
        for t in 0..traj.horizon() {
            transitions.push(Transition {
                x: traj.state(t).to_vec(),
                u: u[t * m..(t + 1) * m].to_vec(),
                target: traj.state(t + 1).iter().zip(w.step(t)).map(|(&x, &wt)| x - wt).collect(),
            });
        }
    }
    fit_transitions(model, &transitions, bx, start, cfg)
}

/// Runs the auxiliary-parameter construction anchored at `theta_ref`: the
/// counterfactual rollouts use `theta_ref` and the supplied optimal controls.
pub fn theta_emp_from_solves<T: Real>(
    set: &ScenarioSet<T>,
    theta_ref: &[T],
    solves: &[SolveReport<T>],
    bx: &ParamBox<T>,
    cfg: &FitConfig,
) -> Result<FitReport<T>> {
    if solves.len() != set.len() {
        return Err(SpcError::dims("scenario solves", set.len(), solves.len()));
    }
    let rollouts: Vec<Trajectory<T>> = (0..set.len())
        .into_par_iter()
        .map(|i| counterfactual_rollout(set, i, theta_ref, &solves[i].controls))
        .collect::<Result<_>>()?;
    let controls: Vec<Vec<T>> = solves.iter().map(|s| s.controls.clone()).collect();
    let residuals: Vec<Disturbances<T>> = set.scenarios().iter().map(|s| s.w.clone()).collect();
    fit_theta_emp(&rollouts, &controls, &residuals, set.model().as_ref(), bx, theta_ref, cfg)
}

/// Mean over transitions of `‖x_{t+1} − f(x_t, u_t; θ)‖²`.
pub fn prediction_mse<T: Real>(
    data: &Dataset<T>,
    split: Split,
    model: &dyn Model<T>,
    theta: &[T],
) -> Result<T> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(SpcError::InvalidArgument(format!("{split:?} split is empty")));
    }
    let transitions = recorded_transitions(idx.iter().map(|&i| &data.trajectories()[i]));
    Ok(ls_value(model, &transitions, theta) / T::from_count(transitions.len()))
}

/// [`prediction_mse`] together with its gradient in `θ`.
pub fn prediction_mse_gradient<T: Real>(
    data: &Dataset<T>,
    split: Split,
    model: &dyn Model<T>,
    theta: &[T],
) -> Result<(T, Vec<T>)> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(SpcError::InvalidArgument(format!("{split:?} split is empty")));
    }
    let transitions = recorded_transitions(idx.iter().map(|&i| &data.trajectories()[i]));
    let ev = ls_eval(model, &transitions, theta);
    let inv = T::one() / T::from_count(transitions.len());
    Ok((ev.value * inv, ev.grad.into_iter().map(|g| g * inv).collect()))
}
