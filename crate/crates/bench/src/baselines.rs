//! Comparison methods: control-weighted regression (CW-Reg) and
//! differentiable control (DiffCtrl).

use rayon::prelude::*;
use spc_core::identification::{fit_tpc, prediction_mse_gradient, FitConfig, FitReport, Split};
use spc_core::linalg::Cholesky;
use spc_core::scalar::{dot, norm};
use spc_core::scenario::SolverConfig;
use spc_core::{Dataset, Mat, ParamBox, ScenarioSet, SolveReport, SpcError};

use crate::error::Result;

/// Minimizes a smooth function over the box by projected Newton steps on the
/// free coordinates, with finite-difference Hessians of the supplied
/// gradient and Armijo backtracking along the projection arc.
pub fn minimize_box<F>(f: F, bx: &ParamBox, start: &[f64], cfg: &FitConfig) -> Result<FitReport<f64>>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let p = start.len();
    let mut theta = bx.project(start);
    let (mut value, mut grad) = f(&theta)?;
    for it in 0..cfg.max_iterations {
        let gm = unit_gradient_mapping(&theta, &grad, bx);
        if gm <= cfg.tolerance {
            return Ok(FitReport {
                theta,
                objective: value,
                gradient_mapping_norm: gm,
                iterations: it,
            });
        }
        let free: Vec<usize> = (0..p)
            .filter(|&j| {
                let at_lo = theta[j] <= bx.lo()[j] && grad[j] > 0.0;
                let at_hi = theta[j] >= bx.hi()[j] && grad[j] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let mut dir = vec![0.0; p];
        if let Some(step) = newton_step(&f, &theta, &grad, &free)? {
            for (&j, &d) in free.iter().zip(&step) {
                dir[j] = d;
            }
        }
        if dot(&dir, &grad) >= 0.0 {
            dir = grad.iter().map(|g| -g).collect();
        }
        let mut alpha = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = bx.project(&theta.iter().zip(&dir).map(|(t, d)| t + alpha * d).collect::<Vec<_>>());
            let (tv, tg) = f(&trial)?;
            let moved: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            if tv <= value + 1e-4 * dot(&grad, &moved) {
                break Some((trial, tv, tg));
            }
            alpha *= 0.5;
            if alpha < 1e-14 {
                break None;
            }
        };
        match accepted {
            Some((t, v, g)) => {
                theta = t;
                value = v;
                grad = g;
            }
            None => {
                let report = FitReport {
                    gradient_mapping_norm: gm,
                    theta,
                    objective: value,
                    iterations: it,
                };
                return stalled(report, cfg);
            }
        }
    }
    let gm = unit_gradient_mapping(&theta, &grad, bx);
    if gm <= cfg.tolerance {
        return Ok(FitReport {
            theta,
            objective: value,
            gradient_mapping_norm: gm,
            iterations: cfg.max_iterations,
        });
    }
    Err(SpcError::NonConvergence {
        context: "box minimization",
        iterations: cfg.max_iterations,
        residual: gm,
        best: theta,
    }
    .into())
}

/// A line search that cannot improve is accepted when the iterate is already
/// stationary to within a loose multiple of the tolerance.
fn stalled(r: FitReport<f64>, cfg: &FitConfig) -> Result<FitReport<f64>> {
    if r.gradient_mapping_norm <= 1e3 * cfg.tolerance {
        Ok(r)
    } else {
        Err(SpcError::NonConvergence {
            context: "box minimization line search",
            iterations: r.iterations,
            residual: r.gradient_mapping_norm,
            best: r.theta,
        }
        .into())
    }
}

fn unit_gradient_mapping(theta: &[f64], grad: &[f64], bx: &ParamBox) -> f64 {
    let step: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - g).collect();
    let proj = bx.project(&step);
    norm(&theta.iter().zip(&proj).map(|(a, b)| a - b).collect::<Vec<_>>())
}

fn newton_step<F>(f: &F, theta: &[f64], grad: &[f64], free: &[usize]) -> Result<Option<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let k = free.len();
    if k == 0 {
        return Ok(None);
    }
    let mut h = Mat::zeros(k, k);
    for (c, &j) in free.iter().enumerate() {
        let delta = 1e-6 * theta[j].abs().max(1.0);
        let mut up = theta.to_vec();
        up[j] += delta;
        let mut dn = theta.to_vec();
        dn[j] -= delta;
        let gp = f(&up)?.1;
        let gd = f(&dn)?.1;
        for (r, &i) in free.iter().enumerate() {
            h[(r, c)] = (gp[i] - gd[i]) / (2.0 * delta);
        }
    }
    h.symmetrize();
    let scale = (0..k).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-12);
    let rhs: Vec<f64> = free.iter().map(|&j| -grad[j]).collect();
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut shifted = h.clone();
        for i in 0..k {
            shifted[(i, i)] += ridge;
        }
        if let Ok(ch) = Cholesky::new(&shifted) {
            return Ok(Some(ch.solve(&rhs)));
        }
        ridge = if ridge == 0.0 { 1e-8 * scale } else { ridge * 10.0 };
    }
    Ok(None)
}

/// `MSE_train(θ) + λ (1/N) Σ_i F_i(U_i^rec, θ)` with the recorded controls
/// of each training trajectory, and its gradient.
pub fn cwreg_objective(data: &Dataset, set: &ScenarioSet, lambda: f64, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let model = set.model().as_ref();
    let (mse, mut grad) = prediction_mse_gradient(data, Split::Train, model, theta)?;
    if lambda == 0.0 {
        return Ok((mse, grad));
    }
    let terms: Vec<(f64, Vec<f64>)> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let traj = &data.trajectories()[set.scenarios()[i].id];
            let g = set.gradients(i, &traj.controls, theta)?;
            Ok((g.value, g.grad_theta))
        })
        .collect::<Result<_>>()?;
    let w = lambda / set.len() as f64;
    let mut value = mse;
    for (v, g) in &terms {
        value += w * v;
        for (o, gj) in grad.iter_mut().zip(g) {
            *o += w * gj;
        }
    }
    Ok((value, grad))
}

/// CW-Reg estimate; `λ = 0` reduces to the prediction fit.
pub fn run_baseline_cwreg(
    data: &Dataset,
    set: &ScenarioSet,
    bx: &ParamBox,
    lambda: f64,
    cfg: &FitConfig,
) -> Result<FitReport<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(SpcError::InvalidArgument(format!("CW-Reg weight must be nonnegative, got {lambda}")).into());
    }
    let tpc = fit_tpc(data, set.model().as_ref(), bx, cfg)?;
    if lambda == 0.0 {
        return Ok(tpc);
    }
    minimize_box(|th| cwreg_objective(data, set, lambda, th), bx, &tpc.theta, cfg)
}

/// Proxy deployment cost `(1/N) Σ_i F_i(U_i*(θ), θ_eval)`.
pub fn diffctrl_objective(set: &ScenarioSet, theta_eval: &[f64], solves: &[SolveReport]) -> Result<f64> {
    let vals: Vec<f64> = (0..set.len())
        .into_par_iter()
        .map(|i| Ok(set.objective(i, &solves[i].controls, theta_eval)?))
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / set.len() as f64)
}

/// `(1/N) Σ_i DU_i*(θ)ᵀ ∂_U F_i(U_i*(θ), θ_eval)`.
pub fn diffctrl_gradient(
    set: &ScenarioSet,
    theta: &[f64],
    theta_eval: &[f64],
    solves: &[SolveReport],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let p = set.param_dim();
    let terms: Vec<Vec<f64>> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let u = &solves[i].controls;
            let g = set.gradients(i, u, theta_eval)?;
            let du = set.optimizer_jacobian(i, u, theta, cfg)?;
            let mut out = vec![0.0; p];
            du.tr_mul_vec_add(&g.grad_u, &mut out);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; p];
    for t in &terms {
        for (o, v) in out.iter_mut().zip(t) {
            *o += v;
        }
    }
    Ok(out.into_iter().map(|v| v / set.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffCtrlRun {
    pub theta: Vec<f64>,
    /// Proxy cost at each accepted iterate, starting with `θ⁰`.
    pub losses: Vec<f64>,
}

/// Projected gradient descent on the proxy with backtracking: the step is
/// halved until `P(θ⁺) ≤ P(θ) + ∇ᵀ(θ⁺−θ) + ‖θ⁺−θ‖²/(2η)` and doubled after
/// each accepted step.
pub fn run_baseline_diffctrl(
    set: &ScenarioSet,
    bx: &ParamBox,
    theta0: &[f64],
    theta_eval: &[f64],
    iterations: usize,
    cfg: &SolverConfig,
) -> Result<DiffCtrlRun> {
    let mut theta = bx.project(theta0);
    let mut solves = set.solve_all(&theta, cfg, None)?;
    let mut loss = diffctrl_objective(set, theta_eval, &solves)?;
    let mut losses = vec![loss];
    let mut eta = 1.0;
    for _ in 0..iterations {
        let grad = diffctrl_gradient(set, &theta, theta_eval, &solves, cfg)?;
        // Inner solves stop at `cfg.tolerance`, so a smaller projected
        // gradient is noise.
        let step = bx.project(&theta.iter().zip(&grad).map(|(t, g)| t - g).collect::<Vec<_>>());
        let pg: Vec<f64> = step.iter().zip(&theta).map(|(a, b)| a - b).collect();
        if norm(&pg) <= cfg.tolerance {
            break;
        }
        let mut accepted = None;
        while eta > 1e-12 {
            let trial = bx.project(&theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect::<Vec<_>>());
            let moved: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
            if norm(&moved) == 0.0 {
                break;
            }
            let trial_solves = set.solve_all(&trial, cfg, Some(&solves))?;
            let trial_loss = diffctrl_objective(set, theta_eval, &trial_solves)?;
            if trial_loss <= loss + dot(&grad, &moved) + dot(&moved, &moved) / (2.0 * eta) {
                accepted = Some((trial, trial_solves, trial_loss));
                break;
            }
            eta *= 0.5;
        }
        let Some((t, s, l)) = accepted else { break };
        theta = t;
        solves = s;
        loss = l;
        losses.push(loss);
        eta *= 2.0;
    }
    Ok(DiffCtrlRun { theta, losses })
}
