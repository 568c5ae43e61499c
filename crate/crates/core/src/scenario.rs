//! Scenario objective `F_i(U, θ)`, its minimizer `U_i*(θ)` and the implicit
//! derivative of the minimizer with respect to `θ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{cost_gradients, total_cost, CostMatrices};
use crate::dynamics::{Disturbances, SharedModel};
use crate::error::{Result, SpcError};
use crate::linalg::{Cholesky, Mat};
use crate::scalar::{dot, norm, Real};

/// An initial state paired with one disturbance sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub id: usize,
    pub x0: Vec<T>,
    pub w: Disturbances<T>,
}

/// Training scenarios together with the model and cost they are scored under.
///
/// `F_i` pairs initial state `x0_i` with every disturbance sequence `W_j` of
/// the set (or the first `subsample` of them when set).
#[derive(Clone)]
pub struct ScenarioSet<T: Real> {
    model: SharedModel<T>,
    costs: CostMatrices<T>,
    scenarios: Vec<Scenario<T>>,
    horizon: usize,
    subsample: Option<usize>,
}

impl<T: Real> std::fmt::Debug for ScenarioSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScenarioSet")
            .field("model", &self.model.name())
            .field("scenarios", &self.scenarios.len())
            .field("horizon", &self.horizon)
            .field("subsample", &self.subsample)
            .finish()
    }
}

impl<T: Real> ScenarioSet<T> {
    pub fn new(
        model: SharedModel<T>,
        costs: CostMatrices<T>,
        scenarios: Vec<Scenario<T>>,
    ) -> Result<Self> {
        let first = scenarios
            .first()
            .ok_or_else(|| SpcError::InvalidArgument("scenario set must be nonempty".into()))?;
        let n = model.state_dim();
        let horizon = first.w.steps();
        if horizon == 0 {
            return Err(SpcError::InvalidArgument("horizon must be at least 1".into()));
        }
        if costs.state_dim() != n || costs.control_dim() != model.control_dim() {
            return Err(SpcError::dims("cost matrices vs model", n, costs.state_dim()));
        }
        for s in &scenarios {
            if s.x0.len() != n {
                return Err(SpcError::dims("scenario initial state", n, s.x0.len()));
            }
            if s.w.dim() != n {
                return Err(SpcError::dims("scenario disturbance dimension", n, s.w.dim()));
            }
            if s.w.steps() != horizon {
                return Err(SpcError::dims("scenario disturbance length", horizon, s.w.steps()));
            }
        }
        Ok(Self {
            model,
            costs,
            scenarios,
            horizon,
            subsample: None,
        })
    }

    /// Uses only the first `count` disturbance sequences inside each `F_i`.
    pub fn with_subsample(mut self, count: Option<usize>) -> Self {
        self.subsample = count.map(|c| c.clamp(1, self.scenarios.len()));
        self
    }

    pub fn model(&self) -> &SharedModel<T> {
        &self.model
    }
    pub fn costs(&self) -> &CostMatrices<T> {
        &self.costs
    }
    pub fn scenarios(&self) -> &[Scenario<T>] {
        &self.scenarios
    }
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }
    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    /// Length `mT` of a stacked control sequence.
    pub fn control_len(&self) -> usize {
        self.model.control_dim() * self.horizon
    }
    pub fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    fn disturbances(&self) -> &[Scenario<T>] {
        match self.subsample {
            Some(k) => &self.scenarios[..k],
            None => &self.scenarios,
        }
    }

    fn x0(&self, i: usize) -> Result<&[T]> {
        self.scenarios
            .get(i)
            .map(|s| s.x0.as_slice())
            .ok_or_else(|| SpcError::InvalidArgument(format!("scenario index {i} out of range")))
    }

    fn check_controls(&self, controls: &[T]) -> Result<()> {
        if controls.len() != self.control_len() {
            return Err(SpcError::dims("stacked controls", self.control_len(), controls.len()));
        }
        Ok(())
    }

    /// `F_i(U, θ)`.
    pub fn objective(&self, i: usize, controls: &[T], theta: &[T]) -> Result<T> {
        self.objective_at(self.x0(i)?, controls, theta)
    }

    /// Scenario objective for an arbitrary initial state.
    pub fn objective_at(&self, x0: &[T], controls: &[T], theta: &[T]) -> Result<T> {
        self.check_controls(controls)?;
        let ws = self.disturbances();
        let mut acc = T::zero();
        for s in ws {
            acc = acc + total_cost(self.model.as_ref(), &self.costs, x0, controls, theta, &s.w)?;
        }
        Ok(acc / T::from_count(ws.len()))
    }

    /// `(∇_U F_i, ∇_θ F_i, F_i)`.
    pub fn gradients(&self, i: usize, controls: &[T], theta: &[T]) -> Result<ScenarioGradients<T>> {
        self.gradients_at(self.x0(i)?, controls, theta)
    }

    pub fn gradients_at(
        &self,
        x0: &[T],
        controls: &[T],
        theta: &[T],
    ) -> Result<ScenarioGradients<T>> {
        self.check_controls(controls)?;
        let ws = self.disturbances();
        let mut out = ScenarioGradients {
            grad_u: vec![T::zero(); controls.len()],
            grad_theta: vec![T::zero(); theta.len()],
            value: T::zero(),
        };
        for s in ws {
            let g = cost_gradients(self.model.as_ref(), &self.costs, x0, controls, theta, &s.w)?;
            for (a, b) in out.grad_u.iter_mut().zip(&g.grad_u) {
                *a = *a + *b;
            }
            for (a, b) in out.grad_theta.iter_mut().zip(&g.grad_theta) {
                *a = *a + *b;
            }
            out.value = out.value + g.cost;
        }
        let inv = T::one() / T::from_count(ws.len());
        out.grad_u.iter_mut().for_each(|g| *g = *g * inv);
        out.grad_theta.iter_mut().for_each(|g| *g = *g * inv);
        out.value = out.value * inv;
        Ok(out)
    }

    /// Minimizes `F_i(·, θ)`.
    pub fn solve(
        &self,
        i: usize,
        theta: &[T],
        cfg: &SolverConfig,
        warm_start: Option<&[T]>,
    ) -> Result<SolveReport<T>> {
        self.solve_at(self.x0(i)?, theta, cfg, warm_start)
    }

    /// Minimizes the scenario objective for an arbitrary initial state.
    ///
    /// Damped Newton with finite-difference Hessians of the analytic gradient
    /// and Armijo halving; falls back to steepest descent when the Newton
    /// direction is not a descent direction.
    pub fn solve_at(
        &self,
        x0: &[T],
        theta: &[T],
        cfg: &SolverConfig,
        warm_start: Option<&[T]>,
    ) -> Result<SolveReport<T>> {
        let tol = T::lit(cfg.tolerance);
        let mut u = match warm_start {
            Some(w) if cfg.warm_start == WarmStart::Previous => {
                self.check_controls(w)?;
                w.to_vec()
            }
            _ => vec![T::zero(); self.control_len()],
        };
        let mut g = self.gradients_at(x0, &u, theta)?;
        let mut gnorm = norm(&g.grad_u);
        let mut hessian: Option<Cholesky<T>> = None;
        let armijo = T::lit(1e-4);
        let half = T::lit(0.5);

        for it in 0..cfg.max_iterations {
            if gnorm <= tol {
                return Ok(SolveReport {
                    controls: u,
                    grad_norm: gnorm.as_f64(),
                    iterations: it,
                    value: g.value.as_f64(),
                });
            }
            if hessian.is_none() {
                hessian = Cholesky::new(&self.hessian_uu_at(x0, &u, theta)?).ok();
            }
            let mut dir: Vec<T> = match &hessian {
                Some(ch) => ch.solve(&g.grad_u).into_iter().map(|v| -v).collect(),
                None => g.grad_u.iter().map(|&v| -v).collect(),
            };
            let mut slope = dot(&g.grad_u, &dir);
            if !(slope < T::zero()) {
                dir = g.grad_u.iter().map(|&v| -v).collect();
                slope = -gnorm * gnorm;
            }

            let mut step = T::one();
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<T> = u.iter().zip(&dir).map(|(&a, &d)| a + step * d).collect();
                if let Ok(gt) = self.gradients_at(x0, &trial, theta) {
                    if gt.value <= g.value + armijo * step * slope {
                        accepted = Some((trial, gt));
                        break;
                    }
                    // Objective differences below rounding: accept a full
                    // step that still shrinks the gradient.
                    if step == T::one() && norm(&gt.grad_u) < half * gnorm
                        && (gt.value - g.value).abs() <= T::epsilon() * T::lit(64.0) * g.value.abs().max(T::one())
                    {
                        accepted = Some((trial, gt));
                        break;
                    }
                }
                step = step * half;
            }
            let Some((trial, gt)) = accepted else {
                return Err(SpcError::NonConvergence {
                    context: "scenario solve (line search)",
                    iterations: it,
                    residual: gnorm.as_f64(),
                    best: u.iter().map(|x| x.as_f64()).collect(),
                });
            };
            let new_norm = norm(&gt.grad_u);
            // Keep the factorization while it contracts the gradient well.
            if step < T::one() || new_norm > half * gnorm {
                hessian = None;
            }
            u = trial;
            g = gt;
            gnorm = new_norm;
        }
        if gnorm <= tol {
            return Ok(SolveReport {
                controls: u,
                grad_norm: gnorm.as_f64(),
                iterations: cfg.max_iterations,
                value: g.value.as_f64(),
            });
        }
        Err(SpcError::NonConvergence {
            context: "scenario solve",
            iterations: cfg.max_iterations,
            residual: gnorm.as_f64(),
            best: u.iter().map(|x| x.as_f64()).collect(),
        })
    }

    /// Solves every scenario in parallel; results are ordered by index.
    pub fn solve_all(
        &self,
        theta: &[T],
        cfg: &SolverConfig,
        warm: Option<&[SolveReport<T>]>,
    ) -> Result<Vec<SolveReport<T>>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let ws = warm.and_then(|w| w.get(i)).map(|r| r.controls.as_slice());
                self.solve(i, theta, cfg, ws)
            })
            .collect()
    }

    fn hessian_uu_at(&self, x0: &[T], controls: &[T], theta: &[T]) -> Result<Mat<T>> {
        let k = controls.len();
        let delta = fd_step(controls);
        let two_delta = delta + delta;
        let cols: Vec<Vec<T>> = (0..k)
            .into_par_iter()
            .map(|j| {
                let mut up = controls.to_vec();
                up[j] = up[j] + delta;
                let mut dn = controls.to_vec();
                dn[j] = dn[j] - delta;
                let gp = self.gradients_at(x0, &up, theta)?;
                let gm = self.gradients_at(x0, &dn, theta)?;
                Ok(gp.grad_u.iter().zip(&gm.grad_u).map(|(&a, &b)| (a - b) / two_delta).collect())
            })
            .collect::<Result<_>>()?;
        let mut h = Mat::zeros(k, k);
        for (j, c) in cols.iter().enumerate() {
            h.set_col(j, c);
        }
        h.symmetrize();
        Ok(h)
    }

    fn hessian_utheta_at(&self, x0: &[T], controls: &[T], theta: &[T]) -> Result<Mat<T>> {
        let p = theta.len();
        let delta = fd_step(theta);
        let two_delta = delta + delta;
        let mut h = Mat::zeros(controls.len(), p);
        for j in 0..p {
            let mut up = theta.to_vec();
            up[j] = up[j] + delta;
            let mut dn = theta.to_vec();
            dn[j] = dn[j] - delta;
            let gp = self.gradients_at(x0, controls, &up)?;
            let gm = self.gradients_at(x0, controls, &dn)?;
            let col: Vec<T> = gp.grad_u.iter().zip(&gm.grad_u).map(|(&a, &b)| (a - b) / two_delta).collect();
            h.set_col(j, &col);
        }
        Ok(h)
    }

    /// `∇²_UU F_i` and `∇²_Uθ F_i` at `(U*, θ)` by central differences of the
    /// analytic gradient; fails when `∇²_UU F_i` is not `⪰ μ_floor I`.
    pub fn optimizer_hessians(
        &self,
        i: usize,
        ustar: &[T],
        theta: &[T],
        cfg: &SolverConfig,
    ) -> Result<OptimizerHessians<T>> {
        self.optimizer_hessians_at(self.x0(i)?, ustar, theta, cfg)
    }

    pub fn optimizer_hessians_at(
        &self,
        x0: &[T],
        ustar: &[T],
        theta: &[T],
        cfg: &SolverConfig,
    ) -> Result<OptimizerHessians<T>> {
        self.check_controls(ustar)?;
        let h_uu = self.hessian_uu_at(x0, ustar, theta)?;
        let mu = T::lit(cfg.mu_floor);
        let mut shifted = h_uu.clone();
        for d in 0..shifted.rows() {
            shifted[(d, d)] = shifted[(d, d)] - mu;
        }
        if Cholesky::new(&shifted).is_err() {
            return Err(SpcError::StrongConvexity(format!(
                "Hessian in U has an eigenvalue below {:e}",
                cfg.mu_floor
            )));
        }
        let h_utheta = self.hessian_utheta_at(x0, ustar, theta)?;
        Ok(OptimizerHessians { h_uu, h_utheta })
    }

    /// `DU_i*(θ) = -[∇²_UU F_i]⁻¹ ∇²_Uθ F_i`, an `mT × p` matrix.
    pub fn optimizer_jacobian(
        &self,
        i: usize,
        ustar: &[T],
        theta: &[T],
        cfg: &SolverConfig,
    ) -> Result<Mat<T>> {
        self.optimizer_jacobian_at(self.x0(i)?, ustar, theta, cfg)
    }

    pub fn optimizer_jacobian_at(
        &self,
        x0: &[T],
        ustar: &[T],
        theta: &[T],
        cfg: &SolverConfig,
    ) -> Result<Mat<T>> {
        let hs = self.optimizer_hessians_at(x0, ustar, theta, cfg)?;
        let ch = Cholesky::new(&hs.h_uu)?;
        let mut du = ch.solve_mat(&hs.h_utheta);
        du.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
        Ok(du)
    }
}

/// `δ = max(base, base·‖point‖)`.
pub(crate) fn fd_step<T: Real>(point: &[T]) -> T {
    let base = T::fd_base_step();
    base.max(base * norm(point))
}

/// Averaged gradients of `F_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGradients<T> {
    pub grad_u: Vec<T>,
    pub grad_theta: Vec<T>,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerHessians<T> {
    pub h_uu: Mat<T>,
    pub h_utheta: Mat<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    /// Start from the caller-provided controls when given.
    #[default]
    Previous,
    /// Always start from zero controls.
    Zeros,
}

/// Inner-solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once `‖∇_U F_i‖ ≤ tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub warm_start: WarmStart,
    /// Strong-convexity floor on `∇²_UU F_i`.
    pub mu_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 100,
            warm_start: WarmStart::Previous,
            mu_floor: 1e-8,
        }
    }
}

/// Result of one inner solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport<T> {
    pub controls: Vec<T>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub value: f64,
}
