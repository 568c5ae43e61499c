//! Receding-horizon tracking control for models that are affine in `(x, u)`
//! at a fixed `θ`, and the closed-loop episode on the true system.
//!
//! Each step solves the unconstrained finite-horizon problem with cost
//! `Σ (x−r)ᵀQ(x−r) + uᵀRu + (x_N−r_N)ᵀP(x_N−r_N)` exactly by a Riccati
//! recursion and applies the first control. The horizon shrinks at the tail.

use serde::{Deserialize, Serialize};
use spc_core::dynamics::{Model, StepJacobians};
use spc_core::linalg::Cholesky;
use spc_core::{CostMatrices, Mat, SpcError};

use crate::error::Result;
use crate::reference::Reference;

/// `x' = A x + B u + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Vec<f64>,
}

/// Reads off `(A, B, c)` at `θ` and checks affinity at a probe point.
pub fn affine_model(model: &dyn Model<f64>, theta: &[f64]) -> Result<AffineModel> {
    let (n, m) = (model.state_dim(), model.control_dim());
    let zx = vec![0.0; n];
    let zu = vec![0.0; m];
    let mut c = vec![0.0; n];
    model.eval(&zx, &zu, theta, &mut c);
    let mut jac = StepJacobians::for_model(model);
    model.jacobians(&zx, &zu, theta, &mut jac);
    let probe_x: Vec<f64> = (0..n).map(|i| 0.7 - 0.3 * i as f64).collect();
    let probe_u: Vec<f64> = (0..m).map(|i| 0.4 * i as f64 - 0.5).collect();
    let mut f = vec![0.0; n];
    model.eval(&probe_x, &probe_u, theta, &mut f);
    let ax = jac.a.mul_vec(&probe_x);
    let bu = jac.b.mul_vec(&probe_u);
    for i in 0..n {
        let lin = ax[i] + bu[i] + c[i];
        if (lin - f[i]).abs() > 1e-9 * (1.0 + f[i].abs()) {
            return Err(SpcError::InvalidArgument(format!(
                "model {:?} is not affine in (x, u); tracking MPC needs an affine model",
                model.name()
            ))
            .into());
        }
    }
    Ok(AffineModel { a: jac.a, b: jac.b, c })
}

struct Stage {
    /// `(R + BᵀS'B)⁻¹ BᵀS'A`.
    k: Mat,
    /// `(R + BᵀS'B)⁻¹ Bᵀ`.
    g: Mat,
    /// `(A − BK)ᵀ`.
    closed_t: Mat,
    /// `S'`, the cost-to-go weight one step ahead.
    s_next: Mat,
}

/// Finite-horizon tracking controller with precomputed gains per
/// steps-to-go.
pub struct TrackingMpc {
    model: AffineModel,
    q: Mat,
    p: Mat,
    /// `stages[h - 1]` serves a problem with `h` steps to go.
    stages: Vec<Stage>,
}

fn sub(a: &Mat, b: &Mat) -> Mat {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
    Mat::from_row_major(a.rows(), a.cols(), data).expect("same shape")
}

fn add(a: &Mat, b: &Mat) -> Mat {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
    Mat::from_row_major(a.rows(), a.cols(), data).expect("same shape")
}

impl TrackingMpc {
    pub fn new(model: AffineModel, costs: &CostMatrices, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(SpcError::InvalidArgument("MPC horizon must be at least 1".into()).into());
        }
        let (a, b) = (&model.a, &model.b);
        let bt = b.transpose();
        let mut s = costs.p().clone();
        let mut stages = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let bts = bt.matmul(&s);
            let mut m = add(costs.r(), &bts.matmul(b));
            m.symmetrize();
            let ch = Cholesky::new(&m)?;
            let k = ch.solve_mat(&bts.matmul(a));
            let g = ch.solve_mat(&bt);
            let closed_t = sub(a, &b.matmul(&k)).transpose();
            let mut s_new = add(costs.q(), &closed_t.matmul(&s).matmul(a));
            s_new.symmetrize();
            stages.push(Stage {
                k,
                g,
                closed_t,
                s_next: s,
            });
            s = s_new;
        }
        Ok(Self {
            model,
            q: costs.q().clone(),
            p: costs.p().clone(),
            stages,
        })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// First control of the problem started at `x` with reference states
    /// `refs[0..=h]`, where `h = refs.len() - 1 ≤ horizon`.
    pub fn control(&self, x: &[f64], refs: &[Vec<f64>]) -> Vec<f64> {
        let h = refs.len() - 1;
        assert!(h >= 1 && h <= self.horizon(), "steps to go out of range");
        let n = x.len();
        // s_h = −P r_h, then s_t = −Q r_t + (A − BK)ᵀ (S' c + s').
        let mut s = self.p.mul_vec(&refs[h]);
        s.iter_mut().for_each(|v| *v = -*v);
        for t in (1..h).rev() {
            let st = &self.stages[h - t - 1];
            let e = self.affine_term(st, &s);
            let qr = self.q.mul_vec(&refs[t]);
            let ce = st.closed_t.mul_vec(&e);
            s = (0..n).map(|i| ce[i] - qr[i]).collect();
        }
        let st = &self.stages[h - 1];
        let e = self.affine_term(st, &s);
        let kx = st.k.mul_vec(x);
        let ge = st.g.mul_vec(&e);
        kx.iter().zip(&ge).map(|(a, b)| -a - b).collect()
    }

    fn affine_term(&self, st: &Stage, s_next: &[f64]) -> Vec<f64> {
        let sc = st.s_next.mul_vec(&self.model.c);
        sc.iter().zip(s_next).map(|(a, b)| a + b).collect()
    }
}

/// Per-episode metrics; all nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Root mean squared position error over all samples, m.
    pub rmse: f64,
    /// Stage costs in error coordinates plus the terminal cost.
    pub cost: f64,
    /// `Σ ‖u_t‖²`.
    pub effort: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Sample `k` holds `[p; v]` of the true system.
    pub states: Vec<Vec<f64>>,
    /// One control per step; one fewer than states.
    pub controls: Vec<Vec<f64>>,
    pub metrics: EpisodeMetrics,
}

/// Runs `policy(k, x)` on the true system along the reference.
pub fn closed_loop<F>(
    truth: &dyn Model<f64>,
    theta_true: &[f64],
    wind: impl Fn(usize) -> Vec<f64>,
    reference: &Reference,
    costs: &CostMatrices,
    mut policy: F,
) -> Result<Episode>
where
    F: FnMut(usize, &[f64]) -> Vec<f64>,
{
    let steps = reference.len();
    let n = truth.state_dim();
    let mut x = reference.state(0).to_vec();
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(steps.saturating_sub(1));
    let mut next = vec![0.0; n];
    for k in 0..steps.saturating_sub(1) {
        let u = policy(k, &x);
        truth.eval(&x, &u, theta_true, &mut next);
        for ((xi, &f), &w) in x.iter_mut().zip(&next).zip(&wind(k)) {
            *xi = f + w;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SpcError::NonFinite { step: k + 1 }.into());
        }
        controls.push(u);
        states.push(x.clone());
    }
    let metrics = episode_metrics(&states, &controls, reference, costs);
    Ok(Episode {
        states,
        controls,
        metrics,
    })
}

fn episode_metrics(states: &[Vec<f64>], controls: &[Vec<f64>], reference: &Reference, costs: &CostMatrices) -> EpisodeMetrics {
    let mut sq = 0.0;
    let mut cost = 0.0;
    for (k, x) in states.iter().enumerate() {
        let r = reference.state(k);
        let e: Vec<f64> = x.iter().zip(&r).map(|(a, b)| a - b).collect();
        sq += e[..3].iter().map(|v| v * v).sum::<f64>();
        let w = if k + 1 == states.len() { costs.p() } else { costs.q() };
        cost += w.quad_form(&e);
    }
    let mut effort = 0.0;
    for u in controls {
        cost += costs.r().quad_form(u);
        effort += u.iter().map(|v| v * v).sum::<f64>();
    }
    EpisodeMetrics {
        rmse: (sq / states.len() as f64).sqrt(),
        cost,
        effort,
    }
}

/// Receding-horizon MPC built on `model` at `theta`, run on the true system.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_rollout(
    truth: &dyn Model<f64>,
    theta_true: &[f64],
    wind: impl Fn(usize) -> Vec<f64>,
    model: &dyn Model<f64>,
    theta: &[f64],
    reference: &Reference,
    costs: &CostMatrices,
    horizon: usize,
) -> Result<Episode> {
    let mpc = TrackingMpc::new(affine_model(model, theta)?, costs, horizon)?;
    let last = reference.len() - 1;
    closed_loop(truth, theta_true, wind, reference, costs, |k, x| {
        let h = horizon.min(last - k);
        let refs: Vec<Vec<f64>> = (k..=k + h).map(|j| reference.state(j).to_vec()).collect();
        mpc.control(x, &refs)
    })
}
