#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spc_core::cost::CostMatrices;
use spc_core::diagnostics::DeploymentSet;
use spc_core::dynamics::{default_param_box, model_from_id, rollout, Disturbances, ParamBox, SharedModel};
use spc_core::identification::{estimate_disturbances, fit_tpc, training_scenarios, Dataset, FitConfig, RecordedTrajectory};
use spc_core::linalg::Mat;
use spc_core::scenario::{Scenario, ScenarioSet, SolverConfig};
use spc_core::surrogate::surrogate_value;

pub const MODELS: [&str; 5] = ["scalar", "scalar-2p", "double-integrator", "sine-actuator", "pointmass-wind"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, lo, hi)).collect()
}

pub fn dt_for(id: &str) -> f64 {
    match id {
        "pointmass-wind" | "double-integrator" => 0.1,
        _ => 1.0,
    }
}

pub fn model(id: &str) -> SharedModel<f64> {
    model_from_id(id, dt_for(id)).unwrap()
}

pub fn param_box(id: &str) -> ParamBox<f64> {
    default_param_box(id).unwrap()
}

/// Interior point, kept away from the faces.
pub fn interior_theta(rng: &mut ChaCha8Rng, bx: &ParamBox<f64>) -> Vec<f64> {
    bx.lo()
        .iter()
        .zip(bx.hi())
        .map(|(&lo, &hi)| uniform(rng, lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)))
        .collect()
}

/// Random symmetric positive semidefinite matrix `L Lᵀ + shift I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Mat<f64> {
    let l = Mat::from_row_major(n, n, uniform_vec(rng, n * n, -0.6, 0.6)).unwrap();
    let mut m = l.matmul(&l.transpose());
    for i in 0..n {
        m[(i, i)] += shift;
    }
    m.symmetrize();
    m
}

pub fn random_costs(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostMatrices<f64> {
    let q = random_spd(rng, n, 0.2);
    let r = random_spd(rng, m, 0.5);
    let p = random_spd(rng, n, 0.2);
    CostMatrices::new(q, r, p).unwrap()
}

pub struct Instance {
    pub model: SharedModel<f64>,
    pub costs: CostMatrices<f64>,
    pub x0: Vec<f64>,
    pub controls: Vec<f64>,
    pub theta: Vec<f64>,
    pub w: Disturbances<f64>,
}

pub fn random_instance(id: &str, seed: u64) -> Instance {
    let mut r = rng(seed);
    let model = model(id);
    let (n, m) = (model.state_dim(), model.control_dim());
    let horizon = 1 + (seed as usize % 6);
    let theta = interior_theta(&mut r, &param_box(id));
    let costs = random_costs(&mut r, n, m);
    Instance {
        x0: uniform_vec(&mut r, n, -1.5, 1.5),
        controls: uniform_vec(&mut r, m * horizon, -1.0, 1.0),
        w: Disturbances::from_flat(n, uniform_vec(&mut r, n * horizon, -0.3, 0.3)).unwrap(),
        model,
        costs,
        theta,
    }
}

/// Scenario set with `count` scenarios whose inner problems are strongly
/// convex (small controls gain on the sine model, unit control weights).
pub fn random_set(id: &str, seed: u64, count: usize, horizon: usize) -> ScenarioSet<f64> {
    let mut r = rng(seed);
    let model = model(id);
    let (n, m) = (model.state_dim(), model.control_dim());
    let q = random_spd(&mut r, n, 0.5);
    let p = random_spd(&mut r, n, 0.5);
    let rr = random_spd(&mut r, m, 1.0);
    let costs = CostMatrices::new(q, rr, p).unwrap();
    let scenarios = (0..count)
        .map(|id| Scenario {
            id,
            x0: uniform_vec(&mut r, n, -1.0, 1.0),
            w: Disturbances::from_flat(n, uniform_vec(&mut r, n * horizon, -0.2, 0.2)).unwrap(),
        })
        .collect();
    ScenarioSet::new(model, costs, scenarios).unwrap()
}

/// Central differences of a scalar function.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let step = h * x[j].abs().max(1.0);
            let mut up = x.to_vec();
            up[j] += step;
            let mut dn = x.to_vec();
            dn[j] -= step;
            (f(&up) - f(&dn)) / (2.0 * step)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(b)).max(floor)
}

pub fn fd_surrogate_gradient(set: &ScenarioSet<f64>, theta: &[f64], theta_emp: &[f64]) -> Vec<f64> {
    let cfg = SolverConfig {
        tolerance: 1e-12,
        ..SolverConfig::default()
    };
    central_diff(|th| surrogate_value(set, th, theta_emp, &cfg).unwrap(), theta, 1e-5)
}

/// Batch least-squares minimizer of the scenario objective for a linear model
/// `x' = A x + B u + w`: stack `X = Φ x0 + Γ U + Ψ W̄` and solve the normal
/// equations.
pub fn batch_lqr(a: &DMatrix<f64>, b: &DMatrix<f64>, set: &ScenarioSet<f64>, i: usize) -> DVector<f64> {
    let (n, m, t) = (a.nrows(), b.ncols(), set.horizon());
    let q = to_na(set.costs().q());
    let r = to_na(set.costs().r());
    let p = to_na(set.costs().p());
    let mut phi = DMatrix::zeros(n * t, n);
    let mut gamma = DMatrix::zeros(n * t, m * t);
    let mut psi = DMatrix::zeros(n * t, n * t);
    let mut apow = DMatrix::identity(n, n);
    let mut powers = vec![DMatrix::identity(n, n)];
    for _ in 0..t {
        apow = a * &apow;
        powers.push(apow.clone());
    }
    for k in 1..=t {
        phi.view_mut(((k - 1) * n, 0), (n, n)).copy_from(&powers[k]);
        for s in 0..k {
            let ak = &powers[k - 1 - s];
            gamma.view_mut(((k - 1) * n, s * m), (n, m)).copy_from(&(ak * b));
            psi.view_mut(((k - 1) * n, s * n), (n, n)).copy_from(ak);
        }
    }
    let mut qbar = DMatrix::zeros(n * t, n * t);
    for k in 0..t {
        let w = if k + 1 == t { &p } else { &q };
        qbar.view_mut((k * n, k * n), (n, n)).copy_from(w);
    }
    let mut rbar = DMatrix::zeros(m * t, m * t);
    for k in 0..t {
        rbar.view_mut((k * m, k * m), (m, m)).copy_from(&r);
    }
    let x0 = DVector::from_column_slice(&set.scenarios()[i].x0);
    let mut wbar = DVector::zeros(n * t);
    for s in set.scenarios() {
        wbar += DVector::from_column_slice(s.w.as_flat());
    }
    wbar /= set.len() as f64;
    let h = gamma.transpose() * &qbar * &gamma + rbar;
    let rhs = -(gamma.transpose() * &qbar * (phi * x0 + psi * wbar));
    h.cholesky().unwrap().solve(&rhs)
}

pub fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn unit_costs() -> CostMatrices<f64> {
    CostMatrices::diagonal(&[1.0], &[0.5], &[1.0]).unwrap()
}

/// Scalar system `x' = 0.8 x + u + 0.3`: a constant drift the model `θ x + u`
/// cannot express, so its residuals are biased.
pub fn biased_scalar_pipeline() -> (ScenarioSet<f64>, DeploymentSet<f64>, Vec<f64>) {
    biased_pipeline("scalar", &[0.8], 0.3)
}

/// Data from model `id` at `truth` plus a constant `drift`, fitted by
/// prediction error; returns the training scenarios, a deployment set under
/// the true drift and `θ_TPC`.
pub fn biased_pipeline(id: &str, truth: &[f64], drift: f64) -> (ScenarioSet<f64>, DeploymentSet<f64>, Vec<f64>) {
    let model = model(id);
    let mut r = rng(12);
    let horizon = 4;
    let trajs: Vec<RecordedTrajectory<f64>> = (0..12)
        .map(|_| {
            let x0 = uniform_vec(&mut r, 1, -2.0, 2.0);
            let u = uniform_vec(&mut r, horizon, -1.0, 1.0);
            let w = Disturbances::from_flat(1, vec![drift; horizon]).unwrap();
            RecordedTrajectory::new(rollout(model.as_ref(), &x0, &u, truth, &w).unwrap(), u).unwrap()
        })
        .collect();
    let data = Dataset::new(trajs, (0..12).collect(), vec![]).unwrap();
    let bx = param_box(id);
    let theta0 = fit_tpc(&data, model.as_ref(), &bx, &FitConfig::default()).unwrap().theta;
    let w = estimate_disturbances(&data, model.as_ref(), &theta0).unwrap();
    let set = training_scenarios(&data, &w, model, unit_costs()).unwrap();
    let dep = DeploymentSet::new(
        (0..6)
            .map(|id| Scenario {
                id,
                x0: vec![-1.5 + 0.6 * id as f64],
                w: Disturbances::from_flat(1, vec![drift; horizon]).unwrap(),
            })
            .collect(),
        truth.to_vec(),
        Some(&bx),
    )
    .unwrap();
    (set, dep, theta0)
}
