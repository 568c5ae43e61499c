mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use spc_core::cost::CostMatrices;
use spc_core::diagnostics::{box_grid, convergence_certificate};
use spc_core::dynamics::{Disturbances, Model, ParamBox, StepJacobians};
use spc_core::linalg::{symmetric_spectral_norm, Mat};
use spc_core::scenario::{Scenario, ScenarioSet, SolverConfig};
use spc_core::surrogate::{
    estimate_lipschitz, estimate_lipschitz_at, gradient_mapping, project_theta, run_spc, run_updated_spc, surrogate_gradient,
    surrogate_value, StepSize, SurrogateConfig,
};

/// `x' = x + u + θ` on every state: an additive drift model.
struct Drift {
    n: usize,
}

impl Model<f64> for Drift {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dim(&self) -> usize {
        self.n
    }
    fn param_dim(&self) -> usize {
        self.n
    }
    fn name(&self) -> &str {
        "drift"
    }
    fn eval(&self, x: &[f64], u: &[f64], th: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = x[i] + u[i] + th[i];
        }
    }
    fn jacobians(&self, _x: &[f64], _u: &[f64], _th: &[f64], jac: &mut StepJacobians<f64>) {
        jac.a = Mat::identity(self.n);
        jac.b = Mat::identity(self.n);
        jac.c = Mat::identity(self.n);
    }
}

/// `x' = x + u`, with one parameter that has no effect.
struct Inert;

impl Model<f64> for Inert {
    fn state_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn name(&self) -> &str {
        "inert"
    }
    fn eval(&self, x: &[f64], u: &[f64], _th: &[f64], out: &mut [f64]) {
        out[0] = x[0] + u[0];
    }
    fn jacobians(&self, _x: &[f64], _u: &[f64], _th: &[f64], jac: &mut StepJacobians<f64>) {
        jac.a[(0, 0)] = 1.0;
        jac.b[(0, 0)] = 1.0;
        jac.c[(0, 0)] = 0.0;
    }
}

fn set_for(model: Arc<dyn Model<f64>>, seed: u64, count: usize, horizon: usize) -> ScenarioSet<f64> {
    let mut r = rng(seed);
    let n = model.state_dim();
    let costs = CostMatrices::new(random_spd(&mut r, n, 0.5), random_spd(&mut r, n, 1.0), random_spd(&mut r, n, 0.5)).unwrap();
    let scenarios = (0..count)
        .map(|id| Scenario {
            id,
            x0: uniform_vec(&mut r, n, -1.0, 1.0),
            w: Disturbances::from_flat(n, uniform_vec(&mut r, n * horizon, -0.2, 0.2)).unwrap(),
        })
        .collect();
    ScenarioSet::new(model, costs, scenarios).unwrap()
}

#[test]
fn surrogate_gradient_matches_resolve_differences() {
    for id in MODELS {
        for seed in 0..4 {
            let set = random_set(id, 200 + seed, 3, 4);
            let bx = param_box(id);
            let mut r = rng(300 + seed);
            let theta = interior_theta(&mut r, &bx);
            let theta_emp = interior_theta(&mut r, &bx);
            let cfg = SolverConfig::default();
            let solves = set.solve_all(&theta, &cfg, None).unwrap();
            let g = surrogate_gradient(&set, &theta, &theta_emp, &solves, &cfg).unwrap();
            let fd = fd_surrogate_gradient(&set, &theta, &theta_emp);
            let err = rel_err(&g, &fd, 1e-6);
            assert!(err <= 1e-4, "{id} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn surrogate_gradient_with_theta_emp_at_theta() {
    for id in MODELS {
        let set = random_set(id, 400, 3, 4);
        let mut r = rng(401);
        let theta = interior_theta(&mut r, &param_box(id));
        let cfg = SolverConfig::default();
        let solves = set.solve_all(&theta, &cfg, None).unwrap();
        let g = surrogate_gradient(&set, &theta, &theta, &solves, &cfg).unwrap();
        // Fixed-evaluation term vanishes: the gradient is twice the envelope term.
        let envelope: Vec<f64> = (0..set.len())
            .map(|i| set.gradients(i, &solves[i].controls, &theta).unwrap().grad_theta)
            .fold(vec![0.0; theta.len()], |acc, gi| acc.iter().zip(&gi).map(|(a, b)| a + 2.0 * b / 3.0).collect());
        assert!(rel_err(&g, &envelope, 1e-6) <= 1e-7, "{id}");
        let fd = fd_surrogate_gradient(&set, &theta, &theta);
        assert!(rel_err(&g, &fd, 1e-6) <= 1e-5, "{id}");
    }
}

#[test]
fn parameter_free_dynamics_give_flat_surrogate() {
    let set = set_for(Arc::new(Inert), 5, 3, 3);
    let bx = ParamBox::uniform(1, -1.0, 1.0).unwrap();
    let cfg = SolverConfig::default();
    let a = surrogate_value(&set, &[0.3], &[-0.2], &cfg).unwrap();
    let b = surrogate_value(&set, &[0.9], &[-0.2], &cfg).unwrap();
    assert_eq!(a, b);
    let solves = set.solve_all(&[0.3], &cfg, None).unwrap();
    assert!(surrogate_gradient(&set, &[0.3], &[-0.2], &solves, &cfg).unwrap()[0].abs() < 1e-12);
    assert!(estimate_lipschitz(&set, &[-0.2], &bx, 6, 1, &cfg).unwrap() <= 2e-8);
    let run_cfg = SurrogateConfig {
        step_size: StepSize::Fixed(0.5),
        iterations: 5,
        ..Default::default()
    };
    let (th, rec) = run_spc(&set, &bx, &[0.3], &[-0.2], &run_cfg).unwrap();
    assert_eq!(th, vec![0.3]);
    assert!(rec.rows.iter().all(|r| r.theta == vec![0.3]));
}

#[test]
fn lipschitz_estimate_on_quadratic_surrogate() {
    let set = set_for(Arc::new(Drift { n: 2 }), 11, 3, 3);
    let bx = ParamBox::uniform(2, -1.0, 1.0).unwrap();
    let theta_emp = [0.1, -0.2];
    let cfg = SolverConfig::default();
    let grad = |th: &[f64]| {
        let s = set.solve_all(th, &cfg, None).unwrap();
        surrogate_gradient(&set, th, &theta_emp, &s, &cfg).unwrap()
    };
    // Dense Hessian by differences of the exact gradient.
    let center = [0.0, 0.0];
    let mut h = Mat::zeros(2, 2);
    for j in 0..2 {
        let mut up = center;
        up[j] += 1e-3;
        let mut dn = center;
        dn[j] -= 1e-3;
        let (gu, gd) = (grad(&up), grad(&dn));
        for i in 0..2 {
            h[(i, j)] = (gu[i] - gd[i]) / 2e-3;
        }
    }
    let spectral = symmetric_spectral_norm(&h);
    let lhat = estimate_lipschitz(&set, &theta_emp, &bx, 12, 3, &cfg).unwrap();
    assert!(spectral > 0.0);
    assert!((lhat / 2.0 - spectral).abs() <= 0.1 * spectral, "L̂/2 = {}, ‖H‖ = {spectral}", lhat / 2.0);
    // Prefix-stable samples: more samples never lower the estimate.
    let more = estimate_lipschitz(&set, &theta_emp, &bx, 24, 3, &cfg).unwrap();
    assert!(more >= lhat);
}

#[test]
fn grid_lipschitz_mode_sets_step_size() {
    let set = set_for(Arc::new(Drift { n: 2 }), 11, 3, 3);
    let bx = ParamBox::uniform(2, -1.0, 1.0).unwrap();
    let theta_emp = [0.1, -0.2];
    let solver = SolverConfig::default();
    let want = estimate_lipschitz_at(&set, &theta_emp, &box_grid(&bx, 5), &solver).unwrap();
    let sampled = estimate_lipschitz(&set, &theta_emp, &bx, 12, 3, &solver).unwrap();
    // Quadratic surrogate: constant Hessian, so both estimates agree.
    assert!((want - sampled).abs() <= 0.1 * sampled);
    let cfg = SurrogateConfig {
        iterations: 1,
        lipschitz_grid: Some(5),
        ..Default::default()
    };
    let (_, rec) = run_spc(&set, &bx, &[0.0, 0.0], &theta_emp, &cfg).unwrap();
    assert_eq!(rec.lipschitz_estimate, Some(want));
    assert_eq!(rec.step_size, 1.0 / want);
    let bad = SurrogateConfig {
        lipschitz_grid: Some(1),
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn fixed_runs_satisfy_descent_certificate() {
    for seed in 0..4 {
        for id in ["scalar", "scalar-2p", "double-integrator"] {
            let set = random_set(id, 500 + seed, 4, 4);
            let bx = param_box(id);
            let mut r = rng(600 + seed);
            let theta0 = interior_theta(&mut r, &bx);
            let theta_emp = interior_theta(&mut r, &bx);
            let cfg = SurrogateConfig {
                iterations: 8,
                ..Default::default()
            };
            let (th, rec) = run_spc(&set, &bx, &theta0, &theta_emp, &cfg).unwrap();
            assert!(bx.contains(&th));
            assert!(rec.rows.iter().all(|row| bx.contains(&row.theta)));
            let cert = convergence_certificate(&rec, None, None, 1e-9);
            assert!(cert.descent_holds, "{id} seed {seed}: slack {:e}", cert.worst_descent_slack);
            assert!(cert.rate_holds, "{id} seed {seed}");
            assert!(cert.step_size_warning.is_none());
        }
    }
}

#[test]
fn rate_bound_with_grid_minimum() {
    let set = random_set("scalar", 700, 4, 3);
    let bx = param_box("scalar");
    let theta_emp = [0.4];
    let cfg = SurrogateConfig {
        iterations: 10,
        ..Default::default()
    };
    let (_, rec) = run_spc(&set, &bx, &[1.2], &theta_emp, &cfg).unwrap();
    let grid_min = (0..=400)
        .map(|k| -1.5 + 3.0 * k as f64 / 400.0)
        .map(|t| surrogate_value(&set, &[t], &theta_emp, &cfg.solver).unwrap())
        .fold(f64::INFINITY, f64::min);
    let cert = convergence_certificate(&rec, None, Some(grid_min), 1e-9);
    assert!(cert.rate_holds, "min ‖G‖² = {:e}, bound {:e}", cert.min_gm_norm_sq, cert.rate_bound);
}

#[test]
fn refresh_period_beyond_budget_matches_fixed_run() {
    let set = random_set("scalar-2p", 800, 3, 3);
    let bx = param_box("scalar-2p");
    let cfg = SurrogateConfig {
        iterations: 5,
        refresh_period: 6,
        ..Default::default()
    };
    let (a, ra) = run_spc(&set, &bx, &[0.5, 1.0], &[0.2, 0.9], &cfg).unwrap();
    let (b, rb) = run_updated_spc(&set, &bx, &[0.5, 1.0], &[0.2, 0.9], &cfg).unwrap();
    assert_eq!(a, b);
    let thetas = |r: &spc_core::surrogate::RunRecord| r.rows.iter().map(|x| (x.theta.clone(), x.loss)).collect::<Vec<_>>();
    assert_eq!(thetas(&ra), thetas(&rb));
}

#[test]
fn updated_variant_marks_refreshes() {
    let set = random_set("scalar", 900, 3, 3);
    let bx = param_box("scalar");
    let cfg = SurrogateConfig {
        iterations: 7,
        refresh_period: 3,
        step_size: StepSize::Fixed(0.05),
        ..Default::default()
    };
    let (_, rec) = run_updated_spc(&set, &bx, &[0.8], &[0.2], &cfg).unwrap();
    assert_eq!(rec.refresh_iterations(), vec![3, 6]);
    // Noise-free counterfactuals reproduce the anchoring parameter.
    let row = &rec.rows[3];
    assert!((row.theta_emp[0] - row.theta[0]).abs() < 1e-8);
}

proptest! {
    #[test]
    fn projection_variational_inequality(
        y in prop::collection::vec(-5.0f64..5.0, 3),
        z in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let bx = ParamBox::new(vec![-1.0, 0.0, 0.5], vec![1.0, 2.0, 0.75]).unwrap();
        let p = project_theta(&y, &bx);
        prop_assert!(bx.contains(&p));
        let zz: Vec<f64> = z.iter().zip(bx.lo()).zip(bx.hi()).map(|((t, lo), hi)| lo + t * (hi - lo)).collect();
        let ip: f64 = (0..3).map(|k| (p[k] - y[k]) * (zz[k] - p[k])).sum();
        prop_assert!(ip >= -1e-12);
    }

    #[test]
    fn gradient_mapping_is_two_step_formula(
        th in prop::collection::vec(-1.0f64..1.0, 2),
        g in prop::collection::vec(-10.0f64..10.0, 2),
        eta in 0.01f64..2.0,
    ) {
        let bx = ParamBox::uniform(2, -1.0, 1.0).unwrap();
        let direct: Vec<f64> = {
            let y: Vec<f64> = th.iter().zip(&g).map(|(t, gg)| t - eta * gg).collect();
            let p = bx.project(&y);
            th.iter().zip(&p).map(|(t, q)| (t - q) / eta).collect()
        };
        prop_assert_eq!(gradient_mapping(&th, &g, eta, &bx), direct);
    }
}
