mod common;

use std::sync::Arc;

use common::*;
use rand_chacha::ChaCha8Rng;
use spc_core::cost::CostMatrices;
use spc_core::dynamics::{
    make_pointmass_wind_model, rollout, Disturbances, Model, ParamBox, PointMassModel, Trajectory, WindBiasLevel,
    WindSpec,
};
use spc_core::identification::{
    counterfactual_rollout, estimate_disturbances, fit_theta_emp, fit_tpc, prediction_mse, theta_emp_from_solves,
    training_scenarios, Dataset, FitConfig, RecordedTrajectory, Split,
};
use spc_core::io::{read_dataset, write_dataset};
use spc_core::scenario::SolverConfig;

/// Simulates `count` trajectories of `model` under `theta` with random
/// controls and disturbances produced by `w(trajectory, step)`.
fn simulate(
    model: &dyn Model<f64>,
    theta: &[f64],
    count: usize,
    horizon: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
    w: impl Fn(usize, usize, &mut ChaCha8Rng) -> Vec<f64>,
) -> Vec<RecordedTrajectory<f64>> {
    let (n, m) = (model.state_dim(), model.control_dim());
    (0..count)
        .map(|k| {
            let x0 = uniform_vec(rng, n, -spread, spread);
            let u = uniform_vec(rng, m * horizon, -spread, spread);
            let steps: Vec<Vec<f64>> = (0..horizon).map(|t| w(k, t, rng)).collect();
            let dist = Disturbances::from_steps(n, &steps).unwrap();
            let traj = rollout(model, &x0, &u, theta, &dist).unwrap();
            RecordedTrajectory::new(traj, u).unwrap()
        })
        .collect()
}

#[test]
fn noiseless_data_recovers_generator() {
    for id in ["scalar", "scalar-2p", "double-integrator", "sine-actuator"] {
        let model = model(id);
        let bx = param_box(id);
        let mut r = rng(17);
        let truth = interior_theta(&mut r, &bx);
        let trajs = simulate(model.as_ref(), &truth, 10, 8, 1.0, &mut r, |_, _, _| vec![0.0; model.state_dim()]);
        let data = Dataset::split_default(trajs, 3).unwrap();
        let fit = fit_tpc(&data, model.as_ref(), &bx, &FitConfig::default()).unwrap();
        assert!(rel_err(&fit.theta, &truth, 1.0) <= 1e-8, "{id}: {:?} vs {truth:?}", fit.theta);
        assert!(prediction_mse(&data, Split::Test, model.as_ref(), &fit.theta).unwrap() < 1e-20);
        let w = estimate_disturbances(&data, model.as_ref(), &fit.theta).unwrap();
        assert!(w.iter().all(|d| d.as_flat().iter().all(|x| x.abs() < 1e-9)));
    }
}

/// One long proportional-derivative tracking run of a circle, sliced into
/// fixed-length trajectories.
fn pd_tracking_run(pm: &PointMassModel, truth: &[f64], pieces: usize, horizon: usize) -> Vec<RecordedTrajectory<f64>> {
    let dt = pm.dt();
    let mut r = rng(5);
    let mut x = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut out = Vec::new();
    for k in 0..pieces {
        let mut states = x.clone();
        let mut controls = Vec::new();
        for t in 0..horizon {
            let step = k * horizon + t;
            let time = step as f64 * dt;
            let pref = [time.cos(), time.sin(), 0.0];
            let vref = [-time.sin(), time.cos(), 0.0];
            let u: Vec<f64> = (0..3)
                .map(|j| 4.0 * (pref[j] - x[j]) + 3.0 * (vref[j] - x[3 + j]) + uniform(&mut r, -0.5, 0.5))
                .collect();
            let mut next = vec![0.0; 6];
            pm.eval(&x, &u, truth, &mut next);
            for (xi, wi) in next.iter_mut().zip(pm.wind_disturbance::<f64>(step)) {
                *xi += wi;
            }
            controls.extend(&u);
            states.extend(&next);
            x = next;
        }
        out.push(RecordedTrajectory::new(Trajectory::from_flat(6, states).unwrap(), controls).unwrap());
    }
    out
}

#[test]
fn pointmass_residuals_reproduce_injected_wind() {
    let pm = make_pointmass_wind_model(0.02, 1.0, WindSpec::default(), WindBiasLevel::Position).unwrap();
    let truth = PointMassModel::true_theta([0.3, 0.2, 0.25]);
    let bx = param_box("pointmass-wind");
    let horizon = 25;
    let data = Dataset::split_default(pd_tracking_run(&pm, &truth, 40, horizon), 1).unwrap();
    let fit = fit_tpc(&data, &pm, &bx, &FitConfig::default()).unwrap();
    // Wind lives in the velocity rows, the position-level bias has nothing to explain.
    assert!(fit.theta[3..].iter().all(|b| b.abs() < 1e-9), "{:?}", fit.theta);
    let w = estimate_disturbances(&data, &pm, &fit.theta).unwrap();
    for (k, d) in w.iter().enumerate() {
        let injected = pm.wind_sequence::<f64>(k * horizon, horizon);
        let worst = d
            .as_flat()
            .iter()
            .zip(injected.as_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "trajectory {k}: {worst:e}");
    }
}

#[test]
fn counterfactual_with_recorded_controls_replays_record() {
    let model = model("double-integrator");
    let bx = param_box("double-integrator");
    let mut r = rng(23);
    let truth = vec![0.95, 0.12];
    let trajs = simulate(model.as_ref(), &truth, 6, 5, 1.0, &mut r, |_, _, rng| uniform_vec(rng, 2, -0.05, 0.05));
    let data = Dataset::new(trajs, (0..6).collect(), vec![]).unwrap();
    let theta0 = fit_tpc(&data, model.as_ref(), &bx, &FitConfig::default()).unwrap().theta;
    let w = estimate_disturbances(&data, model.as_ref(), &theta0).unwrap();
    let costs = CostMatrices::diagonal(&[1.0, 0.1], &[0.01], &[1.0, 0.1]).unwrap();
    let set = training_scenarios(&data, &w, model.clone(), costs).unwrap();
    for (i, tr) in data.trajectories().iter().enumerate() {
        let cf = counterfactual_rollout(&set, i, &theta0, &tr.controls).unwrap();
        assert!(rel_err(cf.as_flat(), tr.states.as_flat(), 1.0) < 1e-12);
    }
}

#[test]
fn theta_emp_reproduces_anchor_on_identifiable_models() {
    for id in ["scalar-2p", "double-integrator", "pointmass-wind"] {
        let model = model(id);
        let bx = param_box(id);
        let mut r = rng(31);
        let truth = interior_theta(&mut r, &bx);
        let n = model.state_dim();
        let trajs = simulate(model.as_ref(), &truth, 8, 6, 1.0, &mut r, |_, _, rng| uniform_vec(rng, n, -0.1, 0.1));
        let data = Dataset::new(trajs, (0..8).collect(), vec![]).unwrap();
        let theta0 = fit_tpc(&data, model.as_ref(), &bx, &FitConfig::default()).unwrap().theta;
        let w = estimate_disturbances(&data, model.as_ref(), &theta0).unwrap();
        // Estimating twice gives bit-identical residuals.
        assert_eq!(w, estimate_disturbances(&data, model.as_ref(), &theta0).unwrap());
        let m = model.control_dim();
        let set = training_scenarios(&data, &w, model.clone(), CostMatrices::diagonal(&vec![1.0; n], &vec![0.1; m], &vec![1.0; n]).unwrap())
            .unwrap();
        let solves = set.solve_all(&theta0, &SolverConfig::default(), None).unwrap();
        let emp = theta_emp_from_solves(&set, &theta0, &solves, &bx, &FitConfig::default()).unwrap();
        assert!(rel_err(&emp.theta, &theta0, 1.0) < 1e-8, "{id}");
    }
}

#[test]
fn theta_emp_recovers_counterfactual_generator() {
    // Counterfactual rollouts generated under one parameter and fitted back
    // with the same residuals recover that parameter, whatever it is.
    let model = model("scalar-2p");
    let bx = param_box("scalar-2p");
    let u = vec![vec![0.1, -0.3]];
    let w = vec![Disturbances::from_flat(1, vec![0.05, -0.02]).unwrap()];
    let anchor = [0.6, 1.1];
    let x_cf = rollout(model.as_ref(), &[1.0], &u[0], &anchor, &w[0]).unwrap();
    let fit = fit_theta_emp(&[x_cf], &u, &w, model.as_ref(), &bx, &[0.0, 1.0], &FitConfig::default()).unwrap();
    assert!(rel_err(&fit.theta, &anchor, 1.0) < 1e-10);
}

#[test]
fn tpc_minimizes_training_error() {
    let model = model("scalar-2p");
    let bx = param_box("scalar-2p");
    let mut r = rng(41);
    let trajs = simulate(model.as_ref(), &[0.7, 1.3], 10, 6, 1.0, &mut r, |_, _, rng| uniform_vec(rng, 1, -0.2, 0.4));
    let data = Dataset::split_default(trajs, 0).unwrap();
    let fit = fit_tpc(&data, model.as_ref(), &bx, &FitConfig::default()).unwrap();
    let best = prediction_mse(&data, Split::Train, model.as_ref(), &fit.theta).unwrap();
    for _ in 0..50 {
        let th = interior_theta(&mut r, &bx);
        assert!(best <= prediction_mse(&data, Split::Train, model.as_ref(), &th).unwrap());
    }
}

#[test]
fn fit_respects_box() {
    let model = model("scalar");
    let mut r = rng(3);
    let trajs = simulate(model.as_ref(), &[0.9], 4, 5, 1.0, &mut r, |_, _, _| vec![0.0]);
    let data = Dataset::new(trajs, (0..4).collect(), vec![]).unwrap();
    let bx = ParamBox::uniform(1, -0.5, 0.5).unwrap();
    let fit = fit_tpc(&data, model.as_ref(), &bx, &FitConfig::default()).unwrap();
    assert_eq!(fit.theta, vec![0.5]);
}

#[test]
fn dataset_files_round_trip() {
    let pm = Arc::new(make_pointmass_wind_model(0.02, 1.0, WindSpec::default(), WindBiasLevel::Position).unwrap());
    let mut r = rng(8);
    let trajs = simulate(pm.as_ref(), &PointMassModel::true_theta([0.3; 3]), 5, 7, 1.0, &mut r, |_, t, _| pm.wind_disturbance(t));
    let data = Dataset::split_default(trajs, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &data, 0.02, 9, Some("pointmass-wind")).unwrap();
    assert_eq!(manifest.files.len(), 5);
    let (back, m2) = read_dataset::<f64>(dir.path()).unwrap();
    assert_eq!(back, data);
    assert_eq!(m2, manifest);
    let header = std::fs::read_to_string(dir.path().join(&manifest.files[0])).unwrap();
    assert!(header.starts_with("t,x_0,x_1,x_2,x_3,x_4,x_5,u_0,u_1,u_2\n"));
}
