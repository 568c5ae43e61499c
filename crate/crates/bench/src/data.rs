//! Data-collection run on the true system: a PD law tracks the reference
//! while uniform force noise excites the dynamics and the wind acts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spc_core::dynamics::{Model, Trajectory};
use spc_core::{Dataset, RecordedTrajectory, SpcError};

use crate::config::BenchConfig;
use crate::error::Result;
use crate::reference::generate_reference;

/// First step of each recorded window.
pub fn window_starts(cfg: &BenchConfig) -> Vec<usize> {
    let spec = &cfg.data;
    let stride = spec.horizon.max(cfg.episode_steps().saturating_sub(1) / spec.trajectories);
    (0..spec.trajectories).map(|i| i * stride).collect()
}

/// One seeded run along the whole reference, recorded in
/// `cfg.data.trajectories` windows of `cfg.data.horizon` steps spaced evenly
/// over the episode, then split by a seeded shuffle.
pub fn generate_dataset(cfg: &BenchConfig, seed: u64) -> Result<Dataset> {
    let truth = cfg.truth()?;
    let theta = cfg.theta_true();
    let reference = generate_reference(cfg);
    let spec = &cfg.data;
    let starts = window_starts(cfg);
    let total = starts.last().map_or(0, |s| s + spec.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = reference.state(0).to_vec();
    let mut states = x.clone();
    let mut controls = Vec::with_capacity(3 * total);
    let mut next = vec![0.0; 6];
    for k in 0..total {
        let r = reference.state(k);
        for j in 0..3 {
            let noise = spec.noise * (2.0 * rng.random::<f64>() - 1.0);
            controls.push(cfg.mass * (spec.kp * (r[j] - x[j]) + spec.kd * (r[3 + j] - x[3 + j])) + noise);
        }
        truth.eval(&x, &controls[3 * k..], &theta, &mut next);
        let w = truth.wind_disturbance::<f64>(k);
        for (xi, (&f, &wi)) in x.iter_mut().zip(next.iter().zip(&w)) {
            *xi = f + wi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SpcError::NonFinite { step: k + 1 }.into());
        }
        states.extend_from_slice(&x);
    }
    let pieces = starts
        .iter()
        .map(|&a| {
            let b = a + spec.horizon;
            let xs = states[6 * a..6 * (b + 1)].to_vec();
            let us = controls[3 * a..3 * b].to_vec();
            Ok(RecordedTrajectory::new(Trajectory::from_flat(6, xs)?, us)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::split_shuffled(pieces, spec.train_fraction, seed)?)
}
