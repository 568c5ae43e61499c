//! Three-phase position reference: a horizontal arc, an S-shaped descent and
//! a figure-8, each taking a third of the episode.

use std::f64::consts::PI;

use crate::config::{BenchConfig, ReferenceSpec};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub dt: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
}

impl Reference {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Reference state `[p; v]` at sample `k`, clamped to the last sample.
    pub fn state(&self, k: usize) -> [f64; 6] {
        let k = k.min(self.len() - 1);
        let (p, v) = (self.positions[k], self.velocities[k]);
        [p[0], p[1], p[2], v[0], v[1], v[2]]
    }
}

/// Position and velocity of `phase` (0, 1 or 2) at local fraction `tau` in
/// `[0, 1]`; `duration` is the phase length in seconds.
pub fn phase_point(spec: &ReferenceSpec, phase: usize, tau: f64, duration: f64) -> (Vec3, Vec3) {
    let r = spec.arc_radius;
    let depth = spec.descent_depth;
    let rate = 1.0 / duration;
    match phase {
        0 => {
            let a = PI * tau;
            let w = PI * rate;
            ([r * a.cos(), r * a.sin(), 0.0], [-r * w * a.sin(), r * w * a.cos(), 0.0])
        }
        1 => {
            let s = 2.0 * PI * tau;
            let smooth = 3.0 * tau * tau - 2.0 * tau.powi(3);
            let dsmooth = 6.0 * tau - 6.0 * tau * tau;
            (
                [-r * (1.0 - tau), spec.sway * s.sin(), -depth * smooth],
                [r * rate, spec.sway * 2.0 * PI * rate * s.cos(), -depth * dsmooth * rate],
            )
        }
        _ => {
            let s = 2.0 * PI * tau;
            (
                [spec.figure8_x * s.sin(), spec.figure8_y * (2.0 * s).sin(), -depth],
                [
                    spec.figure8_x * 2.0 * PI * rate * s.cos(),
                    spec.figure8_y * 4.0 * PI * rate * (2.0 * s).cos(),
                    0.0,
                ],
            )
        }
    }
}

/// Phase index and local fraction of sample `k`.
pub fn phase_of(k: usize, dt: f64, episode_s: f64) -> (usize, f64) {
    let duration = episode_s / 3.0;
    let t = k as f64 * dt;
    let phase = ((t / duration).floor() as usize).min(2);
    (phase, (t - phase as f64 * duration) / duration)
}

pub fn generate_reference(cfg: &BenchConfig) -> Reference {
    let steps = cfg.episode_steps();
    let duration = cfg.episode_s / 3.0;
    let (positions, velocities) = (0..steps)
        .map(|k| {
            let (phase, tau) = phase_of(k, cfg.dt, cfg.episode_s);
            phase_point(&cfg.reference, phase, tau, duration)
        })
        .unzip();
    Reference {
        dt: cfg.dt,
        positions,
        velocities,
    }
}
