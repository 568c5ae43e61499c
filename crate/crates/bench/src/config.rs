//! Benchmark configuration, read from a single JSON file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use spc_core::dynamics::{make_pointmass_wind_model, PointMassModel, WindBiasLevel, WindSpec};
use spc_core::surrogate::SurrogateConfig;
use spc_core::{CostMatrices, Mat};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TPC")]
    Tpc,
    #[serde(rename = "CW-Reg")]
    CwReg,
    #[serde(rename = "DiffCtrl")]
    DiffCtrl,
    #[serde(rename = "F-SPC")]
    FSpc,
    #[serde(rename = "U-SPC")]
    USpc,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Tpc, Method::CwReg, Method::DiffCtrl, Method::FSpc, Method::USpc];

    pub fn label(self) -> &'static str {
        match self {
            Method::Tpc => "TPC",
            Method::CwReg => "CW-Reg",
            Method::DiffCtrl => "DiffCtrl",
            Method::FSpc => "F-SPC",
            Method::USpc => "U-SPC",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| BenchError::Config(format!("unknown method {s:?}")))
    }
}

/// Geometry of the three-phase reference. Lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceSpec {
    pub arc_radius: f64,
    pub sway: f64,
    pub descent_depth: f64,
    pub figure8_x: f64,
    pub figure8_y: f64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            arc_radius: 2.5,
            sway: 1.0,
            descent_depth: 2.5,
            figure8_x: 2.5,
            figure8_y: 1.25,
        }
    }
}

impl ReferenceSpec {
    pub fn zero() -> Self {
        Self {
            arc_radius: 0.0,
            sway: 0.0,
            descent_depth: 0.0,
            figure8_x: 0.0,
            figure8_y: 0.0,
        }
    }
}

/// Data-collection run: a PD tracking law with uniform exploration noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub trajectories: usize,
    pub horizon: usize,
    pub kp: f64,
    pub kd: f64,
    /// Half-width of the uniform force noise, N.
    pub noise: f64,
    pub train_fraction: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            trajectories: 20,
            horizon: 25,
            kp: 4.0,
            kd: 3.0,
            noise: 0.5,
            train_fraction: 0.8,
        }
    }
}

/// Dense row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

fn diag(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut out = vec![0.0; n * n];
    for (i, &v) in d.iter().enumerate() {
        out[i * n + i] = v;
    }
    out
}

impl Default for CostSpec {
    fn default() -> Self {
        Self {
            q: diag(&[10.0, 10.0, 10.0, 1.0, 1.0, 1.0]),
            r: diag(&[0.01, 0.01, 0.01]),
            p: diag(&[10.0, 10.0, 10.0, 1.0, 1.0, 1.0]),
        }
    }
}

impl CostSpec {
    pub fn matrices(&self, n: usize, m: usize) -> Result<CostMatrices> {
        let q = Mat::from_row_major(n, n, self.q.clone())?;
        let r = Mat::from_row_major(m, m, self.r.clone())?;
        let p = Mat::from_row_major(n, n, self.p.clone())?;
        Ok(CostMatrices::new(q, r, p)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub model: String,
    pub reference: ReferenceSpec,
    pub wind: WindSpec,
    pub bias_level: WindBiasLevel,
    pub mass: f64,
    pub true_drag: [f64; 3],
    /// MPC prediction horizon in steps.
    pub horizon: usize,
    pub dt: f64,
    pub episode_s: f64,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub cwreg_lambdas: Vec<f64>,
    pub output_dir: PathBuf,
    pub data: DataSpec,
    pub costs: CostSpec,
    /// Outer-loop settings shared by F-SPC, U-SPC and DiffCtrl; `variant` is
    /// set per method.
    pub surrogate: SurrogateConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            model: "pointmass-wind".into(),
            reference: ReferenceSpec::default(),
            wind: WindSpec::default(),
            bias_level: WindBiasLevel::Position,
            mass: 1.0,
            true_drag: [0.3, 0.3, 0.3],
            horizon: 50,
            dt: 0.02,
            episode_s: 24.0,
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            cwreg_lambdas: vec![0.01, 0.1, 1.0],
            output_dir: PathBuf::from("bench-out"),
            data: DataSpec::default(),
            costs: CostSpec::default(),
            surrogate: SurrogateConfig {
                iterations: 30,
                lipschitz_samples: 6,
                ..SurrogateConfig::default()
            },
        }
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: BenchConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.model != "pointmass-wind" {
            return bad(format!("bench supports model \"pointmass-wind\" only, got {:?}", self.model));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.horizon == 0 {
            return bad("MPC horizon must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty".into());
        }
        if self.episode_steps() < 2 {
            return bad("episode must span at least two samples".into());
        }
        if self.cwreg_lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) || self.cwreg_lambdas.is_empty() {
            return bad("CW-Reg weights must be nonempty and nonnegative".into());
        }
        if self.data.trajectories < 2 || self.data.horizon == 0 {
            return bad("data needs at least two trajectories of positive horizon".into());
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return bad(format!("train fraction must lie in (0, 1), got {}", self.data.train_fraction));
        }
        self.truth()?;
        self.costs.matrices(PointMassModel::STATE_DIM, PointMassModel::CONTROL_DIM)?;
        self.surrogate.validate()?;
        Ok(())
    }

    /// Reference samples over the episode.
    pub fn episode_steps(&self) -> usize {
        (self.episode_s / self.dt).round() as usize
    }

    pub fn truth(&self) -> Result<PointMassModel> {
        Ok(make_pointmass_wind_model(self.dt, self.mass, self.wind.clone(), self.bias_level)?)
    }

    pub fn theta_true(&self) -> Vec<f64> {
        PointMassModel::true_theta(self.true_drag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = BenchConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.episode_steps(), 1200);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: BenchConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: BenchConfig = serde_json::from_str(r#"{"seeds": [4], "methods": ["TPC", "U-SPC"]}"#).unwrap();
        assert_eq!(cfg.seeds, vec![4]);
        assert_eq!(cfg.methods, vec![Method::Tpc, Method::USpc]);
        assert_eq!(cfg.horizon, 50);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = BenchConfig::default();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = BenchConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = BenchConfig::default();
        cfg.horizon = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = BenchConfig::default();
        cfg.costs.r = vec![0.0; 9];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert!("SPC".parse::<Method>().is_err());
    }
}
