//! Refinement problem setup shared by `refine` and `diagnose`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spc_core::dynamics::{default_param_box, model_from_id, rollout};
use spc_core::identification::{estimate_disturbances, fit_tpc, theta_emp_from_solves, training_scenarios};
use spc_core::io::{read_dataset, write_dataset};
use spc_core::scenario::Scenario;
use spc_core::surrogate::SurrogateConfig;
use spc_core::{CostMatrices, Dataset, DeploymentSet, Disturbances, Mat, ParamBox, RecordedTrajectory, ScenarioSet, SharedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaEmpChoice {
    /// Fitted on counterfactual rollouts at θ_TPC.
    #[default]
    Fitted,
    /// θ_emp := θ_TPC.
    Tpc,
}

/// Dense row-major weights; identity `Q`, `P` and `0.1 I` for `R` when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

/// Synthetic data: uniform initial states and controls, disturbances
/// `bias + uniform noise` on every state component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Synthetic {
    pub trajectories: usize,
    pub horizon: usize,
    pub x0_spread: f64,
    pub control_spread: f64,
    pub disturbance_bias: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for Synthetic {
    fn default() -> Self {
        Self {
            trajectories: 10,
            horizon: 10,
            x0_spread: 1.0,
            control_spread: 1.0,
            disturbance_bias: 0.2,
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemConfig {
    pub model: String,
    pub dt: f64,
    pub box_lo: Option<Vec<f64>>,
    pub box_hi: Option<Vec<f64>>,
    pub costs: Option<Weights>,
    /// Dataset directory with a manifest; synthetic data is generated when
    /// absent.
    pub data: Option<PathBuf>,
    pub synthetic: Synthetic,
    /// True parameter for synthetic data and for deployment diagnostics;
    /// defaults to the box center.
    pub theta_true: Option<Vec<f64>>,
    pub theta_emp: ThetaEmpChoice,
    pub surrogate: SurrogateConfig,
    pub output_dir: PathBuf,
    /// Points per axis of the diagnostic grid, used when `p ≤ 2`.
    pub grid_points: usize,
    pub bias_lipschitz_samples: usize,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            model: "scalar".into(),
            dt: 0.1,
            box_lo: None,
            box_hi: None,
            costs: None,
            data: None,
            synthetic: Synthetic::default(),
            theta_true: None,
            theta_emp: ThetaEmpChoice::Fitted,
            surrogate: SurrogateConfig::default(),
            output_dir: PathBuf::from("refine-out"),
            grid_points: 41,
            bias_lipschitz_samples: 6,
        }
    }
}

impl ProblemConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
            None => Ok(Self::default()),
        }
    }
}

pub struct Problem {
    pub model: SharedModel,
    pub bx: ParamBox,
    pub data: Dataset,
    pub set: ScenarioSet,
    pub theta_true: Vec<f64>,
    pub theta_tpc: Vec<f64>,
    pub theta_emp: Vec<f64>,
}

fn matrix(name: &str, n: usize, data: &[f64]) -> Result<Mat> {
    Mat::from_row_major(n, n, data.to_vec()).with_context(|| format!("cost matrix {name} must be {n}x{n}"))
}

fn identity(n: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = scale;
    }
    out
}

fn synthetic_data(model: &SharedModel, theta: &[f64], spec: &Synthetic) -> Result<Dataset> {
    let (n, m) = (model.state_dim(), model.control_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sym = |a: f64| a * (2.0 * rng.random::<f64>() - 1.0);
    let mut trajs = Vec::with_capacity(spec.trajectories);
    for _ in 0..spec.trajectories {
        let x0: Vec<f64> = (0..n).map(|_| sym(spec.x0_spread)).collect();
        let u: Vec<f64> = (0..m * spec.horizon).map(|_| sym(spec.control_spread)).collect();
        let w: Vec<f64> = (0..n * spec.horizon).map(|_| spec.disturbance_bias + sym(spec.noise)).collect();
        let states = rollout(model.as_ref(), &x0, &u, theta, &Disturbances::from_flat(n, w)?)?;
        trajs.push(RecordedTrajectory::new(states, u)?);
    }
    Ok(Dataset::split_default(trajs, spec.seed)?)
}

pub fn build(cfg: &ProblemConfig) -> Result<Problem> {
    let model = model_from_id::<f64>(&cfg.model, cfg.dt)?;
    let (n, m) = (model.state_dim(), model.control_dim());
    let bx = match (&cfg.box_lo, &cfg.box_hi) {
        (Some(lo), Some(hi)) => ParamBox::new(lo.clone(), hi.clone())?,
        (None, None) => default_param_box(&cfg.model)?,
        _ => bail!("box_lo and box_hi must be given together"),
    };
    let theta_true = cfg.theta_true.clone().unwrap_or_else(|| bx.center());
    bx.check(&theta_true).context("theta_true")?;
    let w = cfg.costs.clone().unwrap_or(Weights {
        q: identity(n, 1.0),
        r: identity(m, 0.1),
        p: identity(n, 1.0),
    });
    let costs = CostMatrices::new(matrix("Q", n, &w.q)?, matrix("R", m, &w.r)?, matrix("P", n, &w.p)?)?;
    let data = match &cfg.data {
        Some(dir) => read_dataset(dir)?.0,
        None => synthetic_data(&model, &theta_true, &cfg.synthetic)?,
    };
    let tpc = fit_tpc(&data, model.as_ref(), &bx, &cfg.surrogate.fit)?;
    let residuals = estimate_disturbances(&data, model.as_ref(), &tpc.theta)?;
    let set = training_scenarios(&data, &residuals, model.clone(), costs)?;
    let theta_emp = match cfg.theta_emp {
        ThetaEmpChoice::Tpc => tpc.theta.clone(),
        ThetaEmpChoice::Fitted => {
            let solves = set.solve_all(&tpc.theta, &cfg.surrogate.solver, None)?;
            theta_emp_from_solves(&set, &tpc.theta, &solves, &bx, &cfg.surrogate.fit)?.theta
        }
    };
    Ok(Problem {
        model,
        bx,
        data,
        set,
        theta_true,
        theta_tpc: tpc.theta,
        theta_emp,
    })
}

impl Problem {
    /// Training initial states paired with the disturbances the recorded
    /// data implies under `θ_true`.
    pub fn deployment(&self) -> Result<DeploymentSet> {
        let truth_w = estimate_disturbances(&self.data, self.model.as_ref(), &self.theta_true)?;
        let scenarios = self
            .set
            .scenarios()
            .iter()
            .map(|s| Scenario {
                id: s.id,
                x0: s.x0.clone(),
                w: truth_w[s.id].clone(),
            })
            .collect();
        Ok(DeploymentSet::new(scenarios, self.theta_true.clone(), Some(&self.bx))?)
    }

    pub fn write_dataset(&self, dir: &Path, cfg: &ProblemConfig) -> Result<()> {
        write_dataset(dir, &self.data, cfg.dt, cfg.synthetic.seed, Some(&cfg.model))?;
        Ok(())
    }
}
