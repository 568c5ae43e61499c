//! Parameterized discrete-time dynamics `x' = f(x, u; θ) + w`, rollouts and
//! per-step Jacobians.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpcError};
use crate::linalg::Mat;
use crate::scalar::{all_finite, Real};

/// A smooth one-step model `f(x, u; θ)` together with its first derivatives.
///
/// Implementations must be pure; the same inputs always give the same outputs.
pub trait Model<T: Real>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    /// Short identifier, e.g. `"scalar"`.
    fn name(&self) -> &str;

    /// Writes `f(x, u; θ)` into `out`.
    fn eval(&self, x: &[T], u: &[T], theta: &[T], out: &mut [T]);

    /// Fills `∂f/∂x`, `∂f/∂u` and `∂f/∂θ` at `(x, u, θ)`.
    fn jacobians(&self, x: &[T], u: &[T], theta: &[T], jac: &mut StepJacobians<T>);

    fn check_dims(&self, x0: &[T], controls: &[T], theta: &[T]) -> Result<usize> {
        let (n, m, p) = (self.state_dim(), self.control_dim(), self.param_dim());
        if x0.len() != n {
            return Err(SpcError::dims("initial state", n, x0.len()));
        }
        if theta.len() != p {
            return Err(SpcError::dims("parameter vector", p, theta.len()));
        }
        if m == 0 || controls.len() % m != 0 {
            return Err(SpcError::dims("control sequence (multiple of m)", m, controls.len()));
        }
        Ok(controls.len() / m)
    }
}

pub type SharedModel<T> = Arc<dyn Model<T>>;

/// Jacobian triple `(A, B, C) = (∂f/∂x, ∂f/∂u, ∂f/∂θ)` at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians<T> {
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub c: Mat<T>,
}

impl<T: Real> StepJacobians<T> {
    pub fn zeros(n: usize, m: usize, p: usize) -> Self {
        Self {
            a: Mat::zeros(n, n),
            b: Mat::zeros(n, m),
            c: Mat::zeros(n, p),
        }
    }

    pub fn for_model(model: &dyn Model<T>) -> Self {
        Self::zeros(model.state_dim(), model.control_dim(), model.param_dim())
    }
}

/// Box `lo ≤ θ ≤ hi` with nonempty interior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> ParamBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(SpcError::dims("box bounds", lo.len(), hi.len()));
        }
        if let Some(i) = lo.iter().zip(&hi).position(|(l, h)| !(l < h)) {
            return Err(SpcError::InvalidArgument(format!(
                "box component {i} needs lo < hi"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Same bounds on every component.
    pub fn uniform(p: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo; p], vec![hi; p])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn contains(&self, theta: &[T]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| l <= t && t <= h)
    }

    pub fn check(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(SpcError::dims("parameter vector", self.dim(), theta.len()));
        }
        match theta
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .position(|(t, (l, h))| !(l <= t && t <= h))
        {
            Some(index) => Err(SpcError::OutOfBox { index }),
            None => Ok(()),
        }
    }

    /// Componentwise clamp, the Euclidean projection onto the box.
    pub fn project(&self, y: &[T]) -> Vec<T> {
        y.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect()
    }

    pub fn center(&self) -> Vec<T> {
        let two = T::lit(2.0);
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| (l + h) / two)
            .collect()
    }
}

/// Disturbance sequence `(w_0, …, w_{T-1})`, each in `R^n`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbances<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Disturbances<T> {
    pub fn zeros(dim: usize, steps: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); dim * steps],
        }
    }

    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(SpcError::dims("disturbance data (multiple of n)", dim, data.len()));
        }
        if !all_finite(&data) {
            return Err(SpcError::InvalidArgument(
                "disturbance entries must be finite".into(),
            ));
        }
        Ok(Self { dim, data })
    }

    pub fn from_steps(dim: usize, steps: &[Vec<T>]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * steps.len());
        for w in steps {
            if w.len() != dim {
                return Err(SpcError::dims("disturbance step", dim, w.len()));
            }
            data.extend_from_slice(w);
        }
        Self::from_flat(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn step(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn negated(&self) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&x| -x).collect(),
        }
    }
}

/// States `(x_0, …, x_T)` of one rollout, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 || data.len() < dim {
            return Err(SpcError::dims("trajectory data (multiple of n)", dim, data.len()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_states(dim: usize, states: &[Vec<T>]) -> Result<Self> {
        let mut data = Vec::with_capacity(dim * states.len());
        for x in states {
            if x.len() != dim {
                return Err(SpcError::dims("trajectory state", dim, x.len()));
            }
            data.extend_from_slice(x);
        }
        Self::from_flat(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of transitions `T` (the trajectory holds `T + 1` states).
    pub fn horizon(&self) -> usize {
        self.data.len() / self.dim - 1
    }

    pub fn state(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn last(&self) -> &[T] {
        self.state(self.horizon())
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }
}

/// Simulates `x_{t+1} = f(x_t, u_t; θ) + w_t` for `t = 0..T`.
///
/// `controls` is the stacked sequence `(u_0, …, u_{T-1})`.
pub fn rollout<T: Real>(
    model: &dyn Model<T>,
    x0: &[T],
    controls: &[T],
    theta: &[T],
    w: &Disturbances<T>,
) -> Result<Trajectory<T>> {
    let horizon = model.check_dims(x0, controls, theta)?;
    let (n, m) = (model.state_dim(), model.control_dim());
    if w.dim() != n {
        return Err(SpcError::dims("disturbance dimension", n, w.dim()));
    }
    if w.steps() != horizon {
        return Err(SpcError::dims("disturbance length", horizon, w.steps()));
    }
    if !all_finite(x0) {
        return Err(SpcError::NonFinite { step: 0 });
    }
    let mut data = vec![T::zero(); n * (horizon + 1)];
    data[..n].copy_from_slice(x0);
    for t in 0..horizon {
        let (head, tail) = data.split_at_mut((t + 1) * n);
        let x = &head[t * n..];
        let next = &mut tail[..n];
        model.eval(x, &controls[t * m..(t + 1) * m], theta, next);
        for (xi, &wi) in next.iter_mut().zip(w.step(t)) {
            *xi = *xi + wi;
        }
        if !all_finite(next) {
            return Err(SpcError::NonFinite { step: t + 1 });
        }
    }
    Ok(Trajectory { dim: n, data })
}

/// Jacobian triples along a trajectory, one per transition.
pub fn rollout_jacobians<T: Real>(
    model: &dyn Model<T>,
    traj: &Trajectory<T>,
    controls: &[T],
    theta: &[T],
) -> Result<Vec<StepJacobians<T>>> {
    let horizon = model.check_dims(traj.state(0), controls, theta)?;
    if traj.horizon() != horizon {
        return Err(SpcError::dims("trajectory length", horizon + 1, traj.horizon() + 1));
    }
    let m = model.control_dim();
    Ok((0..horizon)
        .map(|t| {
            let mut jac = StepJacobians::for_model(model);
            model.jacobians(traj.state(t), &controls[t * m..(t + 1) * m], theta, &mut jac);
            jac
        })
        .collect())
}

/// Reference to one entry of `A` or `B` that is replaced by a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskEntry {
    A { row: usize, col: usize },
    B { row: usize, col: usize },
}

/// `f(x, u; θ) = A(θ) x + B(θ) u`, where masked entries are read from `θ`.
#[derive(Debug, Clone)]
pub struct LinearModel<T> {
    name: String,
    a: Mat<T>,
    b: Mat<T>,
    mask: Vec<MaskEntry>,
}

/// Builds a linear model whose masked matrix entries are the parameters, in
/// mask order.
pub fn make_linear_model<T: Real>(
    a: Mat<T>,
    b: Mat<T>,
    mask: &[MaskEntry],
) -> Result<LinearModel<T>> {
    let n = a.rows();
    if !a.is_square() {
        return Err(SpcError::dims("A (square)", n, a.cols()));
    }
    if b.rows() != n {
        return Err(SpcError::dims("B rows", n, b.rows()));
    }
    let m = b.cols();
    for e in mask {
        let ok = match *e {
            MaskEntry::A { row, col } => row < n && col < n,
            MaskEntry::B { row, col } => row < n && col < m,
        };
        if !ok {
            return Err(SpcError::InvalidArgument(format!(
                "mask entry {e:?} out of range for n={n}, m={m}"
            )));
        }
    }
    Ok(LinearModel {
        name: "linear".into(),
        a,
        b,
        mask: mask.to_vec(),
    })
}

impl<T: Real> LinearModel<T> {
    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// `(A(θ), B(θ))` with the mask substituted.
    pub fn matrices(&self, theta: &[T]) -> (Mat<T>, Mat<T>) {
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        for (k, e) in self.mask.iter().enumerate() {
            match *e {
                MaskEntry::A { row, col } => a[(row, col)] = theta[k],
                MaskEntry::B { row, col } => b[(row, col)] = theta[k],
            }
        }
        (a, b)
    }
}

impl<T: Real> Model<T> for LinearModel<T> {
    fn state_dim(&self) -> usize {
        self.a.rows()
    }
    fn control_dim(&self) -> usize {
        self.b.cols()
    }
    fn param_dim(&self) -> usize {
        self.mask.len()
    }
    fn name(&self) -> &str {
        &self.name
    }

    fn eval(&self, x: &[T], u: &[T], theta: &[T], out: &mut [T]) {
        let (a, b) = self.matrices(theta);
        a.mul_vec_into(x, out);
        for (i, o) in out.iter_mut().enumerate() {
            *o = *o + b.row(i).iter().zip(u).map(|(&bij, &uj)| bij * uj).sum::<T>();
        }
    }

    fn jacobians(&self, x: &[T], u: &[T], theta: &[T], jac: &mut StepJacobians<T>) {
        let (a, b) = self.matrices(theta);
        jac.a = a;
        jac.b = b;
        jac.c = Mat::zeros(self.a.rows(), self.mask.len());
        for (k, e) in self.mask.iter().enumerate() {
            match *e {
                MaskEntry::A { row, col } => jac.c[(row, k)] = x[col],
                MaskEntry::B { row, col } => jac.c[(row, k)] = u[col],
            }
        }
    }
}

/// Scalar model `f(x, u; θ) = θ x + u`.
pub fn scalar_model<T: Real>() -> LinearModel<T> {
    make_linear_model(
        Mat::from_rows(&[vec![T::one()]]).expect("1x1"),
        Mat::from_rows(&[vec![T::one()]]).expect("1x1"),
        &[MaskEntry::A { row: 0, col: 0 }],
    )
    .expect("valid mask")
    .with_name("scalar")
}

/// Two-parameter scalar model `f(x, u; θ) = θ₁ x + θ₂ u`.
pub fn scalar_model_2p<T: Real>() -> LinearModel<T> {
    make_linear_model(
        Mat::from_rows(&[vec![T::one()]]).expect("1x1"),
        Mat::from_rows(&[vec![T::one()]]).expect("1x1"),
        &[
            MaskEntry::A { row: 0, col: 0 },
            MaskEntry::B { row: 0, col: 0 },
        ],
    )
    .expect("valid mask")
    .with_name("scalar-2p")
}

/// Double integrator with step `dt`; the velocity damping `A[1][1]` and the
/// input gain `B[1][0]` are parameters.
pub fn double_integrator<T: Real>(dt: T) -> LinearModel<T> {
    make_linear_model(
        Mat::from_rows(&[vec![T::one(), dt], vec![T::zero(), T::one()]]).expect("2x2"),
        Mat::from_rows(&[vec![T::zero()], vec![dt]]).expect("2x1"),
        &[
            MaskEntry::A { row: 1, col: 1 },
            MaskEntry::B { row: 1, col: 0 },
        ],
    )
    .expect("valid mask")
    .with_name("double-integrator")
}

/// Scalar model with a saturating actuator, `f(x, u; θ) = x + θ sin(u)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SineActuatorModel;

impl<T: Real> Model<T> for SineActuatorModel {
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
        "sine-actuator"
    }
    fn eval(&self, x: &[T], u: &[T], theta: &[T], out: &mut [T]) {
        out[0] = x[0] + theta[0] * u[0].sin();
    }
    fn jacobians(&self, _x: &[T], u: &[T], theta: &[T], jac: &mut StepJacobians<T>) {
        jac.a[(0, 0)] = T::one();
        jac.b[(0, 0)] = theta[0] * u[0].cos();
        jac.c[(0, 0)] = u[0].sin();
    }
}

/// Deterministic wind force `F(t) = steady + amplitude ⊙ sin(2π freq t + phase)`
/// in newtons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindSpec {
    pub steady: [f64; 3],
    pub amplitude: [f64; 3],
    pub frequency_hz: [f64; 3],
    pub phase: [f64; 3],
}

impl Default for WindSpec {
    fn default() -> Self {
        Self {
            steady: [0.35, -0.15, 0.0],
            amplitude: [0.20, 0.25, 0.0],
            frequency_hz: [0.05, 0.08, 0.0],
            phase: [0.0, PI / 3.0, 0.0],
        }
    }
}

impl WindSpec {
    pub fn calm() -> Self {
        Self {
            steady: [0.0; 3],
            amplitude: [0.0; 3],
            frequency_hz: [0.0; 3],
            phase: [0.0; 3],
        }
    }

    pub fn force(&self, time_s: f64) -> [f64; 3] {
        std::array::from_fn(|k| {
            self.steady[k]
                + self.amplitude[k] * (2.0 * PI * self.frequency_hz[k] * time_s + self.phase[k]).sin()
        })
    }
}

/// Where the constant wind-bias parameters act in the point-mass model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindBiasLevel {
    /// Drift velocity added to the position update, `p' = p + dt (v + b)`.
    #[default]
    Position,
    /// Constant force added to the velocity update, `v' = v + dt/m (u - d⊙v + b)`.
    Velocity,
}

/// Forward-Euler 3-D point mass with linear drag.
///
/// State `[p; v]` (m, m/s), control is a force in newtons, and
/// `θ = [d_x, d_y, d_z, b_x, b_y, b_z]` holds drag coefficients (N·s/m) and a
/// constant wind-bias estimate whose units follow [`WindBiasLevel`].
#[derive(Debug, Clone)]
pub struct PointMassModel {
    dt: f64,
    mass: f64,
    wind: WindSpec,
    bias_level: WindBiasLevel,
}

pub fn make_pointmass_wind_model(
    dt: f64,
    mass: f64,
    wind: WindSpec,
    bias_level: WindBiasLevel,
) -> Result<PointMassModel> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SpcError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(SpcError::InvalidArgument(format!("mass must be positive, got {mass}")));
    }
    Ok(PointMassModel {
        dt,
        mass,
        wind,
        bias_level,
    })
}

impl PointMassModel {
    pub const STATE_DIM: usize = 6;
    pub const CONTROL_DIM: usize = 3;
    pub const PARAM_DIM: usize = 6;

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn wind(&self) -> &WindSpec {
        &self.wind
    }

    pub fn bias_level(&self) -> WindBiasLevel {
        self.bias_level
    }

    /// True parameter vector: the given drag and no modeled wind bias.
    pub fn true_theta(drag: [f64; 3]) -> Vec<f64> {
        vec![drag[0], drag[1], drag[2], 0.0, 0.0, 0.0]
    }

    /// Wind disturbance entering the state at step `k`: `[0; dt/m F(k dt)]`.
    pub fn wind_disturbance<T: Real>(&self, step: usize) -> Vec<T> {
        let f = self.wind.force(step as f64 * self.dt);
        let s = self.dt / self.mass;
        vec![
            T::zero(),
            T::zero(),
            T::zero(),
            T::lit(s * f[0]),
            T::lit(s * f[1]),
            T::lit(s * f[2]),
        ]
    }

    /// Wind disturbances for steps `start..start + len`.
    pub fn wind_sequence<T: Real>(&self, start: usize, len: usize) -> Disturbances<T> {
        let steps: Vec<Vec<T>> = (start..start + len).map(|k| self.wind_disturbance(k)).collect();
        Disturbances::from_steps(6, &steps).expect("finite wind")
    }
}

impl<T: Real> Model<T> for PointMassModel {
    fn state_dim(&self) -> usize {
        Self::STATE_DIM
    }
    fn control_dim(&self) -> usize {
        Self::CONTROL_DIM
    }
    fn param_dim(&self) -> usize {
        Self::PARAM_DIM
    }
    fn name(&self) -> &str {
        "pointmass-wind"
    }

    fn eval(&self, x: &[T], u: &[T], theta: &[T], out: &mut [T]) {
        let dt = T::lit(self.dt);
        let s = T::lit(self.dt / self.mass);
        for k in 0..3 {
            let (p, v) = (x[k], x[3 + k]);
            let (drag, bias) = (theta[k], theta[3 + k]);
            match self.bias_level {
                WindBiasLevel::Position => {
                    out[k] = p + dt * (v + bias);
                    out[3 + k] = v + s * (u[k] - drag * v);
                }
                WindBiasLevel::Velocity => {
                    out[k] = p + dt * v;
                    out[3 + k] = v + s * (u[k] - drag * v + bias);
                }
            }
        }
    }

    fn jacobians(&self, x: &[T], _u: &[T], theta: &[T], jac: &mut StepJacobians<T>) {
        let dt = T::lit(self.dt);
        let s = T::lit(self.dt / self.mass);
        jac.a = Mat::identity(6);
        jac.b = Mat::zeros(6, 3);
        jac.c = Mat::zeros(6, 6);
        for k in 0..3 {
            jac.a[(k, 3 + k)] = dt;
            jac.a[(3 + k, 3 + k)] = T::one() - s * theta[k];
            jac.b[(3 + k, k)] = s;
            jac.c[(3 + k, k)] = -s * x[3 + k];
            match self.bias_level {
                WindBiasLevel::Position => jac.c[(k, 3 + k)] = dt,
                WindBiasLevel::Velocity => jac.c[(3 + k, 3 + k)] = s,
            }
        }
    }
}

/// Builds a model from the zoo: `"scalar"`, `"scalar-2p"`,
/// `"double-integrator"`, `"sine-actuator"` or `"pointmass-wind"`.
///
/// `dt` applies to the sampled models; the point mass uses unit mass and the
/// default wind.
pub fn model_from_id<T: Real>(id: &str, dt: f64) -> Result<SharedModel<T>> {
    Ok(match id {
        "scalar" => Arc::new(scalar_model::<T>()),
        "scalar-2p" => Arc::new(scalar_model_2p::<T>()),
        "double-integrator" => Arc::new(double_integrator::<T>(T::lit(dt))),
        "sine-actuator" => Arc::new(SineActuatorModel),
        "pointmass-wind" => Arc::new(make_pointmass_wind_model(
            dt,
            1.0,
            WindSpec::default(),
            WindBiasLevel::Position,
        )?),
        other => {
            return Err(SpcError::InvalidArgument(format!("unknown model id {other:?}")));
        }
    })
}

/// Default parameter box for a zoo model.
pub fn default_param_box<T: Real>(id: &str) -> Result<ParamBox<T>> {
    let (lo, hi): (Vec<f64>, Vec<f64>) = match id {
        "scalar" | "sine-actuator" => (vec![-1.5], vec![1.5]),
        "scalar-2p" => (vec![-1.5, 0.25], vec![1.5, 2.0]),
        "double-integrator" => (vec![0.5, 0.01], vec![1.2, 0.5]),
        "pointmass-wind" => (vec![0.0, 0.0, 0.0, -1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
        other => {
            return Err(SpcError::InvalidArgument(format!("unknown model id {other:?}")));
        }
    };
    ParamBox::new(lo.into_iter().map(T::lit).collect(), hi.into_iter().map(T::lit).collect())
}
