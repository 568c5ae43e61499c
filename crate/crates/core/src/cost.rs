//! Finite-horizon quadratic cost and its exact gradients by the discrete
//! adjoint.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, Disturbances, Model, StepJacobians, Trajectory};
use crate::error::{Result, SpcError};
use crate::linalg::{symmetric_eigenvalues, Mat};
use crate::scalar::Real;

const PSD_FLOOR: f64 = -1e-10;
const PD_FLOOR: f64 = 1e-10;

/// Stage state weight `Q ⪰ 0`, control weight `R ≻ 0`, terminal weight `P ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrices<T> {
    q: Mat<T>,
    r: Mat<T>,
    p: Mat<T>,
}

impl<T: Real> CostMatrices<T> {
    pub fn new(q: Mat<T>, r: Mat<T>, p: Mat<T>) -> Result<Self> {
        check_weight("Q", &q, T::lit(PSD_FLOOR))?;
        check_weight("P", &p, T::lit(PSD_FLOOR))?;
        check_weight("R", &r, T::lit(PD_FLOOR))?;
        if q.rows() != p.rows() {
            return Err(SpcError::dims("P vs Q size", q.rows(), p.rows()));
        }
        Ok(Self { q, r, p })
    }

    /// Diagonal weights.
    pub fn diagonal(q: &[T], r: &[T], p: &[T]) -> Result<Self> {
        Self::new(Mat::diag(q), Mat::diag(r), Mat::diag(p))
    }

    pub fn q(&self) -> &Mat<T> {
        &self.q
    }
    pub fn r(&self) -> &Mat<T> {
        &self.r
    }
    pub fn p(&self) -> &Mat<T> {
        &self.p
    }
    pub fn state_dim(&self) -> usize {
        self.q.rows()
    }
    pub fn control_dim(&self) -> usize {
        self.r.rows()
    }

    /// `J` for an existing trajectory and control sequence.
    pub fn evaluate(&self, traj: &Trajectory<T>, controls: &[T]) -> T {
        let m = self.control_dim();
        let horizon = traj.horizon();
        let mut j = T::zero();
        for t in 0..horizon {
            j = j + self.q.quad_form(traj.state(t)) + self.r.quad_form(&controls[t * m..(t + 1) * m]);
        }
        j + self.p.quad_form(traj.last())
    }

    fn check_model(&self, model: &dyn Model<T>) -> Result<()> {
        if self.state_dim() != model.state_dim() {
            return Err(SpcError::dims("cost state dimension", model.state_dim(), self.state_dim()));
        }
        if self.control_dim() != model.control_dim() {
            return Err(SpcError::dims(
                "cost control dimension",
                model.control_dim(),
                self.control_dim(),
            ));
        }
        Ok(())
    }
}

fn check_weight<T: Real>(name: &str, w: &Mat<T>, floor: T) -> Result<()> {
    if !w.is_square() {
        return Err(SpcError::InvalidArgument(format!("{name} must be square")));
    }
    if !w.is_finite() {
        return Err(SpcError::InvalidArgument(format!("{name} must be finite")));
    }
    let scale = w.as_slice().iter().fold(T::one(), |a, &x| a.max(x.abs()));
    if w.max_abs_asymmetry() > T::lit(1e-12) * scale {
        return Err(SpcError::InvalidArgument(format!("{name} must be symmetric")));
    }
    let min_ev = symmetric_eigenvalues(w).first().copied().unwrap_or(T::zero());
    if min_ev < floor {
        return Err(SpcError::InvalidArgument(format!(
            "{name} minimum eigenvalue {min_ev:e} below {floor:e}"
        )));
    }
    Ok(())
}

/// `J(x0, U; θ, W) = Σ_{t<T} (x_tᵀQx_t + u_tᵀRu_t) + x_TᵀPx_T`.
pub fn total_cost<T: Real>(
    model: &dyn Model<T>,
    cm: &CostMatrices<T>,
    x0: &[T],
    controls: &[T],
    theta: &[T],
    w: &Disturbances<T>,
) -> Result<T> {
    cm.check_model(model)?;
    let traj = rollout(model, x0, controls, theta, w)?;
    Ok(cm.evaluate(&traj, controls))
}

/// Output of [`cost_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostGradients<T> {
    pub grad_u: Vec<T>,
    pub grad_theta: Vec<T>,
    pub cost: T,
}

/// Gradients of `J` with respect to the stacked controls and the parameters.
///
/// One forward rollout and one backward pass:
/// `λ_T = 2P x_T`, `∂J/∂u_t = 2R u_t + B_tᵀ λ_{t+1}`,
/// `∂J/∂θ = Σ_t C_tᵀ λ_{t+1}`, `λ_t = 2Q x_t + A_tᵀ λ_{t+1}`.
pub fn cost_gradients<T: Real>(
    model: &dyn Model<T>,
    cm: &CostMatrices<T>,
    x0: &[T],
    controls: &[T],
    theta: &[T],
    w: &Disturbances<T>,
) -> Result<CostGradients<T>> {
    cm.check_model(model)?;
    let traj = rollout(model, x0, controls, theta, w)?;
    let cost = cm.evaluate(&traj, controls);
    let (n, m, p) = (model.state_dim(), model.control_dim(), model.param_dim());
    let horizon = traj.horizon();
    let two = T::lit(2.0);

    let mut grad_u = vec![T::zero(); m * horizon];
    let mut grad_theta = vec![T::zero(); p];
    let mut lambda = cm.p.mul_vec(traj.last());
    lambda.iter_mut().for_each(|l| *l = *l * two);
    let mut next = vec![T::zero(); n];
    let mut jac = StepJacobians::for_model(model);

    for t in (0..horizon).rev() {
        let u = &controls[t * m..(t + 1) * m];
        model.jacobians(traj.state(t), u, theta, &mut jac);

        let gu = &mut grad_u[t * m..(t + 1) * m];
        cm.r.mul_vec_into(u, gu);
        gu.iter_mut().for_each(|g| *g = *g * two);
        jac.b.tr_mul_vec_add(&lambda, gu);
        jac.c.tr_mul_vec_add(&lambda, &mut grad_theta);

        cm.q.mul_vec_into(traj.state(t), &mut next);
        next.iter_mut().for_each(|g| *g = *g * two);
        jac.a.tr_mul_vec_add(&lambda, &mut next);
        std::mem::swap(&mut lambda, &mut next);
    }

    Ok(CostGradients {
        grad_u,
        grad_theta,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::scalar_model;

    fn unit_costs() -> CostMatrices<f64> {
        CostMatrices::diagonal(&[1.0], &[1.0], &[1.0]).unwrap()
    }

    fn w(v: &[f64]) -> Disturbances<f64> {
        Disturbances::from_flat(1, v.to_vec()).unwrap()
    }

    #[test]
    fn scalar_cost_examples() {
        let m = scalar_model::<f64>();
        let cm = unit_costs();
        assert_eq!(total_cost(&m, &cm, &[0.0], &[0.0], &[0.37], &w(&[0.0])).unwrap(), 0.0);
        assert_eq!(total_cost(&m, &cm, &[1.0], &[0.0], &[1.0], &w(&[0.0])).unwrap(), 2.0);
        assert_eq!(total_cost(&m, &cm, &[1.0], &[-0.5], &[1.0], &w(&[0.0])).unwrap(), 1.5);
    }

    #[test]
    fn hand_adjoint_on_scalar_instance() {
        let m = scalar_model::<f64>();
        let g = cost_gradients(&m, &unit_costs(), &[1.0], &[0.0], &[1.0], &w(&[0.0])).unwrap();
        assert_eq!(g.grad_u, vec![2.0]);
        assert_eq!(g.grad_theta, vec![2.0]);
        assert_eq!(g.cost, 2.0);
    }

    #[test]
    fn origin_has_zero_gradients() {
        let m = scalar_model::<f64>();
        let g = cost_gradients(&m, &unit_costs(), &[0.0], &[0.0; 3], &[0.8], &w(&[0.0; 3])).unwrap();
        assert!(g.grad_u.iter().chain(&g.grad_theta).all(|&x| x == 0.0));
    }

    #[test]
    fn weight_validation() {
        assert!(CostMatrices::diagonal(&[-1.0], &[1.0], &[1.0]).is_err());
        assert!(CostMatrices::diagonal(&[1.0], &[0.0], &[1.0]).is_err());
        let asym = Mat::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(CostMatrices::new(asym, Mat::identity(1), Mat::identity(2)).is_err());
        // Rounding-level negative eigenvalue is tolerated.
        assert!(CostMatrices::diagonal(&[-1e-12], &[1.0], &[0.0]).is_ok());
    }

    #[test]
    fn cost_dimension_mismatch_is_reported() {
        let m = scalar_model::<f64>();
        let cm = CostMatrices::diagonal(&[1.0, 1.0], &[1.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(
            total_cost(&m, &cm, &[1.0], &[0.0], &[1.0], &w(&[0.0])),
            Err(SpcError::DimensionMismatch { .. })
        ));
    }
}
