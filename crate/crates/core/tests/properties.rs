mod common;

use common::*;
use proptest::prelude::*;
use spc_core::cost::total_cost;
use spc_core::dynamics::{double_integrator, rollout, scalar_model, Disturbances, Model};
use spc_core::scenario::{Scenario, ScenarioSet, SolverConfig};

proptest! {
    #[test]
    fn linear_rollouts_superpose(
        x0 in prop::collection::vec(-2.0f64..2.0, 2),
        u in prop::collection::vec(-1.0f64..1.0, 5),
        u2 in prop::collection::vec(-1.0f64..1.0, 5),
        w in prop::collection::vec(-0.5f64..0.5, 10),
        th in prop::collection::vec(0.6f64..1.1, 2),
    ) {
        let m = double_integrator(0.1f64);
        let dist = Disturbances::from_flat(2, w).unwrap();
        let zero = Disturbances::zeros(2, 5);
        let diff = |u: &[f64]| -> Vec<f64> {
            let a = rollout(&m, &x0, u, &th, &dist).unwrap();
            let b = rollout(&m, &x0, u, &th, &zero).unwrap();
            a.as_flat().iter().zip(b.as_flat()).map(|(p, q)| p - q).collect()
        };
        let (d1, d2) = (diff(&u), diff(&u2));
        for (a, b) in d1.iter().zip(&d2) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rollouts_are_deterministic(seed in 0u64..1000) {
        let id = MODELS[(seed % 5) as usize];
        let inst = random_instance(id, seed);
        let a = rollout(inst.model.as_ref(), &inst.x0, &inst.controls, &inst.theta, &inst.w).unwrap();
        let b = rollout(inst.model.as_ref(), &inst.x0, &inst.controls, &inst.theta, &inst.w).unwrap();
        prop_assert_eq!(a.as_flat(), b.as_flat());
        let c = total_cost(inst.model.as_ref(), &inst.costs, &inst.x0, &inst.controls, &inst.theta, &inst.w).unwrap();
        prop_assert!(c >= 0.0);
    }
}

#[test]
fn single_precision_pipeline() {
    let model = std::sync::Arc::new(scalar_model::<f32>());
    let costs = spc_core::cost::CostMatrices::<f32>::diagonal(&[1.0], &[1.0], &[1.0]).unwrap();
    let set = ScenarioSet::new(
        model.clone(),
        costs,
        vec![Scenario {
            id: 0,
            x0: vec![1.0f32],
            w: Disturbances::zeros(1, 1),
        }],
    )
    .unwrap();
    let cfg = SolverConfig {
        tolerance: 1e-5,
        ..SolverConfig::default()
    };
    let sol = set.solve(0, &[1.0f32], &cfg, None).unwrap();
    assert!((sol.controls[0] + 0.5).abs() < 1e-5);
    let du = set.optimizer_jacobian(0, &sol.controls, &[1.0f32], &cfg).unwrap();
    assert!((du[(0, 0)] + 0.5).abs() < 1e-2);
    assert_eq!(model.param_dim(), 1);
}
