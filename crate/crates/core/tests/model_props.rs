mod common;

use feddea::model::{forward, init_params, loss, loss_and_grad, ModelSpec};
use feddea::params::ParamVector;
use feddea::seed::rng_from;
use proptest::prelude::*;
use rand::Rng;

use common::{random_batch, random_spec};

fn perturbed_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let p = init_params(spec, seed).unwrap();
    let mut rng = rng_from(&[seed, 1]);
    let values = p.values().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    ParamVector::from_values(p.layout().clone(), values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradients_match_central_differences(seed: u64) {
        let mut rng = rng_from(&[seed]);
        let k = rng.random_range(1..4usize);
        let input_dim = rng.random_range(1..5usize);
        let spec = random_spec(&mut rng, input_dim, k);
        let params = perturbed_params(&spec, seed);
        prop_assume!(params.len() <= 200);
        let task = rng.random_range(0..k);
        let rows = rng.random_range(1..5usize);
        let batch = random_batch(&mut rng, &spec, task, rows);
        let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
        let h = 1e-4;
        for i in 0..params.len() {
            let shifted = |s: f64| {
                let mut v = params.values().to_vec();
                v[i] += s;
                loss(&spec, &ParamVector::from_values(params.layout().clone(), v).unwrap(), &batch).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let rel = (grad.values()[i] - fd).abs() / (fd.abs() + 1e-8);
            prop_assert!(rel < 1e-5, "coordinate {i}: analytic {} vs fd {fd}", grad.values()[i]);
        }
    }

    #[test]
    fn other_heads_get_exactly_zero_gradient(seed: u64) {
        let mut rng = rng_from(&[seed, 2]);
        let spec = random_spec(&mut rng, 3, 3);
        let params = perturbed_params(&spec, seed);
        let task = rng.random_range(0..3usize);
        let batch = random_batch(&mut rng, &spec, task, 4);
        let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
        for t in (0..3).filter(|&t| t != task) {
            prop_assert!(grad.segment_slice(&ModelSpec::head_weight_name(t)).unwrap().iter().all(|&g| g == 0.0));
            if spec.bias {
                prop_assert!(grad.segment_slice(&ModelSpec::head_bias_name(t)).unwrap().iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn forward_and_loss_are_deterministic(seed: u64) {
        let mut rng = rng_from(&[seed, 3]);
        let spec = random_spec(&mut rng, 4, 2);
        let params = perturbed_params(&spec, seed);
        let batch = random_batch(&mut rng, &spec, 1, 6);
        let a = forward(&spec, &params, batch.inputs.view(), 1).unwrap();
        let b = forward(&spec, &params, batch.inputs.view(), 1).unwrap();
        prop_assert_eq!(a, b);
        let (l1, g1) = loss_and_grad(&spec, &params, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&spec, &params, &batch).unwrap();
        prop_assert_eq!(l1.to_bits(), l2.to_bits());
        prop_assert!(g1.bitwise_eq(&g2));
        prop_assert_eq!(loss(&spec, &params, &batch).unwrap().to_bits(), l1.to_bits());
    }
}

#[test]
fn single_row_batches_through_deep_trunks() {
    for seed in 0..30 {
        let mut rng = rng_from(&[seed, 4]);
        let mut spec = random_spec(&mut rng, 3, 2);
        spec.trunk_widths = vec![4, 1, 3];
        let params = perturbed_params(&spec, seed);
        let batch = random_batch(&mut rng, &spec, 0, 1);
        let (_, grad) = loss_and_grad(&spec, &params, &batch).unwrap();
        assert_eq!(grad.len(), params.len());
    }
}
