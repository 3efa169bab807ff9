//! Finite-difference validation of every gradient path over randomized
//! seeded networks and batches.

use advrisk::check::{finite_diff_input_check, finite_diff_param_check, finite_diff_trades_check};
use advrisk::nn::{Batch, LossSpec, Model};
use advrisk::rng::{mix_seed, rng_from};
use rand::Rng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn random_case(seed: u64) -> (Model, Batch) {
    let mut rng = rng_from(seed);
    let depth = rng.gen_range(1..=3);
    let mut dims = vec![rng.gen_range(2..=6)];
    for _ in 0..depth {
        dims.push(rng.gen_range(2..=6));
    }
    let model = Model::new(&dims, mix_seed(seed, 1)).unwrap();
    let m = rng.gen_range(1..=4);
    let inputs: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..dims[0]).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let labels: Vec<usize> = (0..m)
        .map(|_| rng.gen_range(0..*dims.last().unwrap()))
        .collect();
    (model, Batch::new(inputs, labels).unwrap())
}

fn random_weights(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(mix_seed(seed, 2));
    (0..m).map(|_| rng.gen_range(0.0..2.0)).collect()
}

fn random_reference(m: usize, c: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(mix_seed(seed, 3));
    (0..m)
        .map(|_| (0..c).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for seed in 0..12u64 {
        let (model, batch) = random_case(seed);
        let weights = random_weights(batch.len(), seed);
        let specs = [
            LossSpec::CrossEntropy,
            LossSpec::KlToReference {
                reference: random_reference(batch.len(), model.output_dim(), seed),
            },
        ];
        for spec in &specs {
            let check = finite_diff_param_check(&model, &batch, spec, &weights, FD_STEP).unwrap();
            assert!(
                check.max_rel_err < REL_TOL,
                "seed {seed}: rel err {}",
                check.max_rel_err
            );
        }
    }
}

#[test]
fn input_gradients_match_finite_differences() {
    for seed in 20..32u64 {
        let (model, batch) = random_case(seed);
        let specs = [
            LossSpec::CrossEntropy,
            LossSpec::KlToReference {
                reference: random_reference(1, model.output_dim(), seed),
            },
        ];
        for spec in &specs {
            let check =
                finite_diff_input_check(&model, &batch.inputs[0], batch.labels[0], spec, FD_STEP)
                    .unwrap();
            assert!(
                check.max_rel_err < REL_TOL,
                "seed {seed}: rel err {}",
                check.max_rel_err
            );
        }
    }
}

#[test]
fn trades_gradients_match_finite_differences() {
    for seed in 40..46u64 {
        let (model, batch) = random_case(seed);
        let mut rng = rng_from(mix_seed(seed, 4));
        let adv_inputs: Vec<Vec<f64>> = batch
            .inputs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        let adv = Batch::new(adv_inputs, batch.labels.clone()).unwrap();
        let weights = random_weights(batch.len(), seed);
        let check = finite_diff_trades_check(&model, &batch, &adv, 6.0, &weights, FD_STEP).unwrap();
        assert!(
            check.max_rel_err < REL_TOL,
            "seed {seed}: rel err {}",
            check.max_rel_err
        );
    }
}
