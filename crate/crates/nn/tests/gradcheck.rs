//! Finite-difference gradient suite: every differentiable op is checked on
//! randomized small shapes against central differences at f64 precision.

use handvox_nn::gradcheck;
use handvox_nn::ops::conv3d::Backend;
use handvox_nn::Mode;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-5;

fn run(name: &str, f: impl Fn(u64) -> f64) {
    for seed in 0..SEEDS {
        let err = f(seed);
        assert!(err < TOL, "{name} seed {seed}: max rel error {err:.3e}");
    }
}

#[test]
fn conv3d_fast_gradients() {
    run("conv3d/fast", |s| gradcheck::conv3d_max_err(s, Backend::Fast));
}

#[test]
fn conv3d_naive_gradients() {
    run("conv3d/naive", |s| {
        gradcheck::conv3d_max_err(s, Backend::Naive)
    });
}

#[test]
fn conv_transpose3d_gradients() {
    run("convtranspose3d", gradcheck::conv_transpose_max_err);
}

#[test]
fn maxpool3d_gradients() {
    run("maxpool3d", gradcheck::maxpool_max_err);
}

#[test]
fn adaptive_avg_pool_gradients() {
    run("adaptiveavgpool3d", gradcheck::adaptive_pool_max_err);
}

#[test]
fn batchnorm_train_gradients() {
    run("batchnorm/train", |s| {
        gradcheck::batchnorm_max_err(s, Mode::Train)
    });
}

#[test]
fn batchnorm_eval_gradients() {
    run("batchnorm/eval", |s| {
        gradcheck::batchnorm_max_err(s, Mode::Eval)
    });
}

#[test]
fn fully_connected_gradients() {
    run("fully_connected", gradcheck::linear_max_err);
}

#[test]
fn relu_composite_gradients() {
    run("relu_composite", gradcheck::relu_composite_max_err);
}

#[test]
fn dropout_fixed_mask_gradients() {
    run("dropout", gradcheck::dropout_fixed_mask_max_err);
}

#[test]
fn mse_joint_loss_gradients() {
    run("mse_joint_loss", gradcheck::mse_loss_max_err);
}

/// Whole-tape composition: a small network with every layer kind, every
/// trainable parameter finite-differenced.
#[test]
fn network_tape_gradients() {
    for seed in 0..3 {
        let err = gradcheck::network_max_err(seed);
        assert!(err < TOL, "network seed {seed}: max rel error {err:.3e}");
    }
}
