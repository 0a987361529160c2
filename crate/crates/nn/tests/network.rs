//! Network-level contracts: forward determinism, checkpoint round-trips,
//! steady-state memory across train steps, and the conv/pool/transpose shape
//! formulas as properties.

use handvox_nn::ops::conv3d::out_extent;
use handvox_nn::{
    adam_step, AdamConfig, InitConfig, LayerSpec, Mode, Network, Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn small_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv3(4),
        LayerSpec::batch_norm(),
        LayerSpec::ReLU,
        LayerSpec::pool2(),
        LayerSpec::ResidualAdd {
            body: vec![LayerSpec::conv3(8), LayerSpec::batch_norm(), LayerSpec::ReLU],
        },
        LayerSpec::ConvTranspose3d {
            filters: 4,
            kernel: 2,
            stride: 2,
        },
        LayerSpec::batch_norm(),
        LayerSpec::ReLU,
        LayerSpec::conv1(3),
        LayerSpec::AdaptiveAvgPool3d { output: 2 },
        LayerSpec::FullyConnected { units: 9 },
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::FullyConnected { units: 6 },
    ]
}

fn random_input(seed: u64, n: usize, size: usize) -> Tensor<f32> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let len = n * size * size * size;
    Tensor::new(
        vec![n, 1, size, size, size],
        (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn forward_is_deterministic_for_fixed_weights_and_seed() {
    let run = |out: &mut Vec<f32>| {
        let mut net =
            Network::<f32>::build([1, 8, 8, 8], &small_specs(), &InitConfig::default()).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(random_input(3, 2, 8));
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let y = net.forward(&mut tape, x, Mode::Train, &mut rng).unwrap();
        out.extend_from_slice(tape.value(y).data());
    };
    let mut a = Vec::new();
    let mut b = Vec::new();
    run(&mut a);
    run(&mut b);
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_reproduces_outputs_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let mut net =
        Network::<f32>::build([1, 8, 8, 8], &small_specs(), &InitConfig::default()).unwrap();

    // Take a couple of train steps so parameters and running stats are
    // non-trivial.
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for step in 0..2 {
        let mut tape = Tape::new();
        let x = tape.input(random_input(step, 2, 8));
        let y = net.forward(&mut tape, x, Mode::Train, &mut rng).unwrap();
        let target = Tensor::zeros(vec![2, 6]);
        let loss = tape.mse_joint_loss(y, target, 2).unwrap();
        let mut store = std::mem::take(&mut net.store);
        tape.backward(loss, &mut store).unwrap();
        net.store = store;
        adam_step(&mut net.store, &AdamConfig::default()).unwrap();
        net.store.zero_grads();
    }
    net.save_checkpoint(&path).unwrap();

    let infer = |net: &Network<f32>| -> Vec<u32> {
        let mut tape = Tape::new();
        let x = tape.input(random_input(99, 1, 8));
        let y = net.infer(&mut tape, x).unwrap();
        tape.value(y).data().iter().map(|v| v.to_bits()).collect()
    };
    let want = infer(&net);

    let mut restored =
        Network::<f32>::build([1, 8, 8, 8], &small_specs(), &InitConfig { sigma: 0.005, seed: 1234 })
            .unwrap();
    restored.load_checkpoint(&path).unwrap();
    assert_eq!(infer(&restored), want);
}

#[test]
fn gradient_reaches_every_parameter() {
    // Dropout disabled for this probe (a dropped unit would null its path);
    // batch norm keeps running in train mode.
    let specs: Vec<LayerSpec> = small_specs()
        .into_iter()
        .filter(|s| !matches!(s, LayerSpec::Dropout { .. }))
        .collect();
    let mut net = Network::<f32>::build([1, 8, 8, 8], &specs, &InitConfig::default()).unwrap();
    let mut tape = Tape::new();
    let x = tape.input(random_input(11, 2, 8));
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let y = net.forward(&mut tape, x, Mode::Train, &mut rng).unwrap();
    let mut t = ChaCha20Rng::seed_from_u64(13);
    let target = Tensor::new(
        vec![2, 6],
        (0..12).map(|_| t.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap();
    let loss = tape.mse_joint_loss(y, target, 2).unwrap();
    let mut store = std::mem::take(&mut net.store);
    tape.backward(loss, &mut store).unwrap();
    for p in store.iter() {
        if !p.trainable {
            continue;
        }
        let g = p
            .grad
            .as_ref()
            .unwrap_or_else(|| panic!("no gradient for {}", p.name));
        assert!(
            g.iter().any(|v| *v != 0.0),
            "gradient identically zero for {}",
            p.name
        );
    }
}

/// Train steps hold no buffers across iterations: memory reaches a steady
/// state instead of growing monotonically.
#[cfg(target_os = "linux")]
#[test]
fn train_steps_reach_steady_state_memory() {
    fn rss_kb() -> usize {
        let status = std::fs::read_to_string("/proc/self/status").unwrap();
        status
            .lines()
            .find(|l| l.starts_with("VmRSS:"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
            .unwrap()
    }

    let mut net =
        Network::<f32>::build([1, 8, 8, 8], &small_specs(), &InitConfig::default()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut step = |i: u64, net: &mut Network<f32>, rng: &mut ChaCha20Rng| {
        let mut tape = Tape::new();
        let x = tape.input(random_input(i, 2, 8));
        let y = net.forward(&mut tape, x, Mode::Train, rng).unwrap();
        let target = Tensor::zeros(vec![2, 6]);
        let loss = tape.mse_joint_loss(y, target, 2).unwrap();
        let mut store = std::mem::take(&mut net.store);
        tape.backward(loss, &mut store).unwrap();
        net.store = store;
        adam_step(&mut net.store, &AdamConfig::default()).unwrap();
        net.store.zero_grads();
    };

    for i in 0..20 {
        step(i, &mut net, &mut rng);
    }
    let mid = rss_kb();
    for i in 20..120 {
        step(i, &mut net, &mut rng);
    }
    let end = rss_kb();
    assert!(
        end < mid * 3 / 2 + 32 * 1024,
        "RSS grew from {mid} kB to {end} kB over 100 further steps"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Convolution shape formula holds whenever the kernel fits.
    #[test]
    fn conv_shape_formula(
        input in 1usize..24,
        kernel in 1usize..5,
        stride in 1usize..4,
        pad in 0usize..3,
    ) {
        match out_extent(input, kernel, stride, pad) {
            Some(out) => {
                prop_assert_eq!(out, (input + 2 * pad - kernel) / stride + 1);
                prop_assert!(out >= 1);
            }
            None => prop_assert!(input + 2 * pad < kernel),
        }
    }

    /// Built networks agree with the analytic trace for pool and transpose.
    #[test]
    fn pool_and_transpose_shape_trace(size in 2usize..8) {
        let d = size * 2;
        let specs = vec![
            LayerSpec::pool2(),
            LayerSpec::ConvTranspose3d { filters: 2, kernel: 2, stride: 2 },
        ];
        let net = Network::<f32>::build([1, d, d, d], &specs, &InitConfig::default()).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(vec![1, 1, d, d, d]));
        let y = net.infer(&mut tape, x).unwrap();
        // pool halves, transpose doubles: (d/2 - 1)*2 + 2 = d
        prop_assert_eq!(tape.value(y).shape(), &[1, 2, d, d, d]);
    }
}
