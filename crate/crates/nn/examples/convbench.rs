//! Quick conv kernel timing (dev tool).
use handvox_nn::ops::conv3d::{backward, forward, Backend};
use handvox_nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

fn rt(shape: Vec<usize>, rng: &mut ChaCha20Rng) -> Tensor<f32> {
    let len = shape.iter().product();
    Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for (n, ci, co, d) in [(4usize, 16usize, 16usize, 44usize), (4, 16, 32, 22), (4, 32, 32, 22), (1, 16, 16, 88)] {
        let x = rt(vec![n, ci, d, d, d], &mut rng);
        let w = rt(vec![co, ci, 3, 3, 3], &mut rng);
        let b = rt(vec![co], &mut rng);
        let gflop = (n * co * d * d * d * ci * 27 * 2) as f64 / 1e9;

        let t0 = Instant::now();
        let out = forward(&x, &w, &b, [1; 3], [1; 3], Backend::Fast).unwrap();
        let dt_f = t0.elapsed().as_secs_f64();

        let g = rt(out.shape().to_vec(), &mut rng);
        let t0 = Instant::now();
        let grads = backward(&x, &w, &g, [1; 3], [1; 3], Backend::Fast, true).unwrap();
        let dt_b = t0.elapsed().as_secs_f64();
        std::hint::black_box(&grads.dw);
        println!(
            "{}x{}->{} @{}^3: fwd {:.3}s ({:.1} GF/s)  bwd {:.3}s ({:.1} GF/s)",
            n, ci, co, d, dt_f, gflop / dt_f, dt_b, 2.0 * gflop / dt_b
        );
    }
}
