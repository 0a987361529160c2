//! ReLU and inverted dropout.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < S::ZERO {
            *v = S::ZERO;
        }
    }
    out
}

pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut dx = Tensor::zeros(x.shape().to_vec());
    for ((d, xv), g) in dx.data_mut().iter_mut().zip(x.data()).zip(grad_out.data()) {
        if *xv > S::ZERO {
            *d = *g;
        }
    }
    dx
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1/(1-rate)`, so eval-time forward is the identity. Returns
/// the output and the mask (0 or the scale factor) for backward.
pub fn dropout_forward<S: Scalar, R: Rng>(
    x: &Tensor<S>,
    rate: f64,
    rng: &mut R,
) -> Result<(Tensor<S>, Vec<S>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidConfig(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    let scale = S::from_f64(1.0 / (1.0 - rate));
    let mut out = x.clone();
    let mut mask = vec![S::ZERO; x.len()];
    for (o, m) in out.data_mut().iter_mut().zip(mask.iter_mut()) {
        if rng.random_range(0.0..1.0) < rate {
            *o = S::ZERO;
        } else {
            *m = scale;
            *o *= scale;
        }
    }
    Ok((out, mask))
}

pub fn dropout_backward<S: Scalar>(mask: &[S], grad_out: &Tensor<S>) -> Tensor<S> {
    let mut dx = grad_out.clone();
    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
        *d *= *m;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(vec![4], vec![-2.0f64, -0.5, 0.0, 3.0]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 3.0]);
        let g = Tensor::full(vec![4], 1.0);
        let dx = relu_backward(&x, &g);
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dropout_statistics() {
        let n = 1_000_000usize;
        let x = Tensor::full(vec![n], 1.0f64);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let (y, mask) = dropout_forward(&x, 0.5, &mut rng).unwrap();
        let survivors = mask.iter().filter(|m| **m != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "survivor fraction {frac}");
        let mean: f64 = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        let x = Tensor::<f32>::zeros(vec![4]);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(dropout_forward(&x, 1.0, &mut rng).is_err());
    }
}
