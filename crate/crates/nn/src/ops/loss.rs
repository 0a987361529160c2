//! Joint-regression MSE loss: per frame the squared coordinate errors are
//! summed and divided by the joint count, then averaged over the batch.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn mse_joint_forward<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    joints: usize,
) -> Result<S> {
    let [n, k] = pred.dims2()?;
    if target.shape() != pred.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if joints == 0 || k != joints * 3 {
        return Err(NnError::ShapeMismatch(format!(
            "{k} outputs do not form {joints} x 3 joints"
        )));
    }
    let mut total = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p.to_f64() - t.to_f64();
        total += d * d;
    }
    Ok(S::from_f64(total / joints as f64 / n as f64))
}

pub fn mse_joint_backward<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    joints: usize,
    upstream: S,
) -> Tensor<S> {
    let n = pred.shape()[0];
    let scale = S::from_f64(2.0 / joints as f64 / n as f64) * upstream;
    let mut dp = Tensor::zeros(pred.shape().to_vec());
    for ((d, p), t) in dp.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        *d = scale * (*p - *t);
    }
    dp
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn exact_prediction_gives_zero() {
        let p = Tensor::new(vec![2, 6], (0..12).map(|i| i as f64).collect()).unwrap();
        assert_eq!(mse_joint_forward(&p, &p, 2).unwrap(), 0.0);
    }

    #[test]
    fn single_joint_345_fixture() {
        // One frame, one joint, error vector (3, 4, 0): loss = 9 + 16 = 25.
        let p = Tensor::new(vec![1, 3], vec![3.0f64, 4.0, 0.0]).unwrap();
        let t = Tensor::zeros(vec![1, 3]);
        assert_eq!(mse_joint_forward(&p, &t, 1).unwrap(), 25.0);
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let joints = 21;
        let batch = 5;
        let k = joints * 3;
        let p = Tensor::<f64>::new(
            vec![batch, k],
            (0..batch * k).map(|_| rng.random_range(-80.0..80.0)).collect(),
        )
        .unwrap();
        let t = Tensor::<f64>::new(
            vec![batch, k],
            (0..batch * k).map(|_| rng.random_range(-80.0..80.0)).collect(),
        )
        .unwrap();
        let got = mse_joint_forward(&p, &t, joints).unwrap();
        // Oracle: explicit per-frame, per-joint scalar loop.
        let mut want = 0.0;
        for b in 0..batch {
            let mut frame = 0.0;
            for j in 0..joints {
                for c in 0..3 {
                    let idx = b * k + j * 3 + c;
                    let d = p.data()[idx] - t.data()[idx];
                    frame += d * d;
                }
            }
            want += frame / joints as f64;
        }
        want /= batch as f64;
        assert!((got - want).abs() < 1e-9 * want.max(1.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = Tensor::<f32>::zeros(vec![1, 6]);
        let t = Tensor::<f32>::zeros(vec![1, 9]);
        assert!(mse_joint_forward(&p, &t, 2).is_err());
        assert!(mse_joint_forward(&p, &p, 3).is_err());
    }
}
