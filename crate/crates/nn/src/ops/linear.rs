//! Fully-connected affine map: `y = x @ W + b` with `x (N, In)`,
//! `W (In, Out)`, `b (Out)`.

use crate::error::{NnError, Result};
use crate::ops::kernels::{axpy, dot};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, k] = x.dims2()?;
    let wdims = w.shape();
    if wdims.len() != 2 || wdims[0] != k {
        return Err(NnError::ShapeMismatch(format!(
            "weights {:?} do not match input features {k}",
            wdims
        )));
    }
    let out_f = wdims[1];
    if b.shape() != [out_f] {
        return Err(NnError::ShapeMismatch(format!(
            "bias {:?} does not match {out_f} output units",
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(vec![n, out_f]);
    let xd = x.data();
    let wd = w.data();
    for row in 0..n {
        let orow = &mut out.data_mut()[row * out_f..][..out_f];
        orow.copy_from_slice(b.data());
        for i in 0..k {
            axpy(orow, xd[row * k + i], &wd[i * out_f..][..out_f]);
        }
    }
    Ok(out)
}

pub struct LinearGrads<S> {
    pub dx: Option<Tensor<S>>,
    pub dw: Tensor<S>,
    pub db: Vec<S>,
}

pub fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad_out: &Tensor<S>,
    need_dx: bool,
) -> Result<LinearGrads<S>> {
    let [n, k] = x.dims2()?;
    let out_f = w.shape()[1];
    if grad_out.shape() != [n, out_f] {
        return Err(NnError::ShapeMismatch(format!(
            "upstream gradient {:?}, expected ({n}, {out_f})",
            grad_out.shape()
        )));
    }
    let xd = x.data();
    let wd = w.data();
    let gd = grad_out.data();

    let mut dw = Tensor::zeros(vec![k, out_f]);
    let mut db = vec![S::ZERO; out_f];
    for row in 0..n {
        let grow = &gd[row * out_f..][..out_f];
        for (acc, g) in db.iter_mut().zip(grow) {
            *acc += *g;
        }
        for i in 0..k {
            axpy(&mut dw.data_mut()[i * out_f..][..out_f], xd[row * k + i], grow);
        }
    }

    let dx = if need_dx {
        let mut dx = Tensor::zeros(vec![n, k]);
        for row in 0..n {
            let grow = &gd[row * out_f..][..out_f];
            let drow = &mut dx.data_mut()[row * k..][..k];
            for i in 0..k {
                drow[i] = dot(grow, &wd[i * out_f..][..out_f]);
            }
        }
        Some(dx)
    } else {
        None
    };

    Ok(LinearGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias() {
        let x = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut w = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let b = Tensor::zeros(vec![3]);
        let y = forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn hand_computed_fixture() {
        // [1, 2] @ [[1, 1], [1, -1]] + [0, 0] = [3, -1]
        let x = Tensor::new(vec![1, 2], vec![1.0f64, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        let y = forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 3]);
        let w = Tensor::zeros(vec![4, 2]);
        let b = Tensor::zeros(vec![2]);
        assert!(forward(&x, &w, &b).is_err());
    }
}
