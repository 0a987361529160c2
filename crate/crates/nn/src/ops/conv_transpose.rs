//! Transposed 3D convolution (adjoint of strided cross-correlation), used to
//! up-sample feature volumes. Weights are laid out (Cin, Cout, K, K, K);
//! output extent per axis is `(in - 1) * stride + kernel`.

use rayon::prelude::*;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct ConvTransposeShape {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_dims: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub out_dims: [usize; 3],
}

pub fn shape<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    kernel: usize,
    stride: usize,
) -> Result<ConvTransposeShape> {
    let [n, ci, d, h, wd] = x.dims5()?;
    let wdims = w.shape();
    if wdims.len() != 5 || wdims[2] != kernel || wdims[3] != kernel || wdims[4] != kernel {
        return Err(NnError::ShapeMismatch(format!(
            "transpose weights must be (ci, co, {kernel}^3), got {wdims:?}"
        )));
    }
    if wdims[0] != ci {
        return Err(NnError::ShapeMismatch(format!(
            "input channels {ci} do not match weight channels {}",
            wdims[0]
        )));
    }
    let co = wdims[1];
    if b.shape() != [co] {
        return Err(NnError::ShapeMismatch(format!(
            "bias shape {:?} does not match {co} filters",
            b.shape()
        )));
    }
    if kernel == 0 || stride == 0 || d == 0 {
        return Err(NnError::InvalidConfig("zero kernel/stride/extent".into()));
    }
    let out = |i: usize| (i - 1) * stride + kernel;
    Ok(ConvTransposeShape {
        batch: n,
        in_ch: ci,
        out_ch: co,
        in_dims: [d, h, wd],
        kernel,
        stride,
        out_dims: [out(d), out(h), out(wd)],
    })
}

pub fn forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    kernel: usize,
    stride: usize,
) -> Result<Tensor<S>> {
    let cs = shape(x, w, b, kernel, stride)?;
    let [d, h, wd] = cs.in_dims;
    let [od, oh, ow] = cs.out_dims;
    let xd = x.data();
    let wdat = w.data();
    let bd = b.data();
    let in_plane = d * h * wd;
    let out_plane = od * oh * ow;
    let k3 = kernel * kernel * kernel;
    let mut out = Tensor::zeros(vec![cs.batch, cs.out_ch, od, oh, ow]);
    out.data_mut()
        .par_chunks_mut(out_plane)
        .enumerate()
        .for_each(|(nc, plane)| {
            let n = nc / cs.out_ch;
            let co = nc % cs.out_ch;
            plane.fill(bd[co]);
            for ci in 0..cs.in_ch {
                let x_plane = &xd[(n * cs.in_ch + ci) * in_plane..][..in_plane];
                let w_base = (ci * cs.out_ch + co) * k3;
                for zi in 0..d {
                    for yi in 0..h {
                        for xi in 0..wd {
                            let xv = x_plane[(zi * h + yi) * wd + xi];
                            for dz in 0..kernel {
                                let zo = zi * stride + dz;
                                for dy in 0..kernel {
                                    let yo = yi * stride + dy;
                                    let row = (zo * oh + yo) * ow + xi * stride;
                                    for dx in 0..kernel {
                                        plane[row + dx] +=
                                            xv * wdat[w_base + (dz * kernel + dy) * kernel + dx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

pub struct ConvTransposeGrads<S> {
    pub dx: Option<Tensor<S>>,
    pub dw: Tensor<S>,
    pub db: Vec<S>,
}

pub fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad_out: &Tensor<S>,
    kernel: usize,
    stride: usize,
    need_dx: bool,
) -> Result<ConvTransposeGrads<S>> {
    let bias = Tensor::zeros(vec![w.shape()[1]]);
    let cs = shape(x, w, &bias, kernel, stride)?;
    let want = vec![
        cs.batch,
        cs.out_ch,
        cs.out_dims[0],
        cs.out_dims[1],
        cs.out_dims[2],
    ];
    if grad_out.shape() != want {
        return Err(NnError::ShapeMismatch(format!(
            "upstream gradient shape {:?}, expected {:?}",
            grad_out.shape(),
            want
        )));
    }
    let [d, h, wd] = cs.in_dims;
    let [od, oh, ow] = cs.out_dims;
    let xd = x.data();
    let wdat = w.data();
    let gd = grad_out.data();
    let in_plane = d * h * wd;
    let out_plane = od * oh * ow;
    let k3 = kernel * kernel * kernel;
    let w_per_ci = cs.out_ch * k3;

    let mut db = vec![S::ZERO; cs.out_ch];
    for n in 0..cs.batch {
        for co in 0..cs.out_ch {
            db[co] += crate::ops::kernels::sum(&gd[(n * cs.out_ch + co) * out_plane..][..out_plane]);
        }
    }

    let mut dw = Tensor::zeros(w.shape().to_vec());
    dw.data_mut()
        .par_chunks_mut(w_per_ci)
        .enumerate()
        .for_each(|(ci, dw_ci)| {
            for n in 0..cs.batch {
                let x_plane = &xd[(n * cs.in_ch + ci) * in_plane..][..in_plane];
                for co in 0..cs.out_ch {
                    let g_plane = &gd[(n * cs.out_ch + co) * out_plane..][..out_plane];
                    for zi in 0..d {
                        for yi in 0..h {
                            for xi in 0..wd {
                                let xv = x_plane[(zi * h + yi) * wd + xi];
                                for dz in 0..kernel {
                                    let zo = zi * stride + dz;
                                    for dy in 0..kernel {
                                        let yo = yi * stride + dy;
                                        let row = (zo * oh + yo) * ow + xi * stride;
                                        for dx in 0..kernel {
                                            dw_ci[co * k3 + (dz * kernel + dy) * kernel + dx] +=
                                                xv * g_plane[row + dx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    let dx = if need_dx {
        let mut dx = Tensor::zeros(x.shape().to_vec());
        dx.data_mut()
            .par_chunks_mut(in_plane)
            .enumerate()
            .for_each(|(nc, dx_plane)| {
                let n = nc / cs.in_ch;
                let ci = nc % cs.in_ch;
                for co in 0..cs.out_ch {
                    let g_plane = &gd[(n * cs.out_ch + co) * out_plane..][..out_plane];
                    let w_base = (ci * cs.out_ch + co) * k3;
                    for zi in 0..d {
                        for yi in 0..h {
                            for xi in 0..wd {
                                let mut acc = S::ZERO;
                                for dz in 0..kernel {
                                    let zo = zi * stride + dz;
                                    for dy in 0..kernel {
                                        let yo = yi * stride + dy;
                                        let row = (zo * oh + yo) * ow + xi * stride;
                                        for dx_ in 0..kernel {
                                            acc += g_plane[row + dx_]
                                                * wdat
                                                    [w_base + (dz * kernel + dy) * kernel + dx_];
                                        }
                                    }
                                }
                                dx_plane[(zi * h + yi) * wd + xi] += acc;
                            }
                        }
                    }
                }
            });
        Some(dx)
    } else {
        None
    };

    Ok(ConvTransposeGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn upsamples_axis_11_to_22() {
        let x = Tensor::<f32>::zeros(vec![1, 2, 11, 11, 11]);
        let w = Tensor::zeros(vec![2, 3, 2, 2, 2]);
        let b = Tensor::zeros(vec![3]);
        let y = forward(&x, &w, &b, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 22, 22, 22]);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = Tensor::new(
            vec![1, 2, 3, 3, 3],
            (0..54).map(|_| rng.random_range(-1.0f64..1.0)).collect(),
        )
        .unwrap();
        let w = Tensor::zeros(vec![2, 2, 2, 2, 2]);
        let b = Tensor::new(vec![2], vec![0.25, -0.5]).unwrap();
        let y = forward(&x, &w, &b, 2, 2).unwrap();
        let plane = 6 * 6 * 6;
        assert!(y.data()[..plane].iter().all(|v| *v == 0.25));
        assert!(y.data()[plane..].iter().all(|v| *v == -0.5));
    }

    /// The transpose is the adjoint of strided convolution:
    /// <conv(x), y> == <x, conv_transpose(y)> for matching geometry.
    #[test]
    fn adjoint_identity_with_strided_conv() {
        use crate::ops::conv3d;
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let rand = |shape: Vec<usize>, rng: &mut ChaCha20Rng| {
            let len = shape.iter().product();
            Tensor::<f64>::new(
                shape,
                (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        // conv: (1, ci=2, 6,6,6) -> (1, co=3, 3,3,3), k=2 s=2
        let x = rand(vec![1, 2, 6, 6, 6], &mut rng);
        let y = rand(vec![1, 3, 3, 3, 3], &mut rng);
        // Same weights seen two ways: conv uses (co, ci, k..); the adjoint's
        // input channels are the conv's output channels, so the transpose
        // layout (ci_t, co_t, k..) = (co, ci, k..) shares the flat data.
        let w_conv = rand(vec![3, 2, 2, 2, 2], &mut rng);
        let w_t = Tensor::new(vec![3, 2, 2, 2, 2], w_conv.data().to_vec()).unwrap();
        let zero_b3 = Tensor::zeros(vec![3]);
        let zero_b2 = Tensor::zeros(vec![2]);
        let cx = conv3d::forward(&x, &w_conv, &zero_b3, [2; 3], [0; 3], conv3d::Backend::Naive)
            .unwrap();
        let ty = forward(&y, &w_t, &zero_b2, 2, 2).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
