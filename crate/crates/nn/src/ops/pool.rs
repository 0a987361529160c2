//! Max pooling (gradient routed to the argmax, ties broken by first index in
//! scan order) and adaptive average pooling to a fixed output extent.

use rayon::prelude::*;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct MaxPoolOut<S> {
    pub out: Tensor<S>,
    /// Per output element, the linear index of its source element in the
    /// input buffer.
    pub argmax: Vec<usize>,
}

pub fn maxpool3d_forward<S: Scalar>(
    x: &Tensor<S>,
    kernel: [usize; 3],
    stride: [usize; 3],
) -> Result<MaxPoolOut<S>> {
    let [n, c, d, h, w] = x.dims5()?;
    let dims = [d, h, w];
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        if kernel[a] == 0 || stride[a] == 0 || dims[a] < kernel[a] {
            return Err(NnError::ShapeMismatch(format!(
                "pool kernel {:?} does not fit input {:?}",
                kernel, dims
            )));
        }
        out_dims[a] = (dims[a] - kernel[a]) / stride[a] + 1;
    }
    let [od, oh, ow] = out_dims;
    let xd = x.data();
    let in_plane = d * h * w;
    let out_plane = od * oh * ow;
    let mut out = Tensor::zeros(vec![n, c, od, oh, ow]);
    let mut argmax = vec![0usize; n * c * out_plane];

    out.data_mut()
        .par_chunks_mut(out_plane)
        .zip(argmax.par_chunks_mut(out_plane))
        .enumerate()
        .for_each(|(nc, (plane, amax))| {
            let base = nc * in_plane;
            for zo in 0..od {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut best_idx =
                            base + ((zo * stride[0]) * h + yo * stride[1]) * w + xo * stride[2];
                        let mut best = xd[best_idx];
                        for dz in 0..kernel[0] {
                            for dy in 0..kernel[1] {
                                for dx in 0..kernel[2] {
                                    let idx = base
                                        + ((zo * stride[0] + dz) * h + yo * stride[1] + dy) * w
                                        + xo * stride[2]
                                        + dx;
                                    let v = xd[idx];
                                    if v > best {
                                        best = v;
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        plane[(zo * oh + yo) * ow + xo] = best;
                        amax[(zo * oh + yo) * ow + xo] = best_idx;
                    }
                }
            }
        });
    Ok(MaxPoolOut { out, argmax })
}

pub fn maxpool3d_backward<S: Scalar>(
    in_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::ShapeMismatch(format!(
            "pool gradient length {} does not match {} recorded argmax entries",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(in_shape.to_vec());
    let dxd = dx.data_mut();
    for (g, idx) in grad_out.data().iter().zip(argmax) {
        dxd[*idx] += *g;
    }
    Ok(dx)
}

/// Adaptive average pooling: output extent `out` per axis; window `i` covers
/// `[floor(i*In/Out), ceil((i+1)*In/Out))`.
pub fn adaptive_avg_pool3d_forward<S: Scalar>(x: &Tensor<S>, out_size: usize) -> Result<Tensor<S>> {
    let [n, c, d, h, w] = x.dims5()?;
    for dim in [d, h, w] {
        if dim < out_size {
            return Err(NnError::ShapeMismatch(format!(
                "adaptive pool target {out_size} exceeds input extent {dim}"
            )));
        }
    }
    let xd = x.data();
    let in_plane = d * h * w;
    let o = out_size;
    let mut out = Tensor::zeros(vec![n, c, o, o, o]);
    let out_plane = o * o * o;
    let win = |i: usize, inp: usize| -> (usize, usize) {
        (i * inp / o, ((i + 1) * inp).div_ceil(o))
    };
    out.data_mut()
        .chunks_mut(out_plane)
        .enumerate()
        .for_each(|(nc, plane)| {
            let base = nc * in_plane;
            for zo in 0..o {
                let (z0, z1) = win(zo, d);
                for yo in 0..o {
                    let (y0, y1) = win(yo, h);
                    for xo in 0..o {
                        let (x0, x1) = win(xo, w);
                        let mut acc = S::ZERO;
                        for z in z0..z1 {
                            for y in y0..y1 {
                                for x_ in x0..x1 {
                                    acc += xd[base + (z * h + y) * w + x_];
                                }
                            }
                        }
                        let count = ((z1 - z0) * (y1 - y0) * (x1 - x0)) as f64;
                        plane[(zo * o + yo) * o + xo] = acc * S::from_f64(1.0 / count);
                    }
                }
            }
        });
    Ok(out)
}

pub fn adaptive_avg_pool3d_backward<S: Scalar>(
    in_shape: &[usize],
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (d, h, w) = (in_shape[2], in_shape[3], in_shape[4]);
    let o = grad_out.shape()[2];
    let gd = grad_out.data();
    let in_plane = d * h * w;
    let out_plane = o * o * o;
    let win = |i: usize, inp: usize| -> (usize, usize) {
        (i * inp / o, ((i + 1) * inp).div_ceil(o))
    };
    let mut dx = Tensor::zeros(in_shape.to_vec());
    dx.data_mut()
        .chunks_mut(in_plane)
        .enumerate()
        .for_each(|(nc, plane)| {
            let base = nc * out_plane;
            for zo in 0..o {
                let (z0, z1) = win(zo, d);
                for yo in 0..o {
                    let (y0, y1) = win(yo, h);
                    for xo in 0..o {
                        let (x0, x1) = win(xo, w);
                        let count = ((z1 - z0) * (y1 - y0) * (x1 - x0)) as f64;
                        let g = gd[base + (zo * o + yo) * o + xo] * S::from_f64(1.0 / count);
                        for z in z0..z1 {
                            for y in y0..y1 {
                                for x_ in x0..x1 {
                                    plane[(z * h + y) * w + x_] += g;
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(dx)
}
