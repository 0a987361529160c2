//! Batch normalization over (N, spatial) per channel. Train mode normalizes
//! with batch statistics and decays the running estimates
//! (`running = momentum * running + (1 - momentum) * batch`); eval mode uses
//! the running estimates. Statistics accumulate in f64.

use rayon::prelude::*;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tape::Mode;
use crate::tensor::Tensor;

pub struct BnForward<S> {
    pub out: Tensor<S>,
    /// Per-channel (mean, inv_std) actually used for normalization; needed
    /// by the backward pass.
    pub mean: Vec<S>,
    pub inv_std: Vec<S>,
    /// Updated running statistics (train mode only).
    pub updated_running: Option<(Vec<S>, Vec<S>)>,
}

fn channel_layout<S: Scalar>(x: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let [n, c, d, h, w] = x.dims5()?;
    Ok((n, c, d * h * w))
}

#[allow(clippy::too_many_arguments)]
pub fn forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running_mean: &[S],
    running_var: &[S],
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<BnForward<S>> {
    let (n, c, spatial) = channel_layout(x)?;
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(NnError::ShapeMismatch(format!(
            "batch norm parameter length does not match {c} channels"
        )));
    }
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let m = (n * spatial) as f64;

    let (mean, inv_std, updated) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(NnError::DegenerateBatch(n));
            }
            let mut mean = vec![S::ZERO; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut acc = 0.0f64;
                for b in 0..n {
                    let plane = &xd[(b * c + ch) * spatial..][..spatial];
                    for v in plane {
                        acc += v.to_f64();
                    }
                }
                let mu = acc / m;
                let mut vacc = 0.0f64;
                for b in 0..n {
                    let plane = &xd[(b * c + ch) * spatial..][..spatial];
                    for v in plane {
                        let dv = v.to_f64() - mu;
                        vacc += dv * dv;
                    }
                }
                mean[ch] = S::from_f64(mu);
                var[ch] = vacc / m;
            }
            let inv_std: Vec<S> = var
                .iter()
                .map(|v| S::from_f64(1.0 / (v + eps).sqrt()))
                .collect();
            let new_mean: Vec<S> = running_mean
                .iter()
                .zip(&mean)
                .map(|(r, b)| S::from_f64(momentum * r.to_f64() + (1.0 - momentum) * b.to_f64()))
                .collect();
            let new_var: Vec<S> = running_var
                .iter()
                .zip(&var)
                .map(|(r, b)| S::from_f64(momentum * r.to_f64() + (1.0 - momentum) * b))
                .collect();
            (mean, inv_std, Some((new_mean, new_var)))
        }
        Mode::Eval => {
            let mean = running_mean.to_vec();
            let inv_std: Vec<S> = running_var
                .iter()
                .map(|v| S::from_f64(1.0 / (v.to_f64() + eps).sqrt()))
                .collect();
            (mean, inv_std, None)
        }
    };

    let mut out = Tensor::zeros(x.shape().to_vec());
    out.data_mut()
        .par_chunks_mut(spatial)
        .enumerate()
        .for_each(|(bc, plane)| {
            let ch = bc % c;
            let mu = mean[ch];
            let is = inv_std[ch];
            let g = gd[ch];
            let be = bd[ch];
            let src = &xd[bc * spatial..][..spatial];
            for (o, v) in plane.iter_mut().zip(src) {
                *o = (*v - mu) * is * g + be;
            }
        });

    Ok(BnForward {
        out,
        mean,
        inv_std,
        updated_running: updated,
    })
}

pub struct BnGrads<S> {
    pub dx: Tensor<S>,
    pub dgamma: Vec<S>,
    pub dbeta: Vec<S>,
}

/// Backward through train-mode normalization (batch statistics are functions
/// of the input, so their derivative terms appear).
pub fn backward_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    grad_out: &Tensor<S>,
) -> Result<BnGrads<S>> {
    let (n, c, spatial) = channel_layout(x)?;
    let xd = x.data();
    let gd = grad_out.data();
    let m = (n * spatial) as f64;

    let mut dgamma = vec![S::ZERO; c];
    let mut dbeta = vec![S::ZERO; c];
    let mut sum_g = vec![0.0f64; c];
    let mut sum_gx = vec![0.0f64; c];
    for ch in 0..c {
        let mu = mean[ch].to_f64();
        let is = inv_std[ch].to_f64();
        let mut sg = 0.0f64;
        let mut sgx = 0.0f64;
        for b in 0..n {
            let base = (b * c + ch) * spatial;
            let gp = &gd[base..base + spatial];
            let xp = &xd[base..base + spatial];
            for (g, xv) in gp.iter().zip(xp) {
                let xhat = (xv.to_f64() - mu) * is;
                sg += g.to_f64();
                sgx += g.to_f64() * xhat;
            }
        }
        sum_g[ch] = sg;
        sum_gx[ch] = sgx;
        dbeta[ch] = S::from_f64(sg);
        dgamma[ch] = S::from_f64(sgx);
    }

    let mut dx = Tensor::zeros(x.shape().to_vec());
    dx.data_mut()
        .par_chunks_mut(spatial)
        .enumerate()
        .for_each(|(bc, plane)| {
            let ch = bc % c;
            let mu = mean[ch].to_f64();
            let is = inv_std[ch].to_f64();
            let ga = gamma.data()[ch].to_f64();
            let sg = sum_g[ch];
            let sgx = sum_gx[ch];
            let base = bc * spatial;
            let gp = &gd[base..base + spatial];
            let xp = &xd[base..base + spatial];
            for ((o, g), xv) in plane.iter_mut().zip(gp).zip(xp) {
                let xhat = (xv.to_f64() - mu) * is;
                let v = ga * is * (g.to_f64() - (sg + xhat * sgx) / m);
                *o = S::from_f64(v);
            }
        });

    Ok(BnGrads { dx, dgamma, dbeta })
}

/// Backward through eval-mode normalization (running statistics are
/// constants).
pub fn backward_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    grad_out: &Tensor<S>,
) -> Result<BnGrads<S>> {
    let (n, c, spatial) = channel_layout(x)?;
    let xd = x.data();
    let gd = grad_out.data();

    let mut dgamma = vec![S::ZERO; c];
    let mut dbeta = vec![S::ZERO; c];
    for ch in 0..c {
        let mu = mean[ch];
        let is = inv_std[ch];
        let mut sg = S::ZERO;
        let mut sgx = S::ZERO;
        for b in 0..n {
            let base = (b * c + ch) * spatial;
            for (g, xv) in gd[base..base + spatial].iter().zip(&xd[base..base + spatial]) {
                sg += *g;
                sgx += *g * (*xv - mu) * is;
            }
        }
        dbeta[ch] = sg;
        dgamma[ch] = sgx;
    }

    let mut dx = Tensor::zeros(x.shape().to_vec());
    dx.data_mut()
        .par_chunks_mut(spatial)
        .enumerate()
        .for_each(|(bc, plane)| {
            let ch = bc % c;
            let scale = gamma.data()[ch] * inv_std[ch];
            let base = bc * spatial;
            for (o, g) in plane.iter_mut().zip(&gd[base..base + spatial]) {
                *o = *g * scale;
            }
        });

    Ok(BnGrads { dx, dgamma, dbeta })
}
