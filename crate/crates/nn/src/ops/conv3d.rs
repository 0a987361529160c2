//! 3D cross-correlation. Two kernels live behind one contract: a naive
//! reference implementation supporting arbitrary strides, and a fast path
//! for stride 1 organized as shifted-row axpy/dot operations over the
//! contiguous W axis. Parity between them is enforced by tests.

use rayon::prelude::*;

use crate::error::{NnError, Result};
use crate::ops::kernels::sum;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which convolution kernel to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Reference loops, any stride.
    Naive,
    /// Row-vectorized path; requires stride 1.
    Fast,
    /// Fast when stride is 1, naive otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_dims: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out_dims: [usize; 3],
}

/// Output extent along one axis: `(in + 2*pad - k)/stride + 1`.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 || kernel == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn shape<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<ConvShape> {
    let [n, ci, d, h, wd] = x.dims5()?;
    let wdims = w.shape();
    if wdims.len() != 5 {
        return Err(NnError::ShapeMismatch(format!(
            "conv weights must be 5-d, got {wdims:?}"
        )));
    }
    let (co, wci, kd, kh, kw) = (wdims[0], wdims[1], wdims[2], wdims[3], wdims[4]);
    if wci != ci {
        return Err(NnError::ShapeMismatch(format!(
            "input channels {ci} do not match weight channels {wci}"
        )));
    }
    if b.shape() != [co] {
        return Err(NnError::ShapeMismatch(format!(
            "bias shape {:?} does not match {co} filters",
            b.shape()
        )));
    }
    let mut out_dims = [0usize; 3];
    for (a, (inp, k)) in [(d, kd), (h, kh), (wd, kw)].into_iter().enumerate() {
        out_dims[a] = out_extent(inp, k, stride[a], pad[a]).ok_or_else(|| {
            NnError::ShapeMismatch(format!(
                "kernel {k} with stride {} pad {} does not fit input extent {inp}",
                stride[a], pad[a]
            ))
        })?;
    }
    Ok(ConvShape {
        batch: n,
        in_ch: ci,
        out_ch: co,
        in_dims: [d, h, wd],
        kernel: [kd, kh, kw],
        stride,
        pad,
        out_dims,
    })
}

fn resolve(backend: Backend, stride: [usize; 3]) -> Backend {
    match backend {
        Backend::Auto => {
            if stride == [1, 1, 1] {
                Backend::Fast
            } else {
                Backend::Naive
            }
        }
        b => b,
    }
}

pub fn forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    stride: [usize; 3],
    pad: [usize; 3],
    backend: Backend,
) -> Result<Tensor<S>> {
    let cs = shape(x, w, b, stride, pad)?;
    match resolve(backend, stride) {
        Backend::Naive => Ok(forward_naive(x, w, b, &cs)),
        Backend::Fast => {
            if stride != [1, 1, 1] {
                return Err(NnError::InvalidConfig(
                    "fast conv path requires stride 1".into(),
                ));
            }
            Ok(forward_fast(x, w, b, &cs))
        }
        Backend::Auto => unreachable!(),
    }
}

fn forward_naive<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>, cs: &ConvShape) -> Tensor<S> {
    let [d, h, wd] = cs.in_dims;
    let [od, oh, ow] = cs.out_dims;
    let [kd, kh, kw] = cs.kernel;
    let xd = x.data();
    let wdat = w.data();
    let bd = b.data();
    let mut out = Tensor::zeros(vec![cs.batch, cs.out_ch, od, oh, ow]);
    let out_plane = od * oh * ow;
    let in_plane = d * h * wd;
    out.data_mut()
        .chunks_mut(out_plane)
        .enumerate()
        .for_each(|(nc, plane)| {
            let n = nc / cs.out_ch;
            let co = nc % cs.out_ch;
            for zo in 0..od {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut acc = bd[co];
                        for ci in 0..cs.in_ch {
                            let x_base = (n * cs.in_ch + ci) * in_plane;
                            let w_base = ((co * cs.in_ch + ci) * kd) * kh * kw;
                            for dz in 0..kd {
                                let zi = (zo * cs.stride[0] + dz) as isize - cs.pad[0] as isize;
                                if zi < 0 || zi >= d as isize {
                                    continue;
                                }
                                for dy in 0..kh {
                                    let yi =
                                        (yo * cs.stride[1] + dy) as isize - cs.pad[1] as isize;
                                    if yi < 0 || yi >= h as isize {
                                        continue;
                                    }
                                    for dx in 0..kw {
                                        let xi = (xo * cs.stride[2] + dx) as isize
                                            - cs.pad[2] as isize;
                                        if xi < 0 || xi >= wd as isize {
                                            continue;
                                        }
                                        let xv = xd[x_base
                                            + (zi as usize * h + yi as usize) * wd
                                            + xi as usize];
                                        let wv = wdat[w_base + (dz * kh + dy) * kw + dx];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        plane[(zo * oh + yo) * ow + xo] = acc;
                    }
                }
            }
        });
    out
}

/// Valid output range along one axis for a given tap at stride 1:
/// `o + k - pad` must land inside `[0, in)`.
#[inline]
fn tap_range(k: usize, pad: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (input + pad - k).min(output);
    (lo, hi.max(lo))
}

/// Channel lanes processed per microkernel step. Each input scalar issues
/// one LANES-wide fused multiply-add, so vector width does not depend on the
/// spatial extent.
const LANES: usize = 16;

/// `acc[i][l] += xs[i] * wv[l]` over a row: one LANES-wide FMA per scalar,
/// with `acc.len() == xs.len() * LANES`. The scalar goes through a
/// `black_box` fence so the loop vectorizer cannot interchange this into
/// strided gather/scatter form; the lane loop SLP-vectorizes instead.
#[inline(always)]
fn fma_row<S: Scalar>(acc: &mut [S], xs: &[S], wv: &[S; LANES]) {
    debug_assert_eq!(acc.len(), xs.len() * LANES);
    for (a, xv) in acc.chunks_exact_mut(LANES).zip(xs) {
        let a: &mut [S; LANES] = a.try_into().unwrap();
        let x = std::hint::black_box(*xv);
        let mut av = *a;
        for l in 0..LANES {
            av[l] = x.mul_add(wv[l], av[l]);
        }
        *a = av;
    }
}

/// `out[l] += sum_i xs[i] * gp[i][l]`: lane-wise dot against an interleaved
/// row, with `gp.len() == xs.len() * stride` and LANES live lanes at
/// `lane_base` of each stride-wide group.
#[inline(always)]
fn fma_dot_row<S: Scalar>(
    acc: &mut [S; LANES],
    xs: &[S],
    gp: &[S],
    stride: usize,
    lane_base: usize,
) {
    for (i, xv) in xs.iter().enumerate() {
        let g: &[S; LANES] = (&gp[i * stride + lane_base..][..LANES]).try_into().unwrap();
        let x = std::hint::black_box(*xv);
        for l in 0..LANES {
            acc[l] = x.mul_add(g[l], acc[l]);
        }
    }
}

fn pad_to_lanes(n: usize) -> usize {
    n.div_ceil(LANES) * LANES
}

/// Weights repacked as [(ci, tap) rows][co lanes], zero-padded to a lane
/// multiple.
fn pack_weights_co<S: Scalar>(wdat: &[S], co: usize, ci: usize, k3: usize) -> Vec<S> {
    let co_pad = pad_to_lanes(co);
    let mut packed = vec![S::ZERO; ci * k3 * co_pad];
    for c_out in 0..co {
        for c_in in 0..ci {
            for tap in 0..k3 {
                packed[(c_in * k3 + tap) * co_pad + c_out] =
                    wdat[(c_out * ci + c_in) * k3 + tap];
            }
        }
    }
    packed
}

/// Weights repacked as [(co, tap) rows][ci lanes] for the input-gradient
/// pass.
fn pack_weights_ci<S: Scalar>(wdat: &[S], co: usize, ci: usize, k3: usize) -> Vec<S> {
    let ci_pad = pad_to_lanes(ci);
    let mut packed = vec![S::ZERO; co * k3 * ci_pad];
    for c_out in 0..co {
        for c_in in 0..ci {
            for tap in 0..k3 {
                packed[(c_out * k3 + tap) * ci_pad + c_in] =
                    wdat[(c_out * ci + c_in) * k3 + tap];
            }
        }
    }
    packed
}

fn forward_fast<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>, cs: &ConvShape) -> Tensor<S> {
    let [d, h, wd] = cs.in_dims;
    let [od, oh, ow] = cs.out_dims;
    let [kd, kh, kw] = cs.kernel;
    let [pd, ph, pw] = cs.pad;
    let xd = x.data();
    let bd = b.data();
    let k3 = kd * kh * kw;
    let co_pad = pad_to_lanes(cs.out_ch);
    let wpack = pack_weights_co(w.data(), cs.out_ch, cs.in_ch, k3);

    let mut out = Tensor::zeros(vec![cs.batch, cs.out_ch, od, oh, ow]);
    let out_plane = od * oh * ow;
    let in_plane = d * h * wd;
    out.data_mut()
        .par_chunks_mut(cs.out_ch * out_plane)
        .enumerate()
        .for_each(|(n, out_n)| {
            // Lane-interleaved accumulator for one output row.
            let mut acc = vec![S::ZERO; ow * LANES];
            for blk in 0..co_pad / LANES {
                let lane_base = blk * LANES;
                let live = (cs.out_ch - lane_base).min(LANES);
                for zo in 0..od {
                    for yo in 0..oh {
                        for xo in 0..ow {
                            let a = &mut acc[xo * LANES..][..LANES];
                            for (l, slot) in a.iter_mut().enumerate() {
                                *slot = if l < live { bd[lane_base + l] } else { S::ZERO };
                            }
                        }
                        for ci in 0..cs.in_ch {
                            let x_plane = &xd[(n * cs.in_ch + ci) * in_plane..][..in_plane];
                            for dz in 0..kd {
                                let zi = (zo + dz) as isize - pd as isize;
                                if zi < 0 || zi >= d as isize {
                                    continue;
                                }
                                for dy in 0..kh {
                                    let yi = (yo + dy) as isize - ph as isize;
                                    if yi < 0 || yi >= h as isize {
                                        continue;
                                    }
                                    let x_row =
                                        &x_plane[(zi as usize * h + yi as usize) * wd..][..wd];
                                    for dx in 0..kw {
                                        let (xo_lo, xo_hi) = tap_range(dx, pw, wd, ow);
                                        if xo_hi <= xo_lo {
                                            continue;
                                        }
                                        let wv: &[S; LANES] = (&wpack[((ci * k3
                                            + (dz * kh + dy) * kw
                                            + dx)
                                            * co_pad
                                            + lane_base)..][..LANES])
                                            .try_into()
                                            .unwrap();
                                        let xs = &x_row[xo_lo + dx - pw..][..xo_hi - xo_lo];
                                        fma_row(
                                            &mut acc[xo_lo * LANES..xo_hi * LANES],
                                            xs,
                                            wv,
                                        );
                                    }
                                }
                            }
                        }
                        for l in 0..live {
                            let dst = &mut out_n
                                [(lane_base + l) * out_plane + (zo * oh + yo) * ow..][..ow];
                            for (xo, slot) in dst.iter_mut().enumerate() {
                                *slot = acc[xo * LANES + l];
                            }
                        }
                    }
                }
            }
        });
    out
}

pub struct ConvGrads<S> {
    pub dx: Option<Tensor<S>>,
    pub dw: Tensor<S>,
    pub db: Vec<S>,
}

pub fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    grad_out: &Tensor<S>,
    stride: [usize; 3],
    pad: [usize; 3],
    backend: Backend,
    need_dx: bool,
) -> Result<ConvGrads<S>> {
    let bias = Tensor::zeros(vec![w.shape()[0]]);
    let cs = shape(x, w, &bias, stride, pad)?;
    let want: Vec<usize> = vec![
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
    match resolve(backend, stride) {
        Backend::Naive => Ok(backward_naive(x, w, grad_out, &cs, need_dx)),
        Backend::Fast => Ok(backward_fast(x, w, grad_out, &cs, need_dx)),
        Backend::Auto => unreachable!(),
    }
}

fn backward_naive<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    g: &Tensor<S>,
    cs: &ConvShape,
    need_dx: bool,
) -> ConvGrads<S> {
    let [d, h, wd] = cs.in_dims;
    let [od, oh, ow] = cs.out_dims;
    let [kd, kh, kw] = cs.kernel;
    let xd = x.data();
    let wdat = w.data();
    let gd = g.data();
    let in_plane = d * h * wd;
    let out_plane = od * oh * ow;

    let mut dw = Tensor::zeros(w.shape().to_vec());
    let mut db = vec![S::ZERO; cs.out_ch];
    let mut dx = if need_dx {
        Some(Tensor::zeros(x.shape().to_vec()))
    } else {
        None
    };

    for n in 0..cs.batch {
        for co in 0..cs.out_ch {
            let g_plane = &gd[(n * cs.out_ch + co) * out_plane..][..out_plane];
            for zo in 0..od {
                for yo in 0..oh {
                    for xo in 0..ow {
                        let gv = g_plane[(zo * oh + yo) * ow + xo];
                        db[co] += gv;
                        for ci in 0..cs.in_ch {
                            let x_base = (n * cs.in_ch + ci) * in_plane;
                            let w_base = (co * cs.in_ch + ci) * kd * kh * kw;
                            for dz in 0..kd {
                                let zi = (zo * cs.stride[0] + dz) as isize - cs.pad[0] as isize;
                                if zi < 0 || zi >= d as isize {
                                    continue;
                                }
                                for dy in 0..kh {
                                    let yi =
                                        (yo * cs.stride[1] + dy) as isize - cs.pad[1] as isize;
                                    if yi < 0 || yi >= h as isize {
                                        continue;
                                    }
                                    for dxk in 0..kw {
                                        let xi = (xo * cs.stride[2] + dxk) as isize
                                            - cs.pad[2] as isize;
                                        if xi < 0 || xi >= wd as isize {
                                            continue;
                                        }
                                        let x_idx = x_base
                                            + (zi as usize * h + yi as usize) * wd
                                            + xi as usize;
                                        let w_idx = w_base + (dz * kh + dy) * kw + dxk;
                                        dw.data_mut()[w_idx] += gv * xd[x_idx];
                                        if let Some(dx) = &mut dx {
                                            dx.data_mut()[x_idx] += gv * wdat[w_idx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

fn backward_fast<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    g: &Tensor<S>,
    cs: &ConvShape,
    need_dx: bool,
) -> ConvGrads<S> {
    let [d, h, wd] = cs.in_dims;
    let [od, oh, ow] = cs.out_dims;
    let [kd, kh, kw] = cs.kernel;
    let [pd, ph, pw] = cs.pad;
    let xd = x.data();
    let wdat = w.data();
    let gd = g.data();
    let in_plane = d * h * wd;
    let out_plane = od * oh * ow;
    let k3 = kd * kh * kw;

    let co_pad = pad_to_lanes(cs.out_ch);

    // Upstream gradient repacked lane-interleaved: [spatial][co lanes].
    // Built per sample; also yields the bias gradient.
    let mut db = vec![S::ZERO; cs.out_ch];
    for n in 0..cs.batch {
        for co in 0..cs.out_ch {
            db[co] += sum(&gd[(n * cs.out_ch + co) * out_plane..][..out_plane]);
        }
    }

    // Weight gradients: for each (ci, tap) a register-resident lane
    // accumulator sweeps the output volume once per lane block.
    let mut dw = Tensor::zeros(w.shape().to_vec());
    {
        let mut dw_data = vec![S::ZERO; cs.in_ch * k3 * co_pad];
        let mut g_pack = vec![S::ZERO; out_plane * co_pad];
        for n in 0..cs.batch {
            for co in 0..cs.out_ch {
                let g_plane = &gd[(n * cs.out_ch + co) * out_plane..][..out_plane];
                for (i, v) in g_plane.iter().enumerate() {
                    g_pack[i * co_pad + co] = *v;
                }
            }
            dw_data
                .par_chunks_mut(k3 * co_pad)
                .enumerate()
                .for_each(|(ci, dw_ci)| {
                    let x_plane = &xd[(n * cs.in_ch + ci) * in_plane..][..in_plane];
                    for dz in 0..kd {
                        for dy in 0..kh {
                            for dxk in 0..kw {
                                let (xo_lo, xo_hi) = tap_range(dxk, pw, wd, ow);
                                if xo_hi <= xo_lo {
                                    continue;
                                }
                                let tap = (dz * kh + dy) * kw + dxk;
                                for blk in 0..co_pad / LANES {
                                    let lane_base = blk * LANES;
                                    let mut acc = [S::ZERO; LANES];
                                    for zo in 0..od {
                                        let zi = (zo + dz) as isize - pd as isize;
                                        if zi < 0 || zi >= d as isize {
                                            continue;
                                        }
                                        for yo in 0..oh {
                                            let yi = (yo + dy) as isize - ph as isize;
                                            if yi < 0 || yi >= h as isize {
                                                continue;
                                            }
                                            let x_row = &x_plane
                                                [(zi as usize * h + yi as usize) * wd..][..wd];
                                            let xs =
                                                &x_row[xo_lo + dxk - pw..][..xo_hi - xo_lo];
                                            let g_base = (zo * oh + yo) * ow;
                                            fma_dot_row(
                                                &mut acc,
                                                xs,
                                                &g_pack[(g_base + xo_lo) * co_pad
                                                    ..(g_base + xo_hi) * co_pad],
                                                co_pad,
                                                lane_base,
                                            );
                                        }
                                    }
                                    let dst =
                                        &mut dw_ci[tap * co_pad + lane_base..][..LANES];
                                    for l in 0..LANES {
                                        dst[l] += acc[l];
                                    }
                                }
                            }
                        }
                    }
                });
        }
        // Unpack to the (co, ci, taps) layout.
        let dwd = dw.data_mut();
        for co in 0..cs.out_ch {
            for ci in 0..cs.in_ch {
                for tap in 0..k3 {
                    dwd[(co * cs.in_ch + ci) * k3 + tap] =
                        dw_data[(ci * k3 + tap) * co_pad + co];
                }
            }
        }
    }

    // Input gradient: each dx row accumulates once in a lane-interleaved
    // buffer over input-channel lanes.
    let dx = if need_dx {
        let ci_pad = pad_to_lanes(cs.in_ch);
        let wpack = pack_weights_ci(wdat, cs.out_ch, cs.in_ch, k3);
        let mut dx = Tensor::zeros(x.shape().to_vec());
        dx.data_mut()
            .par_chunks_mut(cs.in_ch * in_plane)
            .enumerate()
            .for_each(|(n, dx_n)| {
                let mut acc = vec![S::ZERO; wd * LANES];
                for blk in 0..ci_pad / LANES {
                    let lane_base = blk * LANES;
                    let live = (cs.in_ch - lane_base).min(LANES);
                    for zi in 0..d {
                        for yi in 0..h {
                            acc.fill(S::ZERO);
                            for co in 0..cs.out_ch {
                                let g_plane =
                                    &gd[(n * cs.out_ch + co) * out_plane..][..out_plane];
                                for dz in 0..kd {
                                    let zo = zi as isize - dz as isize + pd as isize;
                                    if zo < 0 || zo >= od as isize {
                                        continue;
                                    }
                                    for dy in 0..kh {
                                        let yo = yi as isize - dy as isize + ph as isize;
                                        if yo < 0 || yo >= oh as isize {
                                            continue;
                                        }
                                        let g_row = &g_plane
                                            [(zo as usize * oh + yo as usize) * ow..][..ow];
                                        for dxk in 0..kw {
                                            // iw = ow' + dxk - pw over valid ow'.
                                            let iw_lo = dxk.saturating_sub(pw);
                                            let iw_hi = ((ow + dxk) as isize - pw as isize)
                                                .min(wd as isize);
                                            if iw_hi <= iw_lo as isize {
                                                continue;
                                            }
                                            let len = iw_hi as usize - iw_lo;
                                            let gs = &g_row[iw_lo + pw - dxk..][..len];
                                            let tap = (dz * kh + dy) * kw + dxk;
                                            let wv: &[S; LANES] = (&wpack[(co * k3 + tap)
                                                * ci_pad
                                                + lane_base..][..LANES])
                                                .try_into()
                                                .unwrap();
                                            fma_row(
                                                &mut acc[iw_lo * LANES
                                                    ..(iw_lo + len) * LANES],
                                                gs,
                                                wv,
                                            );
                                        }
                                    }
                                }
                            }
                            for l in 0..live {
                                let dst = &mut dx_n
                                    [(lane_base + l) * in_plane + (zi * h + yi) * wd..][..wd];
                                for (iw, slot) in dst.iter_mut().enumerate() {
                                    *slot = acc[iw * LANES + l];
                                }
                            }
                        }
                    }
                }
            });
        Some(dx)
    } else {
        None
    };

    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha20Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = rand_tensor(vec![1, 1, 3, 4, 5], &mut rng);
        let w = Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let y = forward(&x, &w, &b, [1; 3], [0; 3], Backend::Auto).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_kernel_counts_neighbors() {
        let x = Tensor::new(vec![1, 1, 4, 4, 4], vec![1.0f64; 64]).unwrap();
        let w = Tensor::new(vec![1, 1, 3, 3, 3], vec![1.0; 27]).unwrap();
        let b = Tensor::zeros(vec![1]);
        let y = forward(&x, &w, &b, [1; 3], [1; 3], Backend::Auto).unwrap();
        // Interior voxels see all 27 taps, corners see 8.
        let get = |z: usize, yy: usize, xx: usize| y.data()[(z * 4 + yy) * 4 + xx];
        assert_eq!(get(1, 1, 1), 27.0);
        assert_eq!(get(2, 2, 2), 27.0);
        assert_eq!(get(0, 0, 0), 8.0);
        assert_eq!(get(3, 3, 3), 8.0);
    }

    #[test]
    fn strided_output_extent() {
        assert_eq!(out_extent(5, 3, 2, 1), Some(3));
        assert_eq!(out_extent(4, 2, 2, 0), Some(2));
        assert_eq!(out_extent(2, 5, 1, 0), None);
    }

    #[test]
    fn fast_and_naive_agree() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = rng.random_range(1..3);
            let ci = rng.random_range(1..4);
            let co = rng.random_range(1..4);
            let d = rng.random_range(3..7);
            let h = rng.random_range(3..7);
            let wd = rng.random_range(3..7);
            let k = *[1usize, 2, 3].get(rng.random_range(0..3)).unwrap();
            let pad = rng.random_range(0..=1usize);
            if d + 2 * pad < k || h + 2 * pad < k || wd + 2 * pad < k {
                continue;
            }
            let x = rand_tensor(vec![n, ci, d, h, wd], &mut rng);
            let w = rand_tensor(vec![co, ci, k, k, k], &mut rng);
            let b = rand_tensor(vec![co], &mut rng);
            let fast = forward(&x, &w, &b, [1; 3], [pad; 3], Backend::Fast).unwrap();
            let naive = forward(&x, &w, &b, [1; 3], [pad; 3], Backend::Naive).unwrap();
            let scale = fast
                .data()
                .iter()
                .fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, bb) in fast.data().iter().zip(naive.data()) {
                assert!((a - bb).abs() <= 1e-6 * scale, "{a} vs {bb}");
            }

            let g = rand_tensor(fast.shape().to_vec(), &mut rng);
            let gf = backward(&x, &w, &g, [1; 3], [pad; 3], Backend::Fast, true).unwrap();
            let gn = backward(&x, &w, &g, [1; 3], [pad; 3], Backend::Naive, true).unwrap();
            for (a, bb) in gf.dw.data().iter().zip(gn.dw.data()) {
                assert!((a - bb).abs() <= 1e-9 * a.abs().max(1.0));
            }
            for (a, bb) in gf.db.iter().zip(&gn.db) {
                assert!((a - bb).abs() <= 1e-9 * a.abs().max(1.0));
            }
            for (a, bb) in gf
                .dx
                .as_ref()
                .unwrap()
                .data()
                .iter()
                .zip(gn.dx.as_ref().unwrap().data())
            {
                assert!((a - bb).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = rand_tensor(vec![1, 2, 4, 4, 4], &mut rng);
        let w = rand_tensor(vec![3, 2, 3, 3, 3], &mut rng);
        let g = Tensor::zeros(vec![1, 3, 4, 4, 4]);
        let grads = backward(&x, &w, &g, [1; 3], [1; 3], Backend::Auto, true).unwrap();
        assert!(grads.dw.data().iter().all(|v| *v == 0.0));
        assert!(grads.db.iter().all(|v| *v == 0.0));
        assert!(grads.dx.unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn doubling_upstream_doubles_grads() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let x = rand_tensor(vec![1, 2, 4, 4, 4], &mut rng);
        let w = rand_tensor(vec![2, 2, 3, 3, 3], &mut rng);
        let g = rand_tensor(vec![1, 2, 4, 4, 4], &mut rng);
        let g2 = Tensor::new(g.shape().to_vec(), g.data().iter().map(|v| 2.0 * v).collect())
            .unwrap();
        let a = backward(&x, &w, &g, [1; 3], [1; 3], Backend::Auto, true).unwrap();
        let b = backward(&x, &w, &g2, [1; 3], [1; 3], Backend::Auto, true).unwrap();
        for (x1, x2) in a.dw.data().iter().zip(b.dw.data()) {
            assert!((2.0 * x1 - x2).abs() < 1e-9 * x2.abs().max(1.0));
        }
    }
}
