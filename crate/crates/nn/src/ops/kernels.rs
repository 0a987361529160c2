//! Inner-loop primitives shaped so LLVM can vectorize them: axpy updates are
//! elementwise-independent, and reductions use eight independent lanes
//! (float reassociation is otherwise off-limits to the autovectorizer).
//! The lane structure is fixed, so results are bit-reproducible.

use crate::scalar::Scalar;

/// `y[i] += a * x[i]`
#[inline]
pub fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    debug_assert_eq!(y.len(), x.len());
    for (yo, xi) in y.iter_mut().zip(x) {
        *yo += a * *xi;
    }
}

/// Dot product with eight partial accumulators.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [S::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ab = &a[i * 8..i * 8 + 8];
        let bb = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] += ab[l] * bb[l];
        }
    }
    let mut s = S::ZERO;
    for l in lanes {
        s += l;
    }
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Slice sum with eight partial accumulators.
#[inline]
pub fn sum<S: Scalar>(a: &[S]) -> S {
    let mut lanes = [S::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ab = &a[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] += ab[l];
        }
    }
    let mut s = S::ZERO;
    for l in lanes {
        s += l;
    }
    for v in &a[chunks * 8..] {
        s += *v;
    }
    s
}
