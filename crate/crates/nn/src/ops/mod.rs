//! Low-level forward/backward kernels on raw slices. The tape wraps these;
//! tests exercise them directly against finite differences and, for the
//! convolution, against each other (naive reference kernel vs. the
//! vectorized fast path).

pub mod activations;
pub mod batchnorm;
pub mod conv3d;
pub mod conv_transpose;
pub(crate) mod kernels;
pub mod linear;
pub mod loss;
pub mod pool;
