//! Minimal reverse-mode autodiff over `ndarray` tensors.
//!
//! A [`Graph`] is built per forward pass (define-by-run). Leaves are either
//! constants or parameters bound from a [`crate::nn::ParamStore`]; every op
//! records a backward closure capturing whatever it needs. Generic over the
//! float type so gradient checks can run in `f64` while training runs in
//! `f32`.

mod conv;
mod graph;
mod grid;
mod ops;

pub use graph::{Graph, NodeId};

use ndarray::{ArrayD, LinalgScalar};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type usable by the autodiff engine.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

/// Shorthand for writing float literals in generic code.
#[inline]
pub fn sc<F: Scalar>(x: f64) -> F {
    <F as FromPrimitive>::from_f64(x).expect("f64 conversion")
}

/// Inverse of [`sc`]: widen a scalar to `f64`.
#[inline]
pub fn fs<F: Scalar>(v: F) -> f64 {
    v.to_f64().expect("f64 conversion")
}

/// Dynamic-dimension tensor alias used throughout.
pub type Tensor<F> = ArrayD<F>;

/// 0-dimensional tensor holding one scalar.
pub fn scalar_tensor<F: Scalar>(v: F) -> Tensor<F> {
    ArrayD::from_elem(ndarray::IxDyn(&[]), v)
}

/// Extract the value of a 0-d or single-element tensor.
pub fn tensor_scalar<F: Scalar>(t: &Tensor<F>) -> F {
    debug_assert_eq!(t.len(), 1, "expected single-element tensor");
    *t.iter().next().expect("nonempty tensor")
}

#[cfg(test)]
mod tests;
