//! Dense-tensor arithmetic with reverse-mode differentiation.
//!
//! The whole stack is generic over [`Scalar`] so that training runs in
//! `f32` while gradient checking runs the identical graph in `f64`.
//! Within one precision, every operation is sequential and deterministic:
//! the same seed and inputs produce bit-identical results.

mod adam;
mod graph;
pub mod gradcheck;
mod rng;
mod tensor;

pub use adam::AdamState;
pub use graph::{GradMap, Graph, Var};
pub use rng::SeedRng;
pub use tensor::Tensor;
pub(crate) use tensor::{matmul, matmul_tb};

use std::fmt::{Debug, Display};

/// Floating-point element type for tensors and graphs.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Casts an `f64` constant into the active scalar type.
#[inline]
pub fn real<F: Scalar>(x: f64) -> F {
    F::from(x).expect("finite constant")
}

/// Casts the active scalar into `f64`, for reporting and thresholds.
#[inline]
pub fn to_f64<F: Scalar>(x: F) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}
