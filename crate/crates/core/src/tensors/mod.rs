//! Dense arrays, seeded random streams and the differentiable primitives
//! the model is built from.

pub mod ops;
mod rng;
mod tensor;

pub use rng::RngStream;
pub use tensor::Tensor;

/// Floating-point type used by every tensor; 64-bit unless the `f32`
/// feature is enabled.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
