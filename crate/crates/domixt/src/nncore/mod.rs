//! Dense-tensor math with reverse-mode automatic differentiation, the ADAM
//! optimizer, and inverted dropout. Training runs at f32; gradient checking
//! instantiates the same graphs at f64.

pub mod adam;
pub mod gradcheck;
pub mod graph;

pub use adam::AdamState;
pub use graph::{Graph, NodeId};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::distributions::uniform::SampleUniform;

/// Scalar type the tensor core is generic over (f32 or f64).
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ScalarOperand
    + LinalgScalar
    + SampleUniform
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn to_f64(self) -> f64;
    fn to_f32(self) -> f32;
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn to_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Shorthand for lossless-enough f64 -> R conversion of configuration values.
pub fn real<R: Real>(x: f64) -> R {
    R::from_f64(x).expect("f64 convertible to scalar type")
}

/// Row-major dense matrix; the only tensor rank the model needs.
pub type Tensor<R> = Array2<R>;

/// True if every entry is finite.
pub fn all_finite<R: Real>(t: &Tensor<R>) -> bool {
    t.iter().all(|x| x.is_finite())
}
