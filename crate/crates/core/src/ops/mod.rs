//! Differentiable building blocks with explicit forward/backward passes.
//!
//! Every operator is a pure function of its inputs and parameters and ships
//! a hand-written backward; `gradcheck` validates each one against central
//! finite differences in double precision.

mod activation;
mod attention;
mod edgeconv;
pub mod gradcheck;
mod linear;
mod loss;
mod norm;
mod params;

pub use activation::{relu_backward, relu_forward};
pub use attention::{
    inter_attention_backward, inter_attention_forward, intra_attention_backward,
    intra_attention_forward, scalar_attention_backward, scalar_attention_forward,
    vector_attention_backward, vector_attention_forward, AttentionGrads, AttentionParams,
    InterMode, LinearRef, ScalarAttentionSaved, VectorAttentionSaved, VectorMlpGrads,
    VectorMlpRef,
};
pub use edgeconv::{edgeconv_backward, edgeconv_forward, EdgeConvGrads, EdgeConvSaved};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use loss::softmax_cross_entropy;
pub use norm::{layer_norm_backward, layer_norm_forward, LAYER_NORM_EPS};
pub use params::{Checkpoint, Param, ParamId, ParameterStore};

use ndarray::{Array2, ScalarOperand};

use crate::error::{Error, Result};

/// Floating-point element type of the differentiable pipeline.
///
/// The whole training path runs in one precision (`f32` or `f64`);
/// gradient checking always instantiates `f64`.
pub trait Scalar:
    ndarray::LinalgScalar
    + num_traits::Float
    + num_traits::NumAssignOps
    + ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Shorthand for lifting a literal into the active precision.
#[inline]
pub fn lit<S: Scalar>(x: f64) -> S {
    S::from_f64(x)
}

/// Dense N x C feature table, the currency of all differentiable ops.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<S> {
    pub values: Array2<S>,
    /// Same-shape gradient buffer, populated by backward passes on demand.
    pub grad: Option<Array2<S>>,
}

impl<S: Scalar> FeatureMatrix<S> {
    pub fn new(values: Array2<S>) -> Self {
        FeatureMatrix { values, grad: None }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix::new(Array2::zeros((rows, cols)))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn set_grad(&mut self, grad: Array2<S>) {
        debug_assert_eq!(grad.dim(), self.values.dim());
        self.grad = Some(grad);
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite values in {what}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_matrix_detects_non_finite() {
        let mut m = FeatureMatrix::<f64>::zeros(2, 2);
        assert!(m.check_finite("x").is_ok());
        m.values[[0, 1]] = f64::NAN;
        assert!(m.check_finite("x").is_err());
    }
}
