//! Row-wise affine map.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::ops::Scalar;

/// `y = x W + b`, rows are samples.
pub fn linear_forward<S: Scalar>(
    x: &ArrayView2<S>,
    w: &ArrayView2<S>,
    b: Option<&ArrayView1<S>>,
) -> Result<Array2<S>> {
    if x.ncols() != w.nrows() {
        return Err(Error::validation(format!(
            "linear: input width {} != weight rows {}",
            x.ncols(),
            w.nrows()
        )));
    }
    if let Some(b) = b {
        if b.len() != w.ncols() {
            return Err(Error::validation(format!(
                "linear: bias length {} != weight cols {}",
                b.len(),
                w.ncols()
            )));
        }
    }
    let mut y = x.dot(w);
    if let Some(b) = b {
        y += b;
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<S> {
    pub input: Array2<S>,
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

pub fn linear_backward<S: Scalar>(
    x: &ArrayView2<S>,
    w: &ArrayView2<S>,
    grad_out: &ArrayView2<S>,
) -> LinearGrads<S> {
    LinearGrads {
        input: grad_out.dot(&w.t()),
        weight: x.t().dot(grad_out),
        bias: grad_out.sum_axis(Axis(0)),
    }
}
