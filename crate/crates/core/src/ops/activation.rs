//! Elementwise ReLU.

use ndarray::{Array2, ArrayView2};

use crate::ops::Scalar;

pub fn relu_forward<S: Scalar>(x: &ArrayView2<S>) -> Array2<S> {
    x.mapv(|v| if v > S::zero() { v } else { S::zero() })
}

/// Subgradient 0 at the kink.
pub fn relu_backward<S: Scalar>(x: &ArrayView2<S>, grad_out: &ArrayView2<S>) -> Array2<S> {
    let mut gx = grad_out.to_owned();
    gx.zip_mut_with(x, |g, &v| {
        if v <= S::zero() {
            *g = S::zero();
        }
    });
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clamps_negative_passes_positive() {
        let x = array![[-1.0, 2.0, 0.0]];
        let y = relu_forward(&x.view());
        assert_eq!(y, array![[0.0, 2.0, 0.0]]);
    }

    #[test]
    fn gradient_masks_non_positive() {
        let x = array![[-1.0, 2.0, 0.0]];
        let g = array![[5.0, 5.0, 5.0]];
        let gx = relu_backward(&x.view(), &g.view());
        assert_eq!(gx, array![[0.0, 5.0, 0.0]]);
    }
}
