//! Layer normalization over channels, per row.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::ops::{lit, Scalar};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalize each row to zero mean / unit variance over channels, then apply
/// the learned scale and shift.
pub fn layer_norm_forward<S: Scalar>(
    x: &ArrayView2<S>,
    scale: &ArrayView1<S>,
    shift: &ArrayView1<S>,
    eps: f64,
) -> Array2<S> {
    let c = x.ncols();
    let inv_c = lit::<S>(1.0 / c as f64);
    let eps = lit::<S>(eps);
    let mut y = Array2::zeros(x.raw_dim());
    for (r, row) in x.outer_iter().enumerate() {
        let mean = row.iter().fold(S::zero(), |a, &b| a + b) * inv_c;
        let var = row
            .iter()
            .fold(S::zero(), |a, &b| a + (b - mean) * (b - mean))
            * inv_c;
        let rstd = S::one() / (var + eps).sqrt();
        for (j, &v) in row.iter().enumerate() {
            y[[r, j]] = (v - mean) * rstd * scale[j] + shift[j];
        }
    }
    y
}

/// Exact gradient; per-row statistics are recomputed from the saved input.
pub fn layer_norm_backward<S: Scalar>(
    x: &ArrayView2<S>,
    scale: &ArrayView1<S>,
    eps: f64,
    grad_out: &ArrayView2<S>,
) -> (Array2<S>, Array1<S>, Array1<S>) {
    let c = x.ncols();
    let inv_c = lit::<S>(1.0 / c as f64);
    let eps = lit::<S>(eps);
    let mut gx = Array2::zeros(x.raw_dim());
    let mut gscale = Array1::zeros(c);
    let mut gshift = Array1::zeros(c);
    for (r, row) in x.outer_iter().enumerate() {
        let mean = row.iter().fold(S::zero(), |a, &b| a + b) * inv_c;
        let var = row
            .iter()
            .fold(S::zero(), |a, &b| a + (b - mean) * (b - mean))
            * inv_c;
        let rstd = S::one() / (var + eps).sqrt();
        let g = grad_out.row(r);

        let mut mean_dxhat = S::zero();
        let mut mean_dxhat_xhat = S::zero();
        for j in 0..c {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = g[j] * scale[j];
            gscale[j] += g[j] * xhat;
            gshift[j] += g[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat *= inv_c;
        mean_dxhat_xhat *= inv_c;
        for j in 0..c {
            let xhat = (row[j] - mean) * rstd;
            let dxhat = g[j] * scale[j];
            gx[[r, j]] = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    (gx, gscale, gshift)
}
