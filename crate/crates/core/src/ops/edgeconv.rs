//! Non-attention neighborhood operator: elementwise max over edge features.
//!
//! `out_i = max_{j in N_i} W [f_i || f_j - f_i] + b`; an empty ring uses the
//! virtual edge `[f_i || 0]`. The backward pass routes through the recorded
//! argmax; ties resolve to the lowest neighbor index.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::mesh::Neighborhoods;
use crate::ops::{LinearRef, Scalar};

/// Winner index per `(vertex, channel)`: the neighbor id, or `VIRTUAL_EDGE`
/// for the zero edge of an empty ring.
pub struct EdgeConvSaved {
    argmax: Array2<u32>,
}

pub const VIRTUAL_EDGE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct EdgeConvGrads<S> {
    pub input: Array2<S>,
    pub weight: Array2<S>,
    pub bias: Array1<S>,
}

fn edge_score<S: Scalar>(
    f: &ArrayView2<S>,
    w: &ArrayView2<S>,
    b: &ndarray::ArrayView1<S>,
    i: usize,
    j: Option<usize>,
    c: usize,
) -> S {
    let dim = f.ncols();
    let mut acc = b[c];
    for t in 0..dim {
        acc += f[[i, t]] * w[[t, c]];
    }
    if let Some(j) = j {
        for t in 0..dim {
            acc += (f[[j, t]] - f[[i, t]]) * w[[dim + t, c]];
        }
    }
    acc
}

pub fn edgeconv_forward<S: Scalar>(
    feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    mlp: &LinearRef<S>,
) -> Result<(Array2<S>, EdgeConvSaved)> {
    let n = nbrs.vertex_count();
    let dim = feats.ncols();
    if feats.nrows() != n {
        return Err(Error::validation(format!(
            "edgeconv: feature rows {} != vertex count {n}",
            feats.nrows()
        )));
    }
    if mlp.w.nrows() != 2 * dim {
        return Err(Error::validation(format!(
            "edgeconv: weight expects input {} but features are {dim}-wide",
            mlp.w.nrows()
        )));
    }
    let d = mlp.w.ncols();
    let mut out = Array2::zeros((n, d));
    let mut argmax = Array2::from_elem((n, d), VIRTUAL_EDGE);
    for i in 0..n {
        let ring = nbrs.ring(i);
        for c in 0..d {
            if ring.is_empty() {
                out[[i, c]] = edge_score(feats, &mlp.w, &mlp.b, i, None, c);
                continue;
            }
            let mut best = S::neg_infinity();
            let mut best_j = VIRTUAL_EDGE;
            for &j in ring {
                let s = edge_score(feats, &mlp.w, &mlp.b, i, Some(j as usize), c);
                if s > best {
                    best = s;
                    best_j = j;
                }
            }
            out[[i, c]] = best;
            argmax[[i, c]] = best_j;
        }
    }
    Ok((out, EdgeConvSaved { argmax }))
}

pub fn edgeconv_backward<S: Scalar>(
    feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    mlp: &LinearRef<S>,
    saved: &EdgeConvSaved,
    grad_out: &ArrayView2<S>,
) -> EdgeConvGrads<S> {
    let n = nbrs.vertex_count();
    let dim = feats.ncols();
    let d = mlp.w.ncols();
    let mut gf: Array2<S> = Array2::zeros((n, dim));
    let mut gw: Array2<S> = Array2::zeros((2 * dim, d));
    let mut gb: Array1<S> = Array1::zeros(d);

    for i in 0..n {
        for c in 0..d {
            let gh = grad_out[[i, c]];
            if gh == S::zero() {
                continue;
            }
            gb[c] += gh;
            let winner = saved.argmax[[i, c]];
            if winner == VIRTUAL_EDGE {
                for t in 0..dim {
                    gw[[t, c]] += feats[[i, t]] * gh;
                    gf[[i, t]] += mlp.w[[t, c]] * gh;
                }
            } else {
                let j = winner as usize;
                for t in 0..dim {
                    gw[[t, c]] += feats[[i, t]] * gh;
                    gw[[dim + t, c]] += (feats[[j, t]] - feats[[i, t]]) * gh;
                    gf[[i, t]] += (mlp.w[[t, c]] - mlp.w[[dim + t, c]]) * gh;
                    gf[[j, t]] += mlp.w[[dim + t, c]] * gh;
                }
            }
        }
    }
    EdgeConvGrads {
        input: gf,
        weight: gw,
        bias: gb,
    }
}
