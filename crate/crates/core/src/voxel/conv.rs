//! Sparse 3D convolutions: submanifold, strided downsampling, and the
//! paired transposed upsampling.
//!
//! Kernels gather active neighbors only. The kernel cube is enumerated in
//! fixed lexicographic `(du, dv, dw)` order; work is grouped per offset into
//! gather-matmul-scatter passes so the heavy lifting is a dense product.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use super::{Coord, VoxelSet};
use crate::error::{Error, Result};
use crate::ops::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Output active set equals the input active set.
    Submanifold,
    /// Stride-2 downsampling over 2x2x2 cubes.
    Strided2,
    /// Stride-2 upsampling restoring a recorded finer active set.
    Transposed2,
}

/// Weights of one sparse convolution.
#[derive(Debug, Clone)]
pub struct ConvKernel<S> {
    pub mode: ConvMode,
    pub size: usize,
    /// `[kernel offsets, C_in, C_out]`.
    pub weights: Array3<S>,
    pub bias: Option<Array1<S>>,
}

impl<S: Scalar> ConvKernel<S> {
    pub fn new(
        mode: ConvMode,
        size: usize,
        weights: Array3<S>,
        bias: Option<Array1<S>>,
    ) -> Result<Self> {
        let expected = size * size * size;
        match mode {
            ConvMode::Submanifold => {
                if size % 2 == 0 {
                    return Err(Error::validation(
                        "submanifold kernels must have odd size",
                    ));
                }
            }
            ConvMode::Strided2 | ConvMode::Transposed2 => {
                if size != 2 {
                    return Err(Error::validation("strided kernels use size 2"));
                }
            }
        }
        if weights.shape()[0] != expected {
            return Err(Error::validation(format!(
                "kernel has {} offset slices, size {size} needs {expected}",
                weights.shape()[0]
            )));
        }
        if let Some(b) = &bias {
            if b.len() != weights.shape()[2] {
                return Err(Error::validation("bias length != output channels"));
            }
        }
        Ok(ConvKernel {
            mode,
            size,
            weights,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Kernel cube offsets in lexicographic `(du, dv, dw)` order. Centered
    /// for submanifold kernels, `{0, 1}` per axis for strided ones.
    pub fn offsets(&self) -> Vec<Coord> {
        let range: Vec<i32> = match self.mode {
            ConvMode::Submanifold => {
                let h = (self.size / 2) as i32;
                (-h..=h).collect()
            }
            ConvMode::Strided2 | ConvMode::Transposed2 => (0..self.size as i32).collect(),
        };
        let mut offsets = Vec::with_capacity(self.size.pow(3));
        for &du in &range {
            for &dv in &range {
                for &dw in &range {
                    offsets.push([du, dv, dw]);
                }
            }
        }
        offsets
    }
}

fn floor_div2(c: &Coord) -> Coord {
    [c[0].div_euclid(2), c[1].div_euclid(2), c[2].div_euclid(2)]
}

/// Per-offset gather pairs `(input row, output row)`.
fn rulebook<S: Scalar>(
    input: &VoxelSet,
    kernel: &ConvKernel<S>,
    output: &VoxelSet,
) -> Vec<Vec<(u32, u32)>> {
    let offsets = kernel.offsets();
    let mut pairs: Vec<Vec<(u32, u32)>> = vec![Vec::new(); offsets.len()];
    match kernel.mode {
        ConvMode::Submanifold => {
            for (out_row, oc) in output.coords().iter().enumerate() {
                for (k, off) in offsets.iter().enumerate() {
                    let ic = [oc[0] + off[0], oc[1] + off[1], oc[2] + off[2]];
                    if let Some(in_row) = input.row_of(&ic) {
                        pairs[k].push((in_row as u32, out_row as u32));
                    }
                }
            }
        }
        ConvMode::Strided2 => {
            for (out_row, oc) in output.coords().iter().enumerate() {
                for (k, off) in offsets.iter().enumerate() {
                    let ic = [
                        2 * oc[0] + off[0],
                        2 * oc[1] + off[1],
                        2 * oc[2] + off[2],
                    ];
                    if let Some(in_row) = input.row_of(&ic) {
                        pairs[k].push((in_row as u32, out_row as u32));
                    }
                }
            }
        }
        ConvMode::Transposed2 => {
            // Each fine voxel reads from its unique coarse parent.
            for (out_row, fc) in output.coords().iter().enumerate() {
                let parent = floor_div2(fc);
                if let Some(in_row) = input.row_of(&parent) {
                    let off = [
                        fc[0] - 2 * parent[0],
                        fc[1] - 2 * parent[1],
                        fc[2] - 2 * parent[2],
                    ];
                    let k = (off[0] * 4 + off[1] * 2 + off[2]) as usize;
                    pairs[k].push((in_row as u32, out_row as u32));
                }
            }
        }
    }
    pairs
}

/// Output active set for a kernel, honoring an explicit target when given.
fn output_set<S: Scalar>(
    input: &VoxelSet,
    kernel: &ConvKernel<S>,
    target: Option<&VoxelSet>,
) -> Result<VoxelSet> {
    match kernel.mode {
        ConvMode::Submanifold => {
            if target.is_some() {
                return Err(Error::usage(
                    "submanifold convolution cannot retarget its active set",
                ));
            }
            Ok(input.clone())
        }
        ConvMode::Strided2 => match target {
            Some(t) => Ok(t.clone()),
            None => Ok(VoxelSet::from_coords(
                input.resolution() / 2.0,
                input.coords().iter().map(floor_div2).collect(),
            )),
        },
        ConvMode::Transposed2 => target.cloned().ok_or_else(|| {
            Error::usage(
                "transposed convolution needs the finer active set recorded by its paired strided convolution",
            )
        }),
    }
}

/// Run a sparse convolution; returns the output active set and features.
///
/// `target` supplies the output active set for strided mode (defaults to the
/// floor-divided input coordinates) and is mandatory for transposed mode.
pub fn sparse_conv_forward<S: Scalar>(
    input: &VoxelSet,
    feats: &ArrayView2<S>,
    kernel: &ConvKernel<S>,
    target: Option<&VoxelSet>,
) -> Result<(VoxelSet, Array2<S>)> {
    if feats.nrows() != input.len() {
        return Err(Error::validation(format!(
            "conv: {} feature rows for {} active voxels",
            feats.nrows(),
            input.len()
        )));
    }
    if feats.ncols() != kernel.in_channels() {
        return Err(Error::validation(format!(
            "conv: feature width {} != kernel input channels {}",
            feats.ncols(),
            kernel.in_channels()
        )));
    }
    let out_set = output_set(input, kernel, target)?;
    let mut out: Array2<S> = Array2::zeros((out_set.len(), kernel.out_channels()));
    if let Some(b) = &kernel.bias {
        for mut row in out.outer_iter_mut() {
            row += b;
        }
    }
    for (k, pairs) in rulebook(input, kernel, &out_set).iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let mut gathered = Array2::zeros((pairs.len(), kernel.in_channels()));
        for (g, &(in_row, _)) in pairs.iter().enumerate() {
            gathered.row_mut(g).assign(&feats.row(in_row as usize));
        }
        let w_k = kernel.weights.index_axis(Axis(0), k);
        let partial = gathered.dot(&w_k);
        for (g, &(_, out_row)) in pairs.iter().enumerate() {
            let mut row = out.row_mut(out_row as usize);
            row += &partial.row(g);
        }
    }
    Ok((out_set, out))
}

#[derive(Debug, Clone)]
pub struct ConvGrads<S> {
    pub input: Array2<S>,
    pub weights: Array3<S>,
    pub bias: Option<Array1<S>>,
}

/// Gradients via the transposed gather-scatter of the forward rulebook.
pub fn sparse_conv_backward<S: Scalar>(
    input: &VoxelSet,
    feats: &ArrayView2<S>,
    kernel: &ConvKernel<S>,
    out_set: &VoxelSet,
    grad_out: &ArrayView2<S>,
) -> ConvGrads<S> {
    let mut g_in: Array2<S> = Array2::zeros((input.len(), kernel.in_channels()));
    let mut g_w: Array3<S> = Array3::zeros(kernel.weights.raw_dim());
    for (k, pairs) in rulebook(input, kernel, out_set).iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let mut gathered_in = Array2::zeros((pairs.len(), kernel.in_channels()));
        let mut gathered_gout = Array2::zeros((pairs.len(), kernel.out_channels()));
        for (g, &(in_row, out_row)) in pairs.iter().enumerate() {
            gathered_in.row_mut(g).assign(&feats.row(in_row as usize));
            gathered_gout
                .row_mut(g)
                .assign(&grad_out.row(out_row as usize));
        }
        let w_k = kernel.weights.index_axis(Axis(0), k);
        let g_gathered_in = gathered_gout.dot(&w_k.t());
        for (g, &(in_row, _)) in pairs.iter().enumerate() {
            let mut row = g_in.row_mut(in_row as usize);
            row += &g_gathered_in.row(g);
        }
        let gw_k = gathered_in.t().dot(&gathered_gout);
        let mut slot = g_w.index_axis_mut(Axis(0), k);
        slot += &gw_k;
    }
    let g_bias = kernel
        .bias
        .as_ref()
        .map(|_| grad_out.sum_axis(Axis(0)));
    ConvGrads {
        input: g_in,
        weights: g_w,
        bias: g_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::Rng;

    fn set_of(resolution: f64, coords: &[Coord]) -> VoxelSet {
        VoxelSet::from_coords(resolution, coords.to_vec())
    }

    fn identity_kernel(c: usize) -> ConvKernel<f64> {
        let mut w = Array3::<f64>::zeros((27, c, c));
        let center = 13; // offset (0,0,0) in lexicographic order over -1..=1
        for i in 0..c {
            w[[center, i, i]] = 1.0;
        }
        ConvKernel::new(ConvMode::Submanifold, 3, w, None).unwrap()
    }

    #[test]
    fn offsets_are_lexicographic() {
        let k = identity_kernel(1);
        let offs = k.offsets();
        assert_eq!(offs[0], [-1, -1, -1]);
        assert_eq!(offs[1], [-1, -1, 0]);
        assert_eq!(offs[13], [0, 0, 0]);
        assert_eq!(offs[26], [1, 1, 1]);
    }

    #[test]
    fn identity_kernel_preserves_features() {
        let set = set_of(50.0, &[[0, 0, 0], [1, 0, 0], [0, 2, 1]]);
        let feats = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let (out_set, out) =
            sparse_conv_forward(&set, &feats.view(), &identity_kernel(2), None).unwrap();
        assert_eq!(out_set.coords(), set.coords());
        assert_eq!(out, feats);
    }

    #[test]
    fn single_voxel_sees_only_center_weight() {
        let set = set_of(50.0, &[[5, 5, 5]]);
        let feats = array![[2.0, -1.0]];
        let mut rng = crate::rng::rng_for(0, "conv", 0);
        let w = Array3::from_shape_fn((27, 2, 3), |_| rng.random::<f64>() - 0.5);
        let b = ndarray::Array1::from_shape_fn(3, |_| rng.random::<f64>());
        let kernel = ConvKernel::new(ConvMode::Submanifold, 3, w.clone(), Some(b.clone())).unwrap();
        let (_, out) = sparse_conv_forward(&set, &feats.view(), &kernel, None).unwrap();
        for c in 0..3 {
            let expect = b[c] + 2.0 * w[[13, 0, c]] - 1.0 * w[[13, 1, c]];
            assert!((out[[0, c]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn submanifold_preserves_active_set_exactly() {
        let mut rng = crate::rng::rng_for(1, "conv", 0);
        let coords: Vec<Coord> = (0..40)
            .map(|_| {
                [
                    (rng.random::<f64>() * 6.0) as i32,
                    (rng.random::<f64>() * 6.0) as i32,
                    (rng.random::<f64>() * 6.0) as i32,
                ]
            })
            .collect();
        let set = VoxelSet::from_coords(50.0, coords);
        let feats = Array2::from_shape_fn((set.len(), 3), |_| rng.random::<f64>());
        let w = Array3::from_shape_fn((27, 3, 5), |_| rng.random::<f64>() - 0.5);
        let kernel = ConvKernel::new(ConvMode::Submanifold, 3, w, None).unwrap();
        let (out_set, _) = sparse_conv_forward(&set, &feats.view(), &kernel, None).unwrap();
        assert_eq!(out_set.coords(), set.coords());
    }

    #[test]
    fn strided_two_cube_collapses_to_one_voxel() {
        // Floor-division oracle: a full 2x2x2 block lands on a single coord.
        let coords: Vec<Coord> = (0..8).map(|i| [i / 4, (i / 2) % 2, i % 2]).collect();
        let set = VoxelSet::from_coords(50.0, coords);
        let feats = Array2::<f64>::ones((8, 1));
        let w = Array3::<f64>::ones((8, 1, 1));
        let kernel = ConvKernel::new(ConvMode::Strided2, 2, w, None).unwrap();
        let (out_set, out) = sparse_conv_forward(&set, &feats.view(), &kernel, None).unwrap();
        assert_eq!(out_set.coords(), &[[0, 0, 0]]);
        assert_eq!(out[[0, 0]], 8.0);
        assert!((out_set.resolution() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn strided_handles_negative_coords_with_floor() {
        let set = set_of(50.0, &[[-1, -1, -1]]);
        let feats = array![[1.0]];
        let w = Array3::<f64>::ones((8, 1, 1));
        let kernel = ConvKernel::new(ConvMode::Strided2, 2, w, None).unwrap();
        let (out_set, _) = sparse_conv_forward(&set, &feats.view(), &kernel, None).unwrap();
        assert_eq!(out_set.coords(), &[[-1, -1, -1]]);
    }

    #[test]
    fn transposed_without_pairing_is_usage_error() {
        let set = set_of(25.0, &[[0, 0, 0]]);
        let feats = array![[1.0]];
        let w = Array3::<f64>::ones((8, 1, 1));
        let kernel = ConvKernel::new(ConvMode::Transposed2, 2, w, None).unwrap();
        match sparse_conv_forward(&set, &feats.view(), &kernel, None) {
            Err(crate::error::Error::Usage(_)) => {}
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn transposed_restores_recorded_fine_set() {
        let fine = set_of(50.0, &[[0, 0, 0], [1, 1, 1], [3, 2, 0]]);
        let feats = Array2::from_shape_fn((3, 2), |(r, c)| (r * 2 + c) as f64);
        let wd = Array3::<f64>::ones((8, 2, 4));
        let down = ConvKernel::new(ConvMode::Strided2, 2, wd, None).unwrap();
        let (coarse_set, coarse) = sparse_conv_forward(&fine, &feats.view(), &down, None).unwrap();
        let wu = Array3::from_shape_fn((8, 4, 2), |(k, i, o)| ((k + i + o) % 3) as f64 * 0.5);
        let up = ConvKernel::new(ConvMode::Transposed2, 2, wu.clone(), None).unwrap();
        let (up_set, up_out) =
            sparse_conv_forward(&coarse_set, &coarse.view(), &up, Some(&fine)).unwrap();
        assert_eq!(up_set.coords(), fine.coords());
        // Fine voxel [1,1,1] has parent [0,0,0] and offset (1,1,1) -> slice 7.
        let row = fine.row_of(&[1, 1, 1]).unwrap();
        let parent = coarse_set.row_of(&[0, 0, 0]).unwrap();
        for c in 0..2 {
            let mut expect = 0.0;
            for i in 0..4 {
                expect += coarse[[parent, i]] * wu[[7, i, c]];
            }
            assert!((up_out[[row, c]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = crate::rng::rng_for(2, "conv", 0);
        let coords: Vec<Coord> = (0..30)
            .map(|_| {
                [
                    (rng.random::<f64>() * 5.0) as i32,
                    (rng.random::<f64>() * 5.0) as i32,
                    (rng.random::<f64>() * 5.0) as i32,
                ]
            })
            .collect();
        let set = VoxelSet::from_coords(50.0, coords);
        let f1 = Array2::from_shape_fn((set.len(), 3), |_| rng.random::<f64>());
        let f2 = Array2::from_shape_fn((set.len(), 3), |_| rng.random::<f64>());
        let w = Array3::from_shape_fn((27, 3, 4), |_| rng.random::<f64>() - 0.5);
        let kernel = ConvKernel::new(ConvMode::Submanifold, 3, w, None).unwrap();
        let (a, b) = (2.5, -1.25);
        let combo = &f1 * a + &f2 * b;
        let (_, y_combo) = sparse_conv_forward(&set, &combo.view(), &kernel, None).unwrap();
        let (_, y1) = sparse_conv_forward(&set, &f1.view(), &kernel, None).unwrap();
        let (_, y2) = sparse_conv_forward(&set, &f2.view(), &kernel, None).unwrap();
        let expect = &y1 * a + &y2 * b;
        let max_err = y_combo
            .iter()
            .zip(expect.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6);
    }
}
