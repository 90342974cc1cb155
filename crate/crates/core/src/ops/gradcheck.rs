//! Finite-difference verification of every hand-written backward pass.
//!
//! Each registered op builds a small double-precision instance; the harness
//! compares its analytic gradients against central differences of a random
//! linear functional of the output, element by element.

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hierarchy::{pool_mean, pool_mean_backward, unpool, unpool_backward, TraceMap};
use crate::mesh::Neighborhoods;
use crate::ops::{
    edgeconv_backward, edgeconv_forward, inter_attention_backward, inter_attention_forward,
    intra_attention_backward, intra_attention_forward, layer_norm_backward, layer_norm_forward,
    linear_backward, linear_forward, relu_backward, relu_forward, softmax_cross_entropy,
    vector_attention_backward, vector_attention_forward, AttentionParams, FeatureMatrix,
    InterMode, LinearRef, VectorMlpRef, LAYER_NORM_EPS,
};
use crate::rng::rng_for;
use crate::voxel::{
    project_to_vertices, project_to_vertices_backward, sparse_conv_backward, sparse_conv_forward,
    ConvKernel, ConvMode, VoxelSet,
};

/// Central-difference step (double precision).
pub const DEFAULT_STEP: f64 = 1e-4;
/// Maximum tolerated relative error.
pub const DEFAULT_TOL: f64 = 1e-4;

type ForwardFn = Box<dyn Fn(&[ArrayD<f64>]) -> Array2<f64>>;
type BackwardFn = Box<dyn Fn(&[ArrayD<f64>], &Array2<f64>) -> Vec<ArrayD<f64>>>;

/// One op wired for checking: named differentiable tensors plus pure
/// forward/backward closures over them.
pub struct OpInstance {
    pub op: String,
    pub tensors: Vec<(String, ArrayD<f64>)>,
    forward: ForwardFn,
    backward: BackwardFn,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub seed: u64,
    /// Max relative error per differentiable tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// All registered differentiable ops.
pub fn op_names() -> &'static [&'static str] {
    &[
        "linear",
        "layer_norm",
        "relu",
        "softmax_cross_entropy",
        "conv_submanifold",
        "conv_strided2",
        "conv_transposed2",
        "project_vertices",
        "unpool",
        "pool_mean",
        "intra_attention",
        "inter_attention_primal",
        "inter_attention_dual",
        "vector_attention",
        "edgeconv",
    ]
}

fn rand_arr2(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random::<f64>() * 2.0 - 1.0)
}

fn rand_arr1(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.random::<f64>() * 2.0 - 1.0)
}

fn rand_arr3(rng: &mut impl Rng, a: usize, b: usize, c: usize) -> Array3<f64> {
    Array3::from_shape_fn((a, b, c), |_| rng.random::<f64>() * 2.0 - 1.0)
}

/// Neighborhoods of a 6-vertex graph with one isolated vertex, covering the
/// empty-ring convention.
fn test_graph() -> Neighborhoods {
    let adj: Vec<Vec<u32>> = vec![vec![1], vec![0, 2], vec![1, 4], vec![], vec![2, 5], vec![4]];
    Neighborhoods::from_adjacency(&adj, false)
}

fn attention_views<'a>(t: &'a [ArrayD<f64>], base: usize) -> AttentionParams<'a, f64> {
    let v2 = |i: usize| -> ArrayView2<'a, f64> {
        t[i].view().into_dimensionality().unwrap()
    };
    let v1 = |i: usize| -> ArrayView1<'a, f64> {
        t[i].view().into_dimensionality().unwrap()
    };
    AttentionParams {
        rho: LinearRef::new(v2(base), v1(base + 1)),
        alpha: LinearRef::new(v2(base + 2), v1(base + 3)),
        phi: LinearRef::new(v2(base + 4), v1(base + 5)),
        psi: LinearRef::new(v2(base + 6), v1(base + 7)),
    }
}

fn attention_tensor_names(prefix: &str) -> Vec<String> {
    ["rho_w", "rho_b", "alpha_w", "alpha_b", "phi_w", "phi_b", "psi_w", "psi_b"]
        .iter()
        .map(|s| format!("{prefix}{s}"))
        .collect()
}

fn attention_param_tensors(rng: &mut impl Rng, c: usize, d: usize) -> Vec<ArrayD<f64>> {
    let mut out = Vec::new();
    for _ in 0..4 {
        out.push(rand_arr2(rng, c, d).into_dyn());
        out.push(rand_arr1(rng, d).into_dyn());
    }
    out
}

fn attention_grads_to_vec(g: crate::ops::AttentionGrads<f64>) -> Vec<ArrayD<f64>> {
    vec![
        g.rho_w.into_dyn(),
        g.rho_b.into_dyn(),
        g.alpha_w.into_dyn(),
        g.alpha_b.into_dyn(),
        g.phi_w.into_dyn(),
        g.phi_b.into_dyn(),
        g.psi_w.into_dyn(),
        g.psi_b.into_dyn(),
    ]
}

/// Build the check instance for a registered op.
pub fn make_instance(op: &str, seed: u64) -> Result<OpInstance> {
    let mut rng = rng_for(seed, "gradcheck", 0);
    let inst = match op {
        "linear" => {
            let tensors = vec![
                ("input".into(), rand_arr2(&mut rng, 5, 4).into_dyn()),
                ("weight".into(), rand_arr2(&mut rng, 4, 3).into_dyn()),
                ("bias".into(), rand_arr1(&mut rng, 3).into_dyn()),
            ];
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(|t| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    let w = t[1].view().into_dimensionality().unwrap();
                    let b = t[2].view().into_dimensionality().unwrap();
                    linear_forward(&x, &w, Some(&b)).unwrap()
                }),
                backward: Box::new(|t, g| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    let w = t[1].view().into_dimensionality().unwrap();
                    let grads = linear_backward(&x, &w, &g.view());
                    vec![
                        grads.input.into_dyn(),
                        grads.weight.into_dyn(),
                        grads.bias.into_dyn(),
                    ]
                }),
            }
        }
        "layer_norm" => {
            let tensors = vec![
                ("input".into(), rand_arr2(&mut rng, 4, 6).into_dyn()),
                ("scale".into(), rand_arr1(&mut rng, 6).into_dyn()),
                ("shift".into(), rand_arr1(&mut rng, 6).into_dyn()),
            ];
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(|t| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    let scale = t[1].view().into_dimensionality().unwrap();
                    let shift = t[2].view().into_dimensionality().unwrap();
                    layer_norm_forward(&x, &scale, &shift, LAYER_NORM_EPS)
                }),
                backward: Box::new(|t, g| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    let scale = t[1].view().into_dimensionality().unwrap();
                    let (gx, gscale, gshift) =
                        layer_norm_backward(&x, &scale, LAYER_NORM_EPS, &g.view());
                    vec![gx.into_dyn(), gscale.into_dyn(), gshift.into_dyn()]
                }),
            }
        }
        "relu" => {
            // Keep inputs away from the kink; the subgradient at 0 is not a
            // derivative and central differences straddle it.
            let x = Array2::from_shape_fn((4, 5), |_| {
                let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
                v.signum() * (0.1 + v.abs())
            });
            OpInstance {
                op: op.into(),
                tensors: vec![("input".into(), x.into_dyn())],
                forward: Box::new(|t| {
                    relu_forward(&t[0].view().into_dimensionality().unwrap())
                }),
                backward: Box::new(|t, g| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    vec![relu_backward(&x, &g.view()).into_dyn()]
                }),
            }
        }
        "softmax_cross_entropy" => {
            let labels = vec![0, 3, -1, 2, 1];
            let tensors = vec![("logits".into(), rand_arr2(&mut rng, 5, 4).into_dyn())];
            let labels_b = labels.clone();
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    let (loss, _) = softmax_cross_entropy(&x, &labels, -1).unwrap();
                    ndarray::arr2(&[[loss]])
                }),
                backward: Box::new(move |t, g| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    let (_, grad) = softmax_cross_entropy(&x, &labels_b, -1).unwrap();
                    vec![(grad * g[[0, 0]]).into_dyn()]
                }),
            }
        }
        "conv_submanifold" | "conv_strided2" => {
            let coords: Vec<[i32; 3]> = (0..18)
                .map(|_| {
                    [
                        (rng.random::<f64>() * 4.0) as i32,
                        (rng.random::<f64>() * 4.0) as i32,
                        (rng.random::<f64>() * 4.0) as i32,
                    ]
                })
                .collect();
            let set = VoxelSet::from_coords(50.0, coords);
            let n = set.len();
            let (mode, size, k) = if op == "conv_submanifold" {
                (ConvMode::Submanifold, 3usize, 27usize)
            } else {
                (ConvMode::Strided2, 2, 8)
            };
            let tensors = vec![
                ("input".into(), rand_arr2(&mut rng, n, 3).into_dyn()),
                ("weights".into(), rand_arr3(&mut rng, k, 3, 4).into_dyn()),
                ("bias".into(), rand_arr1(&mut rng, 4).into_dyn()),
            ];
            let set_b = set.clone();
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let kernel = ConvKernel::new(
                        mode,
                        size,
                        t[1].view().into_dimensionality().unwrap().to_owned(),
                        Some(t[2].view().into_dimensionality().unwrap().to_owned()),
                    )
                    .unwrap();
                    let x = t[0].view().into_dimensionality().unwrap();
                    sparse_conv_forward(&set, &x, &kernel, None).unwrap().1
                }),
                backward: Box::new(move |t, g| {
                    let kernel = ConvKernel::new(
                        mode,
                        size,
                        t[1].view().into_dimensionality().unwrap().to_owned(),
                        Some(t[2].view().into_dimensionality().unwrap().to_owned()),
                    )
                    .unwrap();
                    let x = t[0].view().into_dimensionality().unwrap();
                    let (out_set, _) = sparse_conv_forward(&set_b, &x, &kernel, None).unwrap();
                    let grads = sparse_conv_backward(&set_b, &x, &kernel, &out_set, &g.view());
                    vec![
                        grads.input.into_dyn(),
                        grads.weights.into_dyn(),
                        grads.bias.unwrap().into_dyn(),
                    ]
                }),
            }
        }
        "conv_transposed2" => {
            let fine_coords: Vec<[i32; 3]> = (0..14)
                .map(|_| {
                    [
                        (rng.random::<f64>() * 4.0) as i32,
                        (rng.random::<f64>() * 4.0) as i32,
                        (rng.random::<f64>() * 4.0) as i32,
                    ]
                })
                .collect();
            let fine = VoxelSet::from_coords(50.0, fine_coords);
            let coarse = VoxelSet::from_coords(
                25.0,
                fine.coords()
                    .iter()
                    .map(|c| [c[0].div_euclid(2), c[1].div_euclid(2), c[2].div_euclid(2)])
                    .collect(),
            );
            let n = coarse.len();
            let tensors = vec![
                ("input".into(), rand_arr2(&mut rng, n, 3).into_dyn()),
                ("weights".into(), rand_arr3(&mut rng, 8, 3, 2).into_dyn()),
                ("bias".into(), rand_arr1(&mut rng, 2).into_dyn()),
            ];
            let (coarse_b, fine_b) = (coarse.clone(), fine.clone());
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let kernel = ConvKernel::new(
                        ConvMode::Transposed2,
                        2,
                        t[1].view().into_dimensionality().unwrap().to_owned(),
                        Some(t[2].view().into_dimensionality().unwrap().to_owned()),
                    )
                    .unwrap();
                    let x = t[0].view().into_dimensionality().unwrap();
                    sparse_conv_forward(&coarse, &x, &kernel, Some(&fine)).unwrap().1
                }),
                backward: Box::new(move |t, g| {
                    let kernel = ConvKernel::new(
                        ConvMode::Transposed2,
                        2,
                        t[1].view().into_dimensionality().unwrap().to_owned(),
                        Some(t[2].view().into_dimensionality().unwrap().to_owned()),
                    )
                    .unwrap();
                    let x = t[0].view().into_dimensionality().unwrap();
                    let grads = sparse_conv_backward(&coarse_b, &x, &kernel, &fine_b, &g.view());
                    vec![
                        grads.input.into_dyn(),
                        grads.weights.into_dyn(),
                        grads.bias.unwrap().into_dyn(),
                    ]
                }),
            }
        }
        "project_vertices" => {
            let coords: Vec<[i32; 3]> = (0..2)
                .flat_map(|a| (0..2).flat_map(move |b| (0..2).map(move |c| [a, b, c])))
                .collect();
            let set = VoxelSet::from_coords(50.0, coords);
            let positions: Vec<nalgebra::Vector3<f64>> = (0..6)
                .map(|_| {
                    nalgebra::Vector3::new(
                        rng.random::<f64>() * 0.04,
                        rng.random::<f64>() * 0.04,
                        rng.random::<f64>() * 0.04,
                    )
                })
                .collect();
            let n = set.len();
            let tensors = vec![("input".into(), rand_arr2(&mut rng, n, 3).into_dyn())];
            let (set_b, pos_b) = (set.clone(), positions.clone());
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    project_to_vertices(&set, &x, &positions)
                }),
                backward: Box::new(move |_, g| {
                    vec![project_to_vertices_backward(&set_b, &pos_b, 3, &g.view()).into_dyn()]
                }),
            }
        }
        "unpool" => {
            let trace = TraceMap::new(vec![0, 1, 1, 2, 0, 2], 3).unwrap();
            let tensors = vec![("input".into(), rand_arr2(&mut rng, 3, 4).into_dyn())];
            let trace_b = trace.clone();
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let x: Array2<f64> =
                        t[0].view().into_dimensionality().unwrap().to_owned();
                    unpool(&FeatureMatrix::new(x), &trace).unwrap().values
                }),
                backward: Box::new(move |_, g| {
                    vec![unpool_backward(&g.view(), &trace_b).into_dyn()]
                }),
            }
        }
        "pool_mean" => {
            let trace = TraceMap::new(vec![0, 1, 1, 2, 0, 2], 3).unwrap();
            let tensors = vec![("input".into(), rand_arr2(&mut rng, 6, 4).into_dyn())];
            let trace_b = trace.clone();
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let x = t[0].view().into_dimensionality().unwrap();
                    pool_mean(&x, &trace).unwrap()
                }),
                backward: Box::new(move |_, g| {
                    vec![pool_mean_backward(&g.view(), &trace_b).into_dyn()]
                }),
            }
        }
        "intra_attention" => {
            let nbrs = test_graph();
            let mut tensors = vec![("features".into(), rand_arr2(&mut rng, 6, 5).into_dyn())];
            let names = attention_tensor_names("");
            for (name, t) in names.into_iter().zip(attention_param_tensors(&mut rng, 5, 4)) {
                tensors.push((name, t));
            }
            let nbrs_b = nbrs.clone();
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let f = t[0].view().into_dimensionality().unwrap();
                    let params = attention_views(t, 1);
                    intra_attention_forward(&f, &nbrs, &params).unwrap().0
                }),
                backward: Box::new(move |t, g| {
                    let f = t[0].view().into_dimensionality().unwrap();
                    let params = attention_views(t, 1);
                    let (_, saved) = intra_attention_forward(&f, &nbrs_b, &params).unwrap();
                    let (gf, grads) =
                        intra_attention_backward(&f, &nbrs_b, &params, &saved, &g.view());
                    let mut out = vec![gf.into_dyn()];
                    out.extend(attention_grads_to_vec(grads));
                    out
                }),
            }
        }
        "inter_attention_primal" | "inter_attention_dual" => {
            let mode = if op.ends_with("primal") {
                InterMode::Primal
            } else {
                InterMode::Dual
            };
            let nbrs = test_graph();
            // Distinct widths for the two domains.
            let (c_euc, c_geo, d) = (3usize, 5usize, 4usize);
            let (cq, cv) = match mode {
                InterMode::Primal => (c_euc, c_geo),
                InterMode::Dual => (c_geo, c_euc),
            };
            let mut tensors = vec![
                ("euclidean".into(), rand_arr2(&mut rng, 6, c_euc).into_dyn()),
                ("geodesic".into(), rand_arr2(&mut rng, 6, c_geo).into_dyn()),
            ];
            let mut rng2 = rng_for(seed, "gradcheck-params", 1);
            let names = attention_tensor_names("");
            let params_t = vec![
                rand_arr2(&mut rng2, cq, d).into_dyn(),
                rand_arr1(&mut rng2, d).into_dyn(),
                rand_arr2(&mut rng2, cv, d).into_dyn(),
                rand_arr1(&mut rng2, d).into_dyn(),
                rand_arr2(&mut rng2, cq, d).into_dyn(),
                rand_arr1(&mut rng2, d).into_dyn(),
                rand_arr2(&mut rng2, cv, d).into_dyn(),
                rand_arr1(&mut rng2, d).into_dyn(),
            ];
            for (name, t) in names.into_iter().zip(params_t) {
                tensors.push((name, t));
            }
            let nbrs_b = nbrs.clone();
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let euc = t[0].view().into_dimensionality().unwrap();
                    let geo = t[1].view().into_dimensionality().unwrap();
                    let params = attention_views(t, 2);
                    inter_attention_forward(&euc, &geo, &nbrs, &params, mode)
                        .unwrap()
                        .0
                }),
                backward: Box::new(move |t, g| {
                    let euc = t[0].view().into_dimensionality().unwrap();
                    let geo = t[1].view().into_dimensionality().unwrap();
                    let params = attention_views(t, 2);
                    let (_, saved) =
                        inter_attention_forward(&euc, &geo, &nbrs_b, &params, mode).unwrap();
                    let (geuc, ggeo, grads) = inter_attention_backward(
                        &euc, &geo, &nbrs_b, &params, mode, &saved, &g.view(),
                    );
                    let mut out = vec![geuc.into_dyn(), ggeo.into_dyn()];
                    out.extend(attention_grads_to_vec(grads));
                    out
                }),
            }
        }
        "vector_attention" => {
            let nbrs = test_graph();
            let d = 4usize;
            let mut tensors = vec![("features".into(), rand_arr2(&mut rng, 6, d).into_dyn())];
            for (name, t) in attention_tensor_names("")
                .into_iter()
                .zip(attention_param_tensors(&mut rng, d, d))
            {
                tensors.push((name, t));
            }
            tensors.push(("mlp1_w".into(), rand_arr2(&mut rng, d, d).into_dyn()));
            tensors.push(("mlp1_b".into(), rand_arr1(&mut rng, d).into_dyn()));
            tensors.push(("mlp2_w".into(), rand_arr2(&mut rng, d, d).into_dyn()));
            tensors.push(("mlp2_b".into(), rand_arr1(&mut rng, d).into_dyn()));
            let nbrs_b = nbrs.clone();
            fn mlp_views<'a>(t: &'a [ArrayD<f64>]) -> VectorMlpRef<'a, f64> {
                VectorMlpRef {
                    l1: LinearRef::new(
                        t[9].view().into_dimensionality().unwrap(),
                        t[10].view().into_dimensionality().unwrap(),
                    ),
                    l2: LinearRef::new(
                        t[11].view().into_dimensionality().unwrap(),
                        t[12].view().into_dimensionality().unwrap(),
                    ),
                }
            }
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let f = t[0].view().into_dimensionality().unwrap();
                    let params = attention_views(t, 1);
                    vector_attention_forward(&f, &nbrs, &params, &mlp_views(t))
                        .unwrap()
                        .0
                }),
                backward: Box::new(move |t, g| {
                    let f = t[0].view().into_dimensionality().unwrap();
                    let params = attention_views(t, 1);
                    let mlp = mlp_views(t);
                    let (_, saved) =
                        vector_attention_forward(&f, &nbrs_b, &params, &mlp).unwrap();
                    let (gf, grads, mlp_grads) =
                        vector_attention_backward(&f, &nbrs_b, &params, &mlp, &saved, &g.view());
                    let mut out = vec![gf.into_dyn()];
                    out.extend(attention_grads_to_vec(grads));
                    out.push(mlp_grads.l1_w.into_dyn());
                    out.push(mlp_grads.l1_b.into_dyn());
                    out.push(mlp_grads.l2_w.into_dyn());
                    out.push(mlp_grads.l2_b.into_dyn());
                    out
                }),
            }
        }
        "edgeconv" => {
            let nbrs = test_graph();
            let tensors = vec![
                ("features".into(), rand_arr2(&mut rng, 6, 3).into_dyn()),
                ("weight".into(), rand_arr2(&mut rng, 6, 4).into_dyn()),
                ("bias".into(), rand_arr1(&mut rng, 4).into_dyn()),
            ];
            let nbrs_b = nbrs.clone();
            OpInstance {
                op: op.into(),
                tensors,
                forward: Box::new(move |t| {
                    let f = t[0].view().into_dimensionality().unwrap();
                    let mlp = LinearRef::new(
                        t[1].view().into_dimensionality().unwrap(),
                        t[2].view().into_dimensionality().unwrap(),
                    );
                    edgeconv_forward(&f, &nbrs, &mlp).unwrap().0
                }),
                backward: Box::new(move |t, g| {
                    let f = t[0].view().into_dimensionality().unwrap();
                    let mlp = LinearRef::new(
                        t[1].view().into_dimensionality().unwrap(),
                        t[2].view().into_dimensionality().unwrap(),
                    );
                    let (_, saved) = edgeconv_forward(&f, &nbrs_b, &mlp).unwrap();
                    let grads = edgeconv_backward(&f, &nbrs_b, &mlp, &saved, &g.view());
                    vec![
                        grads.input.into_dyn(),
                        grads.weight.into_dyn(),
                        grads.bias.into_dyn(),
                    ]
                }),
            }
        }
        other => {
            return Err(Error::usage(format!(
                "unknown op {other}; known ops: {}",
                op_names().join(", ")
            )))
        }
    };
    Ok(inst)
}

/// Compare analytic gradients against central differences.
pub fn check_instance(inst: &OpInstance, step: f64, tol: f64, seed: u64) -> GradCheckReport {
    let mut rng = rng_for(seed, "gradcheck-projection", 0);
    let out0 = (inst.forward)(&tensors_of(inst));
    let projection = Array2::from_shape_fn(out0.raw_dim(), |_| rng.random::<f64>() * 2.0 - 1.0);

    let loss = |tensors: &[ArrayD<f64>]| -> f64 {
        let y = (inst.forward)(tensors);
        y.iter().zip(projection.iter()).map(|(a, b)| a * b).sum()
    };

    let base = tensors_of(inst);
    let analytic = (inst.backward)(&base, &projection);
    let mut per_tensor = Vec::new();
    let mut max_rel = 0.0f64;
    for (ti, (name, _)) in inst.tensors.iter().enumerate() {
        let mut worst = 0.0f64;
        for idx in 0..base[ti].len() {
            let mut plus = base.clone();
            plus[ti].as_slice_mut().unwrap()[idx] += step;
            let mut minus = base.clone();
            minus[ti].as_slice_mut().unwrap()[idx] -= step;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let a = analytic[ti].as_slice().unwrap()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
        per_tensor.push((name.clone(), worst));
        max_rel = max_rel.max(worst);
    }
    GradCheckReport {
        op: inst.op.clone(),
        seed,
        per_tensor,
        max_rel_err: max_rel,
        pass: max_rel < tol && max_rel.is_finite(),
    }
}

fn tensors_of(inst: &OpInstance) -> Vec<ArrayD<f64>> {
    inst.tensors.iter().map(|(_, t)| t.clone()).collect()
}

/// Run one op over several seeds.
pub fn run_op(op: &str, seeds: &[u64], step: f64, tol: f64) -> Result<Vec<GradCheckReport>> {
    seeds
        .iter()
        .map(|&s| Ok(check_instance(&make_instance(op, s)?, step, tol, s)))
        .collect()
}

/// Deliberately corrupted backward; must fail the check.
pub fn negative_control(seed: u64, step: f64, tol: f64) -> GradCheckReport {
    let mut inst = make_instance("linear", seed).expect("linear is registered");
    inst.op = "negative_control".into();
    let orig_backward = std::mem::replace(
        &mut inst.backward,
        Box::new(|_, _| unreachable!("placeholder")),
    );
    inst.backward = Box::new(move |t, g| {
        let mut grads = orig_backward(t, g);
        grads[1] *= 1.1; // 10% error on the weight gradient
        grads
    });
    check_instance(&inst, step, tol, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_passes() {
        let r = run_op("linear", &[0], DEFAULT_STEP, DEFAULT_TOL).unwrap();
        assert!(r[0].pass, "max rel err {}", r[0].max_rel_err);
    }

    #[test]
    fn intra_attention_passes_on_small_mesh() {
        let r = run_op("intra_attention", &[0, 1], DEFAULT_STEP, DEFAULT_TOL).unwrap();
        for rep in r {
            assert!(rep.pass, "seed {} max rel err {}", rep.seed, rep.max_rel_err);
        }
    }

    #[test]
    fn corrupted_backward_fails() {
        let r = negative_control(0, DEFAULT_STEP, DEFAULT_TOL);
        assert!(!r.pass, "negative control must fail, got {}", r.max_rel_err);
        assert!(r.max_rel_err > DEFAULT_TOL);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = run_op("layer_norm", &[3], DEFAULT_STEP, DEFAULT_TOL).unwrap();
        let b = run_op("layer_norm", &[3], DEFAULT_STEP, DEFAULT_TOL).unwrap();
        assert_eq!(a[0].max_rel_err, b[0].max_rel_err);
    }

    #[test]
    fn unknown_op_is_usage_error() {
        assert!(matches!(
            make_instance("nope", 0),
            Err(crate::error::Error::Usage(_))
        ));
    }
}
