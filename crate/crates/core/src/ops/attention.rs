//! Attention over one-ring neighborhoods.
//!
//! Scalar attention computes `out_i = rho(q_i) + sum_j omega_ij alpha(v_j)`
//! with `omega_ij = softmax_j(phi(q_i)^T psi(v_j) / sqrt(d))`, the softmax
//! running over the neighbors of each vertex. The intra-domain operator uses
//! one feature map for queries and values; the inter-domain operator draws
//! them from different domains (primal: Euclidean queries over geodesic
//! values, dual: the reverse). Vector attention replaces the scalar
//! coefficient by a per-channel weight decoded from `phi(q_i) - psi(v_j)` by
//! a two-layer MLP with a per-channel softmax.
//!
//! An empty neighborhood contributes nothing: the output reduces to the
//! skip/query path. Neighbors are accumulated in ascending index order for
//! bitwise reproducibility.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::mesh::Neighborhoods;
use crate::ops::{
    linear_backward, linear_forward, lit, relu_backward, relu_forward, Scalar,
};

/// Borrowed weights of one affine transform.
#[derive(Clone, Copy)]
pub struct LinearRef<'a, S> {
    pub w: ArrayView2<'a, S>,
    pub b: ArrayView1<'a, S>,
}

impl<'a, S: Scalar> LinearRef<'a, S> {
    pub fn new(w: ArrayView2<'a, S>, b: ArrayView1<'a, S>) -> Self {
        LinearRef { w, b }
    }

    fn apply(&self, x: &ArrayView2<S>) -> Result<Array2<S>> {
        linear_forward(x, &self.w, Some(&self.b))
    }

    fn out_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// The four per-layer transforms of an attention operator.
///
/// `rho` (skip) and `alpha` (value) map to the output width `d`; `phi`
/// (query) and `psi` (key) map to the key width, `d` unless configured
/// otherwise.
#[derive(Clone, Copy)]
pub struct AttentionParams<'a, S> {
    pub rho: LinearRef<'a, S>,
    pub alpha: LinearRef<'a, S>,
    pub phi: LinearRef<'a, S>,
    pub psi: LinearRef<'a, S>,
}

impl<S: Scalar> AttentionParams<'_, S> {
    fn validate(&self, query_width: usize, value_width: usize) -> Result<()> {
        if self.rho.w.nrows() != query_width || self.phi.w.nrows() != query_width {
            return Err(Error::validation(format!(
                "attention: query width {} does not match rho/phi input dims {}/{}",
                query_width,
                self.rho.w.nrows(),
                self.phi.w.nrows()
            )));
        }
        if self.alpha.w.nrows() != value_width || self.psi.w.nrows() != value_width {
            return Err(Error::validation(format!(
                "attention: value width {} does not match alpha/psi input dims {}/{}",
                value_width,
                self.alpha.w.nrows(),
                self.psi.w.nrows()
            )));
        }
        if self.rho.out_dim() != self.alpha.out_dim() {
            return Err(Error::validation(
                "attention: rho and alpha output widths differ",
            ));
        }
        if self.phi.out_dim() != self.psi.out_dim() {
            return Err(Error::validation(
                "attention: phi and psi output widths differ",
            ));
        }
        Ok(())
    }
}

/// Per-edge state retained for the backward pass.
pub struct ScalarAttentionSaved<S> {
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    /// Softmax weights, one per CSR edge.
    omega: Vec<S>,
}

impl<S: Scalar> ScalarAttentionSaved<S> {
    /// Attention weights of vertex `i`, aligned with its neighbor list.
    pub fn weights_of(&self, nbrs: &Neighborhoods, i: usize) -> &[S] {
        &self.omega[nbrs.offset(i)..nbrs.offset(i) + nbrs.ring(i).len()]
    }
}

/// Scalar dot-product attention with separate query/value feature maps.
pub fn scalar_attention_forward<S: Scalar>(
    query_feats: &ArrayView2<S>,
    value_feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
) -> Result<(Array2<S>, ScalarAttentionSaved<S>)> {
    let n = nbrs.vertex_count();
    if query_feats.nrows() != n || value_feats.nrows() != n {
        return Err(Error::validation(format!(
            "attention: feature rows {}/{} != vertex count {n}",
            query_feats.nrows(),
            value_feats.nrows()
        )));
    }
    params.validate(query_feats.ncols(), value_feats.ncols())?;

    let mut out = params.rho.apply(query_feats)?;
    let q = params.phi.apply(query_feats)?;
    let k = params.psi.apply(value_feats)?;
    let v = params.alpha.apply(value_feats)?;
    let d = params.rho.out_dim();
    let scale = lit::<S>(1.0 / (d as f64).sqrt());

    let mut omega = vec![S::zero(); nbrs.edge_count()];
    let mut logits: Vec<S> = Vec::new();
    for i in 0..n {
        let ring = nbrs.ring(i);
        if ring.is_empty() {
            continue;
        }
        logits.clear();
        let qi = q.row(i);
        let mut max = S::neg_infinity();
        for &j in ring {
            let s = qi.dot(&k.row(j as usize)) * scale;
            logits.push(s);
            max = max.max(s);
        }
        let mut sum = S::zero();
        for s in logits.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        let base = nbrs.offset(i);
        let mut row = out.row_mut(i);
        for (e, &j) in ring.iter().enumerate() {
            let w = logits[e] / sum;
            omega[base + e] = w;
            row.scaled_add(w, &v.row(j as usize));
        }
    }
    Ok((out, ScalarAttentionSaved { q, k, v, omega }))
}

/// Gradients for both feature maps and all four transforms.
#[derive(Debug, Clone)]
pub struct AttentionGrads<S> {
    pub query_input: Array2<S>,
    pub value_input: Array2<S>,
    pub rho_w: Array2<S>,
    pub rho_b: Array1<S>,
    pub alpha_w: Array2<S>,
    pub alpha_b: Array1<S>,
    pub phi_w: Array2<S>,
    pub phi_b: Array1<S>,
    pub psi_w: Array2<S>,
    pub psi_b: Array1<S>,
}

pub fn scalar_attention_backward<S: Scalar>(
    query_feats: &ArrayView2<S>,
    value_feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
    saved: &ScalarAttentionSaved<S>,
    grad_out: &ArrayView2<S>,
) -> AttentionGrads<S> {
    let n = nbrs.vertex_count();
    let d = params.rho.out_dim();
    let key_dim = params.phi.out_dim();
    let scale = lit::<S>(1.0 / (d as f64).sqrt());

    let mut gq: Array2<S> = Array2::zeros((n, key_dim));
    let mut gk: Array2<S> = Array2::zeros((n, key_dim));
    let mut gv: Array2<S> = Array2::zeros((n, d));

    let mut domega: Vec<S> = Vec::new();
    for i in 0..n {
        let ring = nbrs.ring(i);
        if ring.is_empty() {
            continue;
        }
        let base = nbrs.offset(i);
        let g = grad_out.row(i);

        // d loss / d omega_ij and the softmax Jacobian contraction.
        domega.clear();
        let mut weighted_sum = S::zero();
        for (e, &j) in ring.iter().enumerate() {
            let dw = g.dot(&saved.v.row(j as usize));
            domega.push(dw);
            weighted_sum += saved.omega[base + e] * dw;
        }
        let qi = saved.q.row(i);
        for (e, &j) in ring.iter().enumerate() {
            let w = saved.omega[base + e];
            let ds = w * (domega[e] - weighted_sum);
            let j = j as usize;
            {
                let mut gqi = gq.row_mut(i);
                gqi.scaled_add(ds * scale, &saved.k.row(j));
            }
            {
                let mut gkj = gk.row_mut(j);
                gkj.scaled_add(ds * scale, &qi);
            }
            {
                let mut gvj = gv.row_mut(j);
                gvj.scaled_add(w, &g);
            }
        }
    }

    let rho = linear_backward(query_feats, &params.rho.w, grad_out);
    let alpha = linear_backward(value_feats, &params.alpha.w, &gv.view());
    let phi = linear_backward(query_feats, &params.phi.w, &gq.view());
    let psi = linear_backward(value_feats, &params.psi.w, &gk.view());

    AttentionGrads {
        query_input: rho.input + phi.input,
        value_input: alpha.input + psi.input,
        rho_w: rho.weight,
        rho_b: rho.bias,
        alpha_w: alpha.weight,
        alpha_b: alpha.bias,
        phi_w: phi.weight,
        phi_b: phi.bias,
        psi_w: psi.weight,
        psi_b: psi.bias,
    }
}

/// Intra-domain attention: queries and values from the same feature map.
pub fn intra_attention_forward<S: Scalar>(
    feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
) -> Result<(Array2<S>, ScalarAttentionSaved<S>)> {
    scalar_attention_forward(feats, feats, nbrs, params)
}

/// Backward of [`intra_attention_forward`]; the two input-gradient paths
/// merge into one feature gradient.
pub fn intra_attention_backward<S: Scalar>(
    feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
    saved: &ScalarAttentionSaved<S>,
    grad_out: &ArrayView2<S>,
) -> (Array2<S>, AttentionGrads<S>) {
    let mut grads = scalar_attention_backward(feats, feats, nbrs, params, saved, grad_out);
    let merged = &grads.query_input + &grads.value_input;
    grads.query_input = merged.clone();
    grads.value_input = Array2::zeros((0, 0));
    (merged, grads)
}

/// Which domain provides the attention queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterMode {
    /// Euclidean queries aggregate geodesic values.
    Primal,
    /// Geodesic queries aggregate Euclidean values.
    Dual,
}

/// Inter-domain attention. Returns the fused features; `saved` keys the
/// backward pass. Gradients flow to both feature maps.
pub fn inter_attention_forward<S: Scalar>(
    euclidean: &ArrayView2<S>,
    geodesic: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
    mode: InterMode,
) -> Result<(Array2<S>, ScalarAttentionSaved<S>)> {
    match mode {
        InterMode::Primal => scalar_attention_forward(euclidean, geodesic, nbrs, params),
        InterMode::Dual => scalar_attention_forward(geodesic, euclidean, nbrs, params),
    }
}

/// Backward of [`inter_attention_forward`]; returns `(g_euclidean, g_geodesic, grads)`.
pub fn inter_attention_backward<S: Scalar>(
    euclidean: &ArrayView2<S>,
    geodesic: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
    mode: InterMode,
    saved: &ScalarAttentionSaved<S>,
    grad_out: &ArrayView2<S>,
) -> (Array2<S>, Array2<S>, AttentionGrads<S>) {
    match mode {
        InterMode::Primal => {
            let grads =
                scalar_attention_backward(euclidean, geodesic, nbrs, params, saved, grad_out);
            (grads.query_input.clone(), grads.value_input.clone(), grads)
        }
        InterMode::Dual => {
            let grads =
                scalar_attention_backward(geodesic, euclidean, nbrs, params, saved, grad_out);
            (grads.value_input.clone(), grads.query_input.clone(), grads)
        }
    }
}

/// The two-layer MLP decoding per-channel attention weights from
/// `phi(f_i) - psi(f_j)`.
#[derive(Clone, Copy)]
pub struct VectorMlpRef<'a, S> {
    pub l1: LinearRef<'a, S>,
    pub l2: LinearRef<'a, S>,
}

pub struct VectorAttentionSaved<S> {
    v: Array2<S>,
    /// Per CSR edge: relation vector, hidden pre-activation, and weights.
    rel: Array2<S>,
    hidden_pre: Array2<S>,
    omega: Array2<S>,
}

#[derive(Debug, Clone)]
pub struct VectorMlpGrads<S> {
    pub l1_w: Array2<S>,
    pub l1_b: Array1<S>,
    pub l2_w: Array2<S>,
    pub l2_b: Array1<S>,
}

/// Vector attention: per-channel weights modulate `alpha(f_j)` elementwise,
/// normalized channelwise over each neighborhood.
pub fn vector_attention_forward<S: Scalar>(
    feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
    mlp: &VectorMlpRef<S>,
) -> Result<(Array2<S>, VectorAttentionSaved<S>)> {
    let n = nbrs.vertex_count();
    if feats.nrows() != n {
        return Err(Error::validation(format!(
            "vector attention: feature rows {} != vertex count {n}",
            feats.nrows()
        )));
    }
    params.validate(feats.ncols(), feats.ncols())?;
    let d = params.rho.out_dim();
    if mlp.l2.out_dim() != d {
        return Err(Error::validation(
            "vector attention: weight MLP must map to the output width",
        ));
    }

    let mut out = params.rho.apply(feats)?;
    let q = params.phi.apply(feats)?;
    let k = params.psi.apply(feats)?;
    let v = params.alpha.apply(feats)?;

    let edges = nbrs.edge_count();
    let key_dim = params.phi.out_dim();
    let mut rel = Array2::zeros((edges, key_dim));
    for i in 0..n {
        let base = nbrs.offset(i);
        for (e, &j) in nbrs.ring(i).iter().enumerate() {
            let mut row = rel.row_mut(base + e);
            row.assign(&q.row(i));
            row -= &k.row(j as usize);
        }
    }
    let hidden_pre = linear_forward(&rel.view(), &mlp.l1.w, Some(&mlp.l1.b))?;
    let hidden = relu_forward(&hidden_pre.view());
    let scores = linear_forward(&hidden.view(), &mlp.l2.w, Some(&mlp.l2.b))?;

    // Channelwise softmax over each ring.
    let mut omega = Array2::zeros((edges, d));
    for i in 0..n {
        let ring = nbrs.ring(i);
        if ring.is_empty() {
            continue;
        }
        let base = nbrs.offset(i);
        for c in 0..d {
            let mut max = S::neg_infinity();
            for e in 0..ring.len() {
                max = max.max(scores[[base + e, c]]);
            }
            let mut sum = S::zero();
            for e in 0..ring.len() {
                let w = (scores[[base + e, c]] - max).exp();
                omega[[base + e, c]] = w;
                sum += w;
            }
            for e in 0..ring.len() {
                omega[[base + e, c]] /= sum;
            }
        }
        let mut row = out.row_mut(i);
        for (e, &j) in ring.iter().enumerate() {
            let vj = v.row(j as usize);
            for c in 0..d {
                row[c] += omega[[base + e, c]] * vj[c];
            }
        }
    }

    Ok((
        out,
        VectorAttentionSaved {
            v,
            rel,
            hidden_pre,
            omega,
        },
    ))
}

pub fn vector_attention_backward<S: Scalar>(
    feats: &ArrayView2<S>,
    nbrs: &Neighborhoods,
    params: &AttentionParams<S>,
    mlp: &VectorMlpRef<S>,
    saved: &VectorAttentionSaved<S>,
    grad_out: &ArrayView2<S>,
) -> (Array2<S>, AttentionGrads<S>, VectorMlpGrads<S>) {
    let n = nbrs.vertex_count();
    let d = params.rho.out_dim();
    let edges = nbrs.edge_count();

    let mut gv: Array2<S> = Array2::zeros(saved.v.raw_dim());
    let mut gscores: Array2<S> = Array2::zeros((edges, d));
    for i in 0..n {
        let ring = nbrs.ring(i);
        if ring.is_empty() {
            continue;
        }
        let base = nbrs.offset(i);
        let g = grad_out.row(i);
        for c in 0..d {
            // Softmax backward per channel.
            let mut weighted_sum = S::zero();
            for (e, &j) in ring.iter().enumerate() {
                let dw = g[c] * saved.v[[j as usize, c]];
                weighted_sum += saved.omega[[base + e, c]] * dw;
            }
            for (e, &j) in ring.iter().enumerate() {
                let w = saved.omega[[base + e, c]];
                let dw = g[c] * saved.v[[j as usize, c]];
                gscores[[base + e, c]] = w * (dw - weighted_sum);
                gv[[j as usize, c]] += w * g[c];
            }
        }
    }

    // Back through the weight-decoding MLP.
    let hidden = relu_forward(&saved.hidden_pre.view());
    let l2 = linear_backward(&hidden.view(), &mlp.l2.w, &gscores.view());
    let ghidden = relu_backward(&saved.hidden_pre.view(), &l2.input.view());
    let l1 = linear_backward(&saved.rel.view(), &mlp.l1.w, &ghidden.view());

    // Relation gradient splits into +phi(f_i) and -psi(f_j).
    let key_dim = params.phi.out_dim();
    let mut gq: Array2<S> = Array2::zeros((n, key_dim));
    let mut gk: Array2<S> = Array2::zeros((n, key_dim));
    for i in 0..n {
        let base = nbrs.offset(i);
        for (e, &j) in nbrs.ring(i).iter().enumerate() {
            let gr = l1.input.row(base + e);
            {
                let mut gqi = gq.row_mut(i);
                gqi += &gr;
            }
            {
                let mut gkj = gk.row_mut(j as usize);
                gkj -= &gr;
            }
        }
    }

    let rho = linear_backward(feats, &params.rho.w, grad_out);
    let alpha = linear_backward(feats, &params.alpha.w, &gv.view());
    let phi = linear_backward(feats, &params.phi.w, &gq.view());
    let psi = linear_backward(feats, &params.psi.w, &gk.view());

    let gf = &rho.input + &alpha.input + &phi.input + &psi.input;
    (
        gf,
        AttentionGrads {
            query_input: Array2::zeros((0, 0)),
            value_input: Array2::zeros((0, 0)),
            rho_w: rho.weight,
            rho_b: rho.bias,
            alpha_w: alpha.weight,
            alpha_b: alpha.bias,
            phi_w: phi.weight,
            phi_b: phi.bias,
            psi_w: psi.weight,
            psi_b: psi.bias,
        },
        VectorMlpGrads {
            l1_w: l1.weight,
            l1_b: l1.bias,
            l2_w: l2.weight,
            l2_b: l2.bias,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Neighborhoods;
    use ndarray::Array1;
    use rand::Rng;

    fn path_graph(n: usize) -> Neighborhoods {
        let mut adj = vec![Vec::new(); n];
        for i in 0..n - 1 {
            adj[i].push((i + 1) as u32);
            adj[i + 1].push(i as u32);
        }
        for ring in &mut adj {
            ring.sort_unstable();
        }
        Neighborhoods::from_adjacency(&adj, false)
    }

    fn random_linear(rng: &mut impl Rng, rows: usize, cols: usize) -> (Array2<f64>, Array1<f64>) {
        let w = Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() - 0.5);
        let b = Array1::from_shape_fn(cols, |_| rng.random::<f64>() - 0.5);
        (w, b)
    }

    struct Owned {
        rho: (Array2<f64>, Array1<f64>),
        alpha: (Array2<f64>, Array1<f64>),
        phi: (Array2<f64>, Array1<f64>),
        psi: (Array2<f64>, Array1<f64>),
    }

    impl Owned {
        fn random(rng: &mut impl Rng, c: usize, d: usize) -> Self {
            Owned {
                rho: random_linear(rng, c, d),
                alpha: random_linear(rng, c, d),
                phi: random_linear(rng, c, d),
                psi: random_linear(rng, c, d),
            }
        }

        fn params(&self) -> AttentionParams<'_, f64> {
            AttentionParams {
                rho: LinearRef::new(self.rho.0.view(), self.rho.1.view()),
                alpha: LinearRef::new(self.alpha.0.view(), self.alpha.1.view()),
                phi: LinearRef::new(self.phi.0.view(), self.phi.1.view()),
                psi: LinearRef::new(self.psi.0.view(), self.psi.1.view()),
            }
        }
    }

    /// Independent dense oracle for scalar attention over an explicit
    /// adjacency matrix; plain loops, no shared code with the implementation.
    fn dense_scalar_attention(
        query: &Array2<f64>,
        value: &Array2<f64>,
        adjacency: &[Vec<usize>],
        own: &Owned,
    ) -> Array2<f64> {
        let n = query.nrows();
        let d = own.rho.0.ncols();
        let apply = |x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| -> Array2<f64> {
            let mut y = Array2::zeros((x.nrows(), w.ncols()));
            for r in 0..x.nrows() {
                for c in 0..w.ncols() {
                    let mut acc = b[c];
                    for t in 0..x.ncols() {
                        acc += x[[r, t]] * w[[t, c]];
                    }
                    y[[r, c]] = acc;
                }
            }
            y
        };
        let skip = apply(query, &own.rho.0, &own.rho.1);
        let q = apply(query, &own.phi.0, &own.phi.1);
        let k = apply(value, &own.psi.0, &own.psi.1);
        let v = apply(value, &own.alpha.0, &own.alpha.1);
        let mut out = skip.clone();
        for i in 0..n {
            let ring = &adjacency[i];
            if ring.is_empty() {
                continue;
            }
            let logits: Vec<f64> = ring
                .iter()
                .map(|&j| {
                    (0..q.ncols()).map(|t| q[[i, t]] * k[[j, t]]).sum::<f64>()
                        / (d as f64).sqrt()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (e, &j) in ring.iter().enumerate() {
                for c in 0..d {
                    out[[i, c]] += exps[e] / sum * v[[j, c]];
                }
            }
        }
        out
    }

    #[test]
    fn singleton_ring_weight_is_one() {
        let mut rng = crate::rng::rng_for(1, "test", 0);
        let own = Owned::random(&mut rng, 3, 3);
        let nbrs = path_graph(2);
        let f = Array2::from_shape_fn((2, 3), |_| rng.random::<f64>());
        let (out, saved) = intra_attention_forward(&f.view(), &nbrs, &own.params()).unwrap();
        assert_eq!(saved.weights_of(&nbrs, 0), &[1.0]);
        // out_0 = rho(f_0) + alpha(f_1) exactly.
        let rho = linear_forward(&f.view(), &own.rho.0.view(), Some(&own.rho.1.view())).unwrap();
        let alpha =
            linear_forward(&f.view(), &own.alpha.0.view(), Some(&own.alpha.1.view())).unwrap();
        for c in 0..3 {
            assert!((out[[0, c]] - (rho[[0, c]] + alpha[[1, c]])).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_neighbor_features_give_uniform_weights() {
        let mut rng = crate::rng::rng_for(2, "test", 0);
        let own = Owned::random(&mut rng, 4, 4);
        // Star: vertex 0 sees three identical neighbors.
        let adj = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        let nbrs = Neighborhoods::from_adjacency(
            &adj.iter()
                .map(|r| r.iter().map(|&x| x as u32).collect())
                .collect::<Vec<Vec<u32>>>(),
            false,
        );
        let mut f = Array2::zeros((4, 4));
        for c in 0..4 {
            f[[0, c]] = rng.random::<f64>();
            let v = rng.random::<f64>();
            for j in 1..4 {
                f[[j, c]] = v;
            }
        }
        let (_, saved) = intra_attention_forward(&f.view(), &nbrs, &own.params()).unwrap();
        for &w in saved.weights_of(&nbrs, 0) {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_oracle_on_path_graph() {
        let mut rng = crate::rng::rng_for(3, "test", 0);
        let own = Owned::random(&mut rng, 8, 8);
        let nbrs = path_graph(4);
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let f = Array2::from_shape_fn((4, 8), |_| rng.random::<f64>() * 2.0 - 1.0);
        let (out, _) = intra_attention_forward(&f.view(), &nbrs, &own.params()).unwrap();
        let oracle = dense_scalar_attention(&f, &f, &adj, &own);
        let max_err = out
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "max abs err {max_err}");
    }

    #[test]
    fn primal_equals_intra_when_domains_coincide() {
        let mut rng = crate::rng::rng_for(4, "test", 0);
        let own = Owned::random(&mut rng, 5, 5);
        let nbrs = path_graph(5);
        let f = Array2::from_shape_fn((5, 5), |_| rng.random::<f64>());
        let (intra, _) = intra_attention_forward(&f.view(), &nbrs, &own.params()).unwrap();
        let (primal, _) =
            inter_attention_forward(&f.view(), &f.view(), &nbrs, &own.params(), InterMode::Primal)
                .unwrap();
        assert_eq!(intra, primal);
    }

    #[test]
    fn primal_and_dual_differ_on_distinct_domains() {
        let mut rng = crate::rng::rng_for(5, "test", 0);
        let own = Owned::random(&mut rng, 6, 6);
        let nbrs = path_graph(5);
        let euc = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>());
        let geo = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>());
        let (p, _) = inter_attention_forward(&euc.view(), &geo.view(), &nbrs, &own.params(), InterMode::Primal)
            .unwrap();
        let (d, _) = inter_attention_forward(&euc.view(), &geo.view(), &nbrs, &own.params(), InterMode::Dual)
            .unwrap();
        let max_diff = p
            .iter()
            .zip(d.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 0.0);
    }

    #[test]
    fn empty_ring_returns_skip_path() {
        let mut rng = crate::rng::rng_for(6, "test", 0);
        let own = Owned::random(&mut rng, 3, 3);
        let adj: Vec<Vec<u32>> = vec![vec![], vec![2], vec![1]];
        let nbrs = Neighborhoods::from_adjacency(&adj, false);
        let f = Array2::from_shape_fn((3, 3), |_| rng.random::<f64>());
        let (out, _) = intra_attention_forward(&f.view(), &nbrs, &own.params()).unwrap();
        let rho = linear_forward(&f.view(), &own.rho.0.view(), Some(&own.rho.1.view())).unwrap();
        for c in 0..3 {
            assert_eq!(out[[0, c]], rho[[0, c]]);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = crate::rng::rng_for(7, "test", 0);
        let own = Owned::random(&mut rng, 4, 4);
        let nbrs = path_graph(6);
        let f = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>() * 3.0);
        let (_, saved) = intra_attention_forward(&f.view(), &nbrs, &own.params()).unwrap();
        for i in 0..6 {
            let ws = saved.weights_of(&nbrs, i);
            if ws.is_empty() {
                continue;
            }
            let sum: f64 = ws.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(ws.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn vector_attention_singleton_weights_are_one() {
        let mut rng = crate::rng::rng_for(8, "test", 0);
        let own = Owned::random(&mut rng, 3, 3);
        let mlp_own = (random_linear(&mut rng, 3, 3), random_linear(&mut rng, 3, 3));
        let mlp = VectorMlpRef {
            l1: LinearRef::new(mlp_own.0 .0.view(), mlp_own.0 .1.view()),
            l2: LinearRef::new(mlp_own.1 .0.view(), mlp_own.1 .1.view()),
        };
        let nbrs = path_graph(2);
        let f = Array2::from_shape_fn((2, 3), |_| rng.random::<f64>());
        let (_, saved) = vector_attention_forward(&f.view(), &nbrs, &own.params(), &mlp).unwrap();
        for c in 0..3 {
            assert!((saved.omega[[0, c]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vector_attention_uniform_features_give_uniform_channel_weights() {
        let mut rng = crate::rng::rng_for(9, "test", 0);
        let own = Owned::random(&mut rng, 3, 3);
        let mlp_own = (random_linear(&mut rng, 3, 3), random_linear(&mut rng, 3, 3));
        let mlp = VectorMlpRef {
            l1: LinearRef::new(mlp_own.0 .0.view(), mlp_own.0 .1.view()),
            l2: LinearRef::new(mlp_own.1 .0.view(), mlp_own.1 .1.view()),
        };
        let adj: Vec<Vec<u32>> = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        let nbrs = Neighborhoods::from_adjacency(&adj, false);
        let f = Array2::from_elem((4, 3), 0.37);
        let (_, saved) = vector_attention_forward(&f.view(), &nbrs, &own.params(), &mlp).unwrap();
        for e in 0..3 {
            for c in 0..3 {
                assert!((saved.omega[[e, c]] - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn neighbor_permutation_leaves_output_unchanged() {
        // Same graph, rings listed in different order before CSR
        // normalization; outputs must be identical.
        let mut rng = crate::rng::rng_for(10, "test", 0);
        let own = Owned::random(&mut rng, 4, 4);
        let adj_a: Vec<Vec<u32>> = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        let mut adj_b = adj_a.clone();
        adj_b[0] = vec![3, 1, 2];
        adj_b[0].sort_unstable();
        let f = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>());
        let na = Neighborhoods::from_adjacency(&adj_a, false);
        let nb = Neighborhoods::from_adjacency(&adj_b, false);
        let (oa, _) = intra_attention_forward(&f.view(), &na, &own.params()).unwrap();
        let (ob, _) = intra_attention_forward(&f.view(), &nb, &own.params()).unwrap();
        assert_eq!(oa, ob);
    }
}

#[cfg(test)]
mod invariant_tests {
    use super::*;
    use crate::mesh::Neighborhoods;
    use ndarray::{Array1, Array2};
    use rand::Rng;

    fn linear_pair(rng: &mut impl Rng, c: usize, d: usize) -> (Array2<f64>, Array1<f64>) {
        (
            Array2::from_shape_fn((c, d), |_| rng.random::<f64>() - 0.5),
            Array1::from_shape_fn(d, |_| rng.random::<f64>() - 0.5),
        )
    }

    /// Applying a vertex permutation to features and adjacency permutes the
    /// outputs identically.
    #[test]
    fn vertex_relabeling_equivariance() {
        let mut rng = crate::rng::rng_for(21, "equivariance", 0);
        let c = 5;
        let own: Vec<(Array2<f64>, Array1<f64>)> =
            (0..4).map(|_| linear_pair(&mut rng, c, c)).collect();
        let params = AttentionParams {
            rho: LinearRef::new(own[0].0.view(), own[0].1.view()),
            alpha: LinearRef::new(own[1].0.view(), own[1].1.view()),
            phi: LinearRef::new(own[2].0.view(), own[2].1.view()),
            psi: LinearRef::new(own[3].0.view(), own[3].1.view()),
        };
        let adj: Vec<Vec<u32>> = vec![vec![1, 2], vec![0, 3], vec![0], vec![1, 4], vec![3]];
        let n = adj.len();
        let f = Array2::from_shape_fn((n, c), |_| rng.random::<f64>());
        let nbrs = Neighborhoods::from_adjacency(&adj, false);
        let (out, _) = intra_attention_forward(&f.view(), &nbrs, &params).unwrap();

        // Permutation p maps old index -> new index.
        let p = [3usize, 0, 4, 2, 1];
        let mut adj_p: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, ring) in adj.iter().enumerate() {
            adj_p[p[i]] = ring.iter().map(|&j| p[j as usize] as u32).collect();
            adj_p[p[i]].sort_unstable();
        }
        let mut f_p = Array2::zeros((n, c));
        for i in 0..n {
            f_p.row_mut(p[i]).assign(&f.row(i));
        }
        let nbrs_p = Neighborhoods::from_adjacency(&adj_p, false);
        let (out_p, _) = intra_attention_forward(&f_p.view(), &nbrs_p, &params).unwrap();
        for i in 0..n {
            for k in 0..c {
                assert!(
                    (out[[i, k]] - out_p[[p[i], k]]).abs() < 1e-9,
                    "row {i} channel {k}"
                );
            }
        }
    }

    /// Adding a constant to every logit of one neighborhood (via a key
    /// shift aligned with the query) leaves its softmax weights unchanged.
    #[test]
    fn softmax_weights_are_shift_invariant() {
        let mut rng = crate::rng::rng_for(22, "shift", 0);
        let c = 4;
        let own: Vec<(Array2<f64>, Array1<f64>)> =
            (0..4).map(|_| linear_pair(&mut rng, c, c)).collect();
        // Star graph: vertex 0 attends over 1..=3.
        let adj: Vec<Vec<u32>> = vec![vec![1, 2, 3], vec![0], vec![0], vec![0]];
        let nbrs = Neighborhoods::from_adjacency(&adj, false);
        let f = Array2::from_shape_fn((4, c), |_| rng.random::<f64>() * 2.0);

        let weights_with_bias = |extra: f64| -> Vec<f64> {
            // Shift every key by a multiple of the center's query: each
            // logit of vertex 0 moves by the same constant q.q * t.
            let params = AttentionParams {
                rho: LinearRef::new(own[0].0.view(), own[0].1.view()),
                alpha: LinearRef::new(own[1].0.view(), own[1].1.view()),
                phi: LinearRef::new(own[2].0.view(), own[2].1.view()),
                psi: LinearRef::new(own[3].0.view(), own[3].1.view()),
            };
            let q = linear_forward(&f.view(), &params.phi.w, Some(&params.phi.b)).unwrap();
            let q0 = q.row(0).to_owned();
            let shifted_psi_b = &own[3].1 + &(&q0 * extra);
            let params = AttentionParams {
                psi: LinearRef::new(own[3].0.view(), shifted_psi_b.view()),
                ..params
            };
            let (_, saved) = intra_attention_forward(&f.view(), &nbrs, &params).unwrap();
            saved.weights_of(&nbrs, 0).to_vec()
        };
        let base = weights_with_bias(0.0);
        let shifted = weights_with_bias(3.0);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
