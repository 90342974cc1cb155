//! Layer blocks: parameter handles plus mirrored forward/backward methods.
//!
//! Blocks bind names in the [`ParameterStore`] and keep whatever activations
//! their backward pass needs in per-block `Saved` values owned by the tape.

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::error::Result;
use crate::mesh::Neighborhoods;
use crate::ops::{
    edgeconv_backward, edgeconv_forward, inter_attention_backward, inter_attention_forward,
    intra_attention_backward, intra_attention_forward, layer_norm_backward, layer_norm_forward,
    linear_backward, linear_forward, relu_backward, relu_forward, vector_attention_backward,
    vector_attention_forward, AttentionGrads, AttentionParams, EdgeConvSaved, InterMode,
    LinearRef, ParamId, ParameterStore, Scalar, ScalarAttentionSaved, VectorAttentionSaved,
    VectorMlpRef, LAYER_NORM_EPS,
};
use crate::voxel::{
    sparse_conv_backward, sparse_conv_forward, ConvKernel, ConvMode, VoxelSet,
};

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearIds {
    pub fn as_ref<'a, S: Scalar>(&self, ps: &'a ParameterStore<S>) -> LinearRef<'a, S> {
        LinearRef::new(ps.view2(self.w), ps.view1(self.b))
    }

    pub fn forward<S: Scalar>(&self, ps: &ParameterStore<S>, x: &Array2<S>) -> Result<Array2<S>> {
        linear_forward(&x.view(), &ps.view2(self.w), Some(&ps.view1(self.b)))
    }

    /// Accumulates weight gradients, returns the input gradient.
    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        x: &Array2<S>,
        grad_out: &Array2<S>,
    ) -> Array2<S> {
        let grads = linear_backward(&x.view(), &ps.view2(self.w), &grad_out.view());
        ps.add_grad2(self.w, &grads.weight);
        ps.add_grad1(self.b, &grads.bias);
        grads.input
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub scale: ParamId,
    pub shift: ParamId,
}

impl NormIds {
    pub fn forward<S: Scalar>(&self, ps: &ParameterStore<S>, x: &Array2<S>) -> Array2<S> {
        layer_norm_forward(
            &x.view(),
            &ps.view1(self.scale),
            &ps.view1(self.shift),
            LAYER_NORM_EPS,
        )
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        x: &Array2<S>,
        grad_out: &Array2<S>,
    ) -> Array2<S> {
        let (gx, gscale, gshift) = layer_norm_backward(
            &x.view(),
            &ps.view1(self.scale),
            LAYER_NORM_EPS,
            &grad_out.view(),
        );
        ps.add_grad1(self.scale, &gscale);
        ps.add_grad1(self.shift, &gshift);
        gx
    }
}

/// Linear, then optional layer norm, then optional ReLU.
#[derive(Debug, Clone, Copy)]
pub struct LinearBlockIds {
    pub lin: LinearIds,
    pub norm: Option<NormIds>,
    pub relu: bool,
}

pub struct LinearBlockSaved<S> {
    input: Array2<S>,
    lin_out: Array2<S>,
    norm_out: Option<Array2<S>>,
}

impl LinearBlockIds {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterStore<S>,
        x: Array2<S>,
    ) -> Result<(Array2<S>, LinearBlockSaved<S>)> {
        let lin_out = self.lin.forward(ps, &x)?;
        let norm_out = self.norm.map(|n| n.forward(ps, &lin_out));
        let pre_act = norm_out.as_ref().unwrap_or(&lin_out);
        let out = if self.relu {
            relu_forward(&pre_act.view())
        } else {
            pre_act.clone()
        };
        Ok((
            out,
            LinearBlockSaved {
                input: x,
                lin_out,
                norm_out,
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        saved: &LinearBlockSaved<S>,
        grad_out: &Array2<S>,
    ) -> Array2<S> {
        let pre_act = saved.norm_out.as_ref().unwrap_or(&saved.lin_out);
        let mut g = if self.relu {
            relu_backward(&pre_act.view(), &grad_out.view())
        } else {
            grad_out.clone()
        };
        if let Some(norm) = self.norm {
            g = norm.backward(ps, &saved.lin_out, &g);
        }
        self.lin.backward(ps, &saved.input, &g)
    }
}

/// Sparse convolution, then optional layer norm, then optional ReLU.
#[derive(Debug, Clone, Copy)]
pub struct ConvBlockIds {
    pub w: ParamId,
    pub b: ParamId,
    pub norm: Option<NormIds>,
    pub relu: bool,
    pub mode: ConvMode,
    pub size: usize,
}

pub struct ConvBlockSaved<S> {
    input: Array2<S>,
    conv_out: Array2<S>,
    norm_out: Option<Array2<S>>,
}

impl ConvBlockIds {
    fn kernel<S: Scalar>(&self, ps: &ParameterStore<S>) -> ConvKernel<S> {
        ConvKernel::new(
            self.mode,
            self.size,
            ps.view3(self.w).to_owned(),
            Some(ps.view1(self.b).to_owned()),
        )
        .expect("kernel shapes fixed at build time")
    }

    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterStore<S>,
        in_set: &VoxelSet,
        x: Array2<S>,
        target: Option<&VoxelSet>,
    ) -> Result<(VoxelSet, Array2<S>, ConvBlockSaved<S>)> {
        let kernel = self.kernel(ps);
        let (out_set, conv_out) = sparse_conv_forward(in_set, &x.view(), &kernel, target)?;
        let norm_out = self.norm.map(|n| n.forward(ps, &conv_out));
        let pre_act = norm_out.as_ref().unwrap_or(&conv_out);
        let out = if self.relu {
            relu_forward(&pre_act.view())
        } else {
            pre_act.clone()
        };
        Ok((
            out_set,
            out,
            ConvBlockSaved {
                input: x,
                conv_out,
                norm_out,
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        in_set: &VoxelSet,
        out_set: &VoxelSet,
        saved: &ConvBlockSaved<S>,
        grad_out: &Array2<S>,
    ) -> Array2<S> {
        let pre_act = saved.norm_out.as_ref().unwrap_or(&saved.conv_out);
        let mut g = if self.relu {
            relu_backward(&pre_act.view(), &grad_out.view())
        } else {
            grad_out.clone()
        };
        if let Some(norm) = self.norm {
            g = norm.backward(ps, &saved.conv_out, &g);
        }
        let kernel = self.kernel(ps);
        let grads = sparse_conv_backward(in_set, &saved.input.view(), &kernel, out_set, &g.view());
        ps.add_grad3(self.w, &grads.weights);
        if let Some(gb) = grads.bias {
            ps.add_grad1(self.b, &gb);
        }
        grads.input
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorVariant {
    Scalar,
    Vector,
    EdgeConv,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub rho: LinearIds,
    pub alpha: LinearIds,
    pub phi: LinearIds,
    pub psi: LinearIds,
}

impl AttnIds {
    pub fn params<'a, S: Scalar>(&self, ps: &'a ParameterStore<S>) -> AttentionParams<'a, S> {
        AttentionParams {
            rho: self.rho.as_ref(ps),
            alpha: self.alpha.as_ref(ps),
            phi: self.phi.as_ref(ps),
            psi: self.psi.as_ref(ps),
        }
    }

    fn accumulate<S: Scalar>(&self, ps: &mut ParameterStore<S>, g: &AttentionGrads<S>) {
        ps.add_grad2(self.rho.w, &g.rho_w);
        ps.add_grad1(self.rho.b, &g.rho_b);
        ps.add_grad2(self.alpha.w, &g.alpha_w);
        ps.add_grad1(self.alpha.b, &g.alpha_b);
        ps.add_grad2(self.phi.w, &g.phi_w);
        ps.add_grad1(self.phi.b, &g.phi_b);
        ps.add_grad2(self.psi.w, &g.psi_w);
        ps.add_grad1(self.psi.b, &g.psi_b);
    }
}

/// One neighborhood operator of the configured variant.
#[derive(Debug, Clone, Copy)]
pub enum OperatorIds {
    Scalar(AttnIds),
    Vector {
        attn: AttnIds,
        mlp1: LinearIds,
        mlp2: LinearIds,
    },
    Edge(LinearIds),
}

pub enum OperatorSaved<S> {
    Scalar {
        input: Array2<S>,
        saved: ScalarAttentionSaved<S>,
    },
    Vector {
        input: Array2<S>,
        saved: VectorAttentionSaved<S>,
    },
    Edge {
        input: Array2<S>,
        saved: EdgeConvSaved,
    },
}

impl OperatorIds {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterStore<S>,
        nbrs: &Neighborhoods,
        x: Array2<S>,
    ) -> Result<(Array2<S>, OperatorSaved<S>)> {
        match self {
            OperatorIds::Scalar(attn) => {
                let (out, saved) = intra_attention_forward(&x.view(), nbrs, &attn.params(ps))?;
                Ok((out, OperatorSaved::Scalar { input: x, saved }))
            }
            OperatorIds::Vector { attn, mlp1, mlp2 } => {
                let mlp = VectorMlpRef {
                    l1: mlp1.as_ref(ps),
                    l2: mlp2.as_ref(ps),
                };
                let (out, saved) =
                    vector_attention_forward(&x.view(), nbrs, &attn.params(ps), &mlp)?;
                Ok((out, OperatorSaved::Vector { input: x, saved }))
            }
            OperatorIds::Edge(lin) => {
                let (out, saved) = edgeconv_forward(&x.view(), nbrs, &lin.as_ref(ps))?;
                Ok((out, OperatorSaved::Edge { input: x, saved }))
            }
        }
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        nbrs: &Neighborhoods,
        saved: &OperatorSaved<S>,
        grad_out: &Array2<S>,
    ) -> Array2<S> {
        match (self, saved) {
            (OperatorIds::Scalar(attn), OperatorSaved::Scalar { input, saved }) => {
                let (gf, grads) = intra_attention_backward(
                    &input.view(),
                    nbrs,
                    &attn.params(ps),
                    saved,
                    &grad_out.view(),
                );
                attn.accumulate(ps, &grads);
                gf
            }
            (OperatorIds::Vector { attn, mlp1, mlp2 }, OperatorSaved::Vector { input, saved }) => {
                let mlp = VectorMlpRef {
                    l1: mlp1.as_ref(ps),
                    l2: mlp2.as_ref(ps),
                };
                let (gf, grads, mlp_grads) = vector_attention_backward(
                    &input.view(),
                    nbrs,
                    &attn.params(ps),
                    &mlp,
                    saved,
                    &grad_out.view(),
                );
                attn.accumulate(ps, &grads);
                ps.add_grad2(mlp1.w, &mlp_grads.l1_w);
                ps.add_grad1(mlp1.b, &mlp_grads.l1_b);
                ps.add_grad2(mlp2.w, &mlp_grads.l2_w);
                ps.add_grad1(mlp2.b, &mlp_grads.l2_b);
                gf
            }
            (OperatorIds::Edge(lin), OperatorSaved::Edge { input, saved }) => {
                let grads = edgeconv_backward(
                    &input.view(),
                    nbrs,
                    &lin.as_ref(ps),
                    saved,
                    &grad_out.view(),
                );
                ps.add_grad2(lin.w, &grads.weight);
                ps.add_grad1(lin.b, &grads.bias);
                grads.input
            }
            _ => unreachable!("operator and saved variants always match"),
        }
    }
}

/// Aggregation module: two neighborhood operators, each wrapped by an
/// additive identity skip and post-normalized.
#[derive(Debug, Clone, Copy)]
pub struct IntraModuleIds {
    pub layer0: OperatorIds,
    pub norm0: NormIds,
    pub layer1: OperatorIds,
    pub norm1: NormIds,
}

pub struct IntraModuleSaved<S> {
    op0: OperatorSaved<S>,
    sum0: Array2<S>,
    op1: OperatorSaved<S>,
    sum1: Array2<S>,
}

impl IntraModuleIds {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterStore<S>,
        nbrs: &Neighborhoods,
        x: Array2<S>,
    ) -> Result<(Array2<S>, IntraModuleSaved<S>)> {
        let (y0, op0) = self.layer0.forward(ps, nbrs, x)?;
        let sum0 = match &op0 {
            OperatorSaved::Scalar { input, .. }
            | OperatorSaved::Vector { input, .. }
            | OperatorSaved::Edge { input, .. } => input + &y0,
        };
        let x1 = self.norm0.forward(ps, &sum0);
        let (y1, op1) = self.layer1.forward(ps, nbrs, x1)?;
        let sum1 = match &op1 {
            OperatorSaved::Scalar { input, .. }
            | OperatorSaved::Vector { input, .. }
            | OperatorSaved::Edge { input, .. } => input + &y1,
        };
        let out = self.norm1.forward(ps, &sum1);
        Ok((
            out,
            IntraModuleSaved {
                op0,
                sum0,
                op1,
                sum1,
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        nbrs: &Neighborhoods,
        saved: &IntraModuleSaved<S>,
        grad_out: &Array2<S>,
    ) -> Array2<S> {
        // out = norm(x1 + op1(x1)): the skip passes the norm gradient
        // through unchanged.
        let g_sum1 = self.norm1.backward(ps, &saved.sum1, grad_out);
        let g_x1 = &g_sum1 + &self.layer1.backward(ps, nbrs, &saved.op1, &g_sum1);
        let g_sum0 = self.norm0.backward(ps, &saved.sum0, &g_x1);
        &g_sum0 + &self.layer0.backward(ps, nbrs, &saved.op0, &g_sum0)
    }
}

/// Fusion module: inter-domain attention + layer norm + ReLU, concatenated
/// with both incoming maps, then a linear merge back to the level width.
#[derive(Debug, Clone, Copy)]
pub struct InterModuleIds {
    pub attn: AttnIds,
    pub mode: InterMode,
    pub norm: NormIds,
    pub merge: LinearIds,
}

pub struct InterModuleSaved<S> {
    euc: Array2<S>,
    geo: Array2<S>,
    attn: ScalarAttentionSaved<S>,
    fused: Array2<S>,
    normed: Array2<S>,
    cat: Array2<S>,
}

impl InterModuleIds {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterStore<S>,
        nbrs: &Neighborhoods,
        euc: Array2<S>,
        geo: Array2<S>,
    ) -> Result<(Array2<S>, InterModuleSaved<S>)> {
        let (fused, attn) = inter_attention_forward(
            &euc.view(),
            &geo.view(),
            nbrs,
            &self.attn.params(ps),
            self.mode,
        )?;
        let normed = self.norm.forward(ps, &fused);
        let activated = relu_forward(&normed.view());
        let cat = concatenate(Axis(1), &[activated.view(), euc.view(), geo.view()])
            .expect("widths agree");
        let out = self.merge.forward(ps, &cat)?;
        Ok((
            out,
            InterModuleSaved {
                euc,
                geo,
                attn,
                fused,
                normed,
                cat,
            },
        ))
    }

    /// Returns `(g_euclidean, g_geodesic)`.
    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        nbrs: &Neighborhoods,
        saved: &InterModuleSaved<S>,
        grad_out: &Array2<S>,
    ) -> (Array2<S>, Array2<S>) {
        let g_cat = self.merge.backward(ps, &saved.cat, grad_out);
        let w = saved.fused.ncols();
        let g_act = g_cat.slice(ndarray::s![.., 0..w]).to_owned();
        let mut g_euc = g_cat.slice(ndarray::s![.., w..2 * w]).to_owned();
        let mut g_geo = g_cat.slice(ndarray::s![.., 2 * w..3 * w]).to_owned();

        let g_normed = relu_backward(&saved.normed.view(), &g_act.view());
        let g_fused = self.norm.backward(ps, &saved.fused, &g_normed);
        let (ge, gg, grads) = inter_attention_backward(
            &saved.euc.view(),
            &saved.geo.view(),
            nbrs,
            &self.attn.params(ps),
            self.mode,
            &saved.attn,
            &g_fused.view(),
        );
        self.attn.accumulate(ps, &grads);
        g_euc += &ge;
        g_geo += &gg;
        (g_euc, g_geo)
    }
}

/// Non-attentive fusion used by the aggregation-only ablation: concatenate
/// the two maps and merge linearly (with norm + ReLU).
#[derive(Debug, Clone, Copy)]
pub struct ConcatFusionIds {
    pub merge: LinearBlockIds,
}

pub struct ConcatFusionSaved<S> {
    width: usize,
    merge: LinearBlockSaved<S>,
}

impl ConcatFusionIds {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterStore<S>,
        euc: Array2<S>,
        geo: Array2<S>,
    ) -> Result<(Array2<S>, ConcatFusionSaved<S>)> {
        let width = euc.ncols();
        let cat = concatenate(Axis(1), &[euc.view(), geo.view()]).expect("row counts agree");
        let (out, merge) = self.merge.forward(ps, cat)?;
        Ok((out, ConcatFusionSaved { width, merge }))
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &mut ParameterStore<S>,
        saved: &ConcatFusionSaved<S>,
        grad_out: &Array2<S>,
    ) -> (Array2<S>, Array2<S>) {
        let g_cat = self.merge.backward(ps, &saved.merge, grad_out);
        let w = saved.width;
        (
            g_cat.slice(ndarray::s![.., 0..w]).to_owned(),
            g_cat.slice(ndarray::s![.., w..]).to_owned(),
        )
    }
}

/// He-uniform limit for a fan-in.
pub fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Helpers for building parameter tensors.
pub struct ParamBuilder<'a, S: Scalar> {
    pub ps: &'a mut ParameterStore<S>,
    pub rng: rand_chacha::ChaCha8Rng,
}

impl<S: Scalar> ParamBuilder<'_, S> {
    fn uniform(&mut self, limit: f64) -> S {
        use rand::Rng;
        S::from_f64((self.rng.random::<f64>() * 2.0 - 1.0) * limit)
    }

    pub fn linear(&mut self, name: &str, c_in: usize, c_out: usize) -> Result<LinearIds> {
        let limit = he_limit(c_in);
        let w = Array2::from_shape_simple_fn((c_in, c_out), || self.uniform(limit));
        let b = Array1::zeros(c_out);
        Ok(LinearIds {
            w: self.ps.add(format!("{name}.weight"), w.into_dyn(), true)?,
            b: self.ps.add(format!("{name}.bias"), b.into_dyn(), false)?,
        })
    }

    pub fn norm(&mut self, name: &str, width: usize) -> Result<NormIds> {
        let scale: Array1<S> = Array1::from_elem(width, S::one());
        let shift: Array1<S> = Array1::zeros(width);
        Ok(NormIds {
            scale: self
                .ps
                .add(format!("{name}.scale"), scale.into_dyn(), false)?,
            shift: self
                .ps
                .add(format!("{name}.shift"), shift.into_dyn(), false)?,
        })
    }

    pub fn conv(
        &mut self,
        name: &str,
        mode: ConvMode,
        size: usize,
        c_in: usize,
        c_out: usize,
        norm: Option<NormIds>,
        relu: bool,
    ) -> Result<ConvBlockIds> {
        let k = size * size * size;
        let limit = he_limit(k * c_in);
        let w = ndarray::Array3::from_shape_simple_fn((k, c_in, c_out), || self.uniform(limit));
        let b: Array1<S> = Array1::zeros(c_out);
        Ok(ConvBlockIds {
            w: self.ps.add(format!("{name}.weight"), w.into_dyn(), true)?,
            b: self.ps.add(format!("{name}.bias"), b.into_dyn(), false)?,
            norm,
            relu,
            mode,
            size,
        })
    }

    pub fn attention(&mut self, name: &str, c_in: usize, d: usize, key_dim: usize) -> Result<AttnIds> {
        Ok(AttnIds {
            rho: self.linear(&format!("{name}.rho"), c_in, d)?,
            alpha: self.linear(&format!("{name}.alpha"), c_in, d)?,
            phi: self.linear(&format!("{name}.phi"), c_in, key_dim)?,
            psi: self.linear(&format!("{name}.psi"), c_in, key_dim)?,
        })
    }

    pub fn operator(
        &mut self,
        name: &str,
        variant: OperatorVariant,
        width: usize,
        key_dim: usize,
    ) -> Result<OperatorIds> {
        Ok(match variant {
            OperatorVariant::Scalar => {
                OperatorIds::Scalar(self.attention(name, width, width, key_dim)?)
            }
            OperatorVariant::Vector => OperatorIds::Vector {
                attn: self.attention(name, width, width, key_dim)?,
                mlp1: self.linear(&format!("{name}.mlp1"), key_dim, key_dim)?,
                mlp2: self.linear(&format!("{name}.mlp2"), key_dim, width)?,
            },
            OperatorVariant::EdgeConv => {
                OperatorIds::Edge(self.linear(&format!("{name}.edge"), 2 * width, width)?)
            }
        })
    }

    pub fn intra_module(
        &mut self,
        name: &str,
        variant: OperatorVariant,
        width: usize,
        key_dim: usize,
    ) -> Result<IntraModuleIds> {
        Ok(IntraModuleIds {
            layer0: self.operator(&format!("{name}.attn0"), variant, width, key_dim)?,
            norm0: self.norm(&format!("{name}.norm0"), width)?,
            layer1: self.operator(&format!("{name}.attn1"), variant, width, key_dim)?,
            norm1: self.norm(&format!("{name}.norm1"), width)?,
        })
    }
}
