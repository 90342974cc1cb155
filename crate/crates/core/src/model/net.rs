//! Model configuration, parameter wiring, and the hand-rolled
//! forward/backward over a scene.

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::blocks::{
    ConcatFusionIds, ConcatFusionSaved, ConvBlockIds, ConvBlockSaved, IntraModuleIds,
    IntraModuleSaved, InterModuleIds, InterModuleSaved, LinearBlockIds, LinearBlockSaved,
    LinearIds, OperatorVariant, ParamBuilder,
};
use crate::error::{Error, Result};
use crate::hierarchy::{pool_mean, pool_mean_backward, unpool, unpool_backward, MeshHierarchy};
use crate::mesh::Neighborhoods;
use crate::ops::{FeatureMatrix, InterMode, ParameterStore, Scalar};
use crate::rng::{rng_for, split_seed};
use crate::voxel::{
    project_to_vertices, project_to_vertices_backward, voxelize, ConvMode, SparseVoxelGrid,
    VoxelSet,
};

/// Which part of the two-branch architecture runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// Euclidean U-Net plus geodesic fusion/aggregation.
    Full,
    /// U-Net only; the decoder's base level is projected and classified.
    EucOnly,
    /// Mesh-only encoder-decoder of aggregation modules over raw colors.
    GeoOnly,
}

/// Normalization inside the Euclidean branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Layer,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of mesh/voxel levels, including the base level.
    pub levels: usize,
    /// Channel width per level.
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub variant: OperatorVariant,
    pub fusion: InterMode,
    pub branch: BranchMode,
    /// When false, fusion degrades to plain concatenation + linear merge
    /// (the aggregation-only ablation).
    pub use_inter: bool,
    /// Number of levels (counted from the finest) with geodesic modules;
    /// `None` enables all of them.
    pub refinement_depth: Option<usize>,
    /// Include the center vertex in its own neighborhood.
    pub self_in_ring: bool,
    /// Width of the query/key projections; defaults to the level width.
    pub key_dim: Option<usize>,
    pub euclid_norm: NormKind,
    /// Base voxel resolution in voxels per meter (level `l` uses `r / 2^l`).
    pub resolution: f64,
}

impl ModelConfig {
    /// Desk-scale preset: 3 levels, widths 16/32/64.
    pub fn mini(num_classes: usize) -> Self {
        ModelConfig {
            levels: 3,
            widths: vec![16, 32, 64],
            num_classes,
            variant: OperatorVariant::Scalar,
            fusion: InterMode::Primal,
            branch: BranchMode::Full,
            use_inter: true,
            refinement_depth: None,
            self_in_ring: false,
            key_dim: None,
            euclid_norm: NormKind::Layer,
            resolution: 50.0,
        }
    }

    /// Full-scale preset: 7 levels.
    pub fn full_scale(num_classes: usize) -> Self {
        ModelConfig {
            levels: 7,
            widths: vec![32, 32, 64, 64, 96, 96, 128],
            ..Self::mini(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::validation("model needs at least 2 levels"));
        }
        if self.widths.len() != self.levels {
            return Err(Error::validation(format!(
                "{} widths for {} levels",
                self.widths.len(),
                self.levels
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::validation("level widths must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("need at least 2 classes"));
        }
        if let Some(d) = self.refinement_depth {
            if d > self.levels {
                return Err(Error::validation(format!(
                    "refinement depth {d} exceeds {} levels",
                    self.levels
                )));
            }
        }
        if self.key_dim == Some(0) {
            return Err(Error::validation("key_dim must be positive"));
        }
        if !(self.resolution > 0.0) {
            return Err(Error::validation("resolution must be positive"));
        }
        Ok(())
    }

    /// Number of levels carrying geodesic modules.
    pub fn effective_depth(&self) -> usize {
        match self.branch {
            BranchMode::EucOnly => 0,
            BranchMode::GeoOnly => self.levels,
            BranchMode::Full => self.refinement_depth.unwrap_or(self.levels),
        }
    }

    fn key_dim_at(&self, width: usize) -> usize {
        self.key_dim.unwrap_or(width)
    }

    fn euclid_norm_ids<S: Scalar>(
        &self,
        b: &mut ParamBuilder<S>,
        name: &str,
        width: usize,
    ) -> Result<Option<super::blocks::NormIds>> {
        match self.euclid_norm {
            NormKind::Layer => Ok(Some(b.norm(name, width)?)),
            NormKind::None => Ok(None),
        }
    }
}

struct EncLevel {
    conv1: ConvBlockIds,
    conv2: ConvBlockIds,
    down: Option<ConvBlockIds>,
}

struct DecLevel {
    up: ConvBlockIds,
    post1: ConvBlockIds,
    post2: ConvBlockIds,
}

enum FusionIds {
    Inter(InterModuleIds),
    Concat(ConcatFusionIds),
}

struct GeoLevel {
    /// Width adapter applied after unpooling; absent at the top level.
    transition: Option<LinearBlockIds>,
    fusion: Option<FusionIds>,
    intra: IntraModuleIds,
}

struct GeoEncLevel {
    intra: IntraModuleIds,
    transition: LinearBlockIds,
}

struct GeoDecLevel {
    transition: LinearBlockIds,
    merge: LinearBlockIds,
    intra: IntraModuleIds,
}

struct GeoUnet {
    lift: LinearBlockIds,
    enc: Vec<GeoEncLevel>,
    bottom: IntraModuleIds,
    dec: Vec<GeoDecLevel>,
}

struct Wiring {
    euc: Option<(Vec<EncLevel>, Vec<DecLevel>)>,
    geo: Vec<Option<GeoLevel>>,
    geo_unet: Option<GeoUnet>,
    classifier: LinearIds,
}

/// A built network: configuration, parameters, and the wiring binding them.
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ParameterStore<S>,
    wiring: Wiring,
}

/// Deterministic construction with He-uniform initialization from the seed.
pub fn build_model<S: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<S>> {
    config.validate()?;
    let mut ps = ParameterStore::new();
    let mut b = ParamBuilder {
        ps: &mut ps,
        rng: rng_for(seed, "init", 0),
    };
    let levels = config.levels;
    let top = levels - 1;
    let w = &config.widths;
    let in_channels = 3usize;

    let euc = if config.branch != BranchMode::GeoOnly {
        let mut enc = Vec::with_capacity(levels);
        for l in 0..levels {
            let c_in = if l == 0 { in_channels } else { w[l] };
            let norm1 = config.euclid_norm_ids(&mut b, &format!("euc.enc{l}.norm1"), w[l])?;
            let conv1 = b.conv(
                &format!("euc.enc{l}.conv1"),
                ConvMode::Submanifold,
                3,
                c_in,
                w[l],
                norm1,
                true,
            )?;
            let norm2 = config.euclid_norm_ids(&mut b, &format!("euc.enc{l}.norm2"), w[l])?;
            let conv2 = b.conv(
                &format!("euc.enc{l}.conv2"),
                ConvMode::Submanifold,
                3,
                w[l],
                w[l],
                norm2,
                true,
            )?;
            let down = if l < top {
                let norm = config.euclid_norm_ids(&mut b, &format!("euc.down{l}.norm"), w[l + 1])?;
                Some(b.conv(
                    &format!("euc.down{l}.conv"),
                    ConvMode::Strided2,
                    2,
                    w[l],
                    w[l + 1],
                    norm,
                    true,
                )?)
            } else {
                None
            };
            enc.push(EncLevel { conv1, conv2, down });
        }
        let mut dec = Vec::with_capacity(top);
        for l in 0..top {
            let norm_up = config.euclid_norm_ids(&mut b, &format!("euc.dec{l}.norm_up"), w[l])?;
            let up = b.conv(
                &format!("euc.dec{l}.up"),
                ConvMode::Transposed2,
                2,
                w[l + 1],
                w[l],
                norm_up,
                true,
            )?;
            let norm1 = config.euclid_norm_ids(&mut b, &format!("euc.dec{l}.norm1"), w[l])?;
            let post1 = b.conv(
                &format!("euc.dec{l}.conv1"),
                ConvMode::Submanifold,
                3,
                2 * w[l],
                w[l],
                norm1,
                true,
            )?;
            let norm2 = config.euclid_norm_ids(&mut b, &format!("euc.dec{l}.norm2"), w[l])?;
            let post2 = b.conv(
                &format!("euc.dec{l}.conv2"),
                ConvMode::Submanifold,
                3,
                w[l],
                w[l],
                norm2,
                true,
            )?;
            dec.push(DecLevel { up, post1, post2 });
        }
        Some((enc, dec))
    } else {
        None
    };

    let depth = config.effective_depth();
    let mut geo: Vec<Option<GeoLevel>> = (0..levels).map(|_| None).collect();
    if config.branch == BranchMode::Full && depth > 0 {
        let t = depth - 1;
        for l in (0..=t).rev() {
            let name = format!("geo.l{l}");
            let (transition, fusion) = if l < t {
                let transition = LinearBlockIds {
                    lin: b.linear(&format!("{name}.transition"), w[l + 1], w[l])?,
                    norm: Some(b.norm(&format!("{name}.transition.norm"), w[l])?),
                    relu: true,
                };
                let fusion = if config.use_inter {
                    FusionIds::Inter(InterModuleIds {
                        attn: b.attention(
                            &format!("{name}.inter"),
                            w[l],
                            w[l],
                            config.key_dim_at(w[l]),
                        )?,
                        mode: config.fusion,
                        norm: b.norm(&format!("{name}.inter.norm"), w[l])?,
                        merge: b.linear(&format!("{name}.merge"), 3 * w[l], w[l])?,
                    })
                } else {
                    FusionIds::Concat(ConcatFusionIds {
                        merge: LinearBlockIds {
                            lin: b.linear(&format!("{name}.merge"), 2 * w[l], w[l])?,
                            norm: Some(b.norm(&format!("{name}.merge.norm"), w[l])?),
                            relu: true,
                        },
                    })
                };
                (Some(transition), Some(fusion))
            } else {
                (None, None)
            };
            let intra = b.intra_module(
                &format!("{name}.intra"),
                config.variant,
                w[l],
                config.key_dim_at(w[l]),
            )?;
            geo[l] = Some(GeoLevel {
                transition,
                fusion,
                intra,
            });
        }
    }

    let geo_unet = if config.branch == BranchMode::GeoOnly {
        let lift = LinearBlockIds {
            lin: b.linear("geo.lift", in_channels, w[0])?,
            norm: Some(b.norm("geo.lift.norm", w[0])?),
            relu: true,
        };
        let mut enc = Vec::with_capacity(top);
        for l in 0..top {
            enc.push(GeoEncLevel {
                intra: b.intra_module(
                    &format!("geo.enc{l}.intra"),
                    config.variant,
                    w[l],
                    config.key_dim_at(w[l]),
                )?,
                transition: LinearBlockIds {
                    lin: b.linear(&format!("geo.enc{l}.transition"), w[l], w[l + 1])?,
                    norm: Some(b.norm(&format!("geo.enc{l}.transition.norm"), w[l + 1])?),
                    relu: true,
                },
            });
        }
        let bottom = b.intra_module(
            "geo.bottom.intra",
            config.variant,
            w[top],
            config.key_dim_at(w[top]),
        )?;
        let mut dec = Vec::with_capacity(top);
        for l in 0..top {
            dec.push(GeoDecLevel {
                transition: LinearBlockIds {
                    lin: b.linear(&format!("geo.dec{l}.transition"), w[l + 1], w[l])?,
                    norm: Some(b.norm(&format!("geo.dec{l}.transition.norm"), w[l])?),
                    relu: true,
                },
                merge: LinearBlockIds {
                    lin: b.linear(&format!("geo.dec{l}.merge"), 2 * w[l], w[l])?,
                    norm: Some(b.norm(&format!("geo.dec{l}.merge.norm"), w[l])?),
                    relu: true,
                },
                intra: b.intra_module(
                    &format!("geo.dec{l}.intra"),
                    config.variant,
                    w[l],
                    config.key_dim_at(w[l]),
                )?,
            });
        }
        Some(GeoUnet {
            lift,
            enc,
            bottom,
            dec,
        })
    } else {
        None
    };

    let classifier = b.linear("classifier", w[0], config.num_classes)?;

    Ok(Model {
        config: config.clone(),
        params: ps,
        wiring: Wiring {
            euc,
            geo,
            geo_unet,
            classifier,
        },
    })
}

/// Per-level voxelization of a mesh hierarchy level.
pub struct LevelVoxels<S> {
    pub grid: SparseVoxelGrid<S>,
    pub vertex_to_voxel: Vec<u32>,
}

/// A scene prepared for the network: the hierarchy plus stride-matched
/// voxel levels (`level l` voxelized at `resolution / 2^l`).
pub struct SceneInput<S> {
    pub hierarchy: MeshHierarchy,
    pub levels: Vec<LevelVoxels<S>>,
}

pub fn build_scene_input<S: Scalar>(
    hierarchy: MeshHierarchy,
    resolution: f64,
) -> Result<SceneInput<S>> {
    let mut levels = Vec::with_capacity(hierarchy.depth());
    for l in 0..hierarchy.depth() {
        let r = resolution / (1u64 << l) as f64;
        let (grid, vertex_to_voxel) = voxelize(hierarchy.level(l), r)?;
        levels.push(LevelVoxels {
            grid,
            vertex_to_voxel,
        });
    }
    Ok(SceneInput { hierarchy, levels })
}

/// Edge usage during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum EdgeMode {
    /// Full one-ring adjacency; forward is deterministic.
    Full,
    /// Random edge sampling on every mesh level (training).
    Sampled { keep_probability: f64, seed: u64 },
}

struct EncSaved<S> {
    conv1: ConvBlockSaved<S>,
    conv2: ConvBlockSaved<S>,
    down: Option<ConvBlockSaved<S>>,
}

struct DecSaved<S> {
    up: ConvBlockSaved<S>,
    post1: ConvBlockSaved<S>,
    post2: ConvBlockSaved<S>,
}

enum FusionSaved<S> {
    Inter(InterModuleSaved<S>),
    Concat(ConcatFusionSaved<S>),
}

struct GeoLevelSaved<S> {
    transition: Option<LinearBlockSaved<S>>,
    fusion: Option<FusionSaved<S>>,
    intra: IntraModuleSaved<S>,
}

struct GeoUnetSaved<S> {
    lift: LinearBlockSaved<S>,
    enc: Vec<(IntraModuleSaved<S>, LinearBlockSaved<S>)>,
    bottom: IntraModuleSaved<S>,
    dec: Vec<(LinearBlockSaved<S>, LinearBlockSaved<S>, IntraModuleSaved<S>)>,
}

/// Retained activations of one forward pass; required by [`Model::backward`].
pub struct Tape<S> {
    nbrs: Vec<Neighborhoods>,
    sets: Vec<VoxelSet>,
    enc: Vec<EncSaved<S>>,
    dec: Vec<Option<DecSaved<S>>>,
    geo: Vec<Option<GeoLevelSaved<S>>>,
    geo_unet: Option<GeoUnetSaved<S>>,
    classifier_input: Array2<S>,
}

impl<S: Scalar> Model<S> {
    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_scene(&self, scene: &SceneInput<S>) -> Result<()> {
        if scene.hierarchy.depth() != self.config.levels {
            return Err(Error::validation(format!(
                "scene has {} mesh levels, model expects {}",
                scene.hierarchy.depth(),
                self.config.levels
            )));
        }
        if scene.levels.len() != self.config.levels {
            return Err(Error::validation(format!(
                "scene has {} voxel levels, model expects {}",
                scene.levels.len(),
                self.config.levels
            )));
        }
        for (l, lv) in scene.levels.iter().enumerate() {
            if lv.grid.features.nrows() != lv.grid.set.len() {
                return Err(Error::validation(format!(
                    "level {l}: voxel features misaligned with the active set"
                )));
            }
        }
        Ok(())
    }

    fn neighborhoods(&self, scene: &SceneInput<S>, edges: EdgeMode) -> Result<Vec<Neighborhoods>> {
        (0..self.config.levels)
            .map(|l| match edges {
                EdgeMode::Full => Ok(scene
                    .hierarchy
                    .level(l)
                    .neighborhoods(self.config.self_in_ring)),
                EdgeMode::Sampled {
                    keep_probability,
                    seed,
                } => Ok(scene
                    .hierarchy
                    .level(l)
                    .sample_edges(keep_probability, split_seed(seed, "edges", l as u64))?
                    .neighborhoods(self.config.self_in_ring)),
            })
            .collect()
    }

    /// Run the network; returns per-vertex logits on the base mesh level and
    /// the activation tape for [`Model::backward`].
    pub fn forward(
        &self,
        scene: &SceneInput<S>,
        edges: EdgeMode,
    ) -> Result<(FeatureMatrix<S>, Tape<S>)> {
        self.check_scene(scene)?;
        let nbrs = self.neighborhoods(scene, edges)?;
        let levels = self.config.levels;
        let top = levels - 1;
        let sets: Vec<VoxelSet> = scene.levels.iter().map(|lv| lv.grid.set.clone()).collect();
        let ps = &self.params;

        if self.config.branch == BranchMode::GeoOnly {
            return self.forward_geo_unet(scene, nbrs, sets);
        }

        let (enc_w, dec_w) = self.wiring.euc.as_ref().expect("euclidean branch built");

        // Encoder.
        let mut enc_saved = Vec::with_capacity(levels);
        let mut enc_out: Vec<Array2<S>> = Vec::with_capacity(levels);
        let mut x = scene.levels[0].grid.features.clone();
        for l in 0..levels {
            if x.ncols() != if l == 0 { 3 } else { self.config.widths[l] } {
                return Err(Error::validation(format!(
                    "level {l}: encoder input width {} unexpected",
                    x.ncols()
                )));
            }
            let (_, y1, s1) = enc_w[l].conv1.forward(ps, &sets[l], x, None)?;
            let (_, y2, s2) = enc_w[l].conv2.forward(ps, &sets[l], y1, None)?;
            let down = if l < top {
                let (_, xd, sd) =
                    enc_w[l]
                        .down
                        .as_ref()
                        .expect("non-top level has a downsampler")
                        .forward(ps, &sets[l], y2.clone(), Some(&sets[l + 1]))?;
                x = xd;
                Some(sd)
            } else {
                x = Array2::zeros((0, 0));
                None
            };
            enc_out.push(y2);
            enc_saved.push(EncSaved {
                conv1: s1,
                conv2: s2,
                down,
            });
        }

        // Decoder with skip concatenation.
        let mut dec_out: Vec<Option<Array2<S>>> = (0..levels).map(|_| None).collect();
        let mut dec_saved: Vec<Option<DecSaved<S>>> = (0..levels).map(|_| None).collect();
        dec_out[top] = Some(enc_out[top].clone());
        for l in (0..top).rev() {
            let upper = dec_out[l + 1].as_ref().expect("decoded in order").clone();
            let (_, up_out, s_up) =
                dec_w[l]
                    .up
                    .forward(ps, &sets[l + 1], upper, Some(&sets[l]))?;
            let cat = concatenate(Axis(1), &[up_out.view(), enc_out[l].view()])
                .expect("row counts share the active set");
            let (_, p1, s1) = dec_w[l].post1.forward(ps, &sets[l], cat, None)?;
            let (_, p2, s2) = dec_w[l].post2.forward(ps, &sets[l], p1, None)?;
            dec_out[l] = Some(p2);
            dec_saved[l] = Some(DecSaved {
                up: s_up,
                post1: s1,
                post2: s2,
            });
        }

        // Geodesic stack, top enabled level downwards.
        let depth = self.config.effective_depth();
        let mut geo_saved: Vec<Option<GeoLevelSaved<S>>> = (0..levels).map(|_| None).collect();
        let classifier_input;
        if depth == 0 {
            let proj0 = project_to_vertices(
                &sets[0],
                &dec_out[0].as_ref().expect("decoded").view(),
                scene.hierarchy.level(0).positions(),
            );
            classifier_input = proj0;
        } else {
            let t = depth - 1;
            let mut g: Array2<S> = Array2::zeros((0, 0));
            for l in (0..=t).rev() {
                let proj = project_to_vertices(
                    &sets[l],
                    &dec_out[l].as_ref().expect("decoded").view(),
                    scene.hierarchy.level(l).positions(),
                );
                debug_assert_eq!(proj.nrows(), scene.hierarchy.level(l).vertex_count());
                let geo_l = self.wiring.geo[l].as_ref().expect("geo level built");
                if l == t {
                    let (out, intra) = geo_l.intra.forward(ps, &nbrs[l], proj)?;
                    g = out;
                    geo_saved[l] = Some(GeoLevelSaved {
                        transition: None,
                        fusion: None,
                        intra,
                    });
                } else {
                    let unpooled =
                        unpool(&FeatureMatrix::new(g), scene.hierarchy.trace(l + 1))?.values;
                    let (geo_in, s_tr) = geo_l
                        .transition
                        .as_ref()
                        .expect("lower levels have transitions")
                        .forward(ps, unpooled)?;
                    let (fused, s_fu) = match geo_l.fusion.as_ref().expect("lower levels fuse") {
                        FusionIds::Inter(m) => {
                            let (out, s) = m.forward(ps, &nbrs[l], proj, geo_in)?;
                            (out, FusionSaved::Inter(s))
                        }
                        FusionIds::Concat(m) => {
                            let (out, s) = m.forward(ps, proj, geo_in)?;
                            (out, FusionSaved::Concat(s))
                        }
                    };
                    let (out, intra) = geo_l.intra.forward(ps, &nbrs[l], fused)?;
                    g = out;
                    geo_saved[l] = Some(GeoLevelSaved {
                        transition: Some(s_tr),
                        fusion: Some(s_fu),
                        intra,
                    });
                }
            }
            classifier_input = g;
        }

        let logits = self.wiring.classifier.forward(ps, &classifier_input)?;
        let tape = Tape {
            nbrs,
            sets,
            enc: enc_saved,
            dec: dec_saved,
            geo: geo_saved,
            geo_unet: None,
            classifier_input,
        };
        Ok((FeatureMatrix::new(logits), tape))
    }

    fn forward_geo_unet(
        &self,
        scene: &SceneInput<S>,
        nbrs: Vec<Neighborhoods>,
        sets: Vec<VoxelSet>,
    ) -> Result<(FeatureMatrix<S>, Tape<S>)> {
        let ps = &self.params;
        let unet = self.wiring.geo_unet.as_ref().expect("geo branch built");
        let top = self.config.levels - 1;

        // Input colors, voxelized once and projected back to the base mesh.
        let grid0 = &scene.levels[0].grid;
        let proj0 = project_to_vertices(
            &sets[0],
            &grid0.features.view(),
            scene.hierarchy.level(0).positions(),
        );
        let (mut g, lift_saved) = unet.lift.forward(ps, proj0)?;

        let mut enc_saved = Vec::with_capacity(top);
        let mut skips: Vec<Array2<S>> = Vec::with_capacity(top);
        for l in 0..top {
            let (skip, s_intra) = unet.enc[l].intra.forward(ps, &nbrs[l], g)?;
            let pooled = pool_mean(&skip.view(), scene.hierarchy.trace(l + 1))?;
            let (next, s_tr) = unet.enc[l].transition.forward(ps, pooled)?;
            skips.push(skip);
            enc_saved.push((s_intra, s_tr));
            g = next;
        }
        let (mut g, bottom_saved) = unet.bottom.forward(ps, &nbrs[top], g)?;

        let mut dec_saved: Vec<Option<(LinearBlockSaved<S>, LinearBlockSaved<S>, IntraModuleSaved<S>)>> =
            (0..top).map(|_| None).collect();
        for l in (0..top).rev() {
            let unpooled = unpool(&FeatureMatrix::new(g), scene.hierarchy.trace(l + 1))?.values;
            let (y, s_tr) = unet.dec[l].transition.forward(ps, unpooled)?;
            let cat = concatenate(Axis(1), &[y.view(), skips[l].view()]).expect("widths agree");
            let (merged, s_mg) = unet.dec[l].merge.forward(ps, cat)?;
            let (out, s_intra) = unet.dec[l].intra.forward(ps, &nbrs[l], merged)?;
            dec_saved[l] = Some((s_tr, s_mg, s_intra));
            g = out;
        }

        let logits = self.wiring.classifier.forward(ps, &g)?;
        let tape = Tape {
            nbrs,
            sets,
            enc: Vec::new(),
            dec: Vec::new(),
            geo: (0..self.config.levels).map(|_| None).collect(),
            geo_unet: Some(GeoUnetSaved {
                lift: lift_saved,
                enc: enc_saved,
                bottom: bottom_saved,
                dec: dec_saved.into_iter().map(|d| d.expect("decoded")).collect(),
            }),
            classifier_input: g,
        };
        Ok((FeatureMatrix::new(logits), tape))
    }

    /// Accumulate parameter gradients for a loss gradient over the logits.
    /// Requires the tape retained by [`Model::forward`] on the same scene.
    pub fn backward(
        &mut self,
        scene: &SceneInput<S>,
        tape: &Tape<S>,
        grad_logits: &Array2<S>,
    ) -> Result<()> {
        if grad_logits.dim() != (tape.classifier_input.nrows(), self.config.num_classes) {
            return Err(Error::usage(format!(
                "loss gradient shape {:?} does not match the retained forward",
                grad_logits.dim()
            )));
        }
        let levels = self.config.levels;
        let top = levels - 1;
        // Split wiring and params: blocks accumulate into params while the
        // wiring stays shared.
        let wiring = &self.wiring;
        let ps = &mut self.params;

        let g = wiring
            .classifier
            .backward(ps, &tape.classifier_input, grad_logits);

        if self.config.branch == BranchMode::GeoOnly {
            let unet = wiring.geo_unet.as_ref().expect("geo branch built");
            let saved = tape.geo_unet.as_ref().ok_or_else(|| {
                Error::usage("backward called without a retained geodesic forward")
            })?;
            // Decoder backward, finest level upwards, collecting the skip
            // gradients consumed by each level's concatenation.
            let mut skip_grads: Vec<Option<Array2<S>>> = (0..top).map(|_| None).collect();
            let mut grad = g;
            for l in 0..top {
                let (s_tr, s_mg, s_intra) = &saved.dec[l];
                let g_merged = unet.dec[l].intra.backward(ps, &tape.nbrs[l], s_intra, &grad);
                let g_cat = unet.dec[l].merge.backward(ps, s_mg, &g_merged);
                let w = self.config.widths[l];
                let g_y = g_cat.slice(s![.., 0..w]).to_owned();
                skip_grads[l] = Some(g_cat.slice(s![.., w..]).to_owned());
                let g_unpooled = unet.dec[l].transition.backward(ps, s_tr, &g_y);
                grad = unpool_backward(&g_unpooled.view(), scene.hierarchy.trace(l + 1));
            }
            // Bottom aggregation.
            grad = unet
                .bottom
                .backward(ps, &tape.nbrs[top], &saved.bottom, &grad);
            // Encoder backward, coarsest encoder stage downwards.
            for l in (0..top).rev() {
                let (s_intra, s_tr) = &saved.enc[l];
                let g_pooled = unet.enc[l].transition.backward(ps, s_tr, &grad);
                let mut g_skip =
                    pool_mean_backward(&g_pooled.view(), scene.hierarchy.trace(l + 1));
                if let Some(gs) = skip_grads[l].take() {
                    g_skip += &gs;
                }
                grad = unet.enc[l].intra.backward(ps, &tape.nbrs[l], s_intra, &g_skip);
            }
            // Lift backward; the projected input colors are not learnable.
            let _ = unet.lift.backward(ps, &saved.lift, &grad);
            return Ok(());
        }

        // Full / EucOnly: geodesic stack backward first (finest to top
        // enabled level), collecting projection gradients per level.
        let depth = self.config.effective_depth();
        let mut g_proj: Vec<Option<Array2<S>>> = (0..levels).map(|_| None).collect();
        if depth == 0 {
            g_proj[0] = Some(g);
        } else {
            let t = depth - 1;
            let mut grad = g;
            for l in 0..=t {
                let geo_l = wiring.geo[l].as_ref().expect("geo level built");
                let saved = tape.geo[l].as_ref().ok_or_else(|| {
                    Error::usage("backward called without a retained forward")
                })?;
                if l < t {
                    let g_fused = geo_l.intra.backward(ps, &tape.nbrs[l], &saved.intra, &grad);
                    let (gp, g_geo_in) = match (
                        geo_l.fusion.as_ref().expect("fusion built"),
                        saved.fusion.as_ref().expect("fusion saved"),
                    ) {
                        (FusionIds::Inter(m), FusionSaved::Inter(s)) => {
                            m.backward(ps, &tape.nbrs[l], s, &g_fused)
                        }
                        (FusionIds::Concat(m), FusionSaved::Concat(s)) => {
                            m.backward(ps, s, &g_fused)
                        }
                        _ => unreachable!("fusion wiring and saved variants match"),
                    };
                    g_proj[l] = Some(gp);
                    let g_unpooled = geo_l.transition.as_ref().expect("transition built").backward(
                        ps,
                        saved.transition.as_ref().expect("transition saved"),
                        &g_geo_in,
                    );
                    grad = unpool_backward(&g_unpooled.view(), scene.hierarchy.trace(l + 1));
                } else {
                    let gp = geo_l.intra.backward(ps, &tape.nbrs[l], &saved.intra, &grad);
                    g_proj[l] = Some(gp);
                    grad = Array2::zeros((0, 0));
                }
            }
        }

        // Projection gradients scatter back onto the decoder feature maps.
        let mut g_dec: Vec<Option<Array2<S>>> = (0..levels).map(|_| None).collect();
        for l in 0..levels {
            if let Some(gp) = &g_proj[l] {
                g_dec[l] = Some(project_to_vertices_backward(
                    &tape.sets[l],
                    scene.hierarchy.level(l).positions(),
                    self.config.widths[l],
                    &gp.view(),
                ));
            }
        }

        let (enc_w, dec_w) = wiring.euc.as_ref().expect("euclidean branch built");
        // Decoder backward, finest level upwards.
        let mut g_enc: Vec<Option<Array2<S>>> = (0..levels).map(|_| None).collect();
        for l in 0..top {
            let Some(gl) = g_dec[l].take() else {
                continue;
            };
            let ds = tape.dec[l].as_ref().expect("decoder tape present");
            let g_p1 = dec_w[l]
                .post2
                .backward(ps, &tape.sets[l], &tape.sets[l], &ds.post2, &gl);
            let g_cat = dec_w[l]
                .post1
                .backward(ps, &tape.sets[l], &tape.sets[l], &ds.post1, &g_p1);
            let w = self.config.widths[l];
            let g_up_out = g_cat.slice(s![.., 0..w]).to_owned();
            accumulate(&mut g_enc[l], g_cat.slice(s![.., w..]).to_owned());
            let g_up_in =
                dec_w[l]
                    .up
                    .backward(ps, &tape.sets[l + 1], &tape.sets[l], &ds.up, &g_up_out);
            accumulate(&mut g_dec[l + 1], g_up_in);
        }
        if let Some(g_bottom) = g_dec[top].take() {
            accumulate(&mut g_enc[top], g_bottom);
        }

        // Encoder backward, top level downwards.
        for l in (0..levels).rev() {
            let Some(g_out) = g_enc[l].take() else {
                continue;
            };
            let es = &tape.enc[l];
            let g_mid = enc_w[l]
                .conv2
                .backward(ps, &tape.sets[l], &tape.sets[l], &es.conv2, &g_out);
            let g_in = enc_w[l]
                .conv1
                .backward(ps, &tape.sets[l], &tape.sets[l], &es.conv1, &g_mid);
            if l > 0 {
                let prev = &tape.enc[l - 1];
                let g_prev = enc_w[l - 1].down.as_ref().expect("downsampler").backward(
                    ps,
                    &tape.sets[l - 1],
                    &tape.sets[l],
                    prev.down.as_ref().expect("down saved"),
                    &g_in,
                );
                accumulate(&mut g_enc[l - 1], g_prev);
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Array2<S>>, grad: Array2<S>) {
    match slot {
        Some(existing) => *existing += &grad,
        None => *slot = Some(grad),
    }
}
