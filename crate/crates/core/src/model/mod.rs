//! Network assembly: a sparse-voxel U-Net over the Euclidean domain coupled
//! to per-level attention modules over the mesh hierarchy, with trace-map
//! unpooling and a per-vertex classifier.

mod blocks;
mod net;

pub use blocks::OperatorVariant;
pub use net::{
    build_model, build_scene_input, BranchMode, EdgeMode, LevelVoxels, Model, ModelConfig,
    NormKind, SceneInput, Tape,
};
