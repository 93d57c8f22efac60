//! The detector: a U-Net style encoder–decoder with residual convolution
//! stages, skip links between mirrored stages and optional self-attention.

mod arch;
mod attention;
mod hook;
mod model;

pub use arch::{ArchConfig, InjectionSlot, StageConfig};
pub use attention::{self_attention, AttentionOutput, AttentionVars};
pub use hook::{FeatureMaps, RandomConvFeatures, ZeroFeatures};
pub use model::{build_model, ForwardPass, Model};
