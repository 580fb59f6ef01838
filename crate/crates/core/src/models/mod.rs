//! Declarative networks with named feature taps, plus checkpoint persistence.
//!
//! A pool model and its customized counterpart are always built from the same
//! [`ModelConfig`], so their tapped feature maps line up one to one.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{FeatureShape, InputTransform, LayerPlan, LayerSpec, ModelConfig};
pub use network::{build_model, DetachedForward, ForwardResult, Model};
