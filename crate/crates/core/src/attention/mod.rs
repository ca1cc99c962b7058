//! Attention from target features to reference features.

pub mod flops;
pub mod kernel;
pub mod layer;
pub mod module;

pub use flops::{attention_flop_count, FlopCount};
pub use layer::{resolve_span, AttentionLayer, Axis, LayerKind};
pub use module::{AttentionModule, FusionBlock};
