//! Multi-scale mixed attention for point clouds.
//!
//! An encoder of adjacency-attention stages reduces point density while
//! caching each level; a decoder recovers density and contrasts its
//! features with the cached ones through disparity attention. The
//! [`harness`] module generates synthetic scenes with jittered center
//! labels and runs the training, sweep and ablation experiments.

pub mod attention;
pub mod checkpoint;
pub mod disparity;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod layers;
pub mod network;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use network::{Backbone, HeadKind, HeadOutput, InitScheme, Model, ModelConfig};
pub use scene::{ObjectRecord, PointCloud};
pub use tensor::{Tape, Tensor, Var};
