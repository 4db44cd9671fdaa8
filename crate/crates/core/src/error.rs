use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::geometry::GeometryError;
use crate::scene::SceneError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("scene has {n} points, at least {required} are needed")]
    TooFewPoints { n: usize, required: usize },
    #[error("cloud has {got} feature channels, model expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("decoder level has {decoder} points but cached level has {cached}")]
    LevelMismatch { decoder: usize, cached: usize },
    #[error("{0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
