//! Encoders for XRD patterns, composition features and structure graphs,
//! concatenation fusion, task heads, the training loops and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use config::{
    CnnConfig, CnnPool, EncoderConfig, MlpConfig, Modality, MpnnConfig, Task, TrainConfig,
};
pub use data::{
    featurize, featurize_record, BatchInputs, FeaturizeConfig, Sample, Standardization, Targets,
};
pub use error::ModelError;
pub use model::{Architecture, Model, ModelSpec, Predictions};
pub use train::{
    retrieval_top_k, train_align, train_align_fuse, train_downstream, EncoderInit, History,
    TrainOutcome,
};

pub type Result<T> = std::result::Result<T, ModelError>;
