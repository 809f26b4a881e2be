//! Training harness for the query-based outpainting transformer: run
//! configuration, data pipeline, optimizer, training loop, checkpointing,
//! inference, and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod infer;
pub mod metrics;
pub mod optim;
pub mod synth;
pub mod train;

/// Discriminator width at the first conv; channels double per strided layer.
pub const DISC_BASE_CHANNELS: usize = 32;
/// Strided 4x4 convs per scale before the 1-channel head.
pub const DISC_STRIDED_LAYERS: usize = 3;
