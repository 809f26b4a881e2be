//! Core library for a query-based outpainting transformer: a small dense
//! tensor engine with reverse-mode autodiff, the patch-grid geometry, the
//! hybrid encoder/decoder generator, and the GAN training losses.

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod gradcheck;
pub mod init;
pub mod losses;
pub mod psm;
pub mod qem;
pub mod scalar;
pub mod serialize;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{GatherMap, GradMap, Tape, Tensor};
