//! Artistic radiance fields on dense voxel grids.
//!
//! The crate reconstructs a diffuse voxel radiance field from posed images,
//! then stylizes it with a nearest-neighbor feature-matching loss computed
//! on VGG-16 features of full-resolution renders. Gradients of such
//! full-image losses are obtained patch by patch with deferred
//! back-propagation, and colors are kept consistent across views with a
//! shared affine color transfer.

pub mod autodiff;
pub mod cli;
pub mod color;
pub mod dataset;
pub mod deferred;
pub mod error;
pub mod field;
mod gemm;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod tensor;
pub mod vgg;

pub use error::{Error, Result};
pub use tensor::Tensor;
