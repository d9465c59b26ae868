//! Data-free knowledge distillation guided by class-specific PCA subspaces of
//! polar-resampled digits.
//!
//! The pipeline trains a LeNet-5 teacher, fits a PCA basis per class over
//! polar images of a handful of real samples, trains one conditional
//! generator per class against the frozen teacher, keeps only generated
//! images the teacher assigns to the intended class, and trains a student on
//! that synthetic set alone.

pub mod autograd;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod mnist;
pub mod nets;
pub mod pgm;
pub mod pipeline;
pub mod pca;
pub mod polar;
mod weights;

pub use error::{Error, Result};
