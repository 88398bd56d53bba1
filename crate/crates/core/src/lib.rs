//! Nuisance-censored representation learning: penalty engines, a regularized
//! ERM trainer, and the AutoTransfer search and selection pipeline.

pub mod autotransfer;
pub mod censoring;
pub mod data;
pub mod divergence;
pub mod error;
pub mod neural;
pub mod numerics;
pub mod score;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{LengthScalePolicy, Mat};
