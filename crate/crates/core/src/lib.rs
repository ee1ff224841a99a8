//! Three-branch U-net retinal vessel segmentation.

mod error;
pub mod data;
pub mod eval;
pub mod network;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
