//! Dual-branch (noise + RGB) image manipulation localization.

pub mod error;
pub mod attention;
pub mod backbone;
pub mod data;
pub mod engine;
pub mod filters;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
