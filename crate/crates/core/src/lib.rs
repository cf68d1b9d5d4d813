//! Penalized model selection over composite-function model collections.

pub mod approx;
pub mod bench;
pub mod composite;
pub mod error;
pub mod families;
pub mod function;
pub mod gaussians;
pub mod model;
pub mod nets;
pub mod selector;
pub mod verify;

pub use error::{Error, Result};
