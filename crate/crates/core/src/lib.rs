//! Convex integration by corrugations: builds C^{1,alpha} isometric
//! immersions in codimension one through stages of oscillatory steps.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod corrugation;
pub mod decompose;
pub mod driver;
pub mod error;
pub mod fields;
pub mod ibp;
pub mod stage;
pub mod step;

pub use error::{Error, Result};
