//! Observability-aware planning on localizability maps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvh;
pub mod error;
pub mod geometry;
pub mod lbfgs;
pub mod metric;
pub mod observation;
pub mod registration;
pub mod scan;
pub mod scene;
pub mod sdf;
pub mod search;
pub mod seed;
pub mod solm;
pub mod traj;

pub use error::{Error, Result};
