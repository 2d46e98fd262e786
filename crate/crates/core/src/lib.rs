// Index loops mirror the recursions; `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::len_without_is_empty)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod field;
pub mod fingerprint;
pub mod girsanov;
pub mod grid;
pub mod hermite;
pub mod model;
pub mod noise;
pub mod play;
pub mod policy;
pub mod reference;
pub mod riccati;
pub mod table;

pub use error::{Error, Result};
