// NaN-rejecting `!(a <= b)` checks and per-channel index loops are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod frame;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod plugin;
pub mod raster;
pub mod scene;
pub mod trajectory;
pub mod upsample;

pub use error::{Error, Result};
