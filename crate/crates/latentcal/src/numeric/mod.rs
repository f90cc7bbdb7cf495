//! Minimal deterministic dense linear algebra and random-number facilities.
//!
//! All values are `f64`, all reductions run left to right, and randomness
//! comes from an explicit seeded [`Rng`]. These three choices make every
//! downstream artifact (activations, probe caches, reports) reproducible
//! bit for bit on a given platform.

mod matrix;
mod rng;

pub use matrix::{mean_rows, Matrix2D, Vec1D, NORM_EPSILON};
pub use rng::{substream_seed, Rng};
