//! Numerical laboratory for step skew-products `F(ξ, x) = (σξ, f_{ξ₀}(x))`
//! over the full shift on `k` symbols with circle fibers.
//!
//! The crate is organised bottom-up:
//!
//! * [`circle`]: points and arcs of `R/Z`.
//! * [`systems`]: fiber maps, the cocycle, `‖F‖` and `Mod(δ)`.
//! * [`symbolic`]: words, transition matrices, SFT entropy.
//! * [`engine`]: arc arithmetic in double or extended precision.
//! * [`axioms`]: covering and accessibility checks, blenders.
//! * [`analysis`]: exponents, Birkhoff averages, a weak* metric, twin orbits.
//! * [`skeleton`]: enumerative skeletons.
//! * [`horseshoe`]: multi-variable-time horseshoes and their bounds.

// NaN must fail the range checks, so negated comparisons are intended;
// matrix loops index several arrays at once
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod axioms;
pub mod circle;
pub mod engine;
pub mod error;
pub mod horseshoe;
pub mod skeleton;
pub mod symbolic;
pub mod systems;

pub use circle::{Angle, Arc};
pub use error::{Error, Result};
pub use symbolic::{TransitionMatrix, Word};
pub use systems::{CocycleResult, FiberMap, SkewSystem};
