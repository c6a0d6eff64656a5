//! Data selection by optimal-transport gradients.
//!
//! A small target dataset and a large candidate pool are embedded in the same
//! space. One entropic OT solve between them yields dual potentials on every
//! candidate; calibrated, those potentials are the derivative of the OT
//! distance with respect to each candidate's probability mass. Selecting the
//! candidates with the most negative derivative moves the pool toward the
//! target fastest.
//!
//! Modules:
//! - [`ot`]: Sinkhorn solver, cost functions, exact oracles.
//! - [`gradient`]: calibration, finite-difference check, selection.
//! - [`pipeline`]: domain relevance test, resampling, end-to-end run.
//! - [`baselines`]: DSIR, nearest neighbors, random, all-domains.
//! - [`data`]: corpus and embedding file formats, preprocessing.
//! - [`verify`]: self-contained property suites with seeded fixtures.

pub mod baselines;
pub mod data;
mod error;
pub mod gradient;
pub mod ot;
pub mod pipeline;
pub mod verify;

pub use error::{Error, Result};
pub use gradient::{
    calibrate_gradients, select_got_d, CalibratedGradients, SelectionMethod, SelectionMode,
    SelectionResult,
};
pub use ot::{sinkhorn, CostSpec, DiscreteDistribution, Metric, OtSolution, SinkhornConfig};
