//! Entropic optimal transport between weighted point clouds, plus exact
//! small-instance solvers used as oracles.

mod cost;
mod distribution;
mod exact;
pub(crate) mod fastexp;
mod kernel;
mod sinkhorn;

pub use cost::{cost, CostSpec, Metric, Normalization};
pub use distribution::{build_distribution, DiscreteDistribution, WEIGHT_SUM_TOLERANCE};
pub use exact::{exact_assignment_small, exact_ot_1d, exact_ot_small, MAX_EXACT_POINTS};
pub use sinkhorn::{
    sinkhorn, transport_plan, EpsilonScale, OtSolution, Precision, SinkhornConfig,
    SolverDiagnostics, MAX_MATERIALIZED_ENTRIES,
};
