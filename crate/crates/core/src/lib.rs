//! Distributed nonconvex sparse learning over time-varying directed networks.
//!
//! Agents hold private smooth losses and cooperate through push-sum mixing
//! with gradient tracking. Each round solves a strongly convex local model
//! built from a difference-of-convex split of the sparsity penalty. The crate
//! also provides the subgradient-push baseline, a round-based simulator,
//! convergence metrics and an experiment harness.

pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod penalty;
pub mod problem;
pub mod solver;

pub use engine::{
    dsparsa_round, init_states, run, subgradient_push_round, AgentState, Algorithm, RunConfig,
    RunTrace, StepSizeSchedule,
};
pub use error::{Error, Result};
pub use graph::{build_weights, generate_schedule, is_b_strongly_connected, Digraph, GraphSchedule, WeightMatrix};
pub use metrics::{consensus_d, measure, nmse, stationarity_j, weighted_average, MetricsRecord};
pub use penalty::{soft_threshold, DcPenalty, PenaltyKind};
pub use problem::{
    gen_sparse_pca, gen_sparse_regression, ConstraintSet, LocalLoss, ProblemInstance, SparsePcaParams,
    SparseRegressionParams,
};
pub use solver::{ball_prox_solve, solve_subproblem, InnerSolverConfig, SubproblemSolution, SurrogateSpec};
