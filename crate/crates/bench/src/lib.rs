//! Fixtures shared by the benchmarks.

use dsparsa::engine::{init_states, AgentState};
use dsparsa::{
    gen_sparse_pca, gen_sparse_regression, generate_schedule, GraphSchedule, ProblemInstance,
    SparsePcaParams, SparseRegressionParams,
};
use ndarray::Array1;

/// Deterministic, irregular test vector.
pub fn wavy(len: usize, phase: f64, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(len, |k| scale * ((k as f64 + 1.0) * 1.618 + phase).sin())
}

pub struct Fixture {
    pub problem: ProblemInstance,
    pub schedule: GraphSchedule,
    pub states: Vec<AgentState>,
}

/// The full-size regression instance (30 agents, 20 x 200 blocks).
pub fn regression() -> Fixture {
    let problem = gen_sparse_regression(&SparseRegressionParams::default(), 1).unwrap();
    build(problem)
}

/// The full-size sparse-PCA instance (30 agents, 500 x 30 blocks).
pub fn pca() -> Fixture {
    let problem = gen_sparse_pca(&SparsePcaParams::default(), 1).unwrap();
    build(problem)
}

fn build(problem: ProblemInstance) -> Fixture {
    let schedule = generate_schedule(problem.agent_count(), 2, 2).unwrap();
    let states = init_states(&problem, 3).unwrap();
    Fixture {
        problem,
        schedule,
        states,
    }
}
