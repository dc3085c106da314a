//! Progress measures computed centrally from a snapshot of all agents.

use ndarray::{Array1, ArrayView1};

use crate::engine::AgentState;
use crate::error::{check_dim, Error, Result};
use crate::penalty::soft_threshold;
use crate::problem::{ConstraintSet, ProblemInstance};
use crate::solver::{ball_prox_solve_with_radius, max_abs_diff};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    /// Communication exchanges per node so far.
    pub comm: usize,
    /// Stationarity gap at the weighted average.
    pub j: f64,
    /// Consensus disagreement.
    pub d: f64,
    pub nmse: f64,
    pub objective: f64,
}

impl MetricsRecord {
    pub fn nmse_db(&self) -> f64 {
        10.0 * self.nmse.log10()
    }
}

/// `z = (1/I) sum_i phi_i x_i`
pub fn weighted_average(states: &[AgentState]) -> Array1<f64> {
    assert!(!states.is_empty(), "weighted average of zero agents");
    let mut z = Array1::zeros(states[0].x.len());
    for s in states {
        z.scaled_add(s.phi, &s.x);
    }
    z / states.len() as f64
}

/// `|| z - S_{eta lambda}(z - (grad F(z) - lambda grad G_minus(z))) ||_inf`
pub fn stationarity_j_unconstrained(problem: &ProblemInstance, z: ArrayView1<f64>) -> Result<f64> {
    if problem.constraint() != ConstraintSet::AllSpace {
        return Err(Error::config(
            "unconstrained stationarity measure requires an unconstrained problem",
        ));
    }
    let lambda = problem.lambda();
    let pen = problem.penalty();
    let grad = problem.grad_total(z)?;
    let thresh = pen.eta() * lambda;
    Ok(z.iter()
        .zip(grad.iter())
        .map(|(&zk, &gk)| {
            let inner = zk - (gk - lambda * pen.grad_minus(zk));
            (zk - soft_threshold(inner, thresh)).abs()
        })
        .fold(0.0, f64::max))
}

/// `|| x_hat(z) - z ||_inf` where `x_hat(z)` minimizes
/// `lambda G_plus(x) + (grad F(z) - lambda grad G_minus(z))^T x + ||x - z||^2 / 2`
/// over the ball.
pub fn stationarity_j_constrained(problem: &ProblemInstance, z: ArrayView1<f64>) -> Result<f64> {
    let ConstraintSet::L2Ball { radius } = problem.constraint() else {
        return Err(Error::config(
            "constrained stationarity measure requires a ball constraint",
        ));
    };
    let lambda = problem.lambda();
    let pen = problem.penalty();
    let mut g = problem.grad_total(z)?;
    g.scaled_add(-lambda, &pen.grad_minus_vec(z));
    let x_hat = ball_prox_solve_with_radius(g.view(), z, 1.0, lambda * pen.eta(), radius).x;
    Ok(max_abs_diff(x_hat.view(), z))
}

/// Dispatches on the problem's feasible set.
pub fn stationarity_j(problem: &ProblemInstance, z: ArrayView1<f64>) -> Result<f64> {
    match problem.constraint() {
        ConstraintSet::AllSpace => stationarity_j_unconstrained(problem, z),
        ConstraintSet::L2Ball { .. } => stationarity_j_constrained(problem, z),
    }
}

/// `max_i || x_i - z ||_inf`
pub fn consensus_d(states: &[AgentState]) -> f64 {
    let z = weighted_average(states);
    states
        .iter()
        .map(|s| max_abs_diff(s.x.view(), z.view()))
        .fold(0.0, f64::max)
}

/// `(1/I) sum_i ||x_i - x0||^2 / ||x0||^2`; with `sign_invariant` the smaller of
/// the values for `x0` and `-x0`.
pub fn nmse(states: &[AgentState], truth: ArrayView1<f64>, sign_invariant: bool) -> Result<f64> {
    let denom = truth.dot(&truth);
    if denom == 0.0 {
        return Err(Error::param("NMSE needs a nonzero ground truth"));
    }
    let score = |sign: f64| -> Result<f64> {
        let mut total = 0.0;
        for s in states {
            check_dim(truth.len(), s.x.len())?;
            total += s
                .x
                .iter()
                .zip(truth.iter())
                .map(|(x, t)| (x - sign * t).powi(2))
                .sum::<f64>();
        }
        Ok(total / (states.len() as f64 * denom))
    };
    let plus = score(1.0)?;
    if sign_invariant {
        Ok(plus.min(score(-1.0)?))
    } else {
        Ok(plus)
    }
}

/// All progress measures at one round. NMSE is NaN when the problem has no
/// ground truth.
pub fn measure(
    problem: &ProblemInstance,
    states: &[AgentState],
    round: usize,
    comm: usize,
) -> Result<MetricsRecord> {
    let z = weighted_average(states);
    let nmse = match problem.ground_truth() {
        Some(t) => nmse(states, t.view(), problem.sign_invariant())?,
        None => f64::NAN,
    };
    Ok(MetricsRecord {
        round,
        comm,
        j: stationarity_j(problem, z.view())?,
        d: consensus_d(states),
        nmse,
        objective: problem.objective(z.view())?,
    })
}
