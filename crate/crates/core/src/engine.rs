//! Round-based simulation of the distributed algorithms.
//!
//! Each round is bulk-synchronous: agents compute locally from the previous
//! snapshot, then the mixing step reads that snapshot and writes the next one.
//! Per-agent work runs in parallel; results are collected in agent order, so
//! runs are bit-reproducible.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_weights, GraphSchedule, WeightMatrix};
use crate::metrics::{measure, MetricsRecord};
use crate::problem::ProblemInstance;
use crate::solver::{solve_subproblem, SurrogateSpec};

/// Local variables of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Local copy of the decision variable.
    pub x: Array1<f64>,
    /// Push-sum weight.
    pub phi: f64,
    /// Gradient tracker.
    pub y: Array1<f64>,
    /// Estimate of the other agents' gradient sum.
    pub pi_tilde: Array1<f64>,
    /// `grad f_i(x)` at the current `x`.
    pub grad_cache: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSizeSchedule {
    /// `alpha0 / (n + 1)^beta`
    Power { alpha0: f64, beta: f64 },
    /// `alpha^n = alpha^{n-1} (1 - mu alpha^{n-1})`
    Recursive { alpha0: f64, mu: f64 },
}

impl StepSizeSchedule {
    pub fn power(alpha0: f64, beta: f64) -> Result<Self> {
        let s = StepSizeSchedule::Power { alpha0, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn recursive(alpha0: f64, mu: f64) -> Result<Self> {
        let s = StepSizeSchedule::Recursive { alpha0, mu };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSizeSchedule::Power { alpha0, beta } => {
                if !(alpha0.is_finite() && alpha0 > 0.0) {
                    return Err(Error::param(format!("alpha0 must be positive, got {alpha0}")));
                }
                if !(beta > 0.5 && beta <= 1.0) {
                    return Err(Error::param(format!("beta must lie in (0.5, 1], got {beta}")));
                }
            }
            StepSizeSchedule::Recursive { alpha0, mu } => {
                if !(alpha0 > 0.0 && alpha0 <= 1.0) {
                    return Err(Error::param(format!("alpha0 must lie in (0, 1], got {alpha0}")));
                }
                if !(mu > 0.0 && mu < 1.0) {
                    return Err(Error::param(format!("mu must lie in (0, 1), got {mu}")));
                }
            }
        }
        Ok(())
    }

    /// Step size of round `n`. The recursive rule is unrolled from `alpha0`.
    pub fn alpha(&self, n: usize) -> f64 {
        self.iter().nth(n).expect("infinite sequence")
    }

    pub fn iter(&self) -> StepSizes {
        StepSizes {
            schedule: *self,
            n: 0,
            prev: None,
        }
    }
}

/// Infinite iterator over a step-size sequence, caching the previous term.
#[derive(Debug, Clone)]
pub struct StepSizes {
    schedule: StepSizeSchedule,
    n: usize,
    prev: Option<f64>,
}

impl Iterator for StepSizes {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let a = match self.schedule {
            StepSizeSchedule::Power { alpha0, beta } => alpha0 / ((self.n + 1) as f64).powf(beta),
            StepSizeSchedule::Recursive { alpha0, mu } => match self.prev {
                None => alpha0,
                Some(p) => p * (1.0 - mu * p),
            },
        };
        self.n += 1;
        self.prev = Some(a);
        Some(a)
    }
}

pub fn step_size(schedule: &StepSizeSchedule, n: usize) -> f64 {
    schedule.alpha(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Keeps the convex loss in the local model.
    DsparsaSca,
    /// Linearizes the loss.
    DsparsaL,
    /// Push-sum averaging followed by a projected subgradient step.
    SubgradPush,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::DsparsaSca, Algorithm::DsparsaL, Algorithm::SubgradPush];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::DsparsaSca => "dsparsa_sca",
            Algorithm::DsparsaL => "dsparsa_l",
            Algorithm::SubgradPush => "subgrad_push",
        }
    }

    /// Per-node communication exchanges per round.
    pub fn exchanges_per_round(&self) -> usize {
        match self {
            Algorithm::DsparsaSca | Algorithm::DsparsaL => 2,
            Algorithm::SubgradPush => 1,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                Error::param(format!(
                    "unknown algorithm `{s}`, expected one of dsparsa_sca, dsparsa_l, subgrad_push"
                ))
            })
    }
}

/// Initial states from given starting points: `phi = 1`, `y = grad f_i(x)`,
/// `pi = I y - grad f_i(x)`.
pub fn init_states_from(problem: &ProblemInstance, starts: Vec<Array1<f64>>) -> Result<Vec<AgentState>> {
    if starts.len() != problem.agent_count() {
        return Err(Error::Dimension {
            expected: problem.agent_count(),
            got: starts.len(),
        });
    }
    let agents = problem.agent_count() as f64;
    starts
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let g = problem.loss(i).grad(x.view())?;
            let pi_tilde = &g * agents - &g;
            Ok(AgentState {
                x,
                phi: 1.0,
                y: g.clone(),
                pi_tilde,
                grad_cache: g,
            })
        })
        .collect()
}

/// Starting points drawn i.i.d. standard Gaussian and projected onto the feasible set.
pub fn init_states(problem: &ProblemInstance, seed: u64) -> Result<Vec<AgentState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = problem.dimension();
    let constraint = problem.constraint();
    let starts = (0..problem.agent_count())
        .map(|_| {
            let x = Array1::from_shape_simple_fn(m, || rng.sample::<f64, _>(StandardNormal));
            constraint.project(x.view())
        })
        .collect();
    init_states_from(problem, starts)
}

/// Stacks `phi_j * v_j` as rows, mixes with `A`, and divides by the new weights.
fn push_sum_mix(weights: &WeightMatrix, phis: &[f64], rows: &[Array1<f64>]) -> (Array1<f64>, Array2<f64>) {
    let n = rows.len();
    let m = rows[0].len();
    let mut stacked = Array2::zeros((n, m));
    for (j, (row, &phi)) in rows.iter().zip(phis).enumerate() {
        stacked.row_mut(j).assign(&(row * phi));
    }
    let a = weights.entries();
    let new_phi = a.dot(&Array1::from(phis.to_vec()));
    let mut mixed = a.dot(&stacked);
    for (mut row, &phi) in mixed.rows_mut().into_iter().zip(new_phi.iter()) {
        row /= phi;
    }
    (new_phi, mixed)
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub states: Vec<AgentState>,
    /// Agents whose inner subproblem solve hit its iteration cap.
    pub inner_failures: usize,
}

/// One DSparsA round with explicit weights and step size.
pub fn dsparsa_step(
    states: &[AgentState],
    problem: &ProblemInstance,
    spec: &SurrogateSpec,
    weights: &WeightMatrix,
    alpha: f64,
) -> Result<RoundOutcome> {
    let n_agents = states.len();
    let lambda = problem.lambda();
    let penalty = problem.penalty();
    let constraint = problem.constraint();

    // local SCA step and damping
    let local: Vec<(Array1<f64>, bool)> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let sol = solve_subproblem(
                problem.loss(i),
                penalty,
                lambda,
                constraint,
                spec,
                s.x.view(),
                s.pi_tilde.view(),
            )?;
            let mut v = s.x.clone();
            v.scaled_add(alpha, &(&sol.x - &s.x));
            Ok((v, sol.converged))
        })
        .collect::<Result<_>>()?;
    let inner_failures = local.iter().filter(|(_, ok)| !ok).count();
    let vs: Vec<Array1<f64>> = local.into_iter().map(|(v, _)| v).collect();

    let phis: Vec<f64> = states.iter().map(|s| s.phi).collect();
    let (new_phi, new_x) = push_sum_mix(weights, &phis, &vs);

    let new_grads: Vec<Array1<f64>> = (0..n_agents)
        .into_par_iter()
        .map(|i| problem.loss(i).grad(new_x.row(i)))
        .collect::<Result<_>>()?;

    // message from j carries phi_j y_j + (grad f_j(x_j^{n+1}) - grad f_j(x_j^n))
    let m = problem.dimension();
    let mut outgoing = Array2::zeros((n_agents, m));
    for (j, s) in states.iter().enumerate() {
        let mut row = outgoing.row_mut(j);
        row.assign(&(&s.y * s.phi));
        row += &new_grads[j];
        row -= &s.grad_cache;
    }
    let mut new_y = weights.entries().dot(&outgoing);
    for (mut row, &phi) in new_y.rows_mut().into_iter().zip(new_phi.iter()) {
        row /= phi;
    }

    let agents = n_agents as f64;
    let states = new_grads
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let y = new_y.row(i).to_owned();
            let pi_tilde = &y * agents - &g;
            AgentState {
                x: new_x.row(i).to_owned(),
                phi: new_phi[i],
                y,
                pi_tilde,
                grad_cache: g,
            }
        })
        .collect();
    Ok(RoundOutcome {
        states,
        inner_failures,
    })
}

/// Round `n` of DSparsA over `schedule`.
pub fn dsparsa_round(
    states: &[AgentState],
    problem: &ProblemInstance,
    spec: &SurrogateSpec,
    schedule: &GraphSchedule,
    step_sizes: &StepSizeSchedule,
    n: usize,
) -> Result<RoundOutcome> {
    let weights = build_weights(&schedule.graph(n));
    dsparsa_step(states, problem, spec, &weights, step_sizes.alpha(n))
}

/// One subgradient-push round with explicit weights and step size:
/// `x_i = P_K(w_i - alpha (grad f_i(w_i) + (lambda / I) s(w_i)))`.
pub fn subgradient_push_step(
    states: &[AgentState],
    problem: &ProblemInstance,
    weights: &WeightMatrix,
    alpha: f64,
) -> Result<Vec<AgentState>> {
    let phis: Vec<f64> = states.iter().map(|s| s.phi).collect();
    let xs: Vec<Array1<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let (new_phi, w) = push_sum_mix(weights, &phis, &xs);
    let share = problem.lambda() / states.len() as f64;
    let constraint = problem.constraint();
    (0..states.len())
        .into_par_iter()
        .map(|i| {
            let wi = w.row(i);
            let mut dir = problem.loss(i).grad(wi)?;
            dir.scaled_add(share, &problem.penalty().subgradient_vec(wi));
            let mut x = wi.to_owned();
            x.scaled_add(-alpha, &dir);
            let x = constraint.project(x.view());
            let m = x.len();
            Ok(AgentState {
                x,
                phi: new_phi[i],
                y: Array1::zeros(m),
                pi_tilde: Array1::zeros(m),
                grad_cache: Array1::zeros(m),
            })
        })
        .collect()
}

pub fn subgradient_push_round(
    states: &[AgentState],
    problem: &ProblemInstance,
    schedule: &GraphSchedule,
    step_sizes: &StepSizeSchedule,
    n: usize,
) -> Result<Vec<AgentState>> {
    let weights = build_weights(&schedule.graph(n));
    subgradient_push_step(states, problem, &weights, step_sizes.alpha(n))
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Ignored by the subgradient baseline.
    pub surrogate: SurrogateSpec,
    pub step_sizes: StepSizeSchedule,
    pub rounds: usize,
    /// Seeds the initial points.
    pub seed: u64,
    pub metrics_every: usize,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub records: Vec<MetricsRecord>,
    /// Largest `||x_i||_2` over agents at each recorded round.
    pub max_agent_norms: Vec<f64>,
    /// Total inner solves that hit their iteration cap.
    pub inner_failures: usize,
    pub final_states: Vec<AgentState>,
}

/// Runs `config.rounds` rounds, recording metrics at round 0, every
/// `metrics_every` rounds, and at the final round.
pub fn run(problem: &ProblemInstance, schedule: &GraphSchedule, config: &RunConfig) -> Result<RunTrace> {
    if schedule.node_count() != problem.agent_count() {
        return Err(Error::Dimension {
            expected: problem.agent_count(),
            got: schedule.node_count(),
        });
    }
    if config.metrics_every == 0 {
        return Err(Error::param("metrics_every must be at least 1"));
    }
    config.step_sizes.validate()?;
    if config.algorithm != Algorithm::SubgradPush {
        config.surrogate.validate()?;
    }
    let algo = config.algorithm;
    let per_round = algo.exchanges_per_round();

    let mut states = init_states(problem, config.seed)?;
    let mut records = Vec::new();
    let mut max_agent_norms = Vec::new();
    let mut inner_failures = 0;
    let mut record = |states: &[AgentState], n: usize| -> Result<()> {
        records.push(measure(problem, states, n, per_round * n)?);
        max_agent_norms.push(states.iter().map(|s| s.x.dot(&s.x).sqrt()).fold(0.0, f64::max));
        Ok(())
    };
    record(&states, 0)?;

    for (n, alpha) in config.step_sizes.iter().take(config.rounds).enumerate() {
        let weights = build_weights(&schedule.graph(n));
        states = match algo {
            Algorithm::DsparsaSca | Algorithm::DsparsaL => {
                let out = dsparsa_step(&states, problem, &config.surrogate, &weights, alpha)?;
                inner_failures += out.inner_failures;
                out.states
            }
            Algorithm::SubgradPush => subgradient_push_step(&states, problem, &weights, alpha)?,
        };
        let done = n + 1;
        if done % config.metrics_every == 0 || done == config.rounds {
            record(&states, done)?;
        }
    }

    Ok(RunTrace {
        algorithm: algo,
        records,
        max_agent_norms,
        inner_failures,
        final_states: states,
    })
}
