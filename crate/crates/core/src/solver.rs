//! Local strongly convex subproblems.
//!
//! At iterate `x_cur` each agent minimizes
//!
//! ```text
//! f~(x; x_cur) + (pi - lambda * grad G_minus(x_cur))^T (x - x_cur) + lambda * eta * ||x||_1
//! ```
//!
//! over the feasible set. Linearized surrogates have closed forms (a soft
//! threshold, or a soft threshold plus a scalar search on the ball multiplier);
//! surrogates that keep the convex loss are solved with proximal gradient.

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{check_dim, Error, Result};
use crate::penalty::{soft_threshold, DcPenalty};
use crate::problem::{ConstraintSet, LocalLoss};

/// Relative tolerance on `| ||x(mu)|| - radius |` for the multiplier search.
pub const BALL_NORM_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolverConfig {
    pub max_iters: usize,
    /// Stop once successive iterates differ by at most this in the max norm.
    pub tolerance: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tolerance: 1e-8,
        }
    }
}

impl InnerSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("inner max_iters must be at least 1"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::param(format!(
                "inner tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Choice of the strongly convex local model of `f_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurrogateSpec {
    /// `f(x_cur) + grad f(x_cur)^T (x - x_cur) + tau/2 ||x - x_cur||^2`
    Linearized { tau: f64 },
    /// Keeps the convex part of `f` and linearizes the rest, plus the proximal term.
    PartialLinearized { tau: f64, inner: InnerSolverConfig },
    /// Keeps `f` itself (must be convex), plus the proximal term.
    FullConvex { tau: f64, inner: InnerSolverConfig },
}

impl SurrogateSpec {
    pub fn tau(&self) -> f64 {
        match *self {
            SurrogateSpec::Linearized { tau }
            | SurrogateSpec::PartialLinearized { tau, .. }
            | SurrogateSpec::FullConvex { tau, .. } => tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tau = self.tau();
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::param(format!("tau must be positive, got {tau}")));
        }
        match self {
            SurrogateSpec::Linearized { .. } => Ok(()),
            SurrogateSpec::PartialLinearized { inner, .. } | SurrogateSpec::FullConvex { inner, .. } => {
                inner.validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub x: Array1<f64>,
    /// False when an iterative inner solve hit its iteration cap.
    pub converged: bool,
    pub inner_iterations: usize,
}

impl SubproblemSolution {
    fn exact(x: Array1<f64>) -> Self {
        Self {
            x,
            converged: true,
            inner_iterations: 0,
        }
    }
}

pub fn solve_subproblem(
    loss: &LocalLoss,
    penalty: &DcPenalty,
    lambda: f64,
    constraint: ConstraintSet,
    spec: &SurrogateSpec,
    x_cur: ArrayView1<f64>,
    pi_tilde: ArrayView1<f64>,
) -> Result<SubproblemSolution> {
    spec.validate()?;
    let m = loss.dimension();
    check_dim(m, x_cur.len())?;
    check_dim(m, pi_tilde.len())?;

    // pi - lambda * grad G_minus(x_cur): the fixed linear part of the model
    let mut linear = penalty.grad_minus_vec(x_cur);
    linear *= -lambda;
    linear += &pi_tilde;
    let weight = lambda * penalty.eta();
    let tau = spec.tau();

    let keep_loss = match spec {
        SurrogateSpec::Linearized { .. } => None,
        SurrogateSpec::PartialLinearized { inner, .. } => loss.is_convex().then_some(*inner),
        SurrogateSpec::FullConvex { inner, .. } => {
            if !loss.is_convex() {
                return Err(Error::config(
                    "full convex surrogate requires a convex loss; use a linearized surrogate",
                ));
            }
            Some(*inner)
        }
    };

    match keep_loss {
        None => {
            let g = loss.grad(x_cur)? + &linear;
            Ok(SubproblemSolution::exact(prox_linear(
                g.view(),
                x_cur,
                tau,
                weight,
                constraint,
            )))
        }
        Some(inner) => proximal_gradient(loss, &linear, x_cur, tau, weight, constraint, &inner),
    }
}

/// `argmin_{x in K} g^T x + tau/2 ||x - x_bar||^2 + weight ||x||_1`
pub fn prox_linear(
    g: ArrayView1<f64>,
    x_bar: ArrayView1<f64>,
    tau: f64,
    weight: f64,
    constraint: ConstraintSet,
) -> Array1<f64> {
    match constraint {
        ConstraintSet::AllSpace => {
            let mut out = Array1::zeros(x_bar.len());
            Zip::from(&mut out)
                .and(&x_bar)
                .and(&g)
                .for_each(|o, &xb, &gk| *o = soft_threshold(xb - gk / tau, weight / tau));
            out
        }
        ConstraintSet::L2Ball { radius } => {
            ball_prox_solve_with_radius(g, x_bar, tau, weight, radius).x
        }
    }
}

/// Minimizes `f(x) + tau/2 ||x - x_cur||^2 + linear^T x + weight ||x||_1` over
/// `K` with step `1/L`, `L = lipschitz(f) + tau`, warm-started at `x_cur`.
fn proximal_gradient(
    loss: &LocalLoss,
    linear: &Array1<f64>,
    x_cur: ArrayView1<f64>,
    tau: f64,
    weight: f64,
    constraint: ConstraintSet,
    inner: &InnerSolverConfig,
) -> Result<SubproblemSolution> {
    let step_l = loss.lipschitz() + tau;
    let mut x = constraint.project(x_cur);
    let zero = Array1::zeros(x.len());
    for it in 1..=inner.max_iters {
        let mut grad = loss.grad(x.view())?;
        grad += linear;
        grad.scaled_add(tau, &x);
        grad.scaled_add(-tau, &x_cur);
        // forward step point
        let mut w = x.clone();
        w.scaled_add(-1.0 / step_l, &grad);
        let next = prox_linear(zero.view(), w.view(), step_l, weight, constraint);
        let delta = max_abs_diff(next.view(), x.view());
        x = next;
        if delta <= inner.tolerance {
            return Ok(SubproblemSolution {
                x,
                converged: true,
                inner_iterations: it,
            });
        }
    }
    Ok(SubproblemSolution {
        x,
        converged: false,
        inner_iterations: inner.max_iters,
    })
}

pub(crate) fn max_abs_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallProx {
    pub x: Array1<f64>,
    /// Multiplier of the norm constraint, zero when it is inactive.
    pub multiplier: f64,
}

/// `argmin_{||x|| <= 1} g^T x + tau/2 ||x - x_bar||^2 + weight ||x||_1`
pub fn ball_prox_solve(g: ArrayView1<f64>, x_bar: ArrayView1<f64>, tau: f64, weight: f64) -> Array1<f64> {
    ball_prox_solve_with_radius(g, x_bar, tau, weight, 1.0).x
}

/// Ball-constrained soft threshold. For multiplier `mu >= 0` the minimizer of
/// the Lagrangian is `x(mu) = S_{weight/(tau+mu)}((tau x_bar - g)/(tau+mu))`,
/// whose norm is continuous and decreasing in `mu`; `mu` is found by bisection.
/// The returned point always satisfies `||x|| <= radius`.
pub fn ball_prox_solve_with_radius(
    g: ArrayView1<f64>,
    x_bar: ArrayView1<f64>,
    tau: f64,
    weight: f64,
    radius: f64,
) -> BallProx {
    debug_assert!(tau > 0.0 && weight >= 0.0 && radius > 0.0);
    let mut center = x_bar.to_owned() * tau;
    center -= &g;
    let eval = |mu: f64| -> (Array1<f64>, f64) {
        let s = tau + mu;
        let x = center.mapv(|c| soft_threshold(c / s, weight / s));
        let n = x.dot(&x).sqrt();
        (x, n)
    };

    let (x0, n0) = eval(0.0);
    if n0 <= radius {
        return BallProx { x: x0, multiplier: 0.0 };
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let (mut x_hi, mut n_hi) = eval(hi);
    while n_hi >= radius {
        lo = hi;
        hi *= 2.0;
        (x_hi, n_hi) = eval(hi);
    }

    let tol = BALL_NORM_TOLERANCE * radius;
    while radius - n_hi > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (x_mid, n_mid) = eval(mid);
        if n_mid > radius {
            lo = mid;
        } else {
            hi = mid;
            x_hi = x_mid;
            n_hi = n_mid;
        }
    }
    BallProx {
        x: x_hi,
        multiplier: hi,
    }
}
