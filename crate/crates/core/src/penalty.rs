//! Separable difference-of-convex sparsity penalties.
//!
//! Each scalar penalty is written as `g(x) = g_plus(x) - g_minus(x)` with
//! `g_plus(x) = eta * |x|` convex and nonsmooth, and `g_minus` convex with a
//! Lipschitz gradient. Vector penalties sum the scalar one over coordinates.

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{Error, Result};

/// Default `epsilon` for the `(|x| + epsilon)^(1/theta)` penalty.
pub const DEFAULT_LP_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    /// `1 - exp(-theta |x|)`
    Exp { theta: f64 },
    /// `(|x| + epsilon)^(1/theta)`, an l_p surrogate with `0 < p = 1/theta < 1`.
    LpPlus { theta: f64, epsilon: f64 },
    /// `1 - (theta |x| + 1)^p` with `p < 0`.
    LpMinus { theta: f64, p: f64 },
    /// Smoothly clipped absolute deviation.
    Scad { theta: f64, a: f64 },
    /// `log(1 + theta |x|) / log(1 + theta)`
    Log { theta: f64 },
    /// Plain `|x|`; the concave part vanishes.
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcPenalty {
    kind: PenaltyKind,
}

/// `sign(0) = 0`, which keeps `grad_minus` odd and zero at the origin.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Proximal operator of `tau |.|`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    debug_assert!(tau >= 0.0);
    sign(x) * (x.abs() - tau).max(0.0)
}

pub fn soft_threshold_vec(x: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    x.mapv(|v| soft_threshold(v, tau))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive and finite, got {v}")))
    }
}

impl DcPenalty {
    pub fn new(kind: PenaltyKind) -> Result<Self> {
        match kind {
            PenaltyKind::Exp { theta } | PenaltyKind::Log { theta } => positive("theta", theta)?,
            PenaltyKind::LpPlus { theta, epsilon } => {
                positive("theta", theta)?;
                positive("epsilon", epsilon)?;
                if theta <= 1.0 {
                    return Err(Error::param(format!(
                        "lp_plus needs theta > 1 so that 1/theta lies in (0, 1), got {theta}"
                    )));
                }
            }
            PenaltyKind::LpMinus { theta, p } => {
                positive("theta", theta)?;
                if !(p.is_finite() && p < 0.0) {
                    return Err(Error::param(format!("lp_minus needs p < 0, got {p}")));
                }
            }
            PenaltyKind::Scad { theta, a } => {
                positive("theta", theta)?;
                if !(a.is_finite() && a > 1.0) {
                    return Err(Error::param(format!("scad needs a > 1, got {a}")));
                }
            }
            PenaltyKind::L1 => {}
        }
        Ok(Self { kind })
    }

    pub fn exp(theta: f64) -> Result<Self> {
        Self::new(PenaltyKind::Exp { theta })
    }

    pub fn lp_plus(theta: f64, epsilon: f64) -> Result<Self> {
        Self::new(PenaltyKind::LpPlus { theta, epsilon })
    }

    pub fn lp_minus(theta: f64, p: f64) -> Result<Self> {
        Self::new(PenaltyKind::LpMinus { theta, p })
    }

    pub fn scad(theta: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyKind::Scad { theta, a })
    }

    pub fn log(theta: f64) -> Result<Self> {
        Self::new(PenaltyKind::Log { theta })
    }

    pub fn l1() -> Self {
        Self {
            kind: PenaltyKind::L1,
        }
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    /// Slope of the convex part `g_plus = eta |x|`.
    pub fn eta(&self) -> f64 {
        match self.kind {
            PenaltyKind::Exp { theta } => theta,
            PenaltyKind::LpPlus { theta, epsilon } => epsilon.powf(1.0 / theta - 1.0) / theta,
            PenaltyKind::LpMinus { theta, p } => -p * theta,
            PenaltyKind::Scad { theta, a } => 2.0 * theta / (a + 1.0),
            PenaltyKind::Log { theta } => theta / theta.ln_1p(),
            PenaltyKind::L1 => 1.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let ax = x.abs();
        match self.kind {
            PenaltyKind::Exp { theta } => -(-theta * ax).exp_m1(),
            PenaltyKind::LpPlus { theta, epsilon } => (ax + epsilon).powf(1.0 / theta),
            PenaltyKind::LpMinus { theta, p } => 1.0 - (theta * ax + 1.0).powf(p),
            PenaltyKind::Scad { theta, a } => {
                if ax <= 1.0 / theta {
                    2.0 * theta / (a + 1.0) * ax
                } else if ax <= a / theta {
                    (-theta * theta * ax * ax + 2.0 * a * theta * ax - 1.0) / (a * a - 1.0)
                } else {
                    1.0
                }
            }
            PenaltyKind::Log { theta } => (theta * ax).ln_1p() / theta.ln_1p(),
            PenaltyKind::L1 => ax,
        }
    }

    pub fn eval_plus(&self, x: f64) -> f64 {
        self.eta() * x.abs()
    }

    pub fn eval_minus(&self, x: f64) -> f64 {
        self.eval_plus(x) - self.eval(x)
    }

    /// Derivative of the smooth convex part `g_minus`.
    pub fn grad_minus(&self, x: f64) -> f64 {
        let ax = x.abs();
        let s = sign(x);
        match self.kind {
            PenaltyKind::Exp { theta } => s * theta * -(-theta * ax).exp_m1(),
            PenaltyKind::LpPlus { theta, epsilon } => {
                let q = 1.0 / theta - 1.0;
                s / theta * (epsilon.powf(q) - (ax + epsilon).powf(q))
            }
            PenaltyKind::LpMinus { theta, p } => {
                -s * p * theta * (1.0 - (1.0 + theta * ax).powf(p - 1.0))
            }
            PenaltyKind::Scad { theta, a } => {
                if ax <= 1.0 / theta {
                    0.0
                } else if ax <= a / theta {
                    s * 2.0 * theta * (theta * ax - 1.0) / (a * a - 1.0)
                } else {
                    s * 2.0 * theta / (a + 1.0)
                }
            }
            PenaltyKind::Log { theta } => {
                s * theta * theta * ax / (theta.ln_1p() * (1.0 + theta * ax))
            }
            PenaltyKind::L1 => 0.0,
        }
    }

    /// A Lipschitz constant of `grad_minus` over the real line.
    pub fn grad_minus_lipschitz(&self) -> f64 {
        match self.kind {
            PenaltyKind::Exp { theta } => theta * theta,
            PenaltyKind::LpPlus { theta, epsilon } => {
                let q = 1.0 / theta;
                q * (1.0 - q) * epsilon.powf(q - 2.0)
            }
            PenaltyKind::LpMinus { theta, p } => p * (p - 1.0) * theta * theta,
            PenaltyKind::Scad { theta, a } => 2.0 * theta * theta / (a * a - 1.0),
            PenaltyKind::Log { theta } => theta * theta / theta.ln_1p(),
            PenaltyKind::L1 => 0.0,
        }
    }

    /// `G(x) = sum_j g(x_j)`
    pub fn eval_sum(&self, x: ArrayView1<f64>) -> f64 {
        x.iter().map(|&v| self.eval(v)).sum()
    }

    /// `G_plus(x) = eta ||x||_1`
    pub fn eval_plus_sum(&self, x: ArrayView1<f64>) -> f64 {
        self.eta() * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn grad_minus_vec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        x.mapv(|v| self.grad_minus(v))
    }

    /// A subgradient of `G` at `x`, taking `sign(0) = 0` at the kinks.
    pub fn subgradient_vec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let eta = self.eta();
        let mut out = Array1::zeros(x.len());
        Zip::from(&mut out)
            .and(&x)
            .for_each(|o, &v| *o = eta * sign(v) - self.grad_minus(v));
        out
    }
}
