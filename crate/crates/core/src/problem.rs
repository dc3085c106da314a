//! Problem instances: per-agent smooth losses, a shared DC penalty, the
//! regularization weight and the feasible set, plus the two synthetic
//! generators (sparse linear regression and sparse PCA).

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::error::{check_dim, Error, Result};
use crate::penalty::DcPenalty;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintSet {
    AllSpace,
    L2Ball { radius: f64 },
}

impl ConstraintSet {
    pub fn unit_ball() -> Self {
        ConstraintSet::L2Ball { radius: 1.0 }
    }

    pub fn l2_ball(radius: f64) -> Result<Self> {
        if radius.is_finite() && radius > 0.0 {
            Ok(ConstraintSet::L2Ball { radius })
        } else {
            Err(Error::param(format!("ball radius must be positive, got {radius}")))
        }
    }

    /// Euclidean projection.
    pub fn project(&self, x: ArrayView1<f64>) -> Array1<f64> {
        match *self {
            ConstraintSet::AllSpace => x.to_owned(),
            ConstraintSet::L2Ball { radius } => {
                let norm = x.dot(&x).sqrt();
                if norm > radius {
                    x.mapv(|v| v * (radius / norm))
                } else {
                    x.to_owned()
                }
            }
        }
    }

    pub fn contains(&self, x: ArrayView1<f64>, slack: f64) -> bool {
        match *self {
            ConstraintSet::AllSpace => true,
            ConstraintSet::L2Ball { radius } => x.dot(&x).sqrt() <= radius + slack,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LossKind {
    /// `||b - A x||^2`
    LeastSquares { a: Array2<f64>, b: Array1<f64> },
    /// `-||D x||^2`, evaluated through the Gram matrix `D^T D`.
    NegPca { d: Array2<f64>, gram: Array2<f64> },
}

/// One agent's smooth loss.
#[derive(Debug, Clone)]
pub struct LocalLoss {
    kind: LossKind,
    /// Largest eigenvalue of `A^T A` (resp. `D^T D`).
    curvature: f64,
}

impl LocalLoss {
    pub fn least_squares(a: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        if a.ncols() == 0 {
            return Err(Error::param("loss dimension must be positive"));
        }
        let curvature = top_eigenvalue(a.ncols(), |v| a.t().dot(&a.dot(v)));
        Ok(Self {
            kind: LossKind::LeastSquares { a, b },
            curvature,
        })
    }

    pub fn neg_pca(d: Array2<f64>) -> Result<Self> {
        if d.ncols() == 0 {
            return Err(Error::param("loss dimension must be positive"));
        }
        let gram = d.t().dot(&d);
        let curvature = top_eigenvalue(gram.nrows(), |v| gram.dot(v));
        Ok(Self {
            kind: LossKind::NegPca { d, gram },
            curvature,
        })
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn dimension(&self) -> usize {
        match &self.kind {
            LossKind::LeastSquares { a, .. } => a.ncols(),
            LossKind::NegPca { gram, .. } => gram.ncols(),
        }
    }

    /// True when the loss itself is convex (least squares).
    pub fn is_convex(&self) -> bool {
        matches!(self.kind, LossKind::LeastSquares { .. })
    }

    /// Lipschitz constant of the gradient, `2 * lambda_max`.
    pub fn lipschitz(&self) -> f64 {
        2.0 * self.curvature
    }

    pub fn value(&self, x: ArrayView1<f64>) -> Result<f64> {
        check_dim(self.dimension(), x.len())?;
        Ok(match &self.kind {
            LossKind::LeastSquares { a, b } => {
                let r = a.dot(&x) - b;
                r.dot(&r)
            }
            LossKind::NegPca { gram, .. } => -x.dot(&gram.dot(&x)),
        })
    }

    pub fn grad(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dimension(), x.len())?;
        Ok(match &self.kind {
            LossKind::LeastSquares { a, b } => {
                let r = a.dot(&x) - b;
                a.t().dot(&r) * 2.0
            }
            LossKind::NegPca { gram, .. } => gram.dot(&x) * -2.0,
        })
    }
}

/// Power iteration for the top eigenvalue of a symmetric PSD operator.
fn top_eigenvalue(dim: usize, apply: impl Fn(&Array1<f64>) -> Array1<f64>) -> f64 {
    // fixed, non-symmetric start so the result is deterministic
    let mut v = Array1::from_shape_fn(dim, |k| 1.0 + (k as f64 + 1.0).sqrt().fract());
    v /= v.dot(&v).sqrt();
    let mut estimate = 0.0;
    for _ in 0..2000 {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - estimate).abs() <= 1e-13 * next.abs() {
            return next.max(estimate);
        }
        estimate = next;
    }
    estimate
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    losses: Vec<LocalLoss>,
    penalty: DcPenalty,
    lambda: f64,
    constraint: ConstraintSet,
    ground_truth: Option<Array1<f64>>,
    /// The objective is invariant under `x -> -x`; NMSE is then sign-resolved.
    sign_invariant: bool,
}

impl ProblemInstance {
    pub fn new(
        losses: Vec<LocalLoss>,
        penalty: DcPenalty,
        lambda: f64,
        constraint: ConstraintSet,
    ) -> Result<Self> {
        let Some(first) = losses.first() else {
            return Err(Error::param("problem needs at least one agent"));
        };
        let m = first.dimension();
        for loss in &losses {
            check_dim(m, loss.dimension())?;
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::param(format!("lambda must be nonnegative, got {lambda}")));
        }
        if let ConstraintSet::L2Ball { radius } = constraint {
            ConstraintSet::l2_ball(radius)?;
        }
        Ok(Self {
            losses,
            penalty,
            lambda,
            constraint,
            ground_truth: None,
            sign_invariant: false,
        })
    }

    pub fn with_ground_truth(mut self, truth: Array1<f64>, sign_invariant: bool) -> Result<Self> {
        check_dim(self.dimension(), truth.len())?;
        self.ground_truth = Some(truth);
        self.sign_invariant = sign_invariant;
        Ok(self)
    }

    pub fn agent_count(&self) -> usize {
        self.losses.len()
    }

    pub fn dimension(&self) -> usize {
        self.losses[0].dimension()
    }

    pub fn losses(&self) -> &[LocalLoss] {
        &self.losses
    }

    pub fn loss(&self, agent: usize) -> &LocalLoss {
        &self.losses[agent]
    }

    pub fn penalty(&self) -> &DcPenalty {
        &self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn constraint(&self) -> ConstraintSet {
        self.constraint
    }

    pub fn ground_truth(&self) -> Option<&Array1<f64>> {
        self.ground_truth.as_ref()
    }

    pub fn sign_invariant(&self) -> bool {
        self.sign_invariant
    }

    /// `U(x) = sum_i f_i(x) + lambda G(x)`
    pub fn objective(&self, x: ArrayView1<f64>) -> Result<f64> {
        let mut total = 0.0;
        for loss in &self.losses {
            total += loss.value(x)?;
        }
        Ok(total + self.lambda * self.penalty.eval_sum(x))
    }

    /// `grad F(x) = sum_i grad f_i(x)`
    pub fn grad_total(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut g = Array1::zeros(self.dimension());
        for loss in &self.losses {
            g += &loss.grad(x)?;
        }
        Ok(g)
    }

    /// Dumps each agent's data as headerless CSV matrices under `dir`.
    pub fn write_data_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (i, loss) in self.losses.iter().enumerate() {
            match loss.kind() {
                LossKind::LeastSquares { a, b } => {
                    write_matrix(&dir.join(format!("agent{i:03}_A.csv")), a)?;
                    write_matrix(
                        &dir.join(format!("agent{i:03}_b.csv")),
                        &b.clone().insert_axis(Axis(1)),
                    )?;
                }
                LossKind::NegPca { d, .. } => {
                    write_matrix(&dir.join(format!("agent{i:03}_D.csv")), d)?;
                }
            }
        }
        if let Some(truth) = &self.ground_truth {
            write_matrix(
                &dir.join("ground_truth.csv"),
                &truth.clone().insert_axis(Axis(1)),
            )?;
        }
        Ok(())
    }
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(wrap)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRegressionParams {
    pub agents: usize,
    pub dimension: usize,
    pub rows_per_agent: usize,
    /// Fraction of ground-truth entries set to zero.
    pub sparsity: f64,
    /// Per-component noise standard deviation.
    pub sigma: f64,
    pub theta: f64,
    pub lambda: f64,
}

impl Default for SparseRegressionParams {
    fn default() -> Self {
        Self {
            agents: 30,
            dimension: 200,
            rows_per_agent: 20,
            sparsity: 0.8,
            sigma: 0.1,
            theta: 20.0,
            lambda: 0.5,
        }
    }
}

/// `b_i = A_i x0 + n_i` with unit-norm Gaussian rows, sparse Gaussian `x0`,
/// and the log penalty.
pub fn gen_sparse_regression(params: &SparseRegressionParams, seed: u64) -> Result<ProblemInstance> {
    let p = params;
    if p.agents == 0 || p.dimension == 0 || p.rows_per_agent == 0 {
        return Err(Error::param("agents, dimension and rows_per_agent must be positive"));
    }
    if !(0.0..1.0).contains(&p.sparsity) {
        return Err(Error::param(format!("sparsity must lie in [0, 1), got {}", p.sparsity)));
    }
    if !(p.sigma.is_finite() && p.sigma >= 0.0) {
        return Err(Error::param(format!("sigma must be nonnegative, got {}", p.sigma)));
    }
    let penalty = DcPenalty::log(p.theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut x0 = gaussian_vec(&mut rng, p.dimension);
    let zeros = (p.sparsity * p.dimension as f64).floor() as usize;
    for k in index::sample(&mut rng, p.dimension, zeros) {
        x0[k] = 0.0;
    }

    let mut losses = Vec::with_capacity(p.agents);
    for _ in 0..p.agents {
        let mut a = gaussian_mat(&mut rng, p.rows_per_agent, p.dimension);
        for mut row in a.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row /= norm;
        }
        let noise = gaussian_vec(&mut rng, p.rows_per_agent) * p.sigma;
        let b = a.dot(&x0) + noise;
        losses.push(LocalLoss::least_squares(a, b)?);
    }
    ProblemInstance::new(losses, penalty, p.lambda, ConstraintSet::AllSpace)?
        .with_ground_truth(x0, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePcaParams {
    pub agents: usize,
    pub rows_per_agent: usize,
    pub dimension: usize,
    pub theta: f64,
    pub a: f64,
    pub lambda: f64,
    /// Scale each `D_i` by `1/sqrt(rows_per_agent)` so that `D_i^T D_i` is the
    /// local sample covariance.
    pub sample_covariance: bool,
}

impl Default for SparsePcaParams {
    fn default() -> Self {
        Self {
            agents: 30,
            rows_per_agent: 500,
            dimension: 30,
            theta: 20.0,
            a: 2.0,
            lambda: 5.0,
            sample_covariance: true,
        }
    }
}

/// Spectral model behind the sparse-PCA generator.
#[derive(Debug, Clone)]
pub struct SpikedCovariance {
    /// Orthonormal eigenvectors as columns; column 0 is the dense leading one,
    /// columns 1 and 2 the two sparse ones.
    pub eigenvectors: Array2<f64>,
    pub eigenvalues: Array1<f64>,
}

impl SpikedCovariance {
    pub const SPARSE_CARDINALITY: usize = 5;

    /// Dense `u1` (12), 5-sparse `u2` (10) and `u3` (8) on disjoint supports,
    /// remaining eigenvalues uniform in `(0.1, 5)`.
    pub fn generate(dimension: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let card = Self::SPARSE_CARDINALITY;
        if dimension < 2 * card {
            return Err(Error::param(format!(
                "sparse PCA needs dimension >= {}, got {dimension}",
                2 * card
            )));
        }
        let m = dimension;
        let supports = index::sample(rng, m, 2 * card).into_vec();
        let mut basis: Vec<Array1<f64>> = Vec::with_capacity(m);

        let sparse = |support: &[usize], rng: &mut ChaCha8Rng| {
            let mut u = Array1::zeros(m);
            for &k in support {
                u[k] = rng.sample::<f64, _>(StandardNormal);
            }
            let n = u.dot(&u).sqrt();
            u / n
        };
        let u2 = sparse(&supports[..card], rng);
        let u3 = sparse(&supports[card..], rng);

        let mut u1 = gaussian_vec(rng, m);
        orthogonalize(&mut u1, &[&u2, &u3]);
        basis.push(u1);
        basis.push(u2);
        basis.push(u3);

        while basis.len() < m {
            let mut v = gaussian_vec(rng, m);
            let refs: Vec<&Array1<f64>> = basis.iter().collect();
            if orthogonalize(&mut v, &refs) {
                basis.push(v);
            }
        }

        let tail = Uniform::new(0.1, 5.0).expect("valid range");
        let mut eigenvalues = Array1::zeros(m);
        eigenvalues[0] = 12.0;
        eigenvalues[1] = 10.0;
        eigenvalues[2] = 8.0;
        for k in 3..m {
            eigenvalues[k] = rng.sample(tail);
        }

        let mut eigenvectors = Array2::zeros((m, m));
        for (k, v) in basis.iter().enumerate() {
            eigenvectors.column_mut(k).assign(v);
        }
        Ok(Self {
            eigenvectors,
            eigenvalues,
        })
    }

    /// `Sigma = U diag(lambda) U^T`
    pub fn covariance(&self) -> Array2<f64> {
        let scaled = &self.eigenvectors * &self.eigenvalues;
        scaled.dot(&self.eigenvectors.t())
    }

    pub fn sparse_component(&self, k: usize) -> Array1<f64> {
        self.eigenvectors.column(k).to_owned()
    }
}

/// Gram-Schmidt against `basis` (twice for stability), then normalize.
/// Returns false if `v` was numerically in the span.
fn orthogonalize(v: &mut Array1<f64>, basis: &[&Array1<f64>]) -> bool {
    let start = v.dot(v).sqrt();
    for _ in 0..2 {
        for u in basis {
            let c = v.dot(*u);
            v.scaled_add(-c, u);
        }
    }
    let n = v.dot(v).sqrt();
    if n <= 1e-8 * start {
        return false;
    }
    *v /= n;
    true
}

/// Rows of each `D_i` drawn i.i.d. `N(0, Sigma)`; SCAD penalty on the unit ball,
/// ground truth `u2`.
pub fn gen_sparse_pca(params: &SparsePcaParams, seed: u64) -> Result<ProblemInstance> {
    let p = params;
    if p.agents == 0 || p.rows_per_agent == 0 {
        return Err(Error::param("agents and rows_per_agent must be positive"));
    }
    let penalty = DcPenalty::scad(p.theta, p.a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectrum = SpikedCovariance::generate(p.dimension, &mut rng)?;

    // D = Z diag(sqrt(lambda)) U^T with Z standard normal
    let root = &spectrum.eigenvectors * &spectrum.eigenvalues.mapv(f64::sqrt);
    let scale = if p.sample_covariance {
        1.0 / (p.rows_per_agent as f64).sqrt()
    } else {
        1.0
    };
    let mut losses = Vec::with_capacity(p.agents);
    for _ in 0..p.agents {
        let z = gaussian_mat(&mut rng, p.rows_per_agent, p.dimension);
        let d = z.dot(&root.t()) * scale;
        losses.push(LocalLoss::neg_pca(d)?);
    }
    let truth = spectrum.sparse_component(1);
    ProblemInstance::new(losses, penalty, p.lambda, ConstraintSet::unit_ball())?
        .with_ground_truth(truth, true)
}

/// Support (indices of nonzeros) of a vector.
pub fn support(x: ArrayView1<f64>) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(k, _)| k)
        .collect()
}
