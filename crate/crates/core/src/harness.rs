//! Experiment harness: TOML configs, realization sweeps and CSV output.
//!
//! A config file looks like
//!
//! ```toml
//! experiment = "sparse_regression"   # or "sparse_pca", "custom"
//! rounds = 1000
//! realizations = 10
//! seed = 1
//! metrics_every = 10
//! output = "results/regression"
//! algorithms = ["dsparsa_sca", "dsparsa_l", "subgrad_push"]
//!
//! [network]
//! agents = 30
//! out_degree = 2
//!
//! [regression]
//! dimension = 200
//! rows_per_agent = 20
//!
//! [dsparsa_l]
//! rule = "recursive"
//! alpha0 = 0.1
//! mu = 1e-3
//! tau = 2.0
//! ```
//!
//! Only `experiment` and `rounds` are required. Every trace CSV has the
//! columns `round,comm,J,D,NMSE,NMSE_dB,objective`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::Deserialize;

use crate::engine::{run, Algorithm, RunConfig, StepSizeSchedule};
use crate::error::{Error, Result};
use crate::graph::generate_schedule;
use crate::metrics::MetricsRecord;
use crate::penalty::{DcPenalty, PenaltyKind, DEFAULT_LP_EPSILON};
use crate::problem::{
    gen_sparse_pca, gen_sparse_regression, ConstraintSet, LocalLoss, ProblemInstance, SparsePcaParams,
    SparseRegressionParams,
};
use crate::solver::{InnerSolverConfig, SurrogateSpec};

pub const TRACE_HEADER: [&str; 7] = ["round", "comm", "J", "D", "NMSE", "NMSE_dB", "objective"];

/// Realization count used by `--full-scale`.
pub const FULL_REALIZATIONS: usize = 100;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: String,
    rounds: usize,
    realizations: Option<usize>,
    seed: Option<u64>,
    metrics_every: Option<usize>,
    output: Option<PathBuf>,
    algorithms: Option<Vec<String>>,
    network: Option<NetworkSection>,
    regression: Option<RegressionSection>,
    pca: Option<PcaSection>,
    custom: Option<CustomSection>,
    penalty: Option<PenaltySection>,
    dsparsa_sca: Option<AlgorithmSection>,
    dsparsa_l: Option<AlgorithmSection>,
    subgrad_push: Option<AlgorithmSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    agents: Option<usize>,
    out_degree: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegressionSection {
    dimension: Option<usize>,
    rows_per_agent: Option<usize>,
    sparsity: Option<f64>,
    sigma: Option<f64>,
    theta: Option<f64>,
    lambda: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcaSection {
    dimension: Option<usize>,
    rows_per_agent: Option<usize>,
    theta: Option<f64>,
    a: Option<f64>,
    lambda: Option<f64>,
    sample_covariance: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomSection {
    data_dir: PathBuf,
    lambda: f64,
    constraint: Option<String>,
    radius: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PenaltySection {
    kind: String,
    theta: Option<f64>,
    epsilon: Option<f64>,
    p: Option<f64>,
    a: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlgorithmSection {
    rule: Option<String>,
    alpha0: Option<f64>,
    beta: Option<f64>,
    mu: Option<f64>,
    tau: Option<f64>,
    surrogate: Option<String>,
    inner_max_iters: Option<usize>,
    inner_tolerance: Option<f64>,
}

/// Problem family of an experiment, with its generator parameters.
#[derive(Debug, Clone)]
pub enum ExperimentKind {
    SparseRegression(SparseRegressionParams),
    SparsePca(SparsePcaParams),
    /// Fixed data loaded from CSV files written by [`ProblemInstance::write_data_csv`].
    Custom(CustomProblem),
}

#[derive(Debug, Clone)]
pub struct CustomProblem {
    pub data_dir: PathBuf,
    pub penalty: DcPenalty,
    pub lambda: f64,
    pub constraint: ConstraintSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSettings {
    pub algorithm: Algorithm,
    pub step_sizes: StepSizeSchedule,
    /// Unused by the subgradient baseline.
    pub surrogate: SurrogateSpec,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub agents: usize,
    pub out_degree: usize,
    pub algorithms: Vec<AlgorithmSettings>,
    pub rounds: usize,
    pub realizations: usize,
    pub seed: u64,
    pub metrics_every: usize,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn experiment_name(&self) -> &'static str {
        match self.kind {
            ExperimentKind::SparseRegression(_) => "sparse_regression",
            ExperimentKind::SparsePca(_) => "sparse_pca",
            ExperimentKind::Custom(_) => "custom",
        }
    }

    pub fn settings(&self, algorithm: Algorithm) -> Option<&AlgorithmSettings> {
        self.algorithms.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        if self.realizations == 0 {
            return Err(Error::config("realizations must be at least 1"));
        }
        if self.metrics_every == 0 {
            return Err(Error::config("metrics_every must be at least 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms must not be empty"));
        }
        for (k, s) in self.algorithms.iter().enumerate() {
            if self.algorithms[..k].iter().any(|o| o.algorithm == s.algorithm) {
                return Err(Error::config(format!("algorithm {} listed twice", s.algorithm)));
            }
            s.step_sizes.validate()?;
            if s.algorithm != Algorithm::SubgradPush {
                s.surrogate.validate()?;
            }
        }
        if self.agents > 1 && !(1..self.agents).contains(&self.out_degree) {
            return Err(Error::config(format!(
                "out_degree must lie in [1, {}), got {}",
                self.agents, self.out_degree
            )));
        }
        let convex_loss = match &self.kind {
            ExperimentKind::SparseRegression(p) => {
                check_agents(p.agents, self.agents)?;
                // cheap structural check of the generator parameters
                gen_sparse_regression(
                    &SparseRegressionParams {
                        agents: 1,
                        rows_per_agent: 1,
                        ..p.clone()
                    },
                    0,
                )?;
                true
            }
            ExperimentKind::SparsePca(p) => {
                check_agents(p.agents, self.agents)?;
                gen_sparse_pca(
                    &SparsePcaParams {
                        agents: 1,
                        rows_per_agent: 1,
                        ..p.clone()
                    },
                    0,
                )?;
                false
            }
            ExperimentKind::Custom(c) => {
                if !(c.lambda.is_finite() && c.lambda >= 0.0) {
                    return Err(Error::config(format!("lambda must be nonnegative, got {}", c.lambda)));
                }
                true
            }
        };
        if !convex_loss {
            for s in &self.algorithms {
                if matches!(s.surrogate, SurrogateSpec::FullConvex { .. }) && s.algorithm != Algorithm::SubgradPush {
                    return Err(Error::config(format!(
                        "{} uses the full_convex surrogate, which needs a convex loss; \
                         use surrogate = \"linearized\" or drop the algorithm",
                        s.algorithm
                    )));
                }
            }
        }
        Ok(())
    }

    /// Instance of realization `r`, generated with seed `seed + r`.
    pub fn instance(&self, realization: usize) -> Result<ProblemInstance> {
        let seed = self.seed.wrapping_add(realization as u64);
        match &self.kind {
            ExperimentKind::SparseRegression(p) => gen_sparse_regression(p, seed),
            ExperimentKind::SparsePca(p) => gen_sparse_pca(p, seed),
            ExperimentKind::Custom(c) => load_custom(c),
        }
    }
}

fn check_agents(in_params: usize, in_network: usize) -> Result<()> {
    if in_params != in_network {
        return Err(Error::config(format!(
            "generator has {in_params} agents but the network has {in_network}"
        )));
    }
    Ok(())
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg = parse_config_str(&text).map_err(|e| match e {
        Error::ConfigParse { message, .. } => Error::ConfigParse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    Ok(cfg)
}

/// Parses and validates config text. Relative paths stay relative.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let raw: FileConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
        path: PathBuf::from("<config>"),
        message: e.to_string(),
    })?;
    let cfg = resolve(raw)?;
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(raw: FileConfig) -> Result<ExperimentConfig> {
    let net = raw.network.unwrap_or_default();
    let agents = net.agents.unwrap_or(30);
    let out_degree = net.out_degree.unwrap_or(2.min(agents.saturating_sub(1)).max(1));

    let unused = |name: &str, present: bool| -> Result<()> {
        if present {
            Err(Error::config(format!(
                "section [{name}] does not apply to experiment `{}`",
                raw.experiment
            )))
        } else {
            Ok(())
        }
    };

    let kind = match raw.experiment.as_str() {
        "sparse_regression" => {
            unused("pca", raw.pca.is_some())?;
            unused("custom", raw.custom.is_some())?;
            unused("penalty", raw.penalty.is_some())?;
            let s = raw.regression.unwrap_or_default();
            let d = SparseRegressionParams::default();
            ExperimentKind::SparseRegression(SparseRegressionParams {
                agents,
                dimension: s.dimension.unwrap_or(d.dimension),
                rows_per_agent: s.rows_per_agent.unwrap_or(d.rows_per_agent),
                sparsity: s.sparsity.unwrap_or(d.sparsity),
                sigma: s.sigma.unwrap_or(d.sigma),
                theta: s.theta.unwrap_or(d.theta),
                lambda: s.lambda.unwrap_or(d.lambda),
            })
        }
        "sparse_pca" => {
            unused("regression", raw.regression.is_some())?;
            unused("custom", raw.custom.is_some())?;
            unused("penalty", raw.penalty.is_some())?;
            let s = raw.pca.unwrap_or_default();
            let d = SparsePcaParams::default();
            ExperimentKind::SparsePca(SparsePcaParams {
                agents,
                rows_per_agent: s.rows_per_agent.unwrap_or(d.rows_per_agent),
                dimension: s.dimension.unwrap_or(d.dimension),
                theta: s.theta.unwrap_or(d.theta),
                a: s.a.unwrap_or(d.a),
                lambda: s.lambda.unwrap_or(d.lambda),
                sample_covariance: s.sample_covariance.unwrap_or(d.sample_covariance),
            })
        }
        "custom" => {
            unused("regression", raw.regression.is_some())?;
            unused("pca", raw.pca.is_some())?;
            let c = raw
                .custom
                .ok_or_else(|| Error::config("experiment `custom` needs a [custom] section"))?;
            let pen = raw
                .penalty
                .ok_or_else(|| Error::config("experiment `custom` needs a [penalty] section"))?;
            let constraint = match c.constraint.as_deref().unwrap_or("all_space") {
                "all_space" => {
                    if c.radius.is_some() {
                        return Err(Error::config("`radius` needs constraint = \"l2_ball\""));
                    }
                    ConstraintSet::AllSpace
                }
                "l2_ball" => ConstraintSet::l2_ball(c.radius.unwrap_or(1.0))?,
                other => {
                    return Err(Error::config(format!(
                        "unknown constraint `{other}`, expected all_space or l2_ball"
                    )))
                }
            };
            ExperimentKind::Custom(CustomProblem {
                data_dir: c.data_dir,
                penalty: resolve_penalty(&pen)?,
                lambda: c.lambda,
                constraint,
            })
        }
        other => {
            return Err(Error::config(format!(
                "unknown experiment `{other}`, expected sparse_regression, sparse_pca or custom"
            )))
        }
    };

    let pca = matches!(kind, ExperimentKind::SparsePca(_));
    let names = raw.algorithms.unwrap_or_else(|| {
        let mut v = vec!["dsparsa_sca", "dsparsa_l", "subgrad_push"];
        if pca {
            v.remove(0);
        }
        v.into_iter().map(String::from).collect()
    });
    let sections = [
        (Algorithm::DsparsaSca, raw.dsparsa_sca),
        (Algorithm::DsparsaL, raw.dsparsa_l),
        (Algorithm::SubgradPush, raw.subgrad_push),
    ];
    let algorithm_list: Vec<Algorithm> = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
    let mut algorithms = Vec::new();
    for (algorithm, section) in sections {
        let listed = algorithm_list.contains(&algorithm);
        if !listed && section.is_some() {
            return Err(Error::config(format!(
                "section [{algorithm}] given but {algorithm} is not in `algorithms`"
            )));
        }
        if listed {
            let section = section.unwrap_or_default();
            algorithms.push(resolve_algorithm(algorithm, &section, pca)?);
        }
    }
    // keep the user's order
    algorithms.sort_by_key(|s| algorithm_list.iter().position(|a| *a == s.algorithm));
    if algorithm_list.len() != algorithms.len() {
        return Err(Error::config("an algorithm is listed twice in `algorithms`"));
    }

    Ok(ExperimentConfig {
        kind,
        agents,
        out_degree,
        algorithms,
        rounds: raw.rounds,
        realizations: raw.realizations.unwrap_or(10),
        seed: raw.seed.unwrap_or(0),
        metrics_every: raw.metrics_every.unwrap_or(10),
        output: raw.output.unwrap_or_else(|| PathBuf::from("results")),
    })
}

/// Step-size and surrogate defaults per problem family.
fn defaults(algorithm: Algorithm, pca: bool) -> (f64, f64, f64) {
    // (alpha0, mu, tau)
    match (algorithm, pca) {
        (Algorithm::SubgradPush, false) => (1.0, 1e-2, 1.0),
        (Algorithm::SubgradPush, true) => (0.1, 1e-2, 1.0),
        (_, false) => (0.1, 1e-3, 2.0),
        (_, true) => (1.0, 1e-3, 1e-3),
    }
}

fn resolve_algorithm(algorithm: Algorithm, s: &AlgorithmSection, pca: bool) -> Result<AlgorithmSettings> {
    let (alpha0_d, mu_d, tau_d) = defaults(algorithm, pca);
    let alpha0 = s.alpha0.unwrap_or(alpha0_d);
    let step_sizes = match s.rule.as_deref().unwrap_or("recursive") {
        "recursive" => {
            if s.beta.is_some() {
                return Err(Error::config(format!("[{algorithm}] `beta` needs rule = \"power\"")));
            }
            StepSizeSchedule::recursive(alpha0, s.mu.unwrap_or(mu_d))?
        }
        "power" => {
            if s.mu.is_some() {
                return Err(Error::config(format!("[{algorithm}] `mu` needs rule = \"recursive\"")));
            }
            let beta = s
                .beta
                .ok_or_else(|| Error::config(format!("[{algorithm}] rule = \"power\" needs `beta`")))?;
            StepSizeSchedule::power(alpha0, beta)?
        }
        other => {
            return Err(Error::config(format!(
                "[{algorithm}] unknown rule `{other}`, expected recursive or power"
            )))
        }
    };
    let tau = s.tau.unwrap_or(tau_d);
    let d_inner = InnerSolverConfig::default();
    let inner = InnerSolverConfig {
        max_iters: s.inner_max_iters.unwrap_or(d_inner.max_iters),
        tolerance: s.inner_tolerance.unwrap_or(d_inner.tolerance),
    };
    let default_surrogate = match algorithm {
        Algorithm::DsparsaSca => "full_convex",
        _ => "linearized",
    };
    let surrogate = match s.surrogate.as_deref().unwrap_or(default_surrogate) {
        "linearized" => SurrogateSpec::Linearized { tau },
        "partial_linearized" => SurrogateSpec::PartialLinearized { tau, inner },
        "full_convex" => SurrogateSpec::FullConvex { tau, inner },
        other => {
            return Err(Error::config(format!(
                "[{algorithm}] unknown surrogate `{other}`, expected linearized, partial_linearized or full_convex"
            )))
        }
    };
    Ok(AlgorithmSettings {
        algorithm,
        step_sizes,
        surrogate,
    })
}

fn resolve_penalty(s: &PenaltySection) -> Result<DcPenalty> {
    let need = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| Error::config(format!("penalty `{}` needs `{name}`", s.kind)))
    };
    let kind = match s.kind.as_str() {
        "exp" => PenaltyKind::Exp { theta: need("theta", s.theta)? },
        "lp_plus" => PenaltyKind::LpPlus {
            theta: need("theta", s.theta)?,
            epsilon: s.epsilon.unwrap_or(DEFAULT_LP_EPSILON),
        },
        "lp_minus" => PenaltyKind::LpMinus {
            theta: need("theta", s.theta)?,
            p: need("p", s.p)?,
        },
        "scad" => PenaltyKind::Scad {
            theta: need("theta", s.theta)?,
            a: need("a", s.a)?,
        },
        "log" => PenaltyKind::Log { theta: need("theta", s.theta)? },
        "l1" => PenaltyKind::L1,
        other => {
            return Err(Error::config(format!(
                "unknown penalty `{other}`, expected exp, lp_plus, lp_minus, scad, log or l1"
            )))
        }
    };
    DcPenalty::new(kind)
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(wrap)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(wrap)?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::config(format!("{}: ragged rows", path.display())));
        }
        for field in record.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| {
                Error::config(format!("{}: bad number `{field}`: {e}", path.display()))
            })?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn read_column(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(Error::config(format!("{}: expected one column", path.display())));
    }
    Ok(m.column(0).to_owned())
}

/// Loads agents `agent000`, `agent001`, ... until the first missing index.
pub fn load_custom(c: &CustomProblem) -> Result<ProblemInstance> {
    let mut losses = Vec::new();
    let mut pca = None;
    loop {
        let i = losses.len();
        let a = c.data_dir.join(format!("agent{i:03}_A.csv"));
        let d = c.data_dir.join(format!("agent{i:03}_D.csv"));
        let loss = if a.exists() {
            let b = read_column(&c.data_dir.join(format!("agent{i:03}_b.csv")))?;
            LocalLoss::least_squares(read_matrix(&a)?, b)?
        } else if d.exists() {
            LocalLoss::neg_pca(read_matrix(&d)?)?
        } else {
            break;
        };
        let is_pca = !loss.is_convex();
        if *pca.get_or_insert(is_pca) != is_pca {
            return Err(Error::config("custom data mixes least-squares and PCA agents"));
        }
        losses.push(loss);
    }
    if losses.is_empty() {
        return Err(Error::config(format!(
            "no agent000_A.csv or agent000_D.csv in {}",
            c.data_dir.display()
        )));
    }
    let problem = ProblemInstance::new(losses, c.penalty, c.lambda, c.constraint)?;
    let truth = c.data_dir.join("ground_truth.csv");
    if truth.exists() {
        problem.with_ground_truth(read_column(&truth)?, pca == Some(true))
    } else {
        Ok(problem)
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

/// Writes trace rows with the fixed header. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_trace_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(TRACE_HEADER).map_err(wrap)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.comm.to_string(),
            fmt_f64(r.j),
            fmt_f64(r.d),
            fmt_f64(r.nmse),
            fmt_f64(r.nmse_db()),
            fmt_f64(r.objective),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a trace written by [`write_trace_csv`]. `NMSE_dB` is recomputed, not read.
pub fn read_trace_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(wrap)?;
    let header = reader.headers().map_err(wrap)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::config(format!(
            "{}: expected header {}",
            path.display(),
            TRACE_HEADER.join(",")
        )));
    }
    let bad = |field: &str| Error::config(format!("{}: bad value `{field}`", path.display()));
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(wrap)?;
        let int = |k: usize| record[k].parse::<usize>().map_err(|_| bad(&record[k]));
        let float = |k: usize| record[k].parse::<f64>().map_err(|_| bad(&record[k]));
        out.push(MetricsRecord {
            round: int(0)?,
            comm: int(1)?,
            j: float(2)?,
            d: float(3)?,
            nmse: float(4)?,
            objective: float(6)?,
        });
    }
    Ok(out)
}

/// Row-wise arithmetic mean of equally shaped traces. NMSE is averaged in
/// linear scale.
pub fn mean_trace(traces: &[Vec<MetricsRecord>]) -> Result<Vec<MetricsRecord>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::param("mean of zero traces"))?;
    let count = traces.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(k, head)| {
            let mut acc = MetricsRecord {
                j: 0.0,
                d: 0.0,
                nmse: 0.0,
                objective: 0.0,
                ..*head
            };
            for t in traces {
                let r = t.get(k).filter(|r| r.round == head.round).ok_or_else(|| {
                    Error::param("traces disagree on their recorded rounds")
                })?;
                acc.j += r.j;
                acc.d += r.d;
                acc.nmse += r.nmse;
                acc.objective += r.objective;
            }
            acc.j /= count;
            acc.d /= count;
            acc.nmse /= count;
            acc.objective /= count;
            Ok(acc)
        })
        .collect()
}

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SCHEDULE_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

#[derive(Debug, Clone)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    /// One trace per realization, in realization order.
    pub traces: Vec<Vec<MetricsRecord>>,
    pub mean: Vec<MetricsRecord>,
    /// Largest agent norm seen at any recorded round of any realization.
    pub max_agent_norm: f64,
    pub inner_failures: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<AlgorithmResult>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn result(&self, algorithm: Algorithm) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.algorithm == algorithm)
    }
}

/// Runs every algorithm on every realization and writes
/// `<algo>_r<NNN>.csv`, `<algo>_mean.csv` and `summary.csv` under `config.output`.
///
/// Realization `r` uses instance seed `seed + r`; all algorithms of a
/// realization share the instance, the graph schedule and the starting points.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let out = &config.output;
    fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;

    let per_realization: Vec<Vec<crate::engine::RunTrace>> = (0..config.realizations)
        .into_par_iter()
        .map(|r| {
            let problem = config.instance(r)?;
            if problem.agent_count() != config.agents {
                return Err(Error::config(format!(
                    "instance has {} agents but the network has {}",
                    problem.agent_count(),
                    config.agents
                )));
            }
            let base = config.seed.wrapping_add(r as u64);
            let schedule = generate_schedule(config.agents, config.out_degree, derive_seed(base, SCHEDULE_STREAM))?;
            config
                .algorithms
                .iter()
                .map(|s| {
                    run(
                        &problem,
                        &schedule,
                        &RunConfig {
                            algorithm: s.algorithm,
                            surrogate: s.surrogate,
                            step_sizes: s.step_sizes,
                            rounds: config.rounds,
                            seed: derive_seed(base, INIT_STREAM),
                            metrics_every: config.metrics_every,
                        },
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut files = Vec::new();
    let mut results = Vec::new();
    for (k, settings) in config.algorithms.iter().enumerate() {
        let name = settings.algorithm.as_str();
        let mut traces = Vec::with_capacity(config.realizations);
        let mut max_agent_norm = 0.0f64;
        let mut inner_failures = 0;
        for (r, runs) in per_realization.iter().enumerate() {
            let t = &runs[k];
            let path = out.join(format!("{name}_r{r:03}.csv"));
            write_trace_csv(&t.records, &path)?;
            files.push(path);
            max_agent_norm = t.max_agent_norms.iter().copied().fold(max_agent_norm, f64::max);
            inner_failures += t.inner_failures;
            traces.push(t.records.clone());
        }
        let mean = mean_trace(&traces)?;
        let path = out.join(format!("{name}_mean.csv"));
        write_trace_csv(&mean, &path)?;
        files.push(path);
        results.push(AlgorithmResult {
            algorithm: settings.algorithm,
            traces,
            mean,
            max_agent_norm,
            inner_failures,
        });
    }

    let path = out.join("summary.csv");
    write_summary_csv(&results, &path)?;
    files.push(path);
    Ok(ExperimentOutcome { results, files })
}

/// Long-format mean curves of all algorithms, sorted by `comm`.
fn write_summary_csv(results: &[AlgorithmResult], path: &Path) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rows: Vec<(usize, usize, &MetricsRecord)> = results
        .iter()
        .enumerate()
        .flat_map(|(k, res)| res.mean.iter().map(move |r| (r.comm, k, r)))
        .collect();
    rows.sort_by_key(|&(comm, k, _)| (comm, k));
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let mut header = vec!["algorithm"];
    header.extend(TRACE_HEADER);
    w.write_record(&header).map_err(wrap)?;
    for (_, k, r) in rows {
        w.write_record([
            results[k].algorithm.as_str().to_string(),
            r.round.to_string(),
            r.comm.to_string(),
            fmt_f64(r.j),
            fmt_f64(r.d),
            fmt_f64(r.nmse),
            fmt_f64(r.nmse_db()),
            fmt_f64(r.objective),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
