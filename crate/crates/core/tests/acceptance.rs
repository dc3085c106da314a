//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.
//!
//! `cargo test -p dsparsa --test acceptance`

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dsparsa::engine::{dsparsa_round, init_states};
use dsparsa::harness::{parse_config_str, run_experiment, ExperimentOutcome};
use dsparsa::solver::{ball_prox_solve, prox_linear};
use dsparsa::*;
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn max_abs(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn conservation() -> Verdict {
    let start = Instant::now();
    let params = SparseRegressionParams {
        agents: 10,
        dimension: 20,
        ..Default::default()
    };
    let problem = gen_sparse_regression(&params, 11).unwrap();
    let schedule = generate_schedule(10, 2, 12).unwrap();
    let steps = StepSizeSchedule::recursive(0.1, 1e-3).unwrap();
    let specs = [
        SurrogateSpec::FullConvex { tau: 2.0, inner: InnerSolverConfig::default() },
        SurrogateSpec::Linearized { tau: 2.0 },
    ];
    let mut worst_phi = 0.0f64;
    let mut worst_y = 0.0f64;
    for spec in &specs {
        let mut states = init_states(&problem, 13).unwrap();
        for n in 0..=200 {
            if n > 0 {
                states = dsparsa_round(&states, &problem, spec, &schedule, &steps, n - 1).unwrap().states;
            }
            let phi_sum: f64 = states.iter().map(|s| s.phi).sum();
            worst_phi = worst_phi.max((phi_sum - 10.0).abs() / 10.0);
            let mut tracked = Array1::<f64>::zeros(20);
            let mut grads = Array1::<f64>::zeros(20);
            for (i, s) in states.iter().enumerate() {
                tracked.scaled_add(s.phi, &s.y);
                grads += &problem.loss(i).grad(s.x.view()).unwrap();
            }
            let scale = grads.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            worst_y = worst_y.max(max_abs(&tracked, &grads) / scale);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst_phi <= 1e-9 && worst_y <= 1e-9 && elapsed < Duration::from_secs(5),
        format!("max rel phi err {worst_phi:.1e}, max rel tracking err {worst_y:.1e}, {elapsed:.2?}"),
    )
}

fn penalty_derivatives() -> Verdict {
    let kinds = [
        DcPenalty::exp(20.0).unwrap(),
        DcPenalty::exp(2.0).unwrap(),
        DcPenalty::lp_plus(2.0, 1e-6).unwrap(),
        DcPenalty::lp_plus(5.0, 1e-3).unwrap(),
        DcPenalty::lp_minus(3.0, -0.5).unwrap(),
        DcPenalty::lp_minus(10.0, -2.0).unwrap(),
        DcPenalty::scad(20.0, 2.0).unwrap(),
        DcPenalty::scad(5.0, 3.7).unwrap(),
        DcPenalty::log(20.0).unwrap(),
        DcPenalty::log(1.0).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for pen in &kinds {
        let kinks: Vec<f64> = match pen.kind() {
            PenaltyKind::Scad { theta, a } => vec![0.0, 1.0 / theta, a / theta],
            _ => vec![0.0],
        };
        let exclusion = match pen.kind() {
            PenaltyKind::LpPlus { .. } => 1e-2,
            _ => 1e-3,
        };
        let minus = |x: f64| pen.eta() * x.abs() - pen.eval(x);
        let mut n = 0;
        while n < 10_000 {
            let x: f64 = rng.random_range(-2.0..2.0);
            if kinks.iter().any(|k| (x.abs() - k).abs() < exclusion) {
                continue;
            }
            let fd = (minus(x + h) - minus(x - h)) / (2.0 * h);
            worst = worst.max((fd - pen.grad_minus(x)).abs());
            n += 1;
        }
        checked += n;
    }

    let mut jump = 0.0f64;
    for pen in [DcPenalty::scad(20.0, 2.0).unwrap(), DcPenalty::scad(5.0, 3.7).unwrap()] {
        let PenaltyKind::Scad { theta, a } = pen.kind() else { unreachable!() };
        for t in [1.0 / theta, a / theta] {
            for side in [t.next_down(), t.next_up()] {
                jump = jump.max((pen.eval(side) - pen.eval(t)).abs());
                jump = jump.max((pen.grad_minus(side) - pen.grad_minus(t)).abs());
            }
        }
    }
    verdict(
        worst <= 1e-6 && jump <= 1e-12,
        format!("{checked} points, max |fd - grad| {worst:.1e}; SCAD max jump at breakpoints {jump:.1e}"),
    )
}

/// Minimizes `g^T x + tau/2 ||x - x_bar||^2 + w ||x||_1` over the ball (or the
/// whole space) by proximal gradient with step `0.5 / tau`. The prox of
/// `w ||.||_1 + indicator(ball)` is the projection of the soft threshold.
fn pg_oracle(g: &Array1<f64>, x_bar: &Array1<f64>, tau: f64, w: f64, ball: bool) -> Array1<f64> {
    let step = 0.5 / tau;
    let mut x = Array1::<f64>::zeros(g.len());
    for _ in 0..5000 {
        let grad = g + &((&x - x_bar) * tau);
        let y = &x - &(grad * step);
        let mut next = y.mapv(|v| v.signum() * (v.abs() - step * w).max(0.0));
        if ball {
            let n = next.dot(&next).sqrt();
            if n > 1.0 {
                next /= n;
            }
        }
        x = next;
    }
    x
}

fn subproblem_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_free = 0.0f64;
    let mut worst_ball = 0.0f64;
    let mut worst_solver = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(1..=10);
        let vec = |rng: &mut ChaCha8Rng, s: f64| Array1::from_shape_fn(m, |_| s * rng.random_range(-1.0..1.0));
        let g = vec(&mut rng, 5.0);
        let x_bar = vec(&mut rng, 1.5);
        let tau = 10f64.powf(rng.random_range(-2.0..1.0));
        let w = rng.random_range(0.0..3.0);

        let free = prox_linear(g.view(), x_bar.view(), tau, w, ConstraintSet::AllSpace);
        worst_free = worst_free.max(max_abs(&free, &pg_oracle(&g, &x_bar, tau, w, false)));
        let ball = ball_prox_solve(g.view(), x_bar.view(), tau, w);
        worst_ball = worst_ball.max(max_abs(&ball, &pg_oracle(&g, &x_bar, tau, w, true)));

        // full subproblem path with a linearized least-squares loss
        let a = Array2::from_shape_fn((m + 2, m), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(m + 2, |_| rng.random_range(-1.0..1.0));
        let loss = LocalLoss::least_squares(a, b).unwrap();
        let pen = DcPenalty::log(rng.random_range(1.0..30.0)).unwrap();
        let lambda = rng.random_range(0.0..1.0);
        let pi = vec(&mut rng, 1.0);
        let x_cur = ConstraintSet::unit_ball().project(x_bar.view());
        for constraint in [ConstraintSet::AllSpace, ConstraintSet::unit_ball()] {
            let got = solve_subproblem(&loss, &pen, lambda, constraint, &SurrogateSpec::Linearized { tau }, x_cur.view(), pi.view())
                .unwrap()
                .x;
            let mut lin = loss.grad(x_cur.view()).unwrap() + &pi;
            lin.scaled_add(-lambda, &pen.grad_minus_vec(x_cur.view()));
            let expected = pg_oracle(&lin, &x_cur, tau, lambda * pen.eta(), constraint != ConstraintSet::AllSpace);
            worst_solver = worst_solver.max(max_abs(&got, &expected));
        }
    }
    let elapsed = start.elapsed();
    let worst = worst_free.max(worst_ball).max(worst_solver);
    verdict(
        worst <= 1e-6 && elapsed < Duration::from_secs(30),
        format!(
            "100 instances: soft threshold {worst_free:.1e}, ball prox {worst_ball:.1e}, subproblem {worst_solver:.1e}, {elapsed:.2?}"
        ),
    )
}

fn single_agent() -> Verdict {
    // F(x) = ||A x - b||^2 with A^T A eigenvalues in [1, 1.5]
    let a = array![
        [1.1, 0.1, 0.0, 0.0],
        [0.1, 1.0, 0.1, 0.0],
        [0.0, 0.1, 1.2, 0.05],
        [0.0, 0.0, 0.05, 1.05]
    ];
    let b = array![1.0, -2.0, 0.5, 3.0];
    let loss = LocalLoss::least_squares(a, b).unwrap();
    let tau = loss.lipschitz();
    let problem = ProblemInstance::new(vec![loss], DcPenalty::log(20.0).unwrap(), 0.0, ConstraintSet::AllSpace).unwrap();
    let schedule = generate_schedule(1, 1, 0).unwrap();
    let config = RunConfig {
        algorithm: Algorithm::DsparsaL,
        surrogate: SurrogateSpec::Linearized { tau },
        step_sizes: StepSizeSchedule::power(1.0, 0.51).unwrap(),
        rounds: 2000,
        seed: 4,
        metrics_every: 1,
    };
    let trace = run(&problem, &schedule, &config).unwrap();
    let x = &trace.final_states[0].x;
    let g = problem.grad_total(x.view()).unwrap();
    let gnorm = g.dot(&g).sqrt();
    let first = trace.records.iter().find(|r| r.j < 1e-8).map(|r| r.round);
    verdict(
        gnorm < 1e-8,
        format!("gradient norm after 2000 rounds {gnorm:.1e} (J < 1e-8 first at round {first:?})"),
    )
}

fn consensus_and_stationarity() -> Verdict {
    let start = Instant::now();
    let params = SparseRegressionParams {
        agents: 10,
        dimension: 50,
        ..Default::default()
    };
    let problem = gen_sparse_regression(&params, 5).unwrap();
    let schedule = generate_schedule(10, 2, 6).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for (algorithm, surrogate) in [
        (Algorithm::DsparsaSca, SurrogateSpec::FullConvex { tau: 2.0, inner: InnerSolverConfig::default() }),
        (Algorithm::DsparsaL, SurrogateSpec::Linearized { tau: 2.0 }),
    ] {
        let config = RunConfig {
            algorithm,
            surrogate,
            step_sizes: StepSizeSchedule::recursive(0.1, 1e-3).unwrap(),
            rounds: 5000,
            seed: 7,
            metrics_every: 10,
        };
        let trace = run(&problem, &schedule, &config).unwrap();
        let first = trace.records.iter().find(|r| r.d <= 1e-5 && r.j <= 1e-4);
        let last = trace.records.last().unwrap();
        pass &= first.is_some() && last.d <= 1e-5 && last.j <= 1e-4;
        details.push(format!(
            "{algorithm}: reached at round {:?}, final D {:.1e} J {:.1e}",
            first.map(|r| r.round),
            last.d,
            last.j
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    verdict(pass, format!("{}, {elapsed:.2?}", details.join("; ")))
}

fn regression_config(out: &Path) -> String {
    format!(
        r#"
experiment = "sparse_regression"
rounds = 2000
realizations = 10
seed = 2024
metrics_every = 10
output = {out:?}
algorithms = ["dsparsa_sca", "dsparsa_l", "subgrad_push"]

[network]
agents = 30
out_degree = 2

[regression]
dimension = 200
rows_per_agent = 20
sparsity = 0.8
sigma = 0.1
theta = 20.0
lambda = 0.5

[dsparsa_sca]
rule = "recursive"
alpha0 = 0.1
mu = 1e-3
tau = 2.0

[dsparsa_l]
rule = "recursive"
alpha0 = 0.1
mu = 1e-3
tau = 2.0

[subgrad_push]
rule = "recursive"
alpha0 = 1.0
mu = 1e-2
"#,
        out = out.display().to_string()
    )
}

fn nmse_at(outcome: &ExperimentOutcome, algorithm: Algorithm, comm: usize) -> Option<f64> {
    outcome.result(algorithm)?.mean.iter().find(|r| r.comm == comm).map(|r| r.nmse)
}

fn regression_trend(dir: &Path) -> (Verdict, Option<ExperimentOutcome>) {
    let start = Instant::now();
    let config = parse_config_str(&regression_config(dir)).unwrap();
    let outcome = run_experiment(&config).unwrap();
    let elapsed = start.elapsed();

    let base = outcome.result(Algorithm::SubgradPush).unwrap();
    let mut pass = true;
    let mut compared = 0;
    let mut worst_margin_db = f64::INFINITY;
    for r in base.mean.iter().filter(|r| r.comm >= 500) {
        for algorithm in [Algorithm::DsparsaSca, Algorithm::DsparsaL] {
            if let Some(nmse) = nmse_at(&outcome, algorithm, r.comm) {
                compared += 1;
                pass &= nmse < r.nmse;
                worst_margin_db = worst_margin_db.min(10.0 * (r.nmse / nmse).log10());
            }
        }
    }
    pass &= compared > 0;

    let hit = |algorithm| {
        outcome
            .result(algorithm)
            .unwrap()
            .mean
            .iter()
            .find(|r| r.j <= 1e-3)
            .map(|r| r.comm)
    };
    let (sca, l) = (hit(Algorithm::DsparsaSca), hit(Algorithm::DsparsaL));
    pass &= matches!((sca, l), (Some(s), Some(l)) if s <= l);
    pass &= elapsed < Duration::from_secs(15 * 60);
    (
        verdict(
            pass,
            format!(
                "{compared} comparisons from 500 exchanges, smallest DSparsA advantage {worst_margin_db:.2} dB; \
                 mean J <= 1e-3 at exchanges SCA {sca:?}, L {l:?}; {elapsed:.2?}"
            ),
        ),
        Some(outcome),
    )
}

fn pca_config(out: &Path) -> String {
    format!(
        r#"
experiment = "sparse_pca"
rounds = 2000
realizations = 5
seed = 77
metrics_every = 10
output = {out:?}
algorithms = ["dsparsa_l", "subgrad_push"]

[network]
agents = 30
out_degree = 2

[pca]
dimension = 30
rows_per_agent = 500
theta = 20.0
a = 2.0
lambda = 5.0

[dsparsa_l]
rule = "recursive"
alpha0 = 1.0
mu = 1e-3
tau = 1e-3

[subgrad_push]
rule = "recursive"
alpha0 = 0.1
mu = 1e-2
"#,
        out = out.display().to_string()
    )
}

fn pca_trend(outcome: &ExperimentOutcome, elapsed: Duration) -> Verdict {
    let ds = nmse_at(outcome, Algorithm::DsparsaL, 2000);
    let sp = nmse_at(outcome, Algorithm::SubgradPush, 2000);
    let mean = &outcome.result(Algorithm::DsparsaL).unwrap().mean;
    let first = mean.first().unwrap();
    let at = mean.iter().find(|r| r.comm == 2000).unwrap_or_else(|| mean.last().unwrap());
    let d_drop = first.d / at.d;
    let j_drop = first.j / at.j;
    let pass = matches!((ds, sp), (Some(a), Some(b)) if a < b)
        && d_drop >= 100.0
        && j_drop >= 100.0
        && elapsed < Duration::from_secs(20 * 60);
    let db = |v: Option<f64>| v.map(|x| format!("{:.2} dB", 10.0 * x.log10())).unwrap_or("missing".into());
    verdict(
        pass,
        format!(
            "NMSE at 2000 exchanges DSparsA {} vs baseline {}; D drop {d_drop:.1e}x, J drop {j_drop:.1e}x; {elapsed:.2?}",
            db(ds),
            db(sp)
        ),
    )
}

fn pca_feasibility(outcome: &ExperimentOutcome) -> Verdict {
    let worst = outcome
        .results
        .iter()
        .map(|r| r.max_agent_norm)
        .fold(0.0, f64::max);
    verdict(
        worst <= 1.0 + 1e-12,
        format!("largest agent norm over all recorded rounds {worst:.17}"),
    )
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    let config = parse_config_str(&regression_config(second)).unwrap();
    run_experiment(&config).unwrap();
    let mut names: Vec<_> = fs::read_dir(first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let a = fs::read(first.join(name)).unwrap();
        let b = fs::read(second.join(name)).ok();
        if b.as_deref() != Some(a.as_slice()) {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    let count_second = fs::read_dir(second).unwrap().count();
    verdict(
        differing.is_empty() && count_second == names.len() && !names.is_empty(),
        format!("{} files compared, {} differ {:?}", names.len(), differing.len(), differing),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let reg_a = tmp.path().join("regression_a");
    let reg_b = tmp.path().join("regression_b");
    let pca_dir = tmp.path().join("pca");

    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!("criterion {n} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };

    report(1, "push-sum and gradient-tracking conservation", conservation());
    report(2, "penalty gradients and SCAD continuity", penalty_derivatives());
    report(3, "subproblem oracle equivalence", subproblem_oracle());
    report(4, "single-agent reduction", single_agent());
    report(5, "consensus and stationarity", consensus_and_stationarity());
    let (v6, _) = regression_trend(&reg_a);
    report(6, "regression trend vs subgradient-push", v6);

    let start = Instant::now();
    let pca = run_experiment(&parse_config_str(&pca_config(&pca_dir)).unwrap()).unwrap();
    let pca_elapsed = start.elapsed();
    report(7, "sparse PCA trend vs subgradient-push", pca_trend(&pca, pca_elapsed));
    report(8, "sparse PCA feasibility", pca_feasibility(&pca));
    report(9, "byte-identical reruns", determinism(&reg_a, &reg_b));

    let failed = results.iter().filter(|(_, _, v)| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
