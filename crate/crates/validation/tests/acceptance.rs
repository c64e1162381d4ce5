//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion fails. The long size sweep runs only
//! with `--ignored` or `--include-ignored`; positional arguments filter
//! criteria by id (for example `cargo test --test acceptance -- 4 6`).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sarvb::dlreg::{gibbs_fit, vb_fit, DLPrior, GibbsOptions, RegressionProblem};
use sarvb::metrics::{corr2, effects_matrix, ssim, SsimParams};
use sarvb::montecarlo::{run_monte_carlo, MonteCarloOptions, MonteCarloReport};
use sarvb::simulator::{simulate_coefficients, simulate_dataset, simulate_panel, simulate_weights, SimulationConfig};
use sarvb::spatial::solve_reduced_form;
use sarvb::twostage::{estimate, EstimationResult, PipelineOptions};
use sarvb::WeightsMatrix;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn desk_config(seed: u64, n: usize) -> SimulationConfig {
    SimulationConfig { n, seed, ..Default::default() }
}

const DESK_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct DeskRun {
    seed: u64,
    report: MonteCarloReport,
    estimate: EstimationResult,
    w_true: WeightsMatrix,
    theta_true: DVector<f64>,
    secs: f64,
}

fn desk_runs() -> Vec<DeskRun> {
    let prior = DLPrior::default();
    let options = MonteCarloOptions::default();
    DESK_SEEDS
        .iter()
        .map(|&seed| {
            let config = desk_config(seed, 30);
            let start = Instant::now();
            let report = run_monte_carlo(&config, &prior, &options).expect("desk run");
            let secs = start.elapsed().as_secs_f64();
            let data = simulate_dataset(&config, 0).unwrap();
            let estimate = estimate(&data.panel, &prior, &options.pipeline).unwrap();
            let theta_true = data.theta_true.theta.column(0).into_owned();
            DeskRun { seed, report, estimate, w_true: data.w_true, theta_true, secs }
        })
        .collect()
}

fn criterion_1(runs: &[DeskRun]) -> Verdict {
    let corr: Vec<f64> = runs.iter().map(|r| r.report.replications[0].weights_similarity.corr2).collect();
    let sim: Vec<f64> = runs.iter().map(|r| r.report.replications[0].weights_similarity.ssim).collect();
    let slowest = runs.iter().map(|r| r.secs).fold(0.0, f64::max);
    let (c, s) = (mean(&corr), mean(&sim));
    Verdict::new(
        c >= 0.85 && s >= 0.70 && slowest < 60.0,
        format!("mean corr2 {c:.4} (need >= 0.85), mean SSIM {s:.4} (need >= 0.70), slowest seed {slowest:.2}s"),
    )
}

fn criterion_2(runs: &[DeskRun]) -> Verdict {
    let mut direct = Vec::new();
    let mut indirect = Vec::new();
    let mut magnitude = Vec::new();
    let mut truth_magnitude = Vec::new();
    for r in runs {
        let rep = &r.report.replications[0];
        truth_magnitude.push(rep.effects_true.direct.unwrap().mean);
        if let (Some(sim), Some(est)) = (rep.effects_similarity, rep.effects_estimated) {
            direct.push(sim.direct.corr2);
            indirect.push(sim.indirect.corr2);
            magnitude.push(est.direct.unwrap().mean);
        }
    }
    let truth = mean(&truth_magnitude);
    if direct.len() < runs.len() {
        let norms: Vec<String> =
            runs.iter().map(|r| format!("{:.2}", r.report.replications[0].estimated_infinity_norm)).collect();
        return Verdict::new(
            false,
            format!(
                "estimated effects computable in {}/{} seeds; infinity norm of the estimate [{}] is not below 1 \
                 (true mean |direct| {truth:.4})",
                direct.len(),
                runs.len(),
                norms.join(", ")
            ),
        );
    }
    let (d, i, m) = (mean(&direct), mean(&indirect), mean(&magnitude));
    let rel = (m - truth).abs() / truth;
    Verdict::new(
        d >= 0.99 && i >= 0.75 && rel <= 0.15,
        format!("direct corr2 {d:.4}, indirect corr2 {i:.4}, mean |direct| {m:.4} vs truth {truth:.4} ({:.1}%)", rel * 100.0),
    )
}

/// Effects from the estimate without the stationarity gate, solving
/// `(I - W) E = diag(theta)` directly.
fn ungated_effects_diagnostic(runs: &[DeskRun]) -> String {
    let mut direct = Vec::new();
    let mut indirect = Vec::new();
    let mut magnitude = Vec::new();
    for r in runs {
        let n = r.w_true.n();
        let solve = |w: &DMatrix<f64>, theta: &DVector<f64>| {
            (DMatrix::identity(n, n) - w).lu().solve(&DMatrix::from_diagonal(theta)).expect("nonsingular")
        };
        let truth = solve(r.w_true.matrix(), &r.theta_true);
        let est = solve(r.estimate.w_hat.matrix(), &r.estimate.coefficients.theta.column(0).into_owned());
        let td: Vec<f64> = truth.diagonal().iter().copied().collect();
        let ed: Vec<f64> = est.diagonal().iter().copied().collect();
        direct.push(corr2(&DMatrix::from_vec(n, 1, td), &DMatrix::from_vec(n, 1, ed.clone())).unwrap());
        let off = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { m[(i, j)] });
        indirect.push(corr2(&off(&truth), &off(&est)).unwrap());
        magnitude.push(mean(&ed.iter().map(|v| v.abs()).collect::<Vec<_>>()));
    }
    format!(
        "ungated effects from the estimate: direct corr2 {:.4}, indirect corr2 {:.4}, mean |direct| {:.4}",
        mean(&direct),
        mean(&indirect),
        mean(&magnitude)
    )
}

fn averaged_estimate_diagnostic() -> String {
    let config = SimulationConfig { n_replications: 20, ..desk_config(1, 30) };
    let report = run_monte_carlo(&config, &DLPrior::default(), &MonteCarloOptions::default()).unwrap();
    let m = report.mean_estimate.unwrap();
    format!(
        "entrywise mean of {} replication estimates: corr2 {:.4}, SSIM {:.4}, infinity norm {:.2}",
        m.n_averaged, m.weights_similarity.corr2, m.weights_similarity.ssim, m.infinity_norm
    )
}

struct SizeRow {
    n: usize,
    corr2: f64,
    ssim: f64,
    nonzero_magnitude: f64,
    secs: f64,
}

fn size_row(n: usize, seeds: &[u64]) -> SizeRow {
    let prior = DLPrior::default();
    let opts = PipelineOptions { n_workers: 4, ..Default::default() };
    let (mut c, mut s, mut mag) = (Vec::new(), Vec::new(), Vec::new());
    let start = Instant::now();
    for &seed in seeds {
        let data = simulate_dataset(&desk_config(seed, n), 0).unwrap();
        let est = estimate(&data.panel, &prior, &opts).unwrap();
        let (wt, wh) = (data.w_true.matrix(), est.w_hat.matrix());
        c.push(corr2(wt, wh).unwrap());
        s.push(ssim(wt, wh, &SsimParams::default()).unwrap());
        let nz: Vec<f64> = wt.iter().zip(wh.iter()).filter(|(t, _)| **t != 0.0).map(|(_, e)| e.abs()).collect();
        mag.push(mean(&nz));
    }
    let secs = start.elapsed().as_secs_f64() / seeds.len() as f64;
    SizeRow { n, corr2: mean(&c), ssim: mean(&s), nonzero_magnitude: mean(&mag), secs }
}

fn criterion_3(sizes: &[usize]) -> Verdict {
    let rows: Vec<SizeRow> = sizes.iter().map(|&n| size_row(n, &[1, 2])).collect();
    let ok = rows.windows(2).all(|w| {
        w[1].corr2 <= w[0].corr2 && w[1].ssim >= w[0].ssim && w[1].nonzero_magnitude <= w[0].nonzero_magnitude
    });
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "N={}: corr2 {:.4}, SSIM {:.4}, mean |w| on true nonzeros {:.4}, {:.1}s/seed",
                r.n, r.corr2, r.ssim, r.nonzero_magnitude, r.secs
            )
        })
        .collect();
    Verdict::new(ok, table.join("; "))
}

fn criterion_4() -> Verdict {
    let prior = DLPrior::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut within, mut total, mut worst) = (0usize, 0usize, 0.0f64);
    for case in 0..20u64 {
        let m = rng.random_range(1..=10);
        let t = rng.random_range(100..=200);
        let x = normal_matrix(&mut rng, t, m);
        let beta = DVector::from_fn(m, |_, _| if rng.random_bool(0.5) { rng.random_range(-2.0..2.0) } else { 0.0 });
        let y = &x * &beta + normal_matrix(&mut rng, t, 1).column(0);
        let problem = RegressionProblem::new(y, x).unwrap();
        let vb = vb_fit(&problem, &prior, 1e-8, 1000).unwrap();
        let draws =
            gibbs_fit(&problem, &prior, &GibbsOptions { n_draws: 5000, burn_in: 1000, thin: 1, seed: case }).unwrap();
        let gibbs_mean = draws.beta_mean();
        let mcse = draws.beta_mcse();
        for j in 0..m {
            let ratio = (vb.beta_mean[j] - gibbs_mean[j]).abs() / mcse[j];
            worst = worst.max(ratio);
            within += usize::from(ratio < 3.0);
            total += 1;
        }
    }

    let signals = [(3, 1.5), (11, -1.0), (20, 2.0), (34, -1.2), (47, 1.0)];
    let x = normal_matrix(&mut rng, 100, 50);
    let mut beta = DVector::zeros(50);
    for &(j, b) in &signals {
        beta[j] = b;
    }
    let y = &x * &beta + normal_matrix(&mut rng, 100, 1).column(0);
    let problem = RegressionProblem::new(y, x).unwrap();
    let null_mean = |est: &DVector<f64>| mean(&(0..50).filter(|&j| beta[j] == 0.0).map(|j| est[j].abs()).collect::<Vec<_>>());
    let vb_null = null_mean(&vb_fit(&problem, &prior, 1e-6, 1000).unwrap().beta_mean);
    let gibbs_null = null_mean(&gibbs_fit(&problem, &prior, &GibbsOptions { seed: 9, ..Default::default() }).unwrap().beta_mean());
    Verdict::new(
        within == total && vb_null < 0.1 && gibbs_null < 0.1,
        format!(
            "{within}/{total} coefficients within 3 MCSE (worst {worst:.1} MCSE); sparse-truth null mean |beta| VB {vb_null:.4}, Gibbs {gibbs_null:.4}"
        ),
    )
}

fn criterion_5(runs: &[DeskRun]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_drop = 0.0f64;
    let mut decreasing = 0;
    for _ in 0..100 {
        let t = rng.random_range(5..=120);
        let m = rng.random_range(1..=40);
        let a = rng.random_range(0.02..0.9);
        let x = normal_matrix(&mut rng, t, m);
        let y = x.column(0) * rng.random_range(-2.0..2.0) + normal_matrix(&mut rng, t, 1).column(0);
        let fit = vb_fit(&RegressionProblem::new(y, x).unwrap(), &DLPrior::with_a(a), 1e-6, 1000).unwrap();
        let drop = fit.elbo_trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
        worst_drop = worst_drop.max(drop);
        decreasing += usize::from(drop > 1e-6);
    }
    let (mut equations, mut unconverged, mut most_iters) = (0, 0, 0);
    for r in runs {
        for d in r.estimate.stage1_diagnostics.iter().chain(&r.estimate.stage2_diagnostics) {
            equations += 1;
            unconverged += usize::from(!d.converged);
            most_iters = most_iters.max(d.n_iters);
        }
    }
    Verdict::new(
        decreasing == 0 && unconverged == 0,
        format!(
            "{decreasing}/100 traces decrease (largest drop {worst_drop:.2e}); {unconverged}/{equations} desk equations unconverged, most iterations {most_iters}"
        ),
    )
}

fn criterion_6() -> Verdict {
    let mut problems = Vec::new();
    let config = SimulationConfig { n: 40, q: 4, seed: 11, ..Default::default() };
    let (w, rho) = simulate_weights(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shock = DVector::from_fn(40, |_, _| StandardNormal.sample(&mut rng));
    let y = solve_reduced_form(&w, &shock).unwrap();
    let residual = (&y - w.matrix() * &y - &shock).norm() / shock.norm();
    if residual >= 1e-10 {
        problems.push(format!("reduced-form residual {residual:.1e}"));
    }
    let theta = simulate_coefficients(&config).unwrap().theta.column(0).into_owned();
    let e = effects_matrix(&w, &theta, 0).unwrap();
    let identity_gap = ((DMatrix::identity(40, 40) - w.matrix()) * &e.e - DMatrix::from_diagonal(&theta)).amax();
    if identity_gap >= 1e-10 {
        problems.push(format!("effects identity gap {identity_gap:.1e}"));
    }
    for i in 0..40 {
        let row: Vec<f64> = w.matrix().row(i).iter().copied().filter(|v| *v != 0.0).collect();
        let expected = rho[i].abs() / 8.0;
        if row.len() != 8 || row.iter().any(|v| (v.abs() - expected).abs() > 1e-15) {
            problems.push(format!("row {i} has {} nonzeros", row.len()));
        }
    }
    if w.infinity_norm() >= 1.0 {
        problems.push(format!("infinity norm {}", w.infinity_norm()));
    }
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 5.0]);
    let hand = corr2(&a, &b).unwrap();
    if (hand - 0.9827).abs() > 1e-4 {
        problems.push(format!("corr2 hand example {hand}"));
    }
    let img = normal_matrix(&mut rng, 12, 12);
    let self_sim = ssim(&img, &img, &SsimParams::default()).unwrap();
    if (self_sim - 1.0).abs() > 1e-12 {
        problems.push(format!("SSIM(a, a) = {self_sim}"));
    }
    let detail = if problems.is_empty() {
        format!(
            "residual {residual:.1e}, effects identity gap {identity_gap:.1e}, 2q nonzeros per row, corr2 hand example {hand:.4}, SSIM(a, a) = {self_sim}"
        )
    } else {
        problems.join("; ")
    };
    Verdict::new(problems.is_empty(), detail)
}

fn criterion_7() -> Verdict {
    let (mut worst_off, mut corr) = (0.0f64, Vec::new());
    for seed in [21, 22, 23] {
        let config = SimulationConfig { noise_sd: 0.1, seed, ..Default::default() };
        let w = WeightsMatrix::zeros(sarvb::spatial::default_unit_ids(config.n)).unwrap();
        let theta = simulate_coefficients(&config).unwrap();
        let panel = simulate_panel(&w, &theta, &config, 0).unwrap();
        let est = estimate(&panel, &DLPrior::default(), &PipelineOptions::default()).unwrap();
        let off = est.w_hat.matrix().iter().map(|v| v.abs()).fold(0.0, f64::max);
        worst_off = worst_off.max(off);
        corr.push(corr2(&theta.theta, &est.coefficients.theta).unwrap());
    }
    let c = corr.iter().copied().fold(f64::INFINITY, f64::min);
    Verdict::new(
        worst_off < 0.1 && c > 0.95,
        format!("max off-diagonal |w| {worst_off:.4} (need < 0.1), smallest corr2(theta) {c:.4} (need > 0.95)"),
    )
}

fn criterion_8() -> Verdict {
    let mut problems = Vec::new();
    let config = desk_config(3, 30);
    let data = simulate_dataset(&config, 0).unwrap();
    let prior = DLPrior::default();
    let fits: Vec<EstimationResult> = [1, 4, 8]
        .iter()
        .map(|&workers| estimate(&data.panel, &prior, &PipelineOptions { n_workers: workers, ..Default::default() }).unwrap())
        .collect();
    for f in &fits[1..] {
        if f.w_hat != fits[0].w_hat || f.coefficients != fits[0].coefficients {
            problems.push("estimate differs across worker counts".to_string());
        }
    }
    let again = simulate_dataset(&config, 0).unwrap();
    if again.panel != data.panel || again.w_true != data.w_true {
        problems.push("simulation is not reproducible".to_string());
    }
    let mc = |workers| {
        let options = MonteCarloOptions {
            pipeline: PipelineOptions { n_workers: workers, ..Default::default() },
            ..Default::default()
        };
        let cfg = SimulationConfig { n: 12, t: 15, q: 2, n_replications: 4, ..Default::default() };
        let report = run_monte_carlo(&cfg, &prior, &options).unwrap();
        (report.aggregate, report.replications.iter().map(|r| r.flat_metrics()).collect::<Vec<_>>())
    };
    let base = mc(1);
    for workers in [4, 8] {
        if mc(workers) != base {
            problems.push(format!("Monte Carlo report differs with {workers} workers"));
        }
    }
    // Reordering units reorders floating-point sums, so the fits stop at
    // slightly different points; they agree to the stopping tolerance.
    let mut perm: Vec<usize> = (0..30).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
    let options = PipelineOptions::default();
    let shuffled = estimate(&data.panel.permuted(&perm).unwrap(), &prior, &options).unwrap();
    let w_gap = (shuffled.w_hat.matrix() - fits[0].w_hat.permuted(&perm).unwrap().matrix()).amax();
    let theta_gap = (&shuffled.coefficients.theta - &fits[0].coefficients.permuted(&perm).unwrap().theta).amax();
    if w_gap >= options.tol || theta_gap >= options.tol {
        problems.push(format!("permutation gap {w_gap:.1e} (weights), {theta_gap:.1e} (coefficients)"));
    }
    let detail = if problems.is_empty() {
        format!(
            "identical across 1/4/8 workers and reruns; permutation gap {:.1e} (stopping tolerance {:.0e})",
            w_gap.max(theta_gap),
            options.tol
        )
    } else {
        problems.join("; ")
    };
    Verdict::new(problems.is_empty(), detail)
}

/// Scaling the response by `c` should scale the posterior mean by about `c`.
fn scaling_property() -> Verdict {
    let c = 10.0;
    let mut worst = 0.0f64;
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal_matrix(&mut rng, 80, 6);
        let beta = DVector::from_column_slice(&[1.0, 0.0, -0.6, 0.0, 0.0, 0.3]);
        let y = &x * &beta + normal_matrix(&mut rng, 80, 1).column(0);
        for prior in [DLPrior::default(), DLPrior::with_a(0.5)] {
            let base = vb_fit(&RegressionProblem::new(y.clone(), x.clone()).unwrap(), &prior, 1e-8, 5000).unwrap();
            let scaled = vb_fit(&RegressionProblem::new(&y * c, x.clone()).unwrap(), &prior, 1e-8, 5000).unwrap();
            let expected = &base.beta_mean * c;
            worst = worst.max((&scaled.beta_mean - &expected).norm() / expected.norm());
        }
    }
    Verdict::new(worst < 0.05, format!("largest relative deviation from c * beta is {:.1}% (need < 5%)", worst * 100.0))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let long = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| id.contains(f.as_str()));

    let mut failed = 0;
    let mut record = |id: &str, title: &str, v: Verdict| {
        println!("criterion {id} {title}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    };

    let needs_desk = ["1", "2", "5"].iter().any(|id| wanted(id));
    let runs = if needs_desk { desk_runs() } else { Vec::new() };
    if wanted("1") {
        record("1", "desk-scale weights recovery", criterion_1(&runs));
        println!("  info: {}", averaged_estimate_diagnostic());
    }
    if wanted("2") {
        record("2", "desk-scale effects recovery", criterion_2(&runs));
        println!("  info: {}", ungated_effects_diagnostic(&runs));
    }
    if wanted("3") {
        record("3", "size trend", criterion_3(&[30, 100]));
        if long {
            record("3-long", "size trend with N = 300", criterion_3(&[30, 100, 300]));
        } else {
            println!("criterion 3-long size trend with N = 300: SKIPPED (run with --ignored)");
        }
    }
    if wanted("4") {
        record("4", "VB against Gibbs", criterion_4());
    }
    if wanted("5") {
        record("5", "ELBO monotonicity and convergence", criterion_5(&runs));
    }
    if wanted("6") {
        record("6", "exact algebra", criterion_6());
    }
    if wanted("7") {
        record("7", "null spatial recovery", criterion_7());
    }
    if wanted("8") {
        record("8", "determinism and permutation equivariance", criterion_8());
    }
    if wanted("scaling") {
        record("scaling", "response scaling equivariance", scaling_property());
    }
    if let Some(run) = runs.first() {
        println!("desk seeds {:?}, first seed {} took {:.2}s", DESK_SEEDS, run.seed, run.secs);
    }
    println!("acceptance: {failed} failing");
    if failed > 0 {
        std::process::exit(1);
    }
}
