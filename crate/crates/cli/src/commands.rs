use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use sarvb::metrics::{effects_matrix, EffectsMatrix};
use sarvb::montecarlo::{run_monte_carlo, MonteCarloReport};
use sarvb::simulator::simulate_dataset;
use sarvb::twostage::{estimate, ConfigEcho, EquationDiagnostics};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::heatmap::{emit_heatmap, shared_scale};
use crate::io::{
    ensure_dir, read_panel, read_unit_table, read_weights, write_atomic, write_json, write_labelled_matrix,
    write_panel, write_unit_table,
};

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
}

fn write_meta(config: &RunConfig, command: &str) -> CliResult<()> {
    let meta = Meta { command, version: env!("CARGO_PKG_VERSION"), config };
    write_json(&config.output_dir.join("meta.json"), &meta)
}

fn required<'a>(path: &'a Option<std::path::PathBuf>, key: &str) -> CliResult<&'a Path> {
    path.as_deref().ok_or_else(|| CliError::validation(format!("missing input: set `{key}` in the config or pass --{key}")))
}

fn regressor_names(k: usize) -> Vec<String> {
    (1..=k).map(|r| format!("x{r}")).collect()
}

fn columns(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

pub fn simulate(config: &RunConfig) -> CliResult<()> {
    config.validate_simulation()?;
    let data = simulate_dataset(&config.simulation(), 0)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let ids = data.panel.unit_ids();
    write_panel(&dir.join("panel.csv"), &data.panel)?;
    write_labelled_matrix(&dir.join("w_true.csv"), ids, data.w_true.matrix())?;
    write_unit_table(&dir.join("theta_true.csv"), ids, &regressor_names(config.k), &columns(&data.theta_true.theta))?;
    write_meta(config, "simulate")
}

#[derive(Serialize)]
struct UnitValue<'a> {
    unit_id: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct EstimateDiagnostics<'a> {
    n_units: usize,
    n_periods: usize,
    n_exog: usize,
    infinity_norm: f64,
    stationarity_warning: bool,
    unconverged_equations: usize,
    row_spatial_sums: Vec<UnitValue<'a>>,
    stage1: &'a [EquationDiagnostics],
    stage2: &'a [EquationDiagnostics],
    config_echo: &'a ConfigEcho,
}

pub fn estimate_panel(config: &RunConfig) -> CliResult<()> {
    config.validate()?;
    let panel = read_panel(required(&config.panel, "panel")?)?;
    let result = estimate(&panel, &config.prior(), &config.pipeline())?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let ids = panel.unit_ids();
    write_labelled_matrix(&dir.join("w_hat.csv"), ids, result.w_hat.matrix())?;
    let mut names = regressor_names(panel.n_exog());
    let mut cols = columns(&result.coefficients.theta);
    if let Some(b) = &result.intercepts {
        names.push("intercept".into());
        cols.push(b.iter().copied().collect());
    }
    write_unit_table(&dir.join("theta_hat.csv"), ids, &names, &cols)?;
    write_unit_table(
        &dir.join("sigma2.csv"),
        ids,
        &["sigma2".into()],
        &[result.coefficients.sigma2.iter().copied().collect()],
    )?;
    let unconverged =
        result.stage1_diagnostics.iter().chain(&result.stage2_diagnostics).filter(|d| !d.converged).count();
    let diagnostics = EstimateDiagnostics {
        n_units: panel.n_units(),
        n_periods: panel.n_periods(),
        n_exog: panel.n_exog(),
        infinity_norm: result.infinity_norm,
        stationarity_warning: result.stationarity_warning,
        unconverged_equations: unconverged,
        row_spatial_sums: ids
            .iter()
            .zip(result.row_spatial_sums.iter())
            .map(|(id, &value)| UnitValue { unit_id: id, value })
            .collect(),
        stage1: &result.stage1_diagnostics,
        stage2: &result.stage2_diagnostics,
        config_echo: &result.config_echo,
    };
    write_json(&dir.join("diagnostics.json"), &diagnostics)?;
    write_json(&dir.join("timings.json"), &result.timings)?;
    write_meta(config, "estimate")?;
    if result.stationarity_warning {
        eprintln!(
            "warning: infinity norm of the estimated matrix is {:.4} (>= 1); effects are not defined for it",
            result.infinity_norm
        );
    }
    if unconverged > 0 {
        eprintln!("warning: {unconverged} equations stopped at max_iter without converging");
    }
    Ok(())
}

#[derive(Serialize)]
struct EffectsSummaryRow {
    regressor: usize,
    mean_abs_direct: f64,
    mean_abs_indirect: f64,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

pub fn effects(config: &RunConfig) -> CliResult<()> {
    config.validate()?;
    let w = read_weights(required(&config.w, "w")?)?;
    let theta_path = required(&config.theta, "theta")?;
    let (ids, names, theta) = read_unit_table(theta_path)?;
    if ids != w.unit_ids() {
        return Err(CliError::validation(format!(
            "{}: unit ids do not match the weights matrix (same ids in the same order required)",
            theta_path.display()
        )));
    }
    let available: Vec<usize> = (1..).take_while(|r| names.contains(&format!("x{r}"))).collect();
    let wanted = if config.regressors.is_empty() { available } else { config.regressors.clone() };
    if wanted.is_empty() {
        return Err(CliError::validation(format!("{}: no x1, x2, ... columns", theta_path.display())));
    }
    let norm = w.infinity_norm();
    if norm >= 1.0 {
        return Err(CliError::Numerical(format!(
            "the weights matrix has infinity norm {norm:.4}; effects need it below 1. \
             The matrix is not projected automatically: re-estimate (for example with a smaller `a`) \
             or rescale its rows before computing effects"
        )));
    }

    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let mut summary = Vec::new();
    for &r in &wanted {
        let col = names
            .iter()
            .position(|n| *n == format!("x{r}"))
            .ok_or_else(|| CliError::validation(format!("regressor {r} not found in {}", theta_path.display())))?;
        let theta_r = DVector::from_iterator(ids.len(), theta.column(col).iter().copied());
        let e: EffectsMatrix = effects_matrix(&w, &theta_r, r - 1)?;
        write_labelled_matrix(&dir.join(format!("effects_{r}.csv")), w.unit_ids(), &e.e)?;
        summary.push(EffectsSummaryRow {
            regressor: r,
            mean_abs_direct: mean(&e.direct_magnitudes()),
            mean_abs_indirect: mean(&e.indirect_magnitudes()),
        });
    }
    write_json(&dir.join("effects_summary.json"), &json!({ "regressors": summary }))?;
    write_meta(config, "effects")
}

const TABLE_TITLES: [&str; 5] = [
    "nonzero entries of the true and estimated weights matrices",
    "bias and RMSE of off-diagonal estimates by sign of the true entry",
    "similarity of the estimated and true weights matrices",
    "mean magnitude of direct and indirect effects",
    "similarity of the estimated and true effects matrices",
];

/// Estimate-side metrics that exist only when effects could be computed;
/// they are written as `null` otherwise so every table has a fixed layout.
fn effects_keys(index: usize) -> &'static [&'static str] {
    match index {
        4 => &["estimated.direct.mean", "estimated.direct.sd", "estimated.indirect.mean", "estimated.indirect.sd"],
        5 => &["direct.corr2", "direct.ssim", "direct.full_ssim", "indirect.corr2", "indirect.ssim"],
        _ => &[],
    }
}

fn table_json(report: &MonteCarloReport, index: usize, effects_regressor: usize) -> serde_json::Value {
    let prefix = format!("table{index}.");
    let mut across: BTreeMap<String, serde_json::Value> = report
        .aggregate
        .iter()
        .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), json!(v))))
        .collect();
    let mut averaged: BTreeMap<String, serde_json::Value> = report
        .mean_estimate
        .iter()
        .flat_map(|m| m.flat_metrics())
        .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|s| (s.to_string(), json!(v))))
        .collect();
    for key in effects_keys(index) {
        across.entry(key.to_string()).or_insert(serde_json::Value::Null);
        averaged.entry(key.to_string()).or_insert(serde_json::Value::Null);
    }
    let mut table = json!({
        "table": index,
        "title": TABLE_TITLES[index - 1],
        "replications": report.replications.len(),
        "failed_replications": report.failures.len(),
        "across_replications": across,
        "mean_estimate": averaged,
    });
    if index >= 3 {
        table["ssim"] = json!(report.options.ssim);
    }
    if index >= 4 {
        table["effects_regressor"] = json!(effects_regressor);
        table["replications_with_effects"] =
            json!(report.replications.iter().filter(|r| r.effects_estimated.is_some()).count());
        table["mean_estimate_has_effects"] =
            json!(report.mean_estimate.as_ref().is_some_and(|m| m.effects_estimated.is_some()));
    }
    table
}

fn summary_text(report: &MonteCarloReport, config: &RunConfig) -> String {
    let mut s = String::new();
    let c = &report.config;
    let _ = writeln!(s, "Monte Carlo: N = {}, T = {}, k = {}, q = {}, seed = {}", c.n, c.t, c.k, c.q, c.seed);
    let _ = writeln!(s, "replications: {} succeeded, {} failed", report.replications.len(), report.failures.len());
    for f in &report.failures {
        let _ = writeln!(s, "  replication {} failed: {}", f.replication, f.error);
    }
    let line = |s: &mut String, label: &str, key: &str| {
        if let Some(v) = report.aggregate.get(key) {
            let _ = writeln!(s, "  {label:<32} mean {:>9.4}  sd {:>9.4}", v.mean, v.sd);
        }
    };
    let _ = writeln!(s, "\nacross replications");
    line(&mut s, "corr2(W_hat, W)", "table3.corr2");
    line(&mut s, "SSIM(W_hat, W)", "table3.ssim");
    line(&mut s, "zero entries: mean bias", "table2.zero.mean_bias");
    line(&mut s, "zero entries: RMSE", "table2.zero.rmse");
    line(&mut s, "direct effects corr2", "table5.direct.corr2");
    line(&mut s, "indirect effects corr2", "table5.indirect.corr2");
    line(&mut s, "true mean |direct effect|", "table4.true.direct.mean");
    line(&mut s, "estimated mean |direct effect|", "table4.estimated.direct.mean");
    if let Some(m) = &report.mean_estimate {
        let _ = writeln!(s, "\naverage of the {} estimated matrices", m.n_averaged);
        let _ = writeln!(s, "  corr2 {:.4}  SSIM {:.4}", m.weights_similarity.corr2, m.weights_similarity.ssim);
        if let Some(e) = &m.effects_similarity {
            let _ = writeln!(s, "  effects corr2: direct {:.4}, indirect {:.4}", e.direct.corr2, e.indirect.corr2);
        }
    }
    let warnings = report.replications.iter().filter(|r| r.stationarity_warning).count();
    let unconverged: usize = report.replications.iter().map(|r| r.unconverged_equations).sum();
    let _ = writeln!(s, "\nnon-stationary estimates: {warnings}; unconverged equations: {unconverged}");
    let _ = writeln!(s, "effects computed for regressor x{}", config.effects_regressor);
    s
}

fn emit_heatmaps(report: &MonteCarloReport, dir: &Path) -> CliResult<()> {
    let Some(rep) = &report.representative else { return Ok(()) };
    let mut weights = vec![("w_true", rep.w_true.matrix()), ("w_hat", rep.w_hat.matrix())];
    if let Some(mean) = &report.mean_w_hat {
        weights.push(("w_hat_mean", mean.matrix()));
    }
    let scale = shared_scale(weights.iter().map(|(_, m)| *m));
    for (name, m) in &weights {
        emit_heatmap(m, &dir.join(format!("{name}.pgm")), scale)?;
    }
    let mut direct = vec![("direct_true", rep.effects_true.direct_masked())];
    let mut indirect = vec![("indirect_true", rep.effects_true.indirect_masked())];
    if let Some(e) = &rep.effects_estimated {
        direct.push(("direct_estimated", e.direct_masked()));
        indirect.push(("indirect_estimated", e.indirect_masked()));
    }
    for group in [direct, indirect] {
        let scale = shared_scale(group.iter().map(|(_, m)| m));
        for (name, m) in &group {
            emit_heatmap(m, &dir.join(format!("{name}.pgm")), scale)?;
        }
    }
    Ok(())
}

pub fn mc_replicate(config: &RunConfig) -> CliResult<()> {
    config.validate_simulation()?;
    let options = config.monte_carlo()?;
    let report = run_monte_carlo(&config.simulation(), &config.prior(), &options)?;
    if report.replications.is_empty() {
        let detail: Vec<String> =
            report.failures.iter().map(|f| format!("replication {}: {}", f.replication, f.error)).collect();
        return Err(CliError::Numerical(format!("every replication failed; {}", detail.join("; "))));
    }
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    for i in 1..=5 {
        write_json(&dir.join(format!("table{i}.json")), &table_json(&report, i, config.effects_regressor))?;
    }
    write_json(&dir.join("report.json"), &report)?;
    let timings: Vec<_> = report
        .replications
        .iter()
        .map(|r| json!({"replication": r.replication, "stage1_secs": r.timings.stage1_secs, "stage2_secs": r.timings.stage2_secs}))
        .collect();
    write_json(&dir.join("timings.json"), &timings)?;
    emit_heatmaps(&report, dir)?;
    let summary = summary_text(&report, config);
    write_atomic(&dir.join("summary.txt"), summary.as_bytes())?;
    write_meta(config, "mc-replicate")?;
    print!("{summary}");
    Ok(())
}
