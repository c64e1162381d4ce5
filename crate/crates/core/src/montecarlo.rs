//! Monte Carlo driver: simulate, estimate and score repeatedly, then
//! aggregate the per-replication tables.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlreg::DLPrior;
use crate::error::{Error, Result};
use crate::metrics::{
    compare_effects, corr2, effects_matrix, element_category_stats, ssim, summarize, EffectsMatrix,
    EffectsSimilarity, ElementStats, SimilarityReport, SsimParams, ValueSummary,
};
use crate::simulator::{simulate_dataset, SimulationConfig};
use crate::spatial::WeightsMatrix;
use crate::twostage::{estimate, PipelineOptions, StageTimings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    /// `n_workers` here bounds the whole run; replications are spread over it.
    pub pipeline: PipelineOptions,
    pub ssim: SsimParams,
    /// Zero-based regressor whose effects matrices are scored.
    pub effects_regressor: usize,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self { pipeline: PipelineOptions::default(), ssim: SsimParams::default(), effects_regressor: 0 }
    }
}

/// Off-diagonal entries grouped by the sign of the true entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedEntrySummary {
    pub positive: Option<ValueSummary>,
    pub negative: Option<ValueSummary>,
}

fn signed_entries(truth: &DMatrix<f64>, values: &DMatrix<f64>) -> SignedEntrySummary {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let n = truth.nrows();
    for j in 0..n {
        for i in (0..n).filter(|&i| i != j) {
            let t = truth[(i, j)];
            if t > 0.0 {
                pos.push(values[(i, j)]);
            } else if t < 0.0 {
                neg.push(values[(i, j)]);
            }
        }
    }
    SignedEntrySummary { positive: summarize(&pos), negative: summarize(&neg) }
}

/// Magnitudes of direct (diagonal) and indirect (off-diagonal) effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectsSummary {
    pub direct: Option<ValueSummary>,
    pub indirect: Option<ValueSummary>,
}

impl EffectsSummary {
    fn of(e: &EffectsMatrix) -> Self {
        Self { direct: summarize(&e.direct_magnitudes()), indirect: summarize(&e.indirect_magnitudes()) }
    }
}

/// Scores for one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationScores {
    pub replication: u64,
    /// Nonzero entries of the true matrix and the estimates at those positions.
    pub weights_true: SignedEntrySummary,
    pub weights_estimated: SignedEntrySummary,
    pub element_stats: ElementStats,
    pub weights_similarity: SimilarityReport,
    pub effects_true: EffectsSummary,
    /// Absent when the estimated matrix is not stationary.
    pub effects_estimated: Option<EffectsSummary>,
    pub effects_similarity: Option<EffectsSimilarity>,
    pub estimated_infinity_norm: f64,
    pub stationarity_warning: bool,
    pub unconverged_equations: usize,
    #[serde(skip)]
    pub timings: StageTimings,
}

fn push_summary(out: &mut Vec<(String, f64)>, prefix: &str, s: &Option<ValueSummary>) {
    if let Some(s) = s {
        out.push((format!("{prefix}.mean"), s.mean));
        out.push((format!("{prefix}.sd"), s.sd));
    }
}

fn push_estimate_metrics(
    out: &mut Vec<(String, f64)>,
    weights: &SignedEntrySummary,
    elements: &ElementStats,
    similarity: &SimilarityReport,
    effects: &Option<EffectsSummary>,
    effects_similarity: &Option<EffectsSimilarity>,
) {
    push_summary(out, "table1.estimated.positive", &weights.positive);
    push_summary(out, "table1.estimated.negative", &weights.negative);
    for (name, c) in [("positive", elements.positive), ("negative", elements.negative), ("zero", elements.zero)] {
        if let Some(c) = c {
            out.push((format!("table2.{name}.mean_bias"), c.mean_bias));
            out.push((format!("table2.{name}.rmse"), c.rmse));
        }
    }
    out.push(("table3.corr2".into(), similarity.corr2));
    out.push(("table3.ssim".into(), similarity.ssim));
    if let Some(e) = effects {
        push_summary(out, "table4.estimated.direct", &e.direct);
        push_summary(out, "table4.estimated.indirect", &e.indirect);
    }
    if let Some(s) = effects_similarity {
        out.push(("table5.direct.corr2".into(), s.direct.corr2));
        out.push(("table5.direct.ssim".into(), s.direct.ssim));
        out.push(("table5.direct.full_ssim".into(), s.full_ssim));
        out.push(("table5.indirect.corr2".into(), s.indirect.corr2));
        out.push(("table5.indirect.ssim".into(), s.indirect.ssim));
    }
}

impl ReplicationScores {
    /// Every scalar score with a stable dotted name.
    pub fn flat_metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        push_summary(&mut out, "table1.true.positive", &self.weights_true.positive);
        push_summary(&mut out, "table1.true.negative", &self.weights_true.negative);
        push_summary(&mut out, "table4.true.direct", &self.effects_true.direct);
        push_summary(&mut out, "table4.true.indirect", &self.effects_true.indirect);
        push_estimate_metrics(
            &mut out,
            &self.weights_estimated,
            &self.element_stats,
            &self.weights_similarity,
            &self.effects_estimated,
            &self.effects_similarity,
        );
        out.push(("diagnostics.estimated_infinity_norm".into(), self.estimated_infinity_norm));
        out
    }
}

/// True and estimated matrices from one replication, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeRun {
    pub replication: u64,
    pub w_true: WeightsMatrix,
    pub w_hat: WeightsMatrix,
    pub effects_true: EffectsMatrix,
    pub effects_estimated: Option<EffectsMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub replication: u64,
    pub error: String,
}

/// Scores of the entrywise average of the estimates over all successful
/// replications. The true matrix and coefficients are shared by every
/// replication of a run, so the average is compared with the same truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimateScores {
    pub n_averaged: usize,
    pub weights_estimated: SignedEntrySummary,
    pub element_stats: ElementStats,
    pub weights_similarity: SimilarityReport,
    pub effects_estimated: Option<EffectsSummary>,
    /// Absent when the averaged matrix is not stationary.
    pub effects_similarity: Option<EffectsSimilarity>,
    pub infinity_norm: f64,
}

impl MeanEstimateScores {
    /// Same names as [`ReplicationScores::flat_metrics`] for the estimate-side entries.
    pub fn flat_metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        push_estimate_metrics(
            &mut out,
            &self.weights_estimated,
            &self.element_stats,
            &self.weights_similarity,
            &self.effects_estimated,
            &self.effects_similarity,
        );
        out.push(("diagnostics.estimated_infinity_norm".into(), self.infinity_norm));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: SimulationConfig,
    pub prior: DLPrior,
    pub options: MonteCarloOptions,
    pub replications: Vec<ReplicationScores>,
    pub failures: Vec<FailedReplication>,
    /// Mean and spread of each flat metric across successful replications.
    pub aggregate: BTreeMap<String, ValueSummary>,
    pub mean_estimate: Option<MeanEstimateScores>,
    #[serde(skip)]
    pub representative: Option<RepresentativeRun>,
    /// Entrywise average of the estimated matrices.
    #[serde(skip)]
    pub mean_w_hat: Option<WeightsMatrix>,
}

impl MonteCarloReport {
    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|s| s.mean)
    }
}

struct ReplicationOutcome {
    scores: ReplicationScores,
    representative: RepresentativeRun,
    theta_r: DVector<f64>,
}

fn run_replication(
    config: &SimulationConfig,
    prior: &DLPrior,
    options: &MonteCarloOptions,
    pipeline: &PipelineOptions,
    replication: u64,
) -> Result<ReplicationOutcome> {
    let data = simulate_dataset(config, replication)?;
    let est = estimate(&data.panel, prior, pipeline)?;
    let (wt, wh) = (data.w_true.matrix(), est.w_hat.matrix());
    let r = options.effects_regressor;
    if r >= config.k {
        return Err(Error::InvalidInput(format!("effects regressor {r} out of range for k = {}", config.k)));
    }
    let effects_true = effects_matrix(&data.w_true, &data.theta_true.theta.column(r).into_owned(), r)?;
    let theta_r = est.coefficients.theta.column(r).into_owned();
    let effects_estimated =
        if est.stationarity_warning { None } else { Some(effects_matrix(&est.w_hat, &theta_r, r)?) };
    let effects_similarity = match &effects_estimated {
        Some(e) => Some(compare_effects(&effects_true, e, &options.ssim)?),
        None => None,
    };
    let unconverged_equations =
        est.stage1_diagnostics.iter().chain(&est.stage2_diagnostics).filter(|d| !d.converged).count();
    let scores = ReplicationScores {
        replication,
        weights_true: signed_entries(wt, wt),
        weights_estimated: signed_entries(wt, wh),
        element_stats: element_category_stats(wt, wh)?,
        weights_similarity: SimilarityReport { corr2: corr2(wt, wh)?, ssim: ssim(wt, wh, &options.ssim)? },
        effects_true: EffectsSummary::of(&effects_true),
        effects_estimated: effects_estimated.as_ref().map(EffectsSummary::of),
        effects_similarity,
        estimated_infinity_norm: est.infinity_norm,
        stationarity_warning: est.stationarity_warning,
        unconverged_equations,
        timings: est.timings,
    };
    let representative =
        RepresentativeRun { replication, w_true: data.w_true, w_hat: est.w_hat, effects_true, effects_estimated };
    Ok(ReplicationOutcome { scores, representative, theta_r })
}

fn score_mean_estimate(
    truth: &RepresentativeRun,
    outcomes: &[(DMatrix<f64>, DVector<f64>)],
    options: &MonteCarloOptions,
) -> Result<(MeanEstimateScores, WeightsMatrix)> {
    let count = outcomes.len() as f64;
    let n = truth.w_true.n();
    let mut w_sum = DMatrix::zeros(n, n);
    let mut theta_sum = DVector::zeros(n);
    for (w, theta) in outcomes {
        w_sum += w;
        theta_sum += theta;
    }
    let w_mean = WeightsMatrix::new(w_sum / count, truth.w_true.unit_ids().to_vec())?;
    let theta_mean = theta_sum / count;
    let (wt, wh) = (truth.w_true.matrix(), w_mean.matrix());
    let infinity_norm = w_mean.infinity_norm();
    let effects_estimated =
        if infinity_norm < 1.0 { Some(effects_matrix(&w_mean, &theta_mean, options.effects_regressor)?) } else { None };
    let effects_similarity = match &effects_estimated {
        Some(e) => Some(compare_effects(&truth.effects_true, e, &options.ssim)?),
        None => None,
    };
    let scores = MeanEstimateScores {
        n_averaged: outcomes.len(),
        weights_estimated: signed_entries(wt, wh),
        element_stats: element_category_stats(wt, wh)?,
        weights_similarity: SimilarityReport { corr2: corr2(wt, wh)?, ssim: ssim(wt, wh, &options.ssim)? },
        effects_estimated: effects_estimated.as_ref().map(EffectsSummary::of),
        effects_similarity,
        infinity_norm,
    };
    Ok((scores, w_mean))
}

/// Runs `config.n_replications` independent replications. Failed replications
/// are listed in the report and left out of the aggregate.
pub fn run_monte_carlo(
    config: &SimulationConfig,
    prior: &DLPrior,
    options: &MonteCarloOptions,
) -> Result<MonteCarloReport> {
    config.validate()?;
    prior.validate()?;
    options.pipeline.validate()?;
    let reps = config.n_replications;
    let workers = options.pipeline.n_workers;
    // a single replication gets the whole pool; otherwise one thread each
    let inner = PipelineOptions { n_workers: if reps == 1 { workers } else { 1 }, ..options.pipeline };
    let job = |rep: usize| run_replication(config, prior, options, &inner, rep as u64);
    let outcomes: Vec<Result<ReplicationOutcome>> = if reps == 1 || workers == 1 {
        (0..reps).map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..reps).into_par_iter().map(job).collect())
    };

    let mut replications = Vec::new();
    let mut failures = Vec::new();
    let mut representative: Option<RepresentativeRun> = None;
    let mut estimates = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                estimates.push((o.representative.w_hat.matrix().clone(), o.theta_r));
                representative.get_or_insert(o.representative);
                replications.push(o.scores);
            }
            Err(e) => failures.push(FailedReplication { replication: rep as u64, error: e.to_string() }),
        }
    }

    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &replications {
        for (k, v) in r.flat_metrics() {
            columns.entry(k).or_default().push(v);
        }
    }
    let aggregate = columns.into_iter().filter_map(|(k, v)| summarize(&v).map(|s| (k, s))).collect();
    let (mean_estimate, mean_w_hat) = match &representative {
        Some(truth) => {
            let (scores, w) = score_mean_estimate(truth, &estimates, options)?;
            (Some(scores), Some(w))
        }
        None => (None, None),
    };
    Ok(MonteCarloReport {
        config: config.clone(),
        prior: *prior,
        options: *options,
        replications,
        failures,
        aggregate,
        mean_estimate,
        representative,
        mean_w_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_replication_schema() {
        let cfg = SimulationConfig { n: 12, t: 10, q: 1, ..Default::default() };
        let report = run_monte_carlo(&cfg, &DLPrior::default(), &MonteCarloOptions::default()).unwrap();
        assert_eq!(report.replications.len(), 1);
        assert!(report.failures.is_empty());
        for key in ["table1.true.positive.mean", "table2.zero.mean_bias", "table3.corr2", "table3.ssim", "table4.true.direct.mean"] {
            assert!(report.aggregate.contains_key(key), "{key}");
        }
        let rep = report.representative.as_ref().unwrap();
        assert_eq!(rep.w_true.n(), 12);
        // with one replication the averaged estimate is that replication's
        let mean = report.mean_estimate.as_ref().unwrap();
        assert_eq!(mean.n_averaged, 1);
        assert_eq!(mean.weights_similarity, report.replications[0].weights_similarity);
    }

    #[test]
    fn replications_share_structure_and_average_improves_fit() {
        let cfg = SimulationConfig { n: 12, t: 15, q: 1, n_replications: 4, ..Default::default() };
        let opts = MonteCarloOptions {
            pipeline: PipelineOptions { n_workers: 4, ..Default::default() },
            ..Default::default()
        };
        let report = run_monte_carlo(&cfg, &DLPrior::default(), &opts).unwrap();
        assert_eq!(report.replications.len(), 4);
        let first = &report.replications[0].weights_true;
        assert!(report.replications.iter().all(|r| &r.weights_true == first));
        let mean = report.mean_estimate.as_ref().unwrap();
        assert_eq!(mean.n_averaged, 4);
        let zero_rmse = report.mean_of("table2.zero.rmse").unwrap();
        assert!(mean.element_stats.zero.unwrap().rmse < zero_rmse);
    }

    #[test]
    fn true_entry_summary_matches_rho() {
        let cfg = SimulationConfig { n: 12, t: 10, q: 1, ..Default::default() };
        let d = simulate_dataset(&cfg, 0).unwrap();
        let s = signed_entries(d.w_true.matrix(), d.w_true.matrix());
        let pos: Vec<f64> = d.rho_true.iter().filter(|r| **r > 0.0).map(|r| r / 2.0).collect();
        let expected = pos.iter().sum::<f64>() / pos.len() as f64;
        assert!((s.positive.unwrap().mean - expected).abs() < 1e-14);
        assert_eq!(s.positive.unwrap().count, 2 * pos.len());
    }

    #[test]
    fn bad_regressor_index_is_recorded_as_failure() {
        let cfg = SimulationConfig { n: 12, t: 10, q: 1, n_replications: 2, ..Default::default() };
        let opts = MonteCarloOptions { effects_regressor: 5, ..Default::default() };
        let report = run_monte_carlo(&cfg, &DLPrior::default(), &opts).unwrap();
        assert_eq!(report.failures.len(), 2);
        assert!(report.aggregate.is_empty());
    }
}
