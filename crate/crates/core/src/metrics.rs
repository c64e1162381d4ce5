//! Scoring estimated weights matrices against the truth: whole-matrix
//! correlation, windowed structural similarity, per-category bias, and the
//! direct/indirect effects matrices `(I - W)⁻¹ diag(θ_r)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{CoefficientSet, WeightsMatrix};

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Pearson correlation over all entries of two equally shaped matrices.
pub fn corr2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    same_shape(a, b)?;
    pearson(a.as_slice(), b.as_slice())
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::InvalidInput("correlation of empty inputs".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidInput("correlation undefined for a constant input".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    /// Side of the square uniform window, slid with stride 1.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Fixed dynamic range `L`; `None` uses max − min over both inputs.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 8, k1: 0.01, k2: 0.03, dynamic_range: None }
    }
}

/// Mean structural similarity over all `window × window` patches. Window
/// statistics use population moments (divisor `window²`).
pub fn ssim(a: &DMatrix<f64>, b: &DMatrix<f64>, params: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    let w = params.window;
    let (rows, cols) = a.shape();
    if w == 0 || rows < w || cols < w {
        return Err(Error::InvalidInput(format!("{rows}×{cols} matrix is smaller than the {w}×{w} window")));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("ssim of non-finite matrix".into()));
    }
    let range = match params.dynamic_range {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => return Err(Error::InvalidInput(format!("dynamic range must be positive, got {l}"))),
        None => {
            let (lo, hi) = a.iter().chain(b.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            if hi == lo {
                // every entry of both inputs is the same value
                return Ok(1.0);
            }
            hi - lo
        }
    };
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let area = (w * w) as f64;
    let moments = |m: &DMatrix<f64>, i: usize, j: usize| m.view((i, j), (w, w)).sum() / area;
    let cross = |x: &DMatrix<f64>, mx: f64, y: &DMatrix<f64>, my: f64, i: usize, j: usize| {
        let mut s = 0.0;
        for jj in j..j + w {
            for ii in i..i + w {
                s += (x[(ii, jj)] - mx) * (y[(ii, jj)] - my);
            }
        }
        s / area
    };

    let mut total = 0.0;
    let n_windows = (rows - w + 1) * (cols - w + 1);
    for j in 0..=cols - w {
        for i in 0..=rows - w {
            let (ma, mb) = (moments(a, i, j), moments(b, i, j));
            let va = cross(a, ma, a, ma, i, j);
            let vb = cross(b, mb, b, mb, i, j);
            let cov = cross(a, ma, b, mb, i, j);
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
        }
    }
    Ok(total / n_windows as f64)
}

/// `∂y/∂x_r`: entry `(i, j)` is the response of unit `i` to a unit change in
/// regressor `r` at unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectsMatrix {
    pub e: DMatrix<f64>,
    pub regressor_index: usize,
}

impl EffectsMatrix {
    pub fn direct(&self) -> DVector<f64> {
        self.e.diagonal()
    }

    /// Diagonal kept, everything else zero.
    pub fn direct_masked(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.e.diagonal())
    }

    /// Off-diagonal kept, diagonal zero.
    pub fn indirect_masked(&self) -> DMatrix<f64> {
        let mut m = self.e.clone();
        m.fill_diagonal(0.0);
        m
    }

    pub fn direct_magnitudes(&self) -> Vec<f64> {
        self.e.diagonal().iter().map(|v| v.abs()).collect()
    }

    pub fn indirect_magnitudes(&self) -> Vec<f64> {
        off_diagonal(&self.e).map(|(_, _, v)| v.abs()).collect()
    }
}

/// `(I - W)⁻¹ diag(theta_r)` by one LU solve per column.
pub fn effects_matrix(w: &WeightsMatrix, theta_r: &DVector<f64>, regressor_index: usize) -> Result<EffectsMatrix> {
    if theta_r.len() != w.n() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} units", theta_r.len(), w.n())));
    }
    let e = w.reduced_form()?.solve_matrix(&DMatrix::from_diagonal(theta_r))?;
    Ok(EffectsMatrix { e, regressor_index })
}

fn off_diagonal(m: &DMatrix<f64>) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let n = m.nrows();
    (0..m.ncols()).flat_map(move |j| (0..n).filter(move |&i| i != j).map(move |i| (i, j, m[(i, j)])))
}

/// Count, mean and sample standard deviation of a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

/// `None` for an empty input; `sd` is 0 for a single value.
pub fn summarize(values: &[f64]) -> Option<ValueSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(ValueSummary { count: values.len(), mean, sd })
}

/// Estimation error over the off-diagonal positions sharing a true sign.
/// Bias is signed, `estimate − truth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub mean_true: f64,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementStats {
    pub positive: Option<CategoryStats>,
    pub negative: Option<CategoryStats>,
    pub zero: Option<CategoryStats>,
}

pub fn element_category_stats(w_true: &DMatrix<f64>, w_hat: &DMatrix<f64>) -> Result<ElementStats> {
    same_shape(w_true, w_hat)?;
    if !w_true.is_square() {
        return Err(Error::DimensionMismatch(format!("weights matrices are {:?}", w_true.shape())));
    }
    let mut buckets: [Vec<(f64, f64)>; 3] = Default::default();
    for (i, j, truth) in off_diagonal(w_true) {
        let slot = if truth > 0.0 {
            0
        } else if truth < 0.0 {
            1
        } else {
            2
        };
        buckets[slot].push((truth, w_hat[(i, j)]));
    }
    let stats = |pairs: &[(f64, f64)]| {
        if pairs.is_empty() {
            return None;
        }
        let n = pairs.len() as f64;
        let mean_true = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_estimate = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let mean_bias = pairs.iter().map(|p| p.1 - p.0).sum::<f64>() / n;
        let rmse = (pairs.iter().map(|p| (p.1 - p.0).powi(2)).sum::<f64>() / n).sqrt();
        Some(CategoryStats { count: pairs.len(), mean_true, mean_estimate, mean_bias, rmse })
    };
    Ok(ElementStats { positive: stats(&buckets[0]), negative: stats(&buckets[1]), zero: stats(&buckets[2]) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub corr2: f64,
    pub ssim: f64,
}

/// True against estimated effects for one regressor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectsSimilarity {
    pub regressor_index: usize,
    /// corr2 over the diagonals as vectors, SSIM over diagonal-only matrices.
    pub direct: SimilarityReport,
    /// SSIM over the unmasked effects matrices.
    pub full_ssim: f64,
    /// corr2 and SSIM over the matrices with their diagonals zeroed.
    pub indirect: SimilarityReport,
    pub ssim_params: SsimParams,
}

pub fn compare_effects(truth: &EffectsMatrix, estimate: &EffectsMatrix, params: &SsimParams) -> Result<EffectsSimilarity> {
    same_shape(&truth.e, &estimate.e)?;
    let direct = SimilarityReport {
        corr2: pearson(truth.direct().as_slice(), estimate.direct().as_slice())?,
        ssim: ssim(&truth.direct_masked(), &estimate.direct_masked(), params)?,
    };
    let (ti, ei) = (truth.indirect_masked(), estimate.indirect_masked());
    let indirect = SimilarityReport { corr2: corr2(&ti, &ei)?, ssim: ssim(&ti, &ei, params)? };
    Ok(EffectsSimilarity {
        regressor_index: truth.regressor_index,
        direct,
        full_ssim: ssim(&truth.e, &estimate.e, params)?,
        indirect,
        ssim_params: *params,
    })
}

/// Builds both effects matrices for regressor `r` and compares them.
pub fn effects_similarity(
    true_w: &WeightsMatrix,
    true_theta: &CoefficientSet,
    est_w: &WeightsMatrix,
    est_theta: &CoefficientSet,
    r: usize,
    params: &SsimParams,
) -> Result<EffectsSimilarity> {
    if r >= true_theta.n_exog() || r >= est_theta.n_exog() {
        return Err(Error::InvalidInput(format!("regressor index {r} out of range")));
    }
    let truth = effects_matrix(true_w, &true_theta.theta.column(r).into_owned(), r)?;
    let estimate = effects_matrix(est_w, &est_theta.theta.column(r).into_owned(), r)?;
    compare_effects(&truth, &estimate, params)
}
