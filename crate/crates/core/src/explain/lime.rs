use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Method, RegionRelevance};
use crate::error::{param, Error, Result};
use crate::perturbation::Coalition;

/// Surrogate settings. Sample weight is `exp(-d^2 / kernel_width^2)` with
/// `d` the fraction of removed regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub ridge_lambda: f64,
    pub kernel_width: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 1e-3,
            kernel_width: 0.25,
        }
    }
}

/// Weighted ridge regression of `preds` on the coalition indicators, with an
/// unpenalized intercept. Returns the per-region coefficients.
pub fn explain_lime(
    samples: &[Coalition],
    preds: &[f64],
    cfg: &LimeConfig,
    class_index: usize,
) -> Result<RegionRelevance> {
    if samples.is_empty() || samples.len() != preds.len() {
        return param(format!(
            "{} samples vs {} predictions",
            samples.len(),
            preds.len()
        ));
    }
    if cfg.ridge_lambda.is_nan()
        || cfg.ridge_lambda < 0.0
        || cfg.kernel_width.is_nan()
        || cfg.kernel_width <= 0.0
    {
        return param("ridge_lambda must be >= 0 and kernel_width > 0");
    }
    let r = samples[0].len();
    if r == 0 || samples.iter().any(|s| s.len() != r) {
        return param("coalitions must share a non-zero length");
    }
    let n = samples.len();
    let weights: Vec<f64> = samples
        .iter()
        .map(|s| {
            let d = 1.0 - s.kept_count() as f64 / r as f64;
            (-(d * d) / (cfg.kernel_width * cfg.kernel_width)).exp()
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut xbar = vec![0.0f64; r];
    let mut ybar = 0.0f64;
    for ((s, &w), &y) in samples.iter().zip(&weights).zip(preds) {
        for (k, m) in xbar.iter_mut().enumerate() {
            if s.kept(k) {
                *m += w;
            }
        }
        ybar += w * y;
    }
    xbar.iter_mut().for_each(|m| *m /= wsum);
    ybar /= wsum;

    // Rows scaled by sqrt(w) so that A = Xs^T Xs.
    let mut xs = DMatrix::<f64>::zeros(n, r);
    let mut ys = DVector::<f64>::zeros(n);
    for (i, (s, &w)) in samples.iter().zip(&weights).enumerate() {
        let sw = w.sqrt();
        for k in 0..r {
            let z = if s.kept(k) { 1.0 } else { 0.0 };
            xs[(i, k)] = sw * (z - xbar[k]);
        }
        ys[i] = sw * (preds[i] - ybar);
    }
    let mut a = xs.tr_mul(&xs);
    for k in 0..r {
        a[(k, k)] += cfg.ridge_lambda;
    }
    let b = xs.tr_mul(&ys);
    let scale = (0..r).map(|k| a[(k, k)]).fold(0.0f64, f64::max);
    let singular = || {
        Error::Solver(format!(
            "normal matrix is singular ({n} samples, {r} regions); use ridge_lambda > 0"
        ))
    };
    let chol = a.cholesky().ok_or_else(singular)?;
    if cfg.ridge_lambda == 0.0 {
        let min_pivot = (0..r)
            .map(|k| chol.l_dirty()[(k, k)].powi(2))
            .fold(f64::INFINITY, f64::min);
        if scale == 0.0 || min_pivot <= 1e-12 * scale {
            return Err(singular());
        }
    }
    let beta = chol.solve(&b);
    RegionRelevance::new(beta.iter().copied().collect(), Method::Lime, class_index)
}
