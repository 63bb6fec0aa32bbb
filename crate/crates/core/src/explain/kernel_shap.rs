use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Method, RegionRelevance};
use crate::error::{param, Error, Result};
use crate::perturbation::Coalition;

/// How the regression weights samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoalitionWeighting {
    /// Shapley kernel weight per coalition. Use when the samples are an
    /// enumeration (each coalition once).
    ShapleyKernel,
    /// Equal weights. Use when coalitions were drawn from the Shapley kernel
    /// distribution, which already carries the weighting.
    Uniform,
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// `(R - 1) / (C(R, k) * k * (R - k))` for a coalition with `k` kept regions.
pub fn shapley_kernel_weight(r: usize, k: usize) -> f64 {
    if k == 0 || k >= r {
        return f64::INFINITY;
    }
    let ln = ((r - 1) as f64).ln() - ln_binomial(r, k) - (k as f64).ln() - ((r - k) as f64).ln();
    ln.exp()
}

/// Kernel SHAP: weighted least squares of `preds - f_empty` on coalition
/// indicators subject to `sum(phi) = f_full - f_empty`. The constraint is
/// enforced by eliminating the last region.
pub fn explain_kernel_shap(
    samples: &[Coalition],
    preds: &[f64],
    f_empty: f64,
    f_full: f64,
    weighting: CoalitionWeighting,
    class_index: usize,
) -> Result<RegionRelevance> {
    if samples.is_empty() || samples.len() != preds.len() {
        return param(format!(
            "{} samples vs {} predictions",
            samples.len(),
            preds.len()
        ));
    }
    let r = samples[0].len();
    if r == 0 || samples.iter().any(|s| s.len() != r) {
        return param("coalitions must share a non-zero length");
    }
    let delta = f_full - f_empty;
    if r == 1 {
        return RegionRelevance::new(vec![delta], Method::KernelShap, class_index);
    }
    if let Some(i) = samples
        .iter()
        .position(|s| s.kept_count() == 0 || s.kept_count() == r)
    {
        return param(format!("sample {i} is the empty or full coalition"));
    }

    let mut weights: Vec<f64> = match weighting {
        CoalitionWeighting::ShapleyKernel => samples
            .iter()
            .map(|s| shapley_kernel_weight(r, s.kept_count()))
            .collect(),
        CoalitionWeighting::Uniform => vec![1.0; samples.len()],
    };
    let wmax = weights.iter().copied().fold(0.0f64, f64::max);
    weights.iter_mut().for_each(|w| *w /= wmax);

    let m = r - 1;
    let last = r - 1;
    let n = samples.len();
    let mut xs = DMatrix::<f64>::zeros(n, m);
    let mut ys = DVector::<f64>::zeros(n);
    for (i, s) in samples.iter().enumerate() {
        let sw = weights[i].sqrt();
        let zl = if s.kept(last) { 1.0 } else { 0.0 };
        for k in 0..m {
            let zk = if s.kept(k) { 1.0 } else { 0.0 };
            xs[(i, k)] = sw * (zk - zl);
        }
        ys[i] = sw * (preds[i] - f_empty - zl * delta);
    }
    let a = xs.tr_mul(&xs);
    let b = xs.tr_mul(&ys);
    let scale = (0..m).map(|k| a[(k, k)]).fold(0.0f64, f64::max);
    let underdetermined = || {
        Error::Solver(format!(
            "{n} samples do not determine {r} Shapley values; draw more distinct coalitions"
        ))
    };
    let chol = a.cholesky().ok_or_else(underdetermined)?;
    let min_pivot = (0..m)
        .map(|k| chol.l_dirty()[(k, k)].powi(2))
        .fold(f64::INFINITY, f64::min);
    if scale == 0.0 || min_pivot <= 1e-12 * scale {
        return Err(underdetermined());
    }
    let phi = chol.solve(&b);
    let mut values: Vec<f64> = phi.iter().copied().collect();
    let rest: f64 = values.iter().sum();
    values.push(delta - rest);
    RegionRelevance::new(values, Method::KernelShap, class_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn non_trivial(r: usize) -> Vec<Coalition> {
        (1..(1u32 << r) - 1)
            .map(|m| Coalition::new((0..r).map(|k| m >> k & 1 == 1).collect()))
            .collect()
    }

    #[test]
    fn kernel_weight_matches_direct_formula() {
        // R = 5, k = 2: 4 / (10 * 2 * 3)
        assert!((shapley_kernel_weight(5, 2) - 4.0 / 60.0).abs() < 1e-12);
        assert!(shapley_kernel_weight(5, 0).is_infinite());
        assert!(shapley_kernel_weight(200, 100).is_finite());
    }

    #[test]
    fn null_game_gives_zero() {
        let zs = non_trivial(5);
        let preds = vec![0.3; zs.len()];
        let r = explain_kernel_shap(&zs, &preds, 0.3, 0.3, CoalitionWeighting::ShapleyKernel, 0)
            .unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn efficiency_holds_under_sampling_weights() {
        let zs = non_trivial(6);
        let preds: Vec<f64> = zs
            .iter()
            .map(|z| (z.kept_count() as f64 / 6.0).powi(2))
            .collect();
        let r = explain_kernel_shap(&zs, &preds, 0.0, 1.0, CoalitionWeighting::Uniform, 0).unwrap();
        assert!((r.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_coalitions_is_underdetermined() {
        let zs = vec![Coalition::new(vec![true, false, false, false])];
        let e = explain_kernel_shap(&zs, &[0.5], 0.0, 1.0, CoalitionWeighting::Uniform, 0);
        assert!(matches!(e, Err(Error::Solver(_))));
    }

    #[test]
    fn full_and_empty_samples_are_rejected() {
        let zs = vec![Coalition::full(3)];
        assert!(
            explain_kernel_shap(&zs, &[1.0], 0.0, 1.0, CoalitionWeighting::Uniform, 0).is_err()
        );
    }
}
