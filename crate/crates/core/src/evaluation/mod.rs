//! Faithfulness metrics (deletion/insertion AUC, average drop) and
//! localization metrics (pointing game, thresholded IoU).

mod localization;

pub use localization::{
    average_iou, best_iou, iou_accuracy, iou_thresholds, pointing_accuracy, pointing_game,
    GroundTruthTrack, LocalizationResult, TrackFrame,
};

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::explain::SaliencyVolume;
use crate::par;
use crate::perturbation::{composite_fill, RemovalOperator, SoftMask};
use crate::predictor::{predict_target, Predictor};
use crate::tensor::VideoTensor;

/// Confidence as a function of the fraction of voxels perturbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub fractions: Vec<f64>,
    pub confidences: Vec<f64>,
}

impl PerturbationCurve {
    pub fn new(fractions: Vec<f64>, confidences: Vec<f64>) -> Result<Self> {
        if fractions.len() < 2 || fractions.len() != confidences.len() {
            return param("a curve needs at least two matching points");
        }
        if fractions[0] != 0.0 || *fractions.last().unwrap() != 1.0 {
            return param("fractions must start at 0 and end at 1");
        }
        if fractions.windows(2).any(|w| w[1] <= w[0]) {
            return param("fractions must be strictly increasing");
        }
        Ok(Self {
            fractions,
            confidences,
        })
    }
}

/// Trapezoidal area under the curve.
pub fn auc(c: &PerturbationCurve) -> f64 {
    c.fractions
        .windows(2)
        .zip(c.confidences.windows(2))
        .map(|(f, y)| (f[1] - f[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Voxel indices by decreasing saliency; ties keep scan order.
pub fn relevance_order(s: &SaliencyVolume) -> Vec<usize> {
    let d = s.data();
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    idx
}

fn check_inputs(v: &VideoTensor, s: &SaliencyVolume, steps: usize) -> Result<()> {
    if v.dims() != s.dims() {
        return param(format!(
            "saliency {} does not match video {}",
            s.dims(),
            v.dims()
        ));
    }
    if steps < 2 {
        return param("steps must be >= 2");
    }
    Ok(())
}

/// Voxel count perturbed at step `i` of `steps`, rounded to nearest.
fn count_at(i: usize, steps: usize, n: usize) -> usize {
    (2 * i * n + steps) / (2 * steps)
}

/// Replaces the `n_i` most relevant voxels of `base` by `other` for each
/// step and queries the predictor once for all steps.
fn sweep(
    base: &VideoTensor,
    other: &VideoTensor,
    s: &SaliencyVolume,
    predictor: &dyn Predictor,
    class: usize,
    steps: usize,
) -> Result<PerturbationCurve> {
    let order = relevance_order(s);
    let c = base.channels();
    let n = order.len();
    let videos: Vec<VideoTensor> = par::map_range(steps + 1, |i| {
        let mut data = base.data().to_vec();
        for &vox in &order[..count_at(i, steps, n)] {
            data[vox * c..(vox + 1) * c].copy_from_slice(&other.data()[vox * c..(vox + 1) * c]);
        }
        VideoTensor::new(base.dims(), c, data)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let conf = predict_target(predictor, &videos, class)?;
    PerturbationCurve::new(
        (0..=steps).map(|i| i as f64 / steps as f64).collect(),
        conf.into_iter().map(f64::from).collect(),
    )
}

fn fill_of(v: &VideoTensor, removal: &RemovalOperator) -> Result<VideoTensor> {
    removal.fill_for(v, None)
}

/// Deletes the most relevant voxels first, replacing them by the removal fill.
pub fn deletion_curve(
    v: &VideoTensor,
    s: &SaliencyVolume,
    predictor: &dyn Predictor,
    class: usize,
    steps: usize,
    removal: &RemovalOperator,
) -> Result<PerturbationCurve> {
    check_inputs(v, s, steps)?;
    let fill = fill_of(v, removal)?;
    sweep(v, &fill, s, predictor, class, steps)
}

/// Starts from the fully removed video and restores the most relevant voxels
/// first.
pub fn insertion_curve(
    v: &VideoTensor,
    s: &SaliencyVolume,
    predictor: &dyn Predictor,
    class: usize,
    steps: usize,
    removal: &RemovalOperator,
) -> Result<PerturbationCurve> {
    check_inputs(v, s, steps)?;
    let fill = fill_of(v, removal)?;
    sweep(&fill, v, s, predictor, class, steps)
}

/// Percentage confidence drop after blending each voxel toward the fill by
/// one minus its (already normalized) saliency.
pub fn average_drop(
    v: &VideoTensor,
    s: &SaliencyVolume,
    predictor: &dyn Predictor,
    class: usize,
    removal: &RemovalOperator,
) -> Result<f64> {
    if v.dims() != s.dims() {
        return param("saliency does not match video");
    }
    let mask = SoftMask::new(s.dims(), s.data().to_vec())
        .map_err(|_| Error::Param("average drop needs saliency normalized to [0, 1]".into()))?;
    let fill = fill_of(v, removal)?;
    let perturbed = composite_fill(v, &fill, &mask)?;
    let p = predict_target(predictor, &[v.clone(), perturbed], class)?;
    let (p0, pt) = (p[0] as f64, p[1] as f64);
    if p0 == 0.0 {
        return Err(Error::Undefined(
            "unperturbed confidence is 0; average drop is undefined".into(),
        ));
    }
    Ok(100.0 * (p0 - pt).max(0.0) / p0)
}

/// One row of the metric report. Unrequested metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub video_id: String,
    pub method: String,
    pub deletion_auc: Option<f64>,
    pub insertion_auc: Option<f64>,
    pub avg_drop_pct: Option<f64>,
    pub pointing_hit: Option<bool>,
    pub best_iou: Option<f64>,
    pub best_threshold: Option<f64>,
}
