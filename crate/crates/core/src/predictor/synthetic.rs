//! Synthetic predictors with analytically known behaviour under blur removal.
//!
//! Both energy-based models score *high-frequency energy*: the mean of
//! `|x - blur(x)|` over a set of voxels. Blur removal suppresses that energy,
//! so removing the planted region is what lowers the confidence.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_same_dims, validate_blur, PredictionVector, Predictor};
use crate::error::{param, Result};
use crate::par;
use crate::segmentation::SegmentationMap;
use crate::tensor::{blur_values, BlurParams, Dims, VideoTensor};

/// Mean `|x - blur(x)|` over the half-open cuboid
/// `[t0, t1) x [y0, y1) x [x0, x1)`, all channels.
///
/// Only a crop padded by the kernel radius is blurred; with replicate
/// padding this is identical to blurring the whole volume.
pub fn box_energy(x: &VideoTensor, bbox: [usize; 6], blur: &BlurParams) -> Result<f64> {
    let d = x.dims();
    let [t0, t1, y0, y1, x0, x1] = bbox;
    if t0 >= t1 || y0 >= y1 || x0 >= x1 || t1 > d.t || y1 > d.h || x1 > d.w {
        return param(format!("box {bbox:?} is empty or outside {d}"));
    }
    let (rt, rs) = (blur.time_radius(), blur.space_radius());
    let ct = (t0.saturating_sub(rt), (t1 + rt).min(d.t));
    let cy = (y0.saturating_sub(rs), (y1 + rs).min(d.h));
    let cx = (x0.saturating_sub(rs), (x1 + rs).min(d.w));
    let cd = Dims::new(ct.1 - ct.0, cy.1 - cy.0, cx.1 - cx.0)?;
    let c = x.channels();
    let mut crop = Vec::with_capacity(cd.voxels() * c);
    for t in ct.0..ct.1 {
        for y in cy.0..cy.1 {
            let start = d.index(t, y, cx.0) * c;
            let end = d.index(t, y, cx.1 - 1) * c + c;
            crop.extend_from_slice(&x.data()[start..end]);
        }
    }
    let blurred = blur_values(&crop, cd, c, blur)?;
    let mut sum = 0.0f64;
    for t in t0..t1 {
        for y in y0..y1 {
            for xx in x0..x1 {
                let i = cd.index(t - ct.0, y - cy.0, xx - cx.0) * c;
                for ch in 0..c {
                    sum += (crop[i + ch] - blurred[i + ch]).abs() as f64;
                }
            }
        }
    }
    Ok(sum / ((t1 - t0) * (y1 - y0) * (x1 - x0) * c) as f64)
}

/// Per-region mean `|x - blur(x)|`.
pub fn region_energies(
    x: &VideoTensor,
    seg: &SegmentationMap,
    blur: &BlurParams,
) -> Result<Vec<f64>> {
    check_same_dims(seg, x)?;
    let c = x.channels();
    let b = blur_values(x.data(), x.dims(), c, blur)?;
    let mut sums = vec![0.0f64; seg.regions()];
    let mut counts = vec![0usize; seg.regions()];
    for (i, &l) in seg.labels().iter().enumerate() {
        let l = l as usize;
        counts[l] += c;
        for ch in 0..c {
            sums[l] += (x.data()[i * c + ch] - b[i * c + ch]).abs() as f64;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s / n as f64)
        .collect())
}

/// Confidence `clip(gain * E(x) / E(reference), 0, 1)` for the target class,
/// with `E` the high-frequency energy inside a planted box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfBox {
    /// Half-open `(t0, t1, y0, y1, x0, x1)`.
    pub bbox: [usize; 6],
    pub blur: BlurParams,
    pub reference_energy: f64,
    #[serde(default = "one")]
    pub gain: f64,
    pub class_count: usize,
    #[serde(default)]
    pub target_class: usize,
}

fn one() -> f64 {
    1.0
}

impl HfBox {
    pub(crate) fn validate(&self) -> Result<()> {
        validate_blur(&self.blur)?;
        if !(self.reference_energy > 0.0 && self.reference_energy.is_finite()) {
            return param("reference energy must be positive");
        }
        if self.class_count == 0 || self.target_class >= self.class_count {
            return param("target class out of range");
        }
        Ok(())
    }

    pub fn confidence(&self, x: &VideoTensor) -> Result<f32> {
        let e = box_energy(x, self.bbox, &self.blur)?;
        Ok((self.gain * e / self.reference_energy).clamp(0.0, 1.0) as f32)
    }
}

/// Calibrates an [`HfBox`] so that `reference` scores exactly 1.
pub fn make_hf_box(bbox: [usize; 6], reference: &VideoTensor, blur: BlurParams) -> Result<HfBox> {
    validate_blur(&blur)?;
    let e = box_energy(reference, bbox, &blur)?;
    if e <= 0.0 {
        return param("reference has no high-frequency energy inside the box");
    }
    Ok(HfBox {
        bbox,
        blur,
        reference_energy: e,
        gain: 1.0,
        class_count: 2,
        target_class: 0,
    })
}

impl Predictor for HfBox {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn predict_batch(&self, videos: &[VideoTensor]) -> Result<Vec<PredictionVector>> {
        par::map_slice(videos, |v| {
            let c = self.confidence(v)?;
            Ok(PredictionVector::one_vs_rest(
                self.class_count,
                self.target_class,
                c,
            ))
        })
        .into_iter()
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLinearParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub blur: BlurParams,
    pub reference_energy: Vec<f64>,
    pub class_count: usize,
    #[serde(default)]
    pub target_class: usize,
}

/// Confidence `clip(bias + sum_k w_k * e_k(x), 0, 1)` where `e_k` is region
/// `k`'s high-frequency energy relative to the reference.
#[derive(Debug, Clone)]
pub struct RegionLinear {
    seg: Arc<SegmentationMap>,
    params: RegionLinearParams,
}

impl RegionLinear {
    pub fn new(seg: Arc<SegmentationMap>, params: RegionLinearParams) -> Result<Self> {
        validate_blur(&params.blur)?;
        let r = seg.regions();
        if params.weights.len() != r || params.reference_energy.len() != r {
            return param(format!("need {r} weights and reference energies"));
        }
        if params.weights.iter().any(|w| !w.is_finite()) || !params.bias.is_finite() {
            return param("weights must be finite");
        }
        if params
            .reference_energy
            .iter()
            .any(|e| e.is_nan() || *e <= 0.0)
        {
            return param("every region needs positive reference energy");
        }
        if params.class_count == 0 || params.target_class >= params.class_count {
            return param("target class out of range");
        }
        Ok(Self { seg, params })
    }

    pub fn params(&self) -> &RegionLinearParams {
        &self.params
    }

    pub fn segmentation(&self) -> &SegmentationMap {
        &self.seg
    }

    /// Relative energies `e_k(x)`.
    pub fn relative_energies(&self, x: &VideoTensor) -> Result<Vec<f64>> {
        let e = region_energies(x, &self.seg, &self.params.blur)?;
        Ok(e.iter()
            .zip(&self.params.reference_energy)
            .map(|(a, b)| a / b)
            .collect())
    }

    pub fn confidence(&self, x: &VideoTensor) -> Result<f32> {
        let e = self.relative_energies(x)?;
        let s: f64 = self.params.weights.iter().zip(&e).map(|(w, e)| w * e).sum();
        Ok((self.params.bias + s).clamp(0.0, 1.0) as f32)
    }
}

pub fn make_region_linear(
    seg: Arc<SegmentationMap>,
    weights: Vec<f64>,
    bias: f64,
    reference: &VideoTensor,
    blur: BlurParams,
) -> Result<RegionLinear> {
    let reference_energy = region_energies(reference, &seg, &blur)?;
    RegionLinear::new(
        seg,
        RegionLinearParams {
            weights,
            bias,
            blur,
            reference_energy,
            class_count: 2,
            target_class: 0,
        },
    )
}

impl Predictor for RegionLinear {
    fn class_count(&self) -> usize {
        self.params.class_count
    }

    fn predict_batch(&self, videos: &[VideoTensor]) -> Result<Vec<PredictionVector>> {
        par::map_slice(videos, |v| {
            let c = self.confidence(v)?;
            Ok(PredictionVector::one_vs_rest(
                self.params.class_count,
                self.params.target_class,
                c,
            ))
        })
        .into_iter()
        .collect()
    }
}

/// Ignores its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub confidences: Vec<f32>,
}

impl Predictor for Constant {
    fn class_count(&self) -> usize {
        self.confidences.len()
    }

    fn predict_batch(&self, videos: &[VideoTensor]) -> Result<Vec<PredictionVector>> {
        videos
            .iter()
            .map(|_| PredictionVector::new(self.confidences.clone()))
            .collect()
    }
}

/// Class 0 confidence is the mean voxel value; other classes share the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub class_count: usize,
}

impl Echo {
    pub fn confidence(v: &VideoTensor) -> f32 {
        let s: f64 = v.data().iter().map(|&x| x as f64).sum();
        (s / v.data().len() as f64) as f32
    }
}

impl Predictor for Echo {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn predict_batch(&self, videos: &[VideoTensor]) -> Result<Vec<PredictionVector>> {
        Ok(videos
            .iter()
            .map(|v| PredictionVector::one_vs_rest(self.class_count, 0, Self::confidence(v)))
            .collect())
    }
}

/// Wraps a per-video closure returning the target-class confidence.
pub struct FnPredictor<F> {
    class_count: usize,
    target: usize,
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&VideoTensor) -> f32 + Send + Sync,
{
    pub fn new(class_count: usize, target: usize, f: F) -> Self {
        Self {
            class_count,
            target,
            f,
        }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&VideoTensor) -> f32 + Send + Sync,
{
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn predict_batch(&self, videos: &[VideoTensor]) -> Result<Vec<PredictionVector>> {
        Ok(par::map_slice(videos, |v| {
            PredictionVector::one_vs_rest(
                self.class_count,
                self.target,
                (self.f)(v).clamp(0.0, 1.0),
            )
        }))
    }
}
