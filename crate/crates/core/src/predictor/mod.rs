//! The black-box model contract and its built-in implementations.
//!
//! Explainers only ever see a [`Predictor`]: a batched map from videos to
//! per-class confidences. Synthetic predictors with planted ground truth and
//! an HTTP client for externally served models both implement it.

mod remote;
mod synthetic;
pub mod wire;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use remote::{RemoteClient, RemoteInfo, RetryPolicy};
pub use synthetic::{
    box_energy, make_hf_box, make_region_linear, region_energies, Constant, Echo, FnPredictor,
    HfBox, RegionLinear, RegionLinearParams,
};

use crate::error::{param, Error, Result};
use crate::segmentation::SegmentationMap;
use crate::tensor::{BlurParams, VideoTensor};

/// Per-class confidences, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector(pub Vec<f32>);

impl PredictionVector {
    pub fn new(confidences: Vec<f32>) -> Result<Self> {
        if confidences.is_empty() {
            return Err(Error::Protocol("empty confidence vector".into()));
        }
        if let Some(c) = confidences
            .iter()
            .find(|c| !c.is_finite() || !(0.0..=1.0).contains(*c))
        {
            return Err(Error::Protocol(format!("confidence {c} outside [0, 1]")));
        }
        Ok(Self(confidences))
    }

    pub fn get(&self, class: usize) -> f32 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the highest confidence; ties go to the lowest index.
    pub fn top1(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.0.iter().enumerate() {
            if c > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Target confidence `c` with the rest shared uniformly.
    pub fn one_vs_rest(class_count: usize, target: usize, c: f32) -> Self {
        let rest = if class_count > 1 {
            (1.0 - c) / (class_count - 1) as f32
        } else {
            0.0
        };
        Self(
            (0..class_count)
                .map(|k| if k == target { c } else { rest })
                .collect(),
        )
    }
}

/// A classifier queried in batches. Implementations must be order-preserving
/// and safe to call from several threads.
pub trait Predictor: Send + Sync {
    fn class_count(&self) -> usize;

    /// Largest batch the backend accepts in one call.
    fn max_batch(&self) -> usize {
        usize::MAX
    }

    fn predict_batch(&self, videos: &[VideoTensor]) -> Result<Vec<PredictionVector>>;

    fn predict(&self, video: &VideoTensor) -> Result<PredictionVector> {
        let mut out = self.predict_batch(std::slice::from_ref(video))?;
        out.pop()
            .ok_or_else(|| Error::Protocol("predictor returned no output".into()))
    }
}

/// Target-class confidences for a batch of any size, split to the
/// backend's maximum batch.
pub fn predict_target(p: &dyn Predictor, videos: &[VideoTensor], class: usize) -> Result<Vec<f32>> {
    if class >= p.class_count() {
        return param(format!(
            "class {class} out of range for {} classes",
            p.class_count()
        ));
    }
    let mut out = Vec::with_capacity(videos.len());
    for chunk in videos.chunks(p.max_batch().max(1)) {
        let preds = p.predict_batch(chunk)?;
        if preds.len() != chunk.len() {
            return Err(Error::Protocol(format!(
                "{} predictions for {} inputs",
                preds.len(),
                chunk.len()
            )));
        }
        for pv in preds {
            if pv.len() != p.class_count() {
                return Err(Error::Protocol(format!(
                    "{} confidences, expected {}",
                    pv.len(),
                    p.class_count()
                )));
            }
            out.push(pv.get(class));
        }
    }
    Ok(out)
}

/// Serializable predictor description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorSpec {
    HfBox(HfBox),
    RegionLinear(RegionLinearSpec),
    Constant(Constant),
    Echo(Echo),
    Remote { endpoint: String },
}

/// [`RegionLinear`] with its segmentation referenced by file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLinearSpec {
    pub segmentation: PathBuf,
    #[serde(flatten)]
    pub model: synthetic::RegionLinearParams,
}

impl PredictorSpec {
    /// Instantiates the predictor. Relative segmentation paths resolve
    /// against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<Arc<dyn Predictor>> {
        Ok(match self {
            PredictorSpec::HfBox(p) => {
                p.validate()?;
                Arc::new(p.clone())
            }
            PredictorSpec::RegionLinear(spec) => {
                let path = match base_dir {
                    Some(b) if spec.segmentation.is_relative() => b.join(&spec.segmentation),
                    _ => spec.segmentation.clone(),
                };
                let seg = crate::io::read_segmentation(&path)?;
                Arc::new(RegionLinear::new(Arc::new(seg), spec.model.clone())?)
            }
            PredictorSpec::Constant(c) => {
                PredictionVector::new(c.confidences.clone())?;
                Arc::new(c.clone())
            }
            PredictorSpec::Echo(e) => Arc::new(e.clone()),
            PredictorSpec::Remote { endpoint } => Arc::new(RemoteClient::connect(endpoint)?),
        })
    }

    pub fn class_count(&self) -> Option<usize> {
        match self {
            PredictorSpec::HfBox(p) => Some(p.class_count),
            PredictorSpec::RegionLinear(s) => Some(s.model.class_count),
            PredictorSpec::Constant(c) => Some(c.confidences.len()),
            PredictorSpec::Echo(e) => Some(e.class_count),
            PredictorSpec::Remote { .. } => None,
        }
    }
}

pub(crate) fn validate_blur(b: &BlurParams) -> Result<()> {
    b.validate()
}

pub(crate) fn check_same_dims(seg: &SegmentationMap, v: &VideoTensor) -> Result<()> {
    if seg.dims() != v.dims() {
        return param(format!(
            "segmentation {} does not match video {}",
            seg.dims(),
            v.dims()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_vector_rejects_out_of_range() {
        assert!(PredictionVector::new(vec![0.5, 1.2]).is_err());
        assert!(PredictionVector::new(vec![]).is_err());
        assert!(PredictionVector::new(vec![f32::NAN]).is_err());
    }

    #[test]
    fn one_vs_rest_shares_remainder() {
        let p = PredictionVector::one_vs_rest(5, 2, 0.6);
        assert_eq!(p.top1(), 2);
        assert!((p.0.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!((p.get(0) - 0.1).abs() < 1e-6);
    }

    #[test]
    fn spec_json_is_tagged() {
        let s = PredictorSpec::Constant(Constant {
            confidences: vec![0.25, 0.75],
        });
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"kind\":\"constant\""), "{j}");
        let back: PredictorSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
