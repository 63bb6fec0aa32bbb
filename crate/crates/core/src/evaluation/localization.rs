use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::explain::SaliencyVolume;
use crate::tensor::Dims;

/// One annotated frame. `bbox` is half-open `[y0, y1) x [x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub t: usize,
    #[serde(rename = "box")]
    pub bbox: [usize; 4],
}

/// Per-frame ground-truth boxes; frames without an entry are unannotated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthTrack {
    pub frames: Vec<TrackFrame>,
}

impl GroundTruthTrack {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        if self.frames.is_empty() {
            return param("ground truth has no annotated frames");
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.frames {
            let [y0, y1, x0, x1] = f.bbox;
            if f.t >= dims.t || y0 >= y1 || x0 >= x1 || y1 > dims.h || x1 > dims.w {
                return param(format!(
                    "box {:?} at t={} is empty or outside {dims}",
                    f.bbox, f.t
                ));
            }
            if !seen.insert(f.t) {
                return param(format!("frame {} is annotated twice", f.t));
            }
        }
        Ok(())
    }

    pub fn by_frame(&self) -> BTreeMap<usize, [usize; 4]> {
        self.frames.iter().map(|f| (f.t, f.bbox)).collect()
    }

    /// Per-voxel indicator over the whole volume.
    pub fn indicator(&self, dims: Dims) -> Vec<f32> {
        let mut out = vec![0.0f32; dims.voxels()];
        for f in &self.frames {
            let [y0, y1, x0, x1] = f.bbox;
            for y in y0..y1.min(dims.h) {
                for x in x0..x1.min(dims.w) {
                    out[dims.index(f.t, y, x)] = 1.0;
                }
            }
        }
        out
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| crate::Error::Format(format!("ground truth: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub hit: bool,
    pub best_iou: f64,
    pub best_threshold: f64,
}

/// Thresholds `0, 0.05, ..., 1`.
pub fn iou_thresholds() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Hit iff the global saliency maximum (earliest on ties) falls inside the
/// box of an annotated frame.
pub fn pointing_game(s: &SaliencyVolume, gt: &GroundTruthTrack) -> Result<bool> {
    gt.validate(s.dims())?;
    let (t, y, x) = s.dims().coords(s.argmax());
    Ok(gt
        .by_frame()
        .get(&t)
        .is_some_and(|b| y >= b[0] && y < b[1] && x >= b[2] && x < b[3]))
}

/// `hits / (hits + misses)`.
pub fn pointing_accuracy(hits: &[bool]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
}

/// Sweeps thresholds over a normalized saliency volume and keeps the best
/// IoU against the boxes, over annotated frames only. A voxel is positive
/// when `s >= theta` and `s > 0`, so zero saliency never localizes anything.
/// Ties keep the lowest threshold; an empty binarization scores 0.
pub fn best_iou(s: &SaliencyVolume, gt: &GroundTruthTrack) -> Result<LocalizationResult> {
    let d = s.dims();
    gt.validate(d)?;
    if s.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return param("best_iou needs saliency normalized to [0, 1]");
    }
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for (t, b) in gt.by_frame() {
        for y in 0..d.h {
            for x in 0..d.w {
                let v = s.data()[d.index(t, y, x)] as f64;
                if y >= b[0] && y < b[1] && x >= b[2] && x < b[3] {
                    inside.push(v);
                } else {
                    outside.push(v);
                }
            }
        }
    }
    let mut best = (0.0f64, 0.0f64);
    let mut first = true;
    for th in iou_thresholds() {
        let positive = |v: f64| v >= th && v > 0.0;
        let inter = inside.iter().filter(|&&v| positive(v)).count();
        let fp = outside.iter().filter(|&&v| positive(v)).count();
        let union = inside.len() + fp;
        let iou = if inter == 0 || union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        };
        if first || iou > best.0 {
            best = (iou, th);
            first = false;
        }
    }
    Ok(LocalizationResult {
        hit: pointing_game(s, gt)?,
        best_iou: best.0,
        best_threshold: best.1,
    })
}

/// Fraction of results with `best_iou >= 0.5`.
pub fn iou_accuracy(results: &[LocalizationResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().filter(|r| r.best_iou >= 0.5).count() as f64 / results.len() as f64
}

pub fn average_iou(results: &[LocalizationResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.iter().map(|r| r.best_iou).sum::<f64>() / results.len() as f64
}
