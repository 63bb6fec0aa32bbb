//! Summary techniques: from (sample, prediction) pairs to relevance.

mod kernel_shap;
mod lime;
mod occlusion;
mod rise;
mod shapley;

pub use kernel_shap::{explain_kernel_shap, shapley_kernel_weight, CoalitionWeighting};
pub use lime::{explain_lime, LimeConfig};
pub use occlusion::{explain_loco, explain_sos, explain_up};
pub use rise::{explain_rise_masks, explain_rise_regions, RiseAccumulator};
pub use shapley::{brute_force_shapley, shapley_from_table, MAX_EXACT_REGIONS};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::segmentation::SegmentationMap;
use crate::tensor::{blur_values, BlurParams, Dims};

/// The six removal-based explanation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "video-lime")]
    Lime,
    #[serde(rename = "video-kernel-shap")]
    KernelShap,
    #[serde(rename = "video-rise")]
    Rise,
    #[serde(rename = "video-loco")]
    Loco,
    #[serde(rename = "video-up")]
    Up,
    #[serde(rename = "video-sos")]
    Sos,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Lime,
        Method::KernelShap,
        Method::Rise,
        Method::Loco,
        Method::Up,
        Method::Sos,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Lime => "video-lime",
            Method::KernelShap => "video-kernel-shap",
            Method::Rise => "video-rise",
            Method::Loco => "video-loco",
            Method::Up => "video-up",
            Method::Sos => "video-sos",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let key = key.strip_prefix("video-").unwrap_or(&key);
        Ok(match key {
            "lime" => Method::Lime,
            "kernel-shap" | "kernelshap" | "shap" => Method::KernelShap,
            "rise" => Method::Rise,
            "loco" => Method::Loco,
            "up" => Method::Up,
            "sos" => Method::Sos,
            _ => return param(format!("unknown method {s:?}")),
        })
    }
}

/// Signed relevance per region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRelevance {
    pub values: Vec<f64>,
    pub method: Method,
    pub class_index: usize,
    /// Regions whose value is a fallback rather than an estimate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<usize>,
}

impl RegionRelevance {
    pub fn new(values: Vec<f64>, method: Method, class_index: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!(
                "{method} produced non-finite relevance"
            )));
        }
        Ok(Self {
            values,
            method,
            class_index,
            flagged: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-voxel relevance over `(t, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVolume {
    dims: Dims,
    data: Vec<f32>,
    /// Voxels with no information (e.g. never occluded).
    pub uncovered: usize,
}

impl SaliencyVolume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.voxels() {
            return param("saliency length does not match dims");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return param("saliency contains non-finite values");
        }
        Ok(Self {
            dims,
            data,
            uncovered: 0,
        })
    }

    pub fn filled(dims: Dims, value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims.voxels()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Index of the global maximum, earliest in scan order on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Paints each voxel with its region's relevance, then applies the fade blur.
pub fn relevance_to_volume(
    r: &RegionRelevance,
    seg: &SegmentationMap,
    fade: Option<&BlurParams>,
) -> Result<SaliencyVolume> {
    if r.len() != seg.regions() {
        return param(format!(
            "{} relevance values for {} regions",
            r.len(),
            seg.regions()
        ));
    }
    let data: Vec<f32> = seg
        .labels()
        .iter()
        .map(|&l| r.values[l as usize] as f32)
        .collect();
    let constant = data.iter().all(|&v| v == data[0]);
    let data = match fade {
        Some(f) if !constant => blur_values(&data, seg.dims(), 1, f)?,
        _ => data,
    };
    SaliencyVolume::new(seg.dims(), data)
}
