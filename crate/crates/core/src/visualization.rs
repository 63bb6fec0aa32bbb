//! Heat-map rendering: clamping, stretching, region filtering, colormaps and
//! alpha compositing over a desaturated background.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::explain::{RegionRelevance, SaliencyVolume};
use crate::segmentation::SegmentationMap;
use crate::tensor::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    #[default]
    Heat,
    Viridis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub clamp_negative: bool,
    pub stretch: bool,
    pub top_n: Option<usize>,
    pub min_relevance: Option<f64>,
    pub cumulative_cutoff: Option<f64>,
    pub alpha: f32,
    pub colormap: Colormap,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            clamp_negative: true,
            stretch: true,
            top_n: None,
            min_relevance: None,
            cumulative_cutoff: None,
            alpha: 0.6,
            colormap: Colormap::Heat,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let active = [
            self.top_n.is_some(),
            self.min_relevance.is_some(),
            self.cumulative_cutoff.is_some(),
        ];
        if active.iter().filter(|&&a| a).count() > 1 {
            return param("at most one of top_n, min_relevance, cumulative_cutoff may be set");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return param(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if let Some(c) = self.cumulative_cutoff {
            if !(c > 0.0 && c <= 1.0) {
                return param(format!("cumulative_cutoff {c} outside (0, 1]"));
            }
        }
        if let Some(m) = self.min_relevance {
            if !m.is_finite() {
                return param("min_relevance must be finite");
            }
        }
        Ok(())
    }
}

/// Clamps negatives to 0 (if configured), then min-max stretches to `[0, 1]`.
/// A constant volume maps to all zeros.
pub fn normalize_saliency(s: &SaliencyVolume, cfg: &RenderConfig) -> Result<SaliencyVolume> {
    let mut data = s.data().to_vec();
    if cfg.clamp_negative {
        data.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let (lo, hi) = data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi <= lo {
        data.iter_mut().for_each(|v| *v = 0.0);
    } else if cfg.stretch {
        let span = (hi - lo) as f64;
        data.iter_mut()
            .for_each(|v| *v = (((*v - lo) as f64 / span) as f32).clamp(0.0, 1.0));
    } else {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    let mut out = SaliencyVolume::new(s.dims(), data)?;
    out.uncovered = s.uncovered;
    Ok(out)
}

/// Keeps the regions selected by the active rule and lowers the rest to
/// `min(v, 0)`, so no value ever increases. Without a rule this is the identity.
pub fn filter_regions(rel: &RegionRelevance, cfg: &RenderConfig) -> Result<RegionRelevance> {
    cfg.validate()?;
    let v = &rel.values;
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    let mut keep = vec![false; v.len()];
    if let Some(n) = cfg.top_n {
        order.iter().take(n).for_each(|&k| keep[k] = true);
    } else if let Some(tau) = cfg.min_relevance {
        (0..v.len())
            .filter(|&k| v[k] >= tau)
            .for_each(|k| keep[k] = true);
    } else if let Some(cut) = cfg.cumulative_cutoff {
        let total: f64 = v.iter().filter(|&&x| x > 0.0).sum();
        if total > 0.0 {
            let mut acc = 0.0;
            for &k in order.iter().take_while(|&&k| v[k] > 0.0) {
                keep[k] = true;
                acc += v[k];
                if acc / total >= cut - 1e-12 {
                    break;
                }
            }
        }
    } else {
        return Ok(rel.clone());
    }
    let mut out = rel.clone();
    for (x, k) in out.values.iter_mut().zip(keep) {
        if !k {
            *x = x.min(0.0);
        }
    }
    Ok(out)
}

const fn lerp_u8(a: u8, b: u8, num: u32, den: u32) -> u8 {
    let (a, b) = (a as u32, b as u32);
    if b >= a {
        (a + ((b - a) * num + den / 2) / den) as u8
    } else {
        (a - ((a - b) * num + den / 2) / den) as u8
    }
}

const fn clamp_u8(x: i32) -> u8 {
    if x < 0 {
        0
    } else if x > 255 {
        255
    } else {
        x as u8
    }
}

const fn heat_lut() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        let v = 3 * i as i32;
        lut[i] = [clamp_u8(v), clamp_u8(v - 255), clamp_u8(v - 510)];
        i += 1;
    }
    lut
}

const VIRIDIS_ANCHORS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

const fn viridis_lut() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    let segs = (VIRIDIS_ANCHORS.len() - 1) as u32;
    let mut i = 0;
    while i < 256 {
        // Position i/255 along `segs` equal segments.
        let pos = i as u32 * segs;
        let mut seg = pos / 255;
        if seg >= segs {
            seg = segs - 1;
        }
        let num = pos - seg * 255;
        let a = VIRIDIS_ANCHORS[seg as usize];
        let b = VIRIDIS_ANCHORS[seg as usize + 1];
        lut[i] = [
            lerp_u8(a[0], b[0], num, 255),
            lerp_u8(a[1], b[1], num, 255),
            lerp_u8(a[2], b[2], num, 255),
        ];
        i += 1;
    }
    lut
}

/// Black, red, yellow, white: `r = 3i`, `g = 3i - 255`, `b = 3i - 510`, clamped.
pub static HEAT: [[u8; 3]; 256] = heat_lut();
/// Piecewise-linear through nine viridis anchor colours.
pub static VIRIDIS: [[u8; 3]; 256] = viridis_lut();

impl Colormap {
    pub fn lut(&self) -> &'static [[u8; 3]; 256] {
        match self {
            Colormap::Heat => &HEAT,
            Colormap::Viridis => &VIRIDIS,
        }
    }

    /// Colour for `s` in `[0, 1]`, as floats in `[0, 1]`.
    pub fn color(&self, s: f32) -> [f32; 3] {
        let i = (s.clamp(0.0, 1.0) * 255.0).round() as usize;
        let c = self.lut()[i];
        [
            c[0] as f32 / 255.0,
            c[1] as f32 / 255.0,
            c[2] as f32 / 255.0,
        ]
    }
}

fn gray_at(v: &VideoTensor, i: usize) -> f32 {
    let d = v.data();
    if v.channels() == 3 {
        0.299 * d[3 * i] + 0.587 * d[3 * i + 1] + 0.114 * d[3 * i + 2]
    } else {
        d[i]
    }
}

/// Desaturated copy of `v` with 3 channels.
pub fn grayscale_rgb(v: &VideoTensor) -> Result<VideoTensor> {
    let n = v.dims().voxels();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        let g = gray_at(v, i).clamp(0.0, 1.0);
        out.extend_from_slice(&[g, g, g]);
    }
    VideoTensor::new(v.dims(), 3, out)
}

/// `(1 - alpha s) gray(v) + alpha s cmap(s)` per voxel; `s` must be normalized.
pub fn composite(v: &VideoTensor, s: &SaliencyVolume, cfg: &RenderConfig) -> Result<VideoTensor> {
    cfg.validate()?;
    if v.dims() != s.dims() {
        return param("saliency does not match video");
    }
    if s.data().iter().any(|x| !(0.0..=1.0).contains(x)) {
        return param("composite needs saliency normalized to [0, 1]");
    }
    let mut out = Vec::with_capacity(3 * s.data().len());
    for (i, &w) in s.data().iter().enumerate() {
        let g = gray_at(v, i);
        let a = cfg.alpha * w;
        let c = cfg.colormap.color(w);
        for ch in c {
            out.push(((1.0 - a) * g + a * ch).clamp(0.0, 1.0));
        }
    }
    VideoTensor::new(v.dims(), 3, out)
}

/// Normalizes and composites in one step.
pub fn render_overlay(
    v: &VideoTensor,
    s: &SaliencyVolume,
    cfg: &RenderConfig,
) -> Result<VideoTensor> {
    composite(v, &normalize_saliency(s, cfg)?, cfg)
}

/// Grayscale video with region boundaries painted in `color`.
pub fn boundary_overlay(
    v: &VideoTensor,
    seg: &SegmentationMap,
    color: [f32; 3],
) -> Result<VideoTensor> {
    if v.dims() != seg.dims() {
        return param("segmentation does not match video");
    }
    let mut g = grayscale_rgb(v)?.into_data();
    for (i, b) in seg.boundaries().into_iter().enumerate() {
        if b {
            g[3 * i..3 * i + 3].copy_from_slice(&color);
        }
    }
    VideoTensor::new(v.dims(), 3, g)
}

/// Frame indices shown on a contact sheet: first, middle and last.
pub fn sheet_frames(t: usize) -> Vec<usize> {
    let mut f = vec![0, t / 2, t.saturating_sub(1)];
    f.dedup();
    f
}

/// One row per video, columns at the first/middle/last frame, 2-pixel gaps.
pub fn contact_sheet(rows: &[&VideoTensor]) -> Result<image::RgbImage> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Param("contact sheet needs a row".into()))?;
    let d = first.dims();
    if rows.iter().any(|r| r.dims() != d) {
        return param("contact sheet rows must share dims");
    }
    let cols = sheet_frames(d.t);
    let gap = 2u32;
    let (w, h) = (d.w as u32, d.h as u32);
    let width = cols.len() as u32 * (w + gap) - gap;
    let height = rows.len() as u32 * (h + gap) - gap;
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    for (ri, v) in rows.iter().enumerate() {
        for (ci, &t) in cols.iter().enumerate() {
            for y in 0..d.h {
                for x in 0..d.w {
                    let i = d.index(t, y, x);
                    let px = if v.channels() == 3 {
                        let s = &v.data()[3 * i..3 * i + 3];
                        [q(s[0]), q(s[1]), q(s[2])]
                    } else {
                        let g = q(v.data()[i]);
                        [g, g, g]
                    };
                    img.put_pixel(
                        ci as u32 * (w + gap) + x as u32,
                        ri as u32 * (h + gap) + y as u32,
                        image::Rgb(px),
                    );
                }
            }
        }
    }
    Ok(img)
}

fn q(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_contact_sheet(rows: &[&VideoTensor], path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref();
    contact_sheet(rows)?
        .save(p)
        .map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}
