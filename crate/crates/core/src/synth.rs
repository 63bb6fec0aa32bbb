//! Synthetic scenes with planted ground truth: a smooth background and a
//! moving box of binary noise whose high-frequency energy drives the
//! synthetic predictors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::evaluation::{GroundTruthTrack, TrackFrame};
use crate::explain::SaliencyVolume;
use crate::predictor::{make_hf_box, make_region_linear, HfBox, RegionLinear};
use crate::segmentation::{grid_3d, upsample_cells, GridShape, SegmentationMap};
use crate::tensor::{BlurParams, Dims, VideoTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    /// Seed for background and box texture.
    pub noise_seed: u64,
    /// Seed for the box trajectory.
    pub track_seed: u64,
    /// Fraction of voxels covered by the moving box.
    pub box_fraction: f64,
    /// Largest total displacement of the box, as a fraction of each side.
    pub max_travel: f64,
    /// Background lattice before upsampling.
    pub background_grid: [usize; 3],
    pub blur: BlurParams,
    /// Grid used by the region-linear predictor.
    pub region_grid: [usize; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            t: 16,
            h: 112,
            w: 112,
            channels: 3,
            noise_seed: 0,
            track_seed: 0,
            box_fraction: 0.1,
            max_travel: 0.25,
            background_grid: [3, 5, 5],
            blur: BlurParams::default(),
            region_grid: [2, 3, 3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub video: VideoTensor,
    pub track: GroundTruthTrack,
    /// Indicator of the moving box.
    pub saliency: SaliencyVolume,
    /// Half-open bounding cuboid of the whole track.
    pub bbox: [usize; 6],
}

impl SynthSpec {
    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.t, self.h, self.w)
    }

    fn validate(&self) -> Result<()> {
        self.dims()?;
        self.blur.validate()?;
        if self.channels != 1 && self.channels != 3 {
            return param("channels must be 1 or 3");
        }
        if !(self.box_fraction > 0.0 && self.box_fraction < 1.0) {
            return param("box_fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.max_travel) {
            return param("max_travel must lie in [0, 1)");
        }
        Ok(())
    }

    /// Per-frame box side lengths so that `bh * bw / (h * w)` is closest to
    /// `box_fraction`.
    pub fn box_size(&self) -> (usize, usize) {
        let s = self.box_fraction.sqrt();
        let bh = ((self.h as f64 * s).round() as usize).clamp(1, self.h);
        let bw = ((self.w as f64 * s).round() as usize).clamp(1, self.w);
        (bh, bw)
    }

    pub fn track(&self) -> Result<GroundTruthTrack> {
        self.validate()?;
        let (bh, bw) = self.box_size();
        let mut rng = ChaCha8Rng::seed_from_u64(self.track_seed);
        let free_y = self.h - bh;
        let free_x = self.w - bw;
        let travel_y = ((self.h as f64 * self.max_travel) as usize).min(free_y);
        let travel_x = ((self.w as f64 * self.max_travel) as usize).min(free_x);
        let dy = rng.random_range(0..=travel_y) as i64 * if rng.random_bool(0.5) { 1 } else { -1 };
        let dx = rng.random_range(0..=travel_x) as i64 * if rng.random_bool(0.5) { 1 } else { -1 };
        let lo_y = if dy < 0 { -dy } else { 0 } as usize;
        let lo_x = if dx < 0 { -dx } else { 0 } as usize;
        let y0 = rng.random_range(lo_y..=free_y - dy.max(0) as usize);
        let x0 = rng.random_range(lo_x..=free_x - dx.max(0) as usize);
        let frames = (0..self.t)
            .map(|t| {
                let f = if self.t > 1 {
                    t as f64 / (self.t - 1) as f64
                } else {
                    0.0
                };
                let y = (y0 as f64 + f * dy as f64).round() as usize;
                let x = (x0 as f64 + f * dx as f64).round() as usize;
                TrackFrame {
                    t,
                    bbox: [y, y + bh, x, x + bw],
                }
            })
            .collect();
        Ok(GroundTruthTrack { frames })
    }

    pub fn generate(&self) -> Result<SynthScene> {
        let d = self.dims()?;
        let track = self.track()?;
        let c = self.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let g = GridShape::new(
            self.background_grid[0].clamp(1, d.t),
            self.background_grid[1].clamp(1, d.h),
            self.background_grid[2].clamp(1, d.w),
        );
        let mut planes = Vec::with_capacity(c);
        for _ in 0..c {
            let cells: Vec<f32> = (0..g.cells())
                .map(|_| rng.random_range(0.25..0.75))
                .collect();
            planes.push(upsample_cells(&cells, g, d)?);
        }
        let inside = track.indicator(d);
        let mut data = Vec::with_capacity(d.voxels() * c);
        for (i, &mark) in inside.iter().enumerate() {
            for plane in &planes {
                let v = if mark > 0.0 {
                    if rng.random_bool(0.5) {
                        0.9
                    } else {
                        0.1
                    }
                } else {
                    plane.data()[i]
                };
                data.push(v);
            }
        }
        let video = VideoTensor::new(d, c, data)?;
        let saliency = SaliencyVolume::new(d, inside)?;
        Ok(SynthScene {
            video,
            bbox: bounding_cuboid(&track),
            track,
            saliency,
        })
    }
}

fn bounding_cuboid(track: &GroundTruthTrack) -> [usize; 6] {
    let mut b = [usize::MAX, 0, usize::MAX, 0, usize::MAX, 0];
    for f in &track.frames {
        b[0] = b[0].min(f.t);
        b[1] = b[1].max(f.t + 1);
        b[2] = b[2].min(f.bbox[0]);
        b[3] = b[3].max(f.bbox[1]);
        b[4] = b[4].min(f.bbox[2]);
        b[5] = b[5].max(f.bbox[3]);
    }
    b
}

impl SynthScene {
    /// Calibrated high-frequency box predictor over the track's cuboid.
    pub fn hf_box(&self, blur: BlurParams) -> Result<HfBox> {
        make_hf_box(self.bbox, &self.video, blur)
    }

    /// Grid segmentation and weights proportional to each cell's overlap
    /// with the track, scaled to sum to `total`.
    pub fn region_linear(
        &self,
        grid: [usize; 3],
        bias: f64,
        total: f64,
        blur: BlurParams,
    ) -> Result<(Arc<SegmentationMap>, RegionLinear)> {
        let d = self.video.dims();
        let seg = Arc::new(grid_3d(
            d,
            grid[0].min(d.t),
            grid[1].min(d.h),
            grid[2].min(d.w),
        )?);
        let mut overlap = vec![0.0f64; seg.regions()];
        for (l, &s) in seg.labels().iter().zip(self.saliency.data()) {
            overlap[*l as usize] += s as f64;
        }
        let sum: f64 = overlap.iter().sum();
        let weights = overlap.iter().map(|o| total * o / sum).collect();
        let model = make_region_linear(seg.clone(), weights, bias, &self.video, blur)?;
        Ok((seg, model))
    }
}
