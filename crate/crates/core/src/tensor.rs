//! Dense video volumes and separable Gaussian blurring.
//!
//! All volumes are stored row-major as `(t, h, w, c)`. Blurring is applied
//! independently per channel along each axis with replicate padding.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::par;

/// Spatio-temporal extent of a volume, without channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return param(format!("dims must be >= 1, got {t}x{h}x{w}"));
        }
        Ok(Self { t, h, w })
    }

    pub fn voxels(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.h + y) * self.w + x
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.w;
        let y = (idx / self.w) % self.h;
        let t = idx / self.frame_len();
        (t, y, x)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.t, self.h, self.w)
    }
}

/// A video with values in `[0, 1]`, layout `(t, h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    dims: Dims,
    channels: usize,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(dims: Dims, channels: usize, data: Vec<f32>) -> Result<Self> {
        Dims::new(dims.t, dims.h, dims.w)?;
        if channels != 1 && channels != 3 {
            return param(format!("channels must be 1 or 3, got {channels}"));
        }
        if data.len() != dims.voxels() * channels {
            return param(format!(
                "data length {} does not match {dims}x{channels}",
                data.len()
            ));
        }
        if let Some(pos) = data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return param(format!(
                "value {} at offset {pos} is outside [0, 1]",
                data[pos]
            ));
        }
        Ok(Self {
            dims,
            channels,
            data,
        })
    }

    pub fn filled(dims: Dims, channels: usize, value: f32) -> Result<Self> {
        Self::new(dims, channels, vec![value; dims.voxels() * channels])
    }

    /// Builds a tensor from a per-element function `f(t, y, x, ch)`.
    pub fn from_fn(
        dims: Dims,
        channels: usize,
        f: impl Fn(usize, usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.voxels() * channels);
        for t in 0..dims.t {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    for ch in 0..channels {
                        data.push(f(t, y, x, ch));
                    }
                }
            }
        }
        Self::new(dims, channels, data)
    }

    /// Clamps into `[0, 1]` instead of rejecting out-of-range values.
    /// Non-finite values are still rejected.
    pub fn from_clamped(dims: Dims, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            if !v.is_finite() {
                return Err(Error::Param("non-finite value in tensor".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(dims, channels, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize, ch: usize) -> f32 {
        self.data[self.dims.index(t, y, x) * self.channels + ch]
    }

    pub fn same_shape(&self, other: &VideoTensor) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }
}

/// Gaussian blur widths. `sigma_time == 0` leaves frames independent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    pub sigma_space: f64,
    pub sigma_time: f64,
    /// Kernel radius is `ceil(truncation * sigma)`.
    pub truncation: f64,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            sigma_space: 10.0,
            sigma_time: 2.0,
            truncation: 2.0,
        }
    }
}

impl BlurParams {
    pub fn new(sigma_space: f64, sigma_time: f64, truncation: f64) -> Result<Self> {
        let p = Self {
            sigma_space,
            sigma_time,
            truncation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma_space.is_finite() || self.sigma_space <= 0.0 {
            return param(format!("sigma_space must be > 0, got {}", self.sigma_space));
        }
        if !self.sigma_time.is_finite() || self.sigma_time < 0.0 {
            return param(format!("sigma_time must be >= 0, got {}", self.sigma_time));
        }
        if !self.truncation.is_finite() || self.truncation <= 0.0 {
            return param(format!("truncation must be > 0, got {}", self.truncation));
        }
        Ok(())
    }

    /// The softer blur used for mask fade-in: half the sigmas.
    pub fn fade(&self) -> Self {
        Self {
            sigma_space: self.sigma_space / 2.0,
            sigma_time: self.sigma_time / 2.0,
            truncation: self.truncation,
        }
    }

    pub fn space_radius(&self) -> usize {
        (self.truncation * self.sigma_space).ceil() as usize
    }

    pub fn time_radius(&self) -> usize {
        if self.sigma_time == 0.0 {
            0
        } else {
            (self.truncation * self.sigma_time).ceil() as usize
        }
    }
}

/// Normalized 1D Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f32> {
    if radius == 0 || sigma == 0.0 {
        return vec![1.0];
    }
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-(radius as i64)..=radius as i64)
        .map(|d| (-((d * d) as f64) / denom).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|w| (w / sum) as f32).collect()
}

/// Blurs an unconstrained `(t, h, w, c)` buffer. No clamping is applied, so
/// the operation is linear in `data`.
pub fn blur_values(data: &[f32], dims: Dims, channels: usize, p: &BlurParams) -> Result<Vec<f32>> {
    p.validate()?;
    Dims::new(dims.t, dims.h, dims.w)?;
    if channels == 0 || data.len() != dims.voxels() * channels {
        return param("blur input length does not match dims");
    }
    if data.iter().any(|v| !v.is_finite()) {
        return param("blur input contains non-finite values");
    }
    let spatial = gaussian_kernel(p.sigma_space, p.space_radius());
    let temporal = gaussian_kernel(p.sigma_time, p.time_radius());
    let mut cur = data.to_vec();
    if temporal.len() > 1 && dims.t > 1 {
        cur = blur_time(&cur, dims, channels, &temporal);
    }
    if spatial.len() > 1 {
        if dims.h > 1 {
            cur = blur_rows(&cur, dims, channels, &spatial);
        }
        if dims.w > 1 {
            blur_cols_in_place(&mut cur, dims, channels, &spatial);
        }
    }
    Ok(cur)
}

fn blur_time(src: &[f32], dims: Dims, channels: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let frame = dims.frame_len() * channels;
    let last = dims.t as isize - 1;
    let mut out = vec![0.0f32; src.len()];
    par::for_each_chunk_mut(&mut out, frame, |ti, dst| {
        for (j, &wt) in k.iter().enumerate() {
            let s = (ti as isize + j as isize - r).clamp(0, last) as usize;
            let srcf = &src[s * frame..(s + 1) * frame];
            for (d, &v) in dst.iter_mut().zip(srcf) {
                *d += wt * v;
            }
        }
    });
    out
}

/// Blur along `y`, i.e. combining whole rows within each frame.
fn blur_rows(src: &[f32], dims: Dims, channels: usize, k: &[f32]) -> Vec<f32> {
    let r = (k.len() / 2) as isize;
    let row = dims.w * channels;
    let frame = dims.h * row;
    let last = dims.h as isize - 1;
    let mut out = vec![0.0f32; src.len()];
    par::for_each_chunk_mut(&mut out, frame, |ti, dst| {
        let srcf = &src[ti * frame..(ti + 1) * frame];
        for y in 0..dims.h {
            let drow = &mut dst[y * row..(y + 1) * row];
            for (j, &wt) in k.iter().enumerate() {
                let s = (y as isize + j as isize - r).clamp(0, last) as usize;
                for (d, &v) in drow.iter_mut().zip(&srcf[s * row..(s + 1) * row]) {
                    *d += wt * v;
                }
            }
        }
    });
    out
}

/// Blur along `x`, one padded row at a time.
fn blur_cols_in_place(buf: &mut [f32], dims: Dims, channels: usize, k: &[f32]) {
    let r = k.len() / 2;
    let row = dims.w * channels;
    let frame = dims.h * row;
    par::for_each_chunk_mut(buf, frame, |_, f| {
        let mut padded = vec![0.0f32; (dims.w + 2 * r) * channels];
        for y in 0..dims.h {
            let line = &mut f[y * row..(y + 1) * row];
            for px in 0..dims.w + 2 * r {
                let sx = (px as isize - r as isize).clamp(0, dims.w as isize - 1) as usize;
                padded[px * channels..(px + 1) * channels]
                    .copy_from_slice(&line[sx * channels..(sx + 1) * channels]);
            }
            for x in 0..dims.w {
                for ch in 0..channels {
                    let mut acc = 0.0f32;
                    for (j, &wt) in k.iter().enumerate() {
                        acc += wt * padded[(x + j) * channels + ch];
                    }
                    line[x * channels + ch] = acc;
                }
            }
        }
    });
}

/// Separable 3D Gaussian blur of a video; output is clamped to `[0, 1]`.
pub fn gaussian_blur_3d(v: &VideoTensor, p: &BlurParams) -> Result<VideoTensor> {
    let mut out = blur_values(v.data(), v.dims(), v.channels(), p)?;
    for x in &mut out {
        *x = x.clamp(0.0, 1.0);
    }
    Ok(VideoTensor {
        dims: v.dims(),
        channels: v.channels(),
        data: out,
    })
}
