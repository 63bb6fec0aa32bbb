//! Which regions to remove per sample, how to soften the removal mask, and
//! how removed voxels are filled.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::segmentation::{region_mean_color, SegmentationMap};
use crate::tensor::{blur_values, gaussian_blur_3d, BlurParams, Dims, VideoTensor};

/// Keep/remove assignment over regions; `true` keeps the region unperturbed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coalition(Vec<bool>);

impl Coalition {
    pub fn new(z: Vec<bool>) -> Self {
        Self(z)
    }

    pub fn full(r: usize) -> Self {
        Self(vec![true; r])
    }

    pub fn empty(r: usize) -> Self {
        Self(vec![false; r])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self, k: usize) -> bool {
        self.0[k]
    }

    pub fn kept_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// The coalition as 0/1 values.
    pub fn indicator(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-voxel keep weight in `[0, 1]`; 1 keeps the original voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    dims: Dims,
    data: Vec<f32>,
}

impl SoftMask {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.voxels() {
            return param("mask length does not match dims");
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return param("mask values must lie in [0, 1]");
        }
        Ok(Self { dims, data })
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

    /// Blurs the mask; constant masks are returned unchanged.
    pub fn faded(self, fade: &BlurParams) -> Result<Self> {
        let first = self.data[0];
        if self.data.iter().all(|&v| v == first) {
            return Ok(self);
        }
        let mut data = blur_values(&self.data, self.dims, 1, fade)?;
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            dims: self.dims,
            data,
        })
    }
}

/// How coalitions are drawn for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Each region removed independently with probability `p_remove`.
    Bernoulli {
        n_samples: usize,
        p_remove: f64,
        seed: u64,
    },
    /// Coalition `k` removes only region `k`.
    LeaveOneOut,
    /// Coalition `k` keeps only region `k`.
    KeepOne,
    /// Sizes drawn from the Shapley kernel's size marginal, then a uniform
    /// subset of that size. Never empty or full.
    ShapKernel { n_samples: usize, seed: u64 },
}

/// Relative probability of a kept-set of size `k` under the Shapley kernel.
pub fn shap_size_weight(r: usize, k: usize) -> f64 {
    (r as f64 - 1.0) / (k as f64 * (r - k) as f64)
}

pub fn sample_coalitions(r: usize, s: &SamplingStrategy) -> Result<Vec<Coalition>> {
    if r == 0 {
        return param("region count must be >= 1");
    }
    match *s {
        SamplingStrategy::Bernoulli {
            n_samples,
            p_remove,
            seed,
        } => {
            if n_samples == 0 {
                return param("n_samples must be >= 1");
            }
            if !(p_remove > 0.0 && p_remove < 1.0) {
                return param(format!("p_remove must be in (0, 1), got {p_remove}"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..n_samples)
                .map(|_| Coalition((0..r).map(|_| rng.random::<f64>() >= p_remove).collect()))
                .collect())
        }
        SamplingStrategy::LeaveOneOut => Ok((0..r)
            .map(|k| Coalition((0..r).map(|j| j != k).collect()))
            .collect()),
        SamplingStrategy::KeepOne => Ok((0..r)
            .map(|k| Coalition((0..r).map(|j| j == k).collect()))
            .collect()),
        SamplingStrategy::ShapKernel { n_samples, seed } => {
            if n_samples == 0 {
                return param("n_samples must be >= 1");
            }
            if r < 2 {
                return param("Shapley-kernel sampling needs at least 2 regions");
            }
            let weights: Vec<f64> = (1..r).map(|k| shap_size_weight(r, k)).collect();
            let total: f64 = weights.iter().sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..n_samples)
                .map(|_| {
                    let mut u = rng.random::<f64>() * total;
                    let mut size = r - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            size = i + 1;
                            break;
                        }
                        u -= w;
                    }
                    let mut z = vec![false; r];
                    for k in index::sample(&mut rng, r, size) {
                        z[k] = true;
                    }
                    Coalition(z)
                })
                .collect())
        }
    }
}

/// Binary voxel mask of the kept regions.
pub fn coalition_mask(z: &Coalition, seg: &SegmentationMap) -> Result<SoftMask> {
    if z.len() != seg.regions() {
        return param(format!(
            "coalition has {} entries, segmentation has {} regions",
            z.len(),
            seg.regions()
        ));
    }
    let data = seg
        .labels()
        .iter()
        .map(|&l| if z.kept(l as usize) { 1.0 } else { 0.0 })
        .collect();
    SoftMask::new(seg.dims(), data)
}

/// Binary kept-region mask blurred by `fade` for a soft fade-in border.
pub fn coalition_to_soft_mask(
    z: &Coalition,
    seg: &SegmentationMap,
    fade: &BlurParams,
) -> Result<SoftMask> {
    coalition_mask(z, seg)?.faded(fade)
}

/// Fill source for removed voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FillKind {
    Blur(BlurParams),
    /// One value per channel, or a single value for all channels.
    Constant {
        color: Vec<f32>,
    },
    RegionMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalOperator {
    pub fill: FillKind,
    /// Mask softening; `None` uses hard masks.
    pub fade: Option<BlurParams>,
}

impl Default for RemovalOperator {
    fn default() -> Self {
        Self::blur(BlurParams::default())
    }
}

impl RemovalOperator {
    /// Blur fill with the matching half-width fade.
    pub fn blur(p: BlurParams) -> Self {
        Self {
            fill: FillKind::Blur(p),
            fade: Some(p.fade()),
        }
    }

    pub fn constant(color: Vec<f32>, fade: Option<BlurParams>) -> Self {
        Self {
            fill: FillKind::Constant { color },
            fade,
        }
    }

    pub fn region_mean(fade: Option<BlurParams>) -> Self {
        Self {
            fill: FillKind::RegionMean,
            fade,
        }
    }

    /// Materializes the fill volume for `v`; region means need `seg`.
    pub fn fill_for(&self, v: &VideoTensor, seg: Option<&SegmentationMap>) -> Result<VideoTensor> {
        let c = v.channels();
        match &self.fill {
            FillKind::Blur(p) => gaussian_blur_3d(v, p),
            FillKind::Constant { color } => {
                if color.len() != 1 && color.len() != c {
                    return param(format!("constant fill needs 1 or {c} values"));
                }
                if color.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return param("constant fill colour must lie in [0, 1]");
                }
                VideoTensor::from_fn(v.dims(), c, |_, _, _, ch| color[ch.min(color.len() - 1)])
            }
            FillKind::RegionMean => {
                let seg = seg.ok_or_else(|| {
                    crate::Error::Param("region-mean fill needs a segmentation".into())
                })?;
                let means = region_mean_color(v, seg)?;
                let mut data = Vec::with_capacity(v.data().len());
                for &l in seg.labels() {
                    data.extend_from_slice(&means[l as usize]);
                }
                VideoTensor::from_clamped(v.dims(), c, data)
            }
        }
    }
}

/// Blends `out = m * v + (1 - m) * fill`, clipped to `[0, 1]`.
pub fn composite_fill(v: &VideoTensor, fill: &VideoTensor, m: &SoftMask) -> Result<VideoTensor> {
    if !v.same_shape(fill) || m.dims() != v.dims() {
        return param("video, fill and mask dims must agree");
    }
    let c = v.channels();
    let mut out = Vec::with_capacity(v.data().len());
    for (i, &w) in m.data().iter().enumerate() {
        for ch in 0..c {
            let j = i * c + ch;
            let x = v.data()[j] * w + fill.data()[j] * (1.0 - w);
            out.push(x.clamp(0.0, 1.0));
        }
    }
    VideoTensor::new(v.dims(), c, out)
}

pub fn remove_features(
    v: &VideoTensor,
    m: &SoftMask,
    op: &RemovalOperator,
    seg: &SegmentationMap,
) -> Result<VideoTensor> {
    if seg.dims() != v.dims() {
        return param("segmentation dims do not match the video");
    }
    let fill = op.fill_for(v, Some(seg))?;
    composite_fill(v, &fill, m)
}

/// A video with its fill volume precomputed, producing perturbed samples.
#[derive(Debug, Clone)]
pub struct Perturber {
    video: VideoTensor,
    fill: VideoTensor,
    fade: Option<BlurParams>,
}

impl Perturber {
    pub fn new(
        video: VideoTensor,
        op: &RemovalOperator,
        seg: Option<&SegmentationMap>,
    ) -> Result<Self> {
        let fill = op.fill_for(&video, seg)?;
        Ok(Self {
            video,
            fill,
            fade: op.fade,
        })
    }

    pub fn video(&self) -> &VideoTensor {
        &self.video
    }

    pub fn fill(&self) -> &VideoTensor {
        &self.fill
    }

    /// Mask for a coalition, faded per the operator.
    pub fn mask_for(&self, z: &Coalition, seg: &SegmentationMap) -> Result<SoftMask> {
        let m = coalition_mask(z, seg)?;
        match &self.fade {
            Some(f) => m.faded(f),
            None => Ok(m),
        }
    }

    pub fn apply(&self, m: &SoftMask) -> Result<VideoTensor> {
        composite_fill(&self.video, &self.fill, m)
    }

    pub fn coalition(&self, z: &Coalition, seg: &SegmentationMap) -> Result<VideoTensor> {
        self.apply(&self.mask_for(z, seg)?)
    }

    /// Lazily perturbed samples, one per coalition.
    pub fn samples<'a>(
        &'a self,
        coalitions: &'a [Coalition],
        seg: &'a SegmentationMap,
    ) -> impl Iterator<Item = Result<VideoTensor>> + 'a {
        coalitions.iter().map(move |z| self.coalition(z, seg))
    }

    /// Occludes a window (faded per the operator).
    pub fn window(&self, w: &Window) -> Result<VideoTensor> {
        let m = window_mask(self.video.dims(), w)?;
        let m = match &self.fade {
            Some(f) => m.faded(f)?,
            None => m,
        };
        self.apply(&m)
    }
}

/// Cuboid occlusion window, origin and extent along `(t, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub origin: [usize; 3],
    pub size: [usize; 3],
}

impl Window {
    pub fn contains(&self, t: usize, y: usize, x: usize) -> bool {
        let p = [t, y, x];
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.size[a])
    }
}

/// `strides` evenly spaced positions per axis, the first at 0 and the last
/// flush with the far edge; windows enumerated in `(t, y, x)` order.
pub fn occlusion_windows(
    dims: Dims,
    kernel: [usize; 3],
    strides: [usize; 3],
) -> Result<Vec<Window>> {
    let ext = [dims.t, dims.h, dims.w];
    for a in 0..3 {
        if kernel[a] == 0 || kernel[a] > ext[a] {
            return param(format!(
                "occlusion kernel {kernel:?} does not fit volume {dims}"
            ));
        }
        if strides[a] == 0 {
            return param("strides must be >= 1");
        }
    }
    let origins = |a: usize| -> Vec<usize> {
        let span = ext[a] - kernel[a];
        let n = strides[a];
        if n == 1 {
            return vec![0];
        }
        (0..n)
            .map(|i| ((i * span) as f64 / (n - 1) as f64).round() as usize)
            .collect()
    };
    let (ot, oy, ox) = (origins(0), origins(1), origins(2));
    let mut out = Vec::with_capacity(ot.len() * oy.len() * ox.len());
    for &t in &ot {
        for &y in &oy {
            for &x in &ox {
                out.push(Window {
                    origin: [t, y, x],
                    size: kernel,
                });
            }
        }
    }
    Ok(out)
}

/// Mask that removes exactly the window voxels.
pub fn window_mask(dims: Dims, w: &Window) -> Result<SoftMask> {
    let mut data = vec![1.0f32; dims.voxels()];
    for t in w.origin[0]..(w.origin[0] + w.size[0]).min(dims.t) {
        for y in w.origin[1]..(w.origin[1] + w.size[1]).min(dims.h) {
            let row = dims.index(t, y, 0);
            let x0 = w.origin[2].min(dims.w);
            let x1 = (w.origin[2] + w.size[2]).min(dims.w);
            data[row + x0..row + x1].fill(0.0);
        }
    }
    SoftMask::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::grid_3d;

    fn z(v: &[u8]) -> Coalition {
        Coalition::new(v.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn leave_one_out_definition() {
        let c = sample_coalitions(3, &SamplingStrategy::LeaveOneOut).unwrap();
        assert_eq!(c, vec![z(&[0, 1, 1]), z(&[1, 0, 1]), z(&[1, 1, 0])]);
    }

    #[test]
    fn keep_one_definition() {
        let c = sample_coalitions(3, &SamplingStrategy::KeepOne).unwrap();
        assert_eq!(c, vec![z(&[1, 0, 0]), z(&[0, 1, 0]), z(&[0, 0, 1])]);
    }

    #[test]
    fn zero_regions_is_an_error() {
        assert!(sample_coalitions(0, &SamplingStrategy::KeepOne).is_err());
        let bad = SamplingStrategy::Bernoulli {
            n_samples: 3,
            p_remove: 1.0,
            seed: 0,
        };
        assert!(sample_coalitions(4, &bad).is_err());
    }

    #[test]
    fn shap_kernel_never_empty_or_full() {
        let s = SamplingStrategy::ShapKernel {
            n_samples: 500,
            seed: 9,
        };
        for c in sample_coalitions(6, &s).unwrap() {
            let k = c.kept_count();
            assert!((1..=5).contains(&k));
        }
    }

    #[test]
    fn shap_kernel_size_marginal() {
        let r = 10;
        let s = SamplingStrategy::ShapKernel {
            n_samples: 40_000,
            seed: 1,
        };
        let mut hist = vec![0usize; r + 1];
        for c in sample_coalitions(r, &s).unwrap() {
            hist[c.kept_count()] += 1;
        }
        let total: f64 = (1..r).map(|k| shap_size_weight(r, k)).sum();
        for k in 1..r {
            let expect = shap_size_weight(r, k) / total;
            let got = hist[k] as f64 / 40_000.0;
            assert!((got - expect).abs() < 0.01, "size {k}: {got} vs {expect}");
        }
    }

    #[test]
    fn occlusion_window_counts() {
        let d = Dims::new(16, 112, 112).unwrap();
        let w = occlusion_windows(d, [4, 16, 16], [7, 13, 13]).unwrap();
        assert_eq!(w.len(), 1183);
        let one = occlusion_windows(d, [4, 16, 16], [1, 1, 1]).unwrap();
        assert_eq!(
            one,
            vec![Window {
                origin: [0, 0, 0],
                size: [4, 16, 16]
            }]
        );
    }

    #[test]
    fn exact_tiling_origins() {
        let d = Dims::new(8, 8, 8).unwrap();
        let w = occlusion_windows(d, [4, 4, 4], [2, 2, 2]).unwrap();
        assert_eq!(w.len(), 8);
        for win in &w {
            assert!(win.origin.iter().all(|&o| o == 0 || o == 4));
        }
        assert!(occlusion_windows(d, [9, 4, 4], [1, 1, 1]).is_err());
    }

    #[test]
    fn last_window_is_flush() {
        let d = Dims::new(10, 10, 10).unwrap();
        let w = occlusion_windows(d, [3, 3, 3], [4, 4, 4]).unwrap();
        assert_eq!(w.last().unwrap().origin, [7, 7, 7]);
    }

    #[test]
    fn identity_mask_is_bitwise_identity() {
        let d = Dims::new(2, 5, 5).unwrap();
        let v = VideoTensor::from_fn(d, 3, |t, y, x, c| {
            ((t + y * 3 + x * 7 + c) % 11) as f32 / 10.0
        })
        .unwrap();
        let seg = grid_3d(d, 1, 1, 1).unwrap();
        let m = SoftMask::filled(d, 1.0).unwrap();
        let out = remove_features(&v, &m, &RemovalOperator::default(), &seg).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn black_fill_with_zero_mask() {
        let d = Dims::new(2, 4, 4).unwrap();
        let v = VideoTensor::filled(d, 3, 0.6).unwrap();
        let seg = grid_3d(d, 1, 2, 2).unwrap();
        let m = SoftMask::filled(d, 0.0).unwrap();
        let out =
            remove_features(&v, &m, &RemovalOperator::constant(vec![0.0], None), &seg).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn region_mean_fill() {
        let d = Dims::new(1, 2, 4).unwrap();
        let v = VideoTensor::from_fn(d, 1, |_, y, x, _| if x < 2 { 0.2 * y as f32 } else { 1.0 })
            .unwrap();
        let seg = grid_3d(d, 1, 1, 2).unwrap();
        let m = SoftMask::filled(d, 0.0).unwrap();
        let out = remove_features(&v, &m, &RemovalOperator::region_mean(None), &seg).unwrap();
        assert!((out.get(0, 0, 0, 0) - 0.1).abs() < 1e-6);
        assert_eq!(out.get(0, 1, 3, 0), 1.0);
    }

    #[test]
    fn constant_mask_survives_fade() {
        let d = Dims::new(3, 6, 6).unwrap();
        let seg = grid_3d(d, 1, 2, 2).unwrap();
        let fade = BlurParams::new(2.0, 1.0, 2.0).unwrap();
        let ones = coalition_to_soft_mask(&Coalition::full(4), &seg, &fade).unwrap();
        assert!(ones.data().iter().all(|&v| v == 1.0));
        let zeros = coalition_to_soft_mask(&Coalition::empty(4), &seg, &fade).unwrap();
        assert!(zeros.data().iter().all(|&v| v == 0.0));
        assert!(coalition_to_soft_mask(&Coalition::full(3), &seg, &fade).is_err());
    }
}
