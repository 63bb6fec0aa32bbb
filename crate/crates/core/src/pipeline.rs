//! End-to-end explanation runs: segmentation, sampling, removal, model
//! passes and summary, with per-stage timings and a provenance record.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::explain::{
    explain_kernel_shap, explain_lime, explain_loco, explain_rise_regions, explain_sos, explain_up,
    relevance_to_volume, CoalitionWeighting, LimeConfig, Method, RegionRelevance, RiseAccumulator,
    SaliencyVolume,
};
use crate::par;
use crate::perturbation::{
    occlusion_windows, sample_coalitions, Coalition, Perturber, RemovalOperator, SamplingStrategy,
    SoftMask,
};
use crate::predictor::{predict_target, Predictor};
use crate::segmentation::{
    grid_3d, low_res_soft_grid, slic_3d, GridShape, SegmentationMap, SlicParams,
};
use crate::tensor::{Dims, VideoTensor};

/// How the shared region set is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentationSpec {
    Grid { t: usize, y: usize, x: usize },
    Slic(SlicParams),
}

impl Default for SegmentationSpec {
    fn default() -> Self {
        SegmentationSpec::Slic(SlicParams::default())
    }
}

impl SegmentationSpec {
    pub fn build(&self, v: &VideoTensor) -> Result<SegmentationMap> {
        match self {
            SegmentationSpec::Grid { t, y, x } => grid_3d(v.dims(), *t, *y, *x),
            SegmentationSpec::Slic(p) => slic_3d(v, p),
        }
    }

    /// Overrides the requested region count. Grids keep their shape.
    pub fn with_regions(self, n: usize) -> Self {
        match self {
            SegmentationSpec::Slic(p) => SegmentationSpec::Slic(SlicParams { n_segments: n, ..p }),
            g => g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeSettings {
    pub p_remove: f64,
    #[serde(flatten)]
    pub solver: LimeConfig,
}

impl Default for LimeSettings {
    fn default() -> Self {
        Self {
            p_remove: 0.5,
            solver: LimeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiseSettings {
    pub grid: [usize; 3],
    pub p_keep: f64,
    /// Trilinearly upsampled soft masks accumulated per voxel; otherwise hard
    /// grid cells accumulated per region.
    pub upsample: bool,
}

impl Default for RiseSettings {
    fn default() -> Self {
        Self {
            grid: [4, 7, 7],
            p_keep: 0.5,
            upsample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SosSettings {
    pub strides: [usize; 3],
    /// Window size; `None` means the video dims divided by `(4, 7, 7)`.
    pub kernel: Option<[usize; 3]>,
}

impl Default for SosSettings {
    fn default() -> Self {
        Self {
            strides: [7, 13, 13],
            kernel: None,
        }
    }
}

impl SosSettings {
    pub fn resolved_kernel(&self, d: Dims) -> [usize; 3] {
        self.kernel
            .unwrap_or([(d.t / 4).max(1), (d.h / 7).max(1), (d.w / 7).max(1)])
    }
}

/// Reference value subtracted from keep-one predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpBaseline {
    #[default]
    AllRemoved,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Explained class; `None` picks the top-1 class of the unperturbed video.
    pub class: Option<usize>,
    /// Sample count for LIME, Kernel SHAP and RISE.
    pub samples: usize,
    pub segmentation: SegmentationSpec,
    pub removal: RemovalOperator,
    pub lime: LimeSettings,
    pub rise: RiseSettings,
    pub sos: SosSettings,
    pub up_baseline: UpBaseline,
    /// Perturbed videos built and scored per chunk.
    pub batch_size: usize,
    /// Blur painted region relevance with the removal fade.
    pub fade_saliency: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            seed: 0,
            class: None,
            samples: 1000,
            segmentation: SegmentationSpec::default(),
            removal: RemovalOperator::default(),
            lime: LimeSettings::default(),
            rise: RiseSettings::default(),
            sos: SosSettings::default(),
            up_baseline: UpBaseline::default(),
            batch_size: 32,
            fade_saliency: true,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return param("no methods requested");
        }
        if self.samples == 0 || self.batch_size == 0 {
            return param("samples and batch_size must be >= 1");
        }
        if !(self.lime.p_remove > 0.0 && self.lime.p_remove < 1.0) {
            return param("lime.p_remove must lie in (0, 1)");
        }
        if !(self.rise.p_keep > 0.0 && self.rise.p_keep < 1.0) {
            return param("rise.p_keep must lie in (0, 1)");
        }
        if self.rise.grid.contains(&0) || self.sos.strides.contains(&0) {
            return param("grid and stride entries must be >= 1");
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(json.as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Independent stream per method so that adding a method to a run does not
/// change the others.
pub fn method_seed(seed: u64, m: Method) -> u64 {
    let idx = Method::ALL.iter().position(|&x| x == m).unwrap() as u64;
    splitmix64(seed ^ splitmix64(idx + 1))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub segmentation_s: f64,
    pub inference_s: f64,
    pub explanation_s: f64,
}

impl StageTimings {
    pub fn total_s(&self) -> f64 {
        self.segmentation_s + self.inference_s + self.explanation_s
    }

    fn add(&mut self, o: &StageTimings) {
        self.segmentation_s += o.segmentation_s;
        self.inference_s += o.inference_s;
        self.explanation_s += o.explanation_s;
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Sidecar record written next to each saliency file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: Method,
    pub config: ExplainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub method_seed: u64,
    pub class_index: usize,
    pub sample_count: usize,
    pub region_count: Option<usize>,
    /// Negative relevance is clamped before min-max stretching when rendered.
    pub clamp_before_stretch: bool,
    pub flagged_regions: Vec<usize>,
    pub uncovered_voxels: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub method: Method,
    pub relevance: Option<RegionRelevance>,
    pub saliency: SaliencyVolume,
    pub segmentation: Option<Arc<SegmentationMap>>,
    pub sample_count: usize,
    pub timings: StageTimings,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct ExplainReport {
    pub class_index: usize,
    pub p_full: f64,
    pub explanations: Vec<Explanation>,
    pub timings: StageTimings,
}

fn needs_shared_segmentation(m: Method) -> bool {
    matches!(
        m,
        Method::Lime | Method::KernelShap | Method::Loco | Method::Up
    )
}

/// Builds perturbed videos in chunks and scores them, so at most
/// `batch_size` perturbed videos are alive at once.
fn predict_chunked<T, F>(
    items: &[T],
    batch: usize,
    predictor: &dyn Predictor,
    class: usize,
    build: F,
) -> Result<Vec<f64>>
where
    T: Sync,
    F: Fn(&T) -> Result<VideoTensor> + Sync + Send,
{
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch) {
        let videos: Vec<VideoTensor> = par::map_slice(chunk, &build)
            .into_iter()
            .collect::<Result<_>>()?;
        out.extend(
            predict_target(predictor, &videos, class)?
                .into_iter()
                .map(f64::from),
        );
    }
    Ok(out)
}

struct Context<'a> {
    video: &'a VideoTensor,
    predictor: &'a dyn Predictor,
    cfg: &'a ExplainConfig,
    class: usize,
    p_full: f64,
}

impl Context<'_> {
    fn empty_prediction(&self, perturber: &Perturber) -> Result<f64> {
        let m = SoftMask::filled(self.video.dims(), 0.0)?;
        let v = perturber.apply(&m)?;
        Ok(predict_target(self.predictor, &[v], self.class)?[0] as f64)
    }

    fn region_method(
        &self,
        m: Method,
        seg: &Arc<SegmentationMap>,
        seed: u64,
        t: &mut StageTimings,
    ) -> Result<(RegionRelevance, usize)> {
        let cfg = self.cfg;
        let r = seg.regions();
        let start = Instant::now();
        let perturber = Perturber::new(self.video.clone(), &cfg.removal, Some(seg))?;
        let strategy = match m {
            Method::Lime => SamplingStrategy::Bernoulli {
                n_samples: cfg.samples,
                p_remove: cfg.lime.p_remove,
                seed,
            },
            Method::KernelShap => SamplingStrategy::ShapKernel {
                n_samples: cfg.samples,
                seed,
            },
            Method::Loco => SamplingStrategy::LeaveOneOut,
            Method::Up => SamplingStrategy::KeepOne,
            _ => unreachable!("not a region method"),
        };
        let zs = sample_coalitions(r, &strategy)?;
        let preds = predict_chunked(&zs, cfg.batch_size, self.predictor, self.class, |z| {
            perturber.coalition(z, seg)
        })?;
        let f_empty = match (m, cfg.up_baseline) {
            (Method::KernelShap, _) | (Method::Up, UpBaseline::AllRemoved) => {
                Some(self.empty_prediction(&perturber)?)
            }
            _ => None,
        };
        t.inference_s += secs(start.elapsed());
        let start = Instant::now();
        let rel = match m {
            Method::Lime => explain_lime(&zs, &preds, &cfg.lime.solver, self.class)?,
            Method::KernelShap => explain_kernel_shap(
                &zs,
                &preds,
                f_empty.unwrap(),
                self.p_full,
                CoalitionWeighting::Uniform,
                self.class,
            )?,
            Method::Loco => explain_loco(self.p_full, &preds, r, self.class)?,
            Method::Up => explain_up(&preds, f_empty, self.class)?,
            _ => unreachable!(),
        };
        t.explanation_s += secs(start.elapsed());
        Ok((rel, zs.len()))
    }

    fn rise(
        &self,
        seed: u64,
        t: &mut StageTimings,
    ) -> Result<(
        Option<RegionRelevance>,
        SaliencyVolume,
        Arc<SegmentationMap>,
    )> {
        let cfg = self.cfg;
        let d = self.video.dims();
        let [gt, gy, gx] = cfg.rise.grid;
        let start = Instant::now();
        let grid = Arc::new(grid_3d(d, gt.min(d.t), gy.min(d.h), gx.min(d.w))?);
        t.segmentation_s += secs(start.elapsed());
        if !cfg.rise.upsample {
            let start = Instant::now();
            let perturber = Perturber::new(self.video.clone(), &cfg.removal, Some(&grid))?;
            let zs = sample_coalitions(
                grid.regions(),
                &SamplingStrategy::Bernoulli {
                    n_samples: cfg.samples,
                    p_remove: 1.0 - cfg.rise.p_keep,
                    seed,
                },
            )?;
            let preds = predict_chunked(&zs, cfg.batch_size, self.predictor, self.class, |z| {
                perturber.coalition(z, &grid)
            })?;
            t.inference_s += secs(start.elapsed());
            let start = Instant::now();
            let rel = explain_rise_regions(&zs, &preds, self.class)?;
            let fade = cfg.removal.fade.filter(|_| cfg.fade_saliency);
            let vol = relevance_to_volume(&rel, &grid, fade.as_ref())?;
            t.explanation_s += secs(start.elapsed());
            return Ok((Some(rel), vol, grid));
        }
        // Soft masks are already smooth, so the operator's fade is not applied.
        let shape = GridShape::new(gt.min(d.t), gy.min(d.h), gx.min(d.w));
        let removal = RemovalOperator {
            fade: None,
            ..cfg.removal.clone()
        };
        let start = Instant::now();
        let perturber = Perturber::new(self.video.clone(), &removal, Some(&grid))?;
        t.inference_s += secs(start.elapsed());
        let mut acc = RiseAccumulator::new(d);
        let idx: Vec<u64> = (0..cfg.samples as u64).collect();
        for chunk in idx.chunks(cfg.batch_size) {
            let start = Instant::now();
            let built: Vec<(SoftMask, VideoTensor)> = par::map_slice(chunk, |&i| {
                let m = low_res_soft_grid(d, shape, cfg.rise.p_keep, seed.wrapping_add(i))?;
                let v = perturber.apply(&m)?;
                Ok((m, v))
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let (masks, videos): (Vec<_>, Vec<_>) = built.into_iter().unzip();
            let preds = predict_target(self.predictor, &videos, self.class)?;
            drop(videos);
            t.inference_s += secs(start.elapsed());
            let start = Instant::now();
            for (m, p) in masks.iter().zip(preds) {
                acc.add(m, p as f64)?;
            }
            t.explanation_s += secs(start.elapsed());
        }
        let start = Instant::now();
        let vol = acc.finish()?;
        t.explanation_s += secs(start.elapsed());
        Ok((None, vol, grid))
    }

    fn sos(&self, t: &mut StageTimings) -> Result<(SaliencyVolume, usize)> {
        let cfg = self.cfg;
        let d = self.video.dims();
        let kernel = cfg.sos.resolved_kernel(d);
        let start = Instant::now();
        let windows = occlusion_windows(d, kernel, cfg.sos.strides)?;
        let mean_seg = match cfg.removal.fill {
            crate::perturbation::FillKind::RegionMean => Some(grid_3d(
                d,
                (d.t / kernel[0]).max(1),
                (d.h / kernel[1]).max(1),
                (d.w / kernel[2]).max(1),
            )?),
            _ => None,
        };
        t.segmentation_s += secs(start.elapsed());
        let start = Instant::now();
        let perturber = Perturber::new(self.video.clone(), &cfg.removal, mean_seg.as_ref())?;
        let preds = predict_chunked(&windows, cfg.batch_size, self.predictor, self.class, |w| {
            perturber.window(w)
        })?;
        t.inference_s += secs(start.elapsed());
        let start = Instant::now();
        let vol = explain_sos(&windows, &preds, self.p_full, d)?;
        t.explanation_s += secs(start.elapsed());
        Ok((vol, windows.len()))
    }
}

/// Runs every requested method on `video`.
pub fn explain(
    video: &VideoTensor,
    predictor: &dyn Predictor,
    cfg: &ExplainConfig,
) -> Result<ExplainReport> {
    explain_with_segmentation(video, predictor, cfg, None)
}

/// As [`explain`], reusing `segmentation` for the region-based methods
/// instead of building one from `cfg.segmentation`.
pub fn explain_with_segmentation(
    video: &VideoTensor,
    predictor: &dyn Predictor,
    cfg: &ExplainConfig,
    segmentation: Option<Arc<SegmentationMap>>,
) -> Result<ExplainReport> {
    cfg.validate()?;
    let mut total = StageTimings::default();
    let start = Instant::now();
    let pv = predictor.predict(video)?;
    let class = match cfg.class {
        Some(c) if c >= predictor.class_count() => {
            return param(format!(
                "class {c} out of range for {} classes",
                predictor.class_count()
            ))
        }
        Some(c) => c,
        None => pv.top1(),
    };
    let p_full = pv.get(class) as f64;
    total.inference_s += secs(start.elapsed());

    let mut shared_seg_time = 0.0;
    let shared = if cfg.methods.iter().any(|&m| needs_shared_segmentation(m)) {
        match segmentation {
            Some(s) => {
                if s.dims() != video.dims() {
                    return param("segmentation does not match the video");
                }
                Some(s)
            }
            None => {
                let start = Instant::now();
                let s = Arc::new(cfg.segmentation.build(video)?);
                shared_seg_time = secs(start.elapsed());
                log::info!(
                    "segmentation: {} regions in {shared_seg_time:.2}s",
                    s.regions()
                );
                Some(s)
            }
        }
    } else {
        None
    };
    total.segmentation_s += shared_seg_time;

    let ctx = Context {
        video,
        predictor,
        cfg,
        class,
        p_full,
    };
    let fade = cfg.removal.fade.filter(|_| cfg.fade_saliency);
    let mut explanations = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let seed = method_seed(cfg.seed, m);
        let mut t = StageTimings::default();
        let (relevance, saliency, seg, count) = match m {
            Method::Lime | Method::KernelShap | Method::Loco | Method::Up => {
                let seg = shared.clone().expect("shared segmentation exists");
                t.segmentation_s = shared_seg_time;
                let (rel, n) = ctx.region_method(m, &seg, seed, &mut t)?;
                let start = Instant::now();
                let vol = relevance_to_volume(&rel, &seg, fade.as_ref())?;
                t.explanation_s += secs(start.elapsed());
                (Some(rel), vol, Some(seg), n)
            }
            Method::Rise => {
                let (rel, vol, grid) = ctx.rise(seed, &mut t)?;
                (rel, vol, Some(grid), cfg.samples)
            }
            Method::Sos => {
                let (vol, n) = ctx.sos(&mut t)?;
                (None, vol, None, n)
            }
        };
        log::info!(
            "{m}: {count} samples; segmentation {:.2}s, inference {:.2}s, explanation {:.2}s",
            t.segmentation_s,
            t.inference_s,
            t.explanation_s
        );
        let mut own = t;
        if needs_shared_segmentation(m) {
            own.segmentation_s = 0.0;
        }
        total.add(&own);
        let provenance = Provenance {
            method: m,
            config: cfg.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            method_seed: seed,
            class_index: class,
            sample_count: count,
            region_count: seg.as_ref().map(|s| s.regions()),
            clamp_before_stretch: true,
            flagged_regions: relevance
                .as_ref()
                .map(|r| r.flagged.clone())
                .unwrap_or_default(),
            uncovered_voxels: saliency.uncovered,
            timings: t,
        };
        explanations.push(Explanation {
            method: m,
            relevance,
            saliency,
            segmentation: seg,
            sample_count: count,
            timings: t,
            provenance,
        });
    }
    Ok(ExplainReport {
        class_index: class,
        p_full,
        explanations,
        timings: total,
    })
}

/// Coalition-level model passes with the pipeline's removal, for callers
/// that assemble their own summaries.
pub fn score_coalitions(
    video: &VideoTensor,
    predictor: &dyn Predictor,
    seg: &SegmentationMap,
    removal: &RemovalOperator,
    coalitions: &[Coalition],
    class: usize,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let perturber = Perturber::new(video.clone(), removal, Some(seg))?;
    predict_chunked(coalitions, batch_size.max(1), predictor, class, |z| {
        perturber.coalition(z, seg)
    })
}
