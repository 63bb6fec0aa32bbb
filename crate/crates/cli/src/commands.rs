use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use revex::evaluation::{
    auc, average_drop, best_iou, deletion_curve, insertion_curve, pointing_game, GroundTruthTrack,
    MetricRow,
};
use revex::explain::relevance_to_volume;
use revex::io::{
    read_segmentation, read_volume, write_png_frames, write_segmentation, write_tensor,
    write_volume,
};
use revex::perturbation::{sample_coalitions, Perturber, SamplingStrategy};
use revex::pipeline::{explain_with_segmentation, method_seed, ExplainReport, SegmentationSpec};
use revex::predictor::{
    PredictionVector, Predictor, PredictorSpec, RegionLinearSpec, RemoteClient,
};
use revex::segmentation::SlicParams;
use revex::visualization::{
    boundary_overlay, filter_regions, normalize_saliency, render_overlay, write_contact_sheet,
};
use revex::{Method, SaliencyVolume, VideoTensor};

use crate::args::*;
use crate::config::*;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::usage(format!("{}: {e}", path.display()))
}

fn create_dir(p: &Path) -> CliResult<()> {
    fs::create_dir_all(p).map_err(|e| io_err(p, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError {
        code: EXIT_INTERNAL,
        message: e.to_string(),
    })?;
    write_text(path, &(text + "\n"))
}

fn save<T>(r: revex::Result<T>, path: &Path) -> CliResult<T> {
    r.map_err(|e| CliError::from(e).context(path.display()))
}

fn predictor_of(flag: &Option<String>, cfg: &mut RunConfig) -> CliResult<Arc<dyn Predictor>> {
    if let Some(p) = flag {
        cfg.predictor = Some(p.clone());
    }
    let spec = cfg
        .predictor
        .clone()
        .ok_or_else(|| CliError::usage("no predictor given (use --predictor)"))?;
    build_predictor(&spec)
}

pub fn segment(a: SegmentArgs) -> CliResult<()> {
    let mut cfg = RunConfig::from_common(&a.common)?;
    if let Some([t, y, x]) = a.grid {
        cfg.explain.segmentation = SegmentationSpec::Grid { t, y, x };
    }
    if let (Some(n), None) = (a.regions, a.grid) {
        cfg.explain.segmentation = match cfg.explain.segmentation {
            SegmentationSpec::Grid { .. } => SegmentationSpec::Slic(SlicParams::with_segments(n)),
            s => s.with_regions(n),
        };
    }
    let video = load_video(cfg.input()?)?;
    let out = cfg.out()?.to_path_buf();
    let start = Instant::now();
    let seg = cfg.explain.segmentation.build(&video)?;
    log::info!(
        "{} regions for {} in {:.2}s",
        seg.regions(),
        video.dims(),
        start.elapsed().as_secs_f64()
    );
    create_dir(&out)?;
    let path = out.join("segmentation.rvx");
    save(write_segmentation(&seg, &path), &path)?;
    let frames = out.join("boundaries");
    let overlay = boundary_overlay(&video, &seg, [1.0, 0.2, 0.2])?;
    save(write_png_frames(&overlay, &frames), &frames)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    println!("{}", seg.regions());
    Ok(())
}

fn sample_dump(
    report: &ExplainReport,
    video: &VideoTensor,
    cfg: &RunConfig,
    n: usize,
    dir: &Path,
) -> CliResult<()> {
    let Some(e) = report
        .explanations
        .iter()
        .find(|e| e.method == Method::Lime)
    else {
        log::warn!("--dump-samples needs video-lime among the methods; nothing dumped");
        return Ok(());
    };
    let seg = e
        .segmentation
        .as_ref()
        .expect("region methods carry a segmentation");
    let zs = sample_coalitions(
        seg.regions(),
        &SamplingStrategy::Bernoulli {
            n_samples: cfg.explain.samples,
            p_remove: cfg.explain.lime.p_remove,
            seed: method_seed(cfg.explain.seed, Method::Lime),
        },
    )?;
    let perturber = Perturber::new(video.clone(), &cfg.explain.removal, Some(seg))?;
    create_dir(dir)?;
    for (i, z) in zs.iter().take(n).enumerate() {
        let path = dir.join(format!("sample_{i:05}.rvx"));
        save(write_tensor(&perturber.coalition(z, seg)?, &path), &path)?;
    }
    Ok(())
}

fn rendered_saliency(
    e: &revex::pipeline::Explanation,
    cfg: &RunConfig,
) -> CliResult<SaliencyVolume> {
    let r = &cfg.render;
    let filtering = r.top_n.is_some() || r.min_relevance.is_some() || r.cumulative_cutoff.is_some();
    match (&e.relevance, &e.segmentation) {
        (Some(rel), Some(seg)) if filtering => {
            let kept = filter_regions(rel, r)?;
            let fade = cfg
                .explain
                .removal
                .fade
                .filter(|_| cfg.explain.fade_saliency);
            Ok(relevance_to_volume(&kept, seg, fade.as_ref())?)
        }
        _ => Ok(e.saliency.clone()),
    }
}

pub fn explain(a: ExplainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::from_common(&a.common)?;
    if !a.methods.is_empty() {
        cfg.explain.methods = a
            .methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<revex::Result<_>>()?;
        cfg.explain.methods.dedup();
    }
    if let Some(c) = &a.class {
        cfg.explain.class = parse_class(c)?;
    }
    if let Some(n) = a.samples {
        cfg.explain.samples = n;
    }
    if let Some(n) = a.regions {
        cfg.explain.segmentation = cfg.explain.segmentation.clone().with_regions(n);
    }
    if let Some(r) = a.removal {
        cfg.explain.removal = removal_for(r, revex::BlurParams::default());
    }
    cfg.explain.validate()?;
    cfg.render.validate()?;
    let predictor = predictor_of(&a.predictor, &mut cfg)?;
    let video = load_video(cfg.input()?)?;
    let out = cfg.out()?.to_path_buf();
    let seg = match &a.segmentation {
        Some(p) => Some(Arc::new(save(read_segmentation(p), p)?)),
        None => None,
    };

    let report = explain_with_segmentation(&video, predictor.as_ref(), &cfg.explain, seg)?;

    let start = Instant::now();
    create_dir(&out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let mut overlays = Vec::new();
    for e in &report.explanations {
        let name = e.method.name();
        let path = out.join(format!("{name}.rvx"));
        save(
            write_volume(e.saliency.data(), e.saliency.dims(), &path),
            &path,
        )?;
        write_json(&out.join(format!("{name}.json")), &e.provenance)?;
        if !a.no_frames || a.contact_sheet {
            let overlay = render_overlay(&video, &rendered_saliency(e, &cfg)?, &cfg.render)?;
            if !a.no_frames {
                let dir = out.join(format!("{name}_overlay"));
                save(write_png_frames(&overlay, &dir), &dir)?;
            }
            overlays.push(overlay);
        }
    }
    if a.contact_sheet && !overlays.is_empty() {
        let rows: Vec<&VideoTensor> = overlays.iter().collect();
        let path = out.join("contact_sheet.png");
        save(write_contact_sheet(&rows, &path), &path)?;
    }
    if a.dump_samples > 0 {
        sample_dump(&report, &video, &cfg, a.dump_samples, &out.join("samples"))?;
    }
    let write_s = start.elapsed().as_secs_f64();

    #[derive(Serialize)]
    struct Timings<'a> {
        class_index: usize,
        p_full: f64,
        total: &'a revex::pipeline::StageTimings,
        output_s: f64,
        methods: Vec<MethodTiming<'a>>,
    }
    #[derive(Serialize)]
    struct MethodTiming<'a> {
        method: &'static str,
        #[serde(flatten)]
        timings: &'a revex::pipeline::StageTimings,
    }
    let t = &report.timings;
    write_json(
        &out.join("timings.json"),
        &Timings {
            class_index: report.class_index,
            p_full: report.p_full,
            total: t,
            output_s: write_s,
            methods: report
                .explanations
                .iter()
                .map(|e| MethodTiming {
                    method: e.method.name(),
                    timings: &e.timings,
                })
                .collect(),
        },
    )?;
    log::info!(
        "class {} (p = {:.4}); segmentation {:.2}s, inference {:.2}s, explanation {:.2}s, output {:.2}s",
        report.class_index,
        report.p_full,
        t.segmentation_s,
        t.inference_s,
        t.explanation_s,
        write_s
    );
    Ok(())
}

fn saliency_inputs(specs: &[String]) -> Vec<(String, PathBuf)> {
    specs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
            _ => {
                let p = PathBuf::from(s);
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| s.clone());
                (name, p)
            }
        })
        .collect()
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let mut cfg = RunConfig::from_common(&a.common)?;
    if let Some(s) = a.steps {
        cfg.evaluate.steps = s;
    }
    if let Some(c) = &a.class {
        cfg.explain.class = parse_class(c)?;
    }
    if let Some(r) = a.removal {
        cfg.explain.removal = removal_for(r, revex::BlurParams::default());
    }
    let metrics: Vec<MetricArg> = if a.metrics.is_empty() {
        let mut m = vec![
            MetricArg::Deletion,
            MetricArg::Insertion,
            MetricArg::AvgDrop,
        ];
        if a.ground_truth.is_some() {
            m.extend([MetricArg::Pointing, MetricArg::Iou]);
        }
        m
    } else {
        a.metrics.clone()
    };
    let wants = |m: MetricArg| metrics.contains(&m);
    let gt = match &a.ground_truth {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Some(save(GroundTruthTrack::from_json(&text), p)?)
        }
        None if wants(MetricArg::Pointing) || wants(MetricArg::Iou) => {
            return Err(CliError::usage("pointing and iou need --ground-truth"));
        }
        None => None,
    };
    let needs_model =
        wants(MetricArg::Deletion) || wants(MetricArg::Insertion) || wants(MetricArg::AvgDrop);
    let input = cfg.input()?.to_path_buf();
    let video = load_video(&input)?;
    let out = cfg.out()?.to_path_buf();
    let (predictor, class) = if needs_model {
        let p = predictor_of(&a.predictor, &mut cfg)?;
        let class = match cfg.explain.class {
            Some(c) => c,
            None => p.predict(&video)?.top1(),
        };
        (Some(p), class)
    } else {
        (None, cfg.explain.class.unwrap_or(0))
    };
    let video_id = a.video_id.clone().unwrap_or_else(|| {
        input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let removal = &cfg.explain.removal;
    let steps = cfg.evaluate.steps;

    let mut rows = Vec::new();
    for (name, path) in saliency_inputs(&a.saliency) {
        let (dims, data) = save(read_volume(&path), &path)?;
        let raw = save(SaliencyVolume::new(dims, data), &path)?;
        if raw.dims() != video.dims() {
            return Err(CliError::usage(format!(
                "{}: saliency {} does not match video {}",
                path.display(),
                raw.dims(),
                video.dims()
            )));
        }
        let norm = normalize_saliency(&raw, &cfg.render)?;
        let mut row = MetricRow {
            video_id: video_id.clone(),
            method: name,
            deletion_auc: None,
            insertion_auc: None,
            avg_drop_pct: None,
            pointing_hit: None,
            best_iou: None,
            best_threshold: None,
        };
        if let Some(p) = &predictor {
            let p = p.as_ref();
            if wants(MetricArg::Deletion) {
                row.deletion_auc = Some(auc(&deletion_curve(
                    &video, &raw, p, class, steps, removal,
                )?));
            }
            if wants(MetricArg::Insertion) {
                row.insertion_auc = Some(auc(&insertion_curve(
                    &video, &raw, p, class, steps, removal,
                )?));
            }
            if wants(MetricArg::AvgDrop) {
                row.avg_drop_pct = Some(average_drop(&video, &norm, p, class, removal)?);
            }
        }
        if let Some(gt) = &gt {
            if wants(MetricArg::Pointing) {
                row.pointing_hit = Some(pointing_game(&raw, gt)?);
            }
            if wants(MetricArg::Iou) {
                let r = best_iou(&norm, gt)?;
                row.best_iou = Some(r.best_iou);
                row.best_threshold = Some(r.best_threshold);
            }
        }
        rows.push(row);
    }

    let csv_path = if out.extension().is_some_and(|e| e == "csv") {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        out
    } else {
        create_dir(&out)?;
        out.join("metrics.csv")
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    for row in &rows {
        w.serialize(row).map_err(|e| io_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| io_err(&csv_path, e))?;
    log::info!("{} rows written to {}", rows.len(), csv_path.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let mut cfg = RunConfig::from_common(&a.common)?;
    let spec = &mut cfg.synth;
    if let Some(s) = a.common.seed {
        spec.noise_seed = s;
        spec.track_seed = s;
    }
    if let Some(s) = a.track_seed {
        spec.track_seed = s;
    }
    if let Some(v) = a.t {
        spec.t = v;
    }
    if let Some(v) = a.h {
        spec.h = v;
    }
    if let Some(v) = a.w {
        spec.w = v;
    }
    if let Some(v) = a.channels {
        spec.channels = v;
    }
    if let Some(v) = a.box_fraction {
        spec.box_fraction = v;
    }
    let out = cfg.out()?.to_path_buf();
    let scene = cfg.synth.generate()?;
    create_dir(&out)?;
    let video_path = out.join("video.rvx");
    save(write_tensor(&scene.video, &video_path), &video_path)?;
    let blur = revex::BlurParams::default();
    let predictor = match a.predictor {
        SynthPredictorArg::HfBox => PredictorSpec::HfBox(scene.hf_box(blur)?),
        SynthPredictorArg::RegionLinear => {
            let (seg, model) = scene.region_linear(cfg.synth.region_grid, 0.1, 0.8, blur)?;
            let seg_path = out.join("regions.rvx");
            save(write_segmentation(&seg, &seg_path), &seg_path)?;
            PredictorSpec::RegionLinear(RegionLinearSpec {
                segmentation: PathBuf::from("regions.rvx"),
                model: model.params().clone(),
            })
        }
    };
    write_json(&out.join("predictor.json"), &predictor)?;
    write_json(&out.join("ground_truth.json"), &scene.track)?;
    let gt_path = out.join("gt_saliency.rvx");
    save(
        write_volume(scene.saliency.data(), scene.saliency.dims(), &gt_path),
        &gt_path,
    )?;
    let frames = out.join("frames");
    save(write_png_frames(&scene.video, &frames), &frames)?;
    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    log::info!("scene {} written to {}", scene.video.dims(), out.display());
    Ok(())
}

fn check_rows(
    rows: &[Vec<f32>],
    expected: usize,
    class_count: usize,
    normalized: bool,
) -> CliResult<()> {
    let fail = |m: String| CliError {
        code: EXIT_TRANSPORT,
        message: m,
    };
    if rows.len() != expected {
        return Err(fail(format!("{} rows for {expected} inputs", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != class_count {
            return Err(fail(format!(
                "row {i} has {} confidences, /info says {class_count}",
                row.len()
            )));
        }
        PredictionVector::new(row.clone()).map_err(|e| fail(format!("row {i}: {e}")))?;
        if normalized {
            let s: f64 = row.iter().map(|&c| c as f64).sum();
            if (s - 1.0).abs() > 1e-3 {
                return Err(fail(format!(
                    "row {i} sums to {s}, but the model reports normalized output"
                )));
            }
        }
    }
    Ok(())
}

pub fn model_check(a: ModelCheckArgs) -> CliResult<()> {
    let client = RemoteClient::connect(&a.endpoint)?;
    let info = client.info();
    println!(
        "info: class_count={} max_batch={} normalized={}",
        info.class_count, info.max_batch, info.normalized
    );
    let [t, h, w] = a.shape;
    let d = revex::Dims::new(t, h, w)?;
    let zero = VideoTensor::filled(d, a.channels, 0.0)?;
    let mut impulse = vec![0.0f32; d.voxels() * a.channels];
    impulse[0] = 1.0;
    let impulse = VideoTensor::new(d, a.channels, impulse)?;
    let batch = [zero, impulse];
    for chunk in batch.chunks(info.max_batch.max(1)) {
        let resp = client.predict_raw(chunk)?;
        check_rows(
            &resp.confidences,
            chunk.len(),
            info.class_count,
            info.normalized,
        )?;
    }
    println!("predict: {} probes OK", batch.len());
    Ok(())
}
