#![allow(clippy::needless_range_loop)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use revex::explain::RegionRelevance;
use revex::io::write_segmentation;
use revex::predictor::{
    box_energy, make_region_linear, predict_target, region_energies, PredictionVector, Predictor,
    PredictorSpec,
};
use revex::segmentation::grid_3d;
use revex::synth::SynthSpec;
use revex::tensor::{blur_values, gaussian_blur_3d};
use revex::visualization::{
    composite, contact_sheet, filter_regions, normalize_saliency, sheet_frames, Colormap,
    RenderConfig,
};
use revex::{BlurParams, Dims, Method, SaliencyVolume, VideoTensor};

fn random_video(d: Dims, c: usize, seed: u64) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VideoTensor::new(d, c, (0..d.voxels() * c).map(|_| rng.random()).collect()).unwrap()
}

/// Mean `|x - blur(x)|` over a box, blurring the whole volume.
fn energy_oracle(v: &VideoTensor, b: [usize; 6], p: &BlurParams) -> f64 {
    let full = blur_values(v.data(), v.dims(), v.channels(), p).unwrap();
    let d = v.dims();
    let c = v.channels();
    let mut sum = 0.0;
    let mut n = 0;
    for t in b[0]..b[1] {
        for y in b[2]..b[3] {
            for x in b[4]..b[5] {
                for ch in 0..c {
                    let i = d.index(t, y, x) * c + ch;
                    sum += (v.data()[i] - full[i]).abs() as f64;
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

#[test]
fn cropped_box_energy_equals_full_volume_energy() {
    let d = Dims::new(6, 30, 34).unwrap();
    let v = random_video(d, 3, 2);
    let p = BlurParams::new(3.0, 1.0, 2.0).unwrap();
    for b in [
        [0, 6, 0, 30, 0, 34],
        [1, 3, 4, 12, 20, 34],
        [5, 6, 0, 1, 0, 1],
        [2, 4, 10, 20, 10, 20],
    ] {
        let got = box_energy(&v, b, &p).unwrap();
        assert!((got - energy_oracle(&v, b, &p)).abs() < 1e-6, "{b:?}");
    }
    assert!(box_energy(&v, [0, 0, 0, 1, 0, 1], &p).is_err());
    assert!(box_energy(&v, [0, 7, 0, 1, 0, 1], &p).is_err());
}

#[test]
fn blurring_the_box_lowers_the_hf_confidence() {
    let scene = SynthSpec {
        t: 6,
        h: 32,
        w: 32,
        ..Default::default()
    }
    .generate()
    .unwrap();
    let p = scene.hf_box(BlurParams::default()).unwrap();
    assert_eq!(p.confidence(&scene.video).unwrap(), 1.0);
    let blurred = gaussian_blur_3d(&scene.video, &BlurParams::default()).unwrap();
    assert!(p.confidence(&blurred).unwrap() < 0.1);
    let pv = p.predict(&scene.video).unwrap();
    assert!((pv.0.iter().sum::<f32>() - 1.0).abs() < 1e-6);
}

#[test]
fn region_linear_is_bias_plus_weighted_energies() {
    let d = Dims::new(4, 16, 16).unwrap();
    let reference = random_video(d, 3, 1);
    let x = gaussian_blur_3d(
        &random_video(d, 3, 7),
        &BlurParams::new(1.0, 0.0, 2.0).unwrap(),
    )
    .unwrap();
    let seg = Arc::new(grid_3d(d, 2, 2, 2).unwrap());
    let blur = BlurParams::new(2.0, 1.0, 2.0).unwrap();
    let w: Vec<f64> = (0..8).map(|k| 0.05 * k as f64).collect();
    let m = make_region_linear(seg.clone(), w.clone(), 0.1, &reference, blur).unwrap();
    let er = region_energies(&reference, &seg, &blur).unwrap();
    let ex = region_energies(&x, &seg, &blur).unwrap();
    let want = 0.1 + (0..8).map(|k| w[k] * ex[k] / er[k]).sum::<f64>();
    assert!((m.confidence(&x).unwrap() as f64 - want.clamp(0.0, 1.0)).abs() < 1e-6);

    let dir = tempfile::tempdir().unwrap();
    write_segmentation(&seg, dir.path().join("regions.rvx")).unwrap();
    let spec = PredictorSpec::RegionLinear(revex::predictor::RegionLinearSpec {
        segmentation: "regions.rvx".into(),
        model: m.params().clone(),
    });
    let json = serde_json::to_string(&spec).unwrap();
    let back: PredictorSpec = serde_json::from_str(&json).unwrap();
    let built = back.build(Some(dir.path())).unwrap();
    assert_eq!(built.predict(&x).unwrap().get(0), m.confidence(&x).unwrap());
    assert!(back.build(None).is_err());
}

struct Counting {
    calls: AtomicUsize,
}

impl Predictor for Counting {
    fn class_count(&self) -> usize {
        2
    }
    fn max_batch(&self) -> usize {
        3
    }
    fn predict_batch(&self, videos: &[VideoTensor]) -> revex::Result<Vec<PredictionVector>> {
        assert!(videos.len() <= 3);
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(videos
            .iter()
            .map(|v| PredictionVector::one_vs_rest(2, 1, v.data()[0]))
            .collect())
    }
}

#[test]
fn predict_target_respects_max_batch() {
    let d = Dims::new(1, 1, 1).unwrap();
    let videos: Vec<VideoTensor> = (0..7)
        .map(|i| VideoTensor::filled(d, 1, i as f32 / 10.0).unwrap())
        .collect();
    let p = Counting {
        calls: AtomicUsize::new(0),
    };
    let got = predict_target(&p, &videos, 1).unwrap();
    assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    for (i, g) in got.iter().enumerate() {
        assert!((g - i as f32 / 10.0).abs() < 1e-7);
    }
    assert!(predict_target(&p, &videos, 2).is_err());
}

#[test]
fn prediction_vectors_reject_out_of_range() {
    assert!(PredictionVector::new(vec![]).is_err());
    assert!(PredictionVector::new(vec![0.5, 1.01]).is_err());
    assert!(PredictionVector::new(vec![f32::NAN]).is_err());
    assert_eq!(
        PredictionVector::new(vec![0.2, 0.7, 0.7]).unwrap().top1(),
        1
    );
}

#[test]
fn colormaps_run_from_dark_to_bright() {
    for cm in [Colormap::Heat, Colormap::Viridis] {
        let lum = |s: f32| {
            let c = cm.color(s);
            0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
        };
        assert!(lum(0.0) < 0.2 && lum(1.0) > 0.8, "{cm:?}");
        for i in 0..10 {
            assert!(
                lum((i + 1) as f32 / 10.0) >= lum(i as f32 / 10.0) - 1e-6,
                "{cm:?}"
            );
        }
    }
    assert_eq!(Colormap::Heat.color(0.0), [0.0, 0.0, 0.0]);
    assert_eq!(Colormap::Heat.color(1.0), [1.0, 1.0, 1.0]);
}

#[test]
fn composite_keeps_zero_saliency_gray() {
    let d = Dims::new(1, 2, 2).unwrap();
    let v = VideoTensor::new(
        d,
        3,
        vec![0.2, 0.4, 0.6, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5],
    )
    .unwrap();
    let s = SaliencyVolume::new(d, vec![0.0, 0.0, 1.0, 0.5]).unwrap();
    let cfg = RenderConfig {
        alpha: 1.0,
        ..Default::default()
    };
    let out = composite(&v, &s, &cfg).unwrap();
    assert_eq!(out.channels(), 3);
    assert!(out.data()[0] == out.data()[1] && out.data()[1] == out.data()[2]);
    assert_eq!(&out.data()[6..9], &Colormap::Heat.color(1.0));
    assert!(composite(&v, &SaliencyVolume::filled(d, 2.0).unwrap(), &cfg).is_err());
}

#[test]
fn contact_sheet_layout() {
    let d = Dims::new(5, 4, 6).unwrap();
    let v = random_video(d, 3, 0);
    let img = contact_sheet(&[&v, &v]).unwrap();
    assert_eq!(sheet_frames(5), vec![0, 2, 4]);
    assert_eq!(sheet_frames(1), vec![0]);
    assert_eq!((img.width(), img.height()), (3 * 6 + 2 * 2, 2 * 4 + 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_lands_in_unit_range(vals in prop::collection::vec(-5.0f32..5.0, 1..60)) {
        let d = Dims::new(1, 1, vals.len()).unwrap();
        let s = SaliencyVolume::new(d, vals.clone()).unwrap();
        let n = normalize_saliency(&s, &RenderConfig::default()).unwrap();
        prop_assert!(n.data().iter().all(|x| (0.0..=1.0).contains(x)));
        let clamped: Vec<f32> = vals.iter().map(|v| v.max(0.0)).collect();
        let hi = clamped.iter().cloned().fold(0.0, f32::max);
        let lo = clamped.iter().cloned().fold(f32::INFINITY, f32::min);
        if hi > lo {
            // The order of non-negative values survives.
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    if clamped[i] > clamped[j] {
                        prop_assert!(n.data()[i] >= n.data()[j]);
                    }
                }
            }
            prop_assert!(n.data().iter().cloned().fold(0.0, f32::max) == 1.0);
        } else {
            prop_assert!(n.data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn region_filters_never_raise_a_value(vals in prop::collection::vec(-1.0f64..1.0, 1..40),
                                          n in 0usize..10, tau in -1.0f64..1.0, cut in 0.05f64..1.0) {
        let rel = RegionRelevance::new(vals.clone(), Method::Lime, 0).unwrap();
        let cfgs = [
            RenderConfig { top_n: Some(n), ..Default::default() },
            RenderConfig { min_relevance: Some(tau), ..Default::default() },
            RenderConfig { cumulative_cutoff: Some(cut), ..Default::default() },
        ];
        for cfg in cfgs {
            let f = filter_regions(&rel, &cfg).unwrap();
            for (a, b) in f.values.iter().zip(&vals) {
                prop_assert!(a <= b);
                prop_assert!(a == b || *a == b.min(0.0));
            }
        }
        let kept = filter_regions(&rel, &RenderConfig { top_n: Some(n), ..Default::default() }).unwrap();
        let positive = vals.iter().filter(|&&v| v > 0.0).count();
        let intact = kept.values.iter().filter(|&&v| v > 0.0).count();
        prop_assert_eq!(intact, n.min(positive));
    }
}
