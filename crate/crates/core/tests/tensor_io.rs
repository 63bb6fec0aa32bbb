#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use revex::io::{
    decode_rvx, encode_rvx, read_png_frames, read_segmentation, read_tensor, write_png_frames,
    write_segmentation, write_tensor, RvxPayload,
};
use revex::segmentation::grid_3d;
use revex::tensor::{blur_values, gaussian_blur_3d};
use revex::{BlurParams, Dims, VideoTensor};

/// Direct 3D convolution with edge replication, in f64.
fn dense_blur(data: &[f32], d: Dims, c: usize, p: &BlurParams) -> Vec<f64> {
    let rs = p.space_radius() as i64;
    let rt = p.time_radius() as i64;
    let g = |x: i64, s: f64| {
        if s == 0.0 {
            if x == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (-(x * x) as f64 / (2.0 * s * s)).exp()
        }
    };
    let mut wsum = 0.0;
    for dt in -rt..=rt {
        for dy in -rs..=rs {
            for dx in -rs..=rs {
                wsum += g(dt, p.sigma_time) * g(dy, p.sigma_space) * g(dx, p.sigma_space);
            }
        }
    }
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut out = vec![0.0; data.len()];
    for t in 0..d.t {
        for y in 0..d.h {
            for x in 0..d.w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for dt in -rt..=rt {
                        for dy in -rs..=rs {
                            for dx in -rs..=rs {
                                let w = g(dt, p.sigma_time)
                                    * g(dy, p.sigma_space)
                                    * g(dx, p.sigma_space);
                                let src = d.index(
                                    clamp(t as i64 + dt, d.t),
                                    clamp(y as i64 + dy, d.h),
                                    clamp(x as i64 + dx, d.w),
                                );
                                acc += w * data[src * c + ch] as f64;
                            }
                        }
                    }
                    out[d.index(t, y, x) * c + ch] = acc / wsum;
                }
            }
        }
    }
    out
}

fn random_video(d: Dims, c: usize, seed: u64) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VideoTensor::new(d, c, (0..d.voxels() * c).map(|_| rng.random()).collect()).unwrap()
}

#[test]
fn separable_blur_matches_dense_convolution() {
    let cases = [
        (
            Dims::new(5, 9, 11).unwrap(),
            3,
            BlurParams::new(1.5, 1.0, 2.0).unwrap(),
        ),
        (
            Dims::new(4, 6, 7).unwrap(),
            1,
            BlurParams::new(3.0, 0.0, 2.0).unwrap(),
        ),
        (
            Dims::new(1, 8, 5).unwrap(),
            3,
            BlurParams::new(0.8, 2.0, 3.0).unwrap(),
        ),
        (
            Dims::new(3, 1, 9).unwrap(),
            1,
            BlurParams::new(2.0, 0.5, 2.0).unwrap(),
        ),
    ];
    for (i, (d, c, p)) in cases.into_iter().enumerate() {
        let v = random_video(d, c, i as u64);
        let got = blur_values(v.data(), d, c, &p).unwrap();
        let want = dense_blur(v.data(), d, c, &p);
        let err = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "case {i}: max error {err}");
    }
}

#[test]
fn kernel_wider_than_video_is_still_normalized() {
    let d = Dims::new(2, 3, 3).unwrap();
    let v = VideoTensor::filled(d, 3, 0.4).unwrap();
    let out = gaussian_blur_3d(&v, &BlurParams::default()).unwrap();
    assert!(out.data().iter().all(|x| (x - 0.4).abs() < 1e-6));
}

#[test]
fn invalid_blur_parameters_are_rejected() {
    assert!(BlurParams::new(0.0, 1.0, 2.0).is_err());
    assert!(BlurParams::new(1.0, -1.0, 2.0).is_err());
    assert!(BlurParams::new(1.0, 1.0, 0.0).is_err());
    assert!(BlurParams::new(f64::NAN, 1.0, 2.0).is_err());
}

#[test]
fn rvx_header_is_little_endian() {
    let d = Dims::new(2, 3, 4).unwrap();
    let bytes = encode_rvx(d, 1, &RvxPayload::U32(vec![7; 24]));
    assert_eq!(&bytes[..4], b"RVX1");
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    assert_eq!(
        [word(0), word(1), word(2), word(3), word(4)],
        [2, 3, 4, 1, 2]
    );
    assert_eq!(bytes.len(), 24 + 24 * 4);
}

#[test]
fn rvx_rejects_corruption() {
    let d = Dims::new(1, 2, 2).unwrap();
    let good = encode_rvx(d, 1, &RvxPayload::F32(vec![0.5; 4]));
    assert!(decode_rvx(&good).is_ok());
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(decode_rvx(&bad_magic).is_err());
    assert!(decode_rvx(&good[..good.len() - 1]).is_err());
    let mut bad_dtype = good.clone();
    bad_dtype[20] = 9;
    assert!(decode_rvx(&bad_dtype).is_err());
    assert!(decode_rvx(&good[..10]).is_err());
}

#[test]
fn video_and_labels_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dims::new(3, 5, 6).unwrap();
    let v = random_video(d, 3, 4);
    write_tensor(&v, dir.path().join("v.rvx")).unwrap();
    assert_eq!(read_tensor(dir.path().join("v.rvx")).unwrap(), v);
    let seg = grid_3d(d, 2, 2, 3).unwrap();
    write_segmentation(&seg, dir.path().join("s.rvx")).unwrap();
    assert_eq!(read_segmentation(dir.path().join("s.rvx")).unwrap(), seg);
    assert!(read_tensor(dir.path().join("s.rvx")).is_err());
}

#[test]
fn png_frames_round_trip_to_eight_bits() {
    let dir = tempfile::tempdir().unwrap();
    let d = Dims::new(3, 4, 5).unwrap();
    let v = random_video(d, 3, 9);
    write_png_frames(&v, dir.path()).unwrap();
    let back = read_png_frames(dir.path()).unwrap();
    assert_eq!(back.dims(), d);
    assert_eq!(back.channels(), 3);
    for (a, b) in v.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (1usize..5, 1usize..8, 1usize..8).prop_map(|(t, h, w)| Dims::new(t, h, w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn blur_is_linear(d in dims_strategy(), seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0,
                      ss in 0.3f64..3.0, st in 0.0f64..2.0) {
        let p = BlurParams::new(ss, st, 2.0).unwrap();
        let x = random_video(d, 1, seed);
        let y = random_video(d, 1, seed ^ 0xabcdef);
        let mix: Vec<f32> = x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect();
        let lhs = blur_values(&mix, d, 1, &p).unwrap();
        let bx = blur_values(x.data(), d, 1, &p).unwrap();
        let by = blur_values(y.data(), d, 1, &p).unwrap();
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * bx[i] + b * by[i])).abs() < 1e-4);
        }
    }

    #[test]
    fn blur_stays_within_input_range(d in dims_strategy(), seed in any::<u64>(), ss in 0.3f64..4.0) {
        let v = random_video(d, 3, seed);
        let out = gaussian_blur_3d(&v, &BlurParams::new(ss, 1.0, 2.0).unwrap()).unwrap();
        let lo = v.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = v.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(out.data().iter().all(|&x| x >= lo - 1e-5 && x <= hi + 1e-5));
    }

    #[test]
    fn rvx_round_trips(d in dims_strategy(), c in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f32> = (0..d.voxels() * c).map(|_| rng.random_range(-1e3..1e3)).collect();
        let arr = decode_rvx(&encode_rvx(d, c, &RvxPayload::F32(f.clone()))).unwrap();
        prop_assert_eq!(arr.dims, d);
        prop_assert_eq!(arr.channels, c);
        prop_assert_eq!(arr.payload, RvxPayload::F32(f));
        let u: Vec<u32> = (0..d.voxels()).map(|_| rng.random()).collect();
        let arr = decode_rvx(&encode_rvx(d, 1, &RvxPayload::U32(u.clone()))).unwrap();
        prop_assert_eq!(arr.payload, RvxPayload::U32(u));
    }
}
