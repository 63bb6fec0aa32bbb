//! RVX tensor files and PNG frame sequences.
//!
//! RVX layout: `b"RVX1"`, then `t, h, w, c, dtype` as little-endian `u32`,
//! then `t*h*w*c` little-endian elements in `(t, h, w, c)` order.
//! dtype 1 is `f32`, dtype 2 is `u32`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::segmentation::SegmentationMap;
use crate::tensor::{Dims, VideoTensor};

pub const MAGIC: &[u8; 4] = b"RVX1";
pub const DTYPE_F32: u32 = 1;
pub const DTYPE_U32: u32 = 2;
const HEADER_LEN: usize = 4 + 5 * 4;

/// Decoded RVX contents before any domain validation.
#[derive(Debug, Clone, PartialEq)]
pub enum RvxPayload {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvxArray {
    pub dims: Dims,
    pub channels: usize,
    pub payload: RvxPayload,
}

pub fn encode_rvx(dims: Dims, channels: usize, payload: &RvxPayload) -> Vec<u8> {
    let (code, n) = match payload {
        RvxPayload::F32(v) => (DTYPE_F32, v.len()),
        RvxPayload::U32(v) => (DTYPE_U32, v.len()),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n);
    out.extend_from_slice(MAGIC);
    for v in [dims.t, dims.h, dims.w, channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&code.to_le_bytes());
    match payload {
        RvxPayload::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        RvxPayload::U32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_rvx(bytes: &[u8]) -> Result<RvxArray> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap())
    };
    let (t, h, w, c, code) = (word(0), word(1), word(2), word(3), word(4));
    let dims =
        Dims::new(t as usize, h as usize, w as usize).map_err(|e| Error::Format(e.to_string()))?;
    if c == 0 {
        return Err(Error::Format("channel count is zero".into()));
    }
    let n = (t as u64) * (h as u64) * (w as u64) * (c as u64);
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != n * 4 {
        return Err(Error::Format(format!(
            "header declares {n} elements ({} bytes) but payload has {} bytes",
            n * 4,
            body.len()
        )));
    }
    let words = body
        .chunks_exact(4)
        .map(|b| <[u8; 4]>::try_from(b).unwrap());
    let payload = match code {
        DTYPE_F32 => RvxPayload::F32(words.map(f32::from_le_bytes).collect()),
        DTYPE_U32 => RvxPayload::U32(words.map(u32::from_le_bytes).collect()),
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    Ok(RvxArray {
        dims,
        channels: c as usize,
        payload,
    })
}

pub fn read_rvx(path: impl AsRef<Path>) -> Result<RvxArray> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_rvx(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

pub fn write_tensor(v: &VideoTensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_rvx(v.dims(), v.channels(), &RvxPayload::F32(v.data().to_vec()));
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<VideoTensor> {
    let arr = read_rvx(path)?;
    match arr.payload {
        RvxPayload::F32(data) => {
            VideoTensor::new(arr.dims, arr.channels, data).map_err(|e| Error::Format(e.to_string()))
        }
        RvxPayload::U32(_) => Err(Error::Format("expected float32 video, found labels".into())),
    }
}

/// Writes an unconstrained float volume (saliency) with one channel.
pub fn write_volume(data: &[f32], dims: Dims, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(
        path.as_ref(),
        &encode_rvx(dims, 1, &RvxPayload::F32(data.to_vec())),
    )
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<(Dims, Vec<f32>)> {
    let arr = read_rvx(path)?;
    match arr.payload {
        RvxPayload::F32(d) if arr.channels == 1 => {
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("volume contains non-finite values".into()));
            }
            Ok((arr.dims, d))
        }
        _ => Err(Error::Format(
            "expected single-channel float32 volume".into(),
        )),
    }
}

pub fn write_segmentation(s: &SegmentationMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_rvx(s.dims(), 1, &RvxPayload::U32(s.labels().to_vec()));
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_segmentation(path: impl AsRef<Path>) -> Result<SegmentationMap> {
    let arr = read_rvx(path)?;
    match arr.payload {
        RvxPayload::U32(labels) if arr.channels == 1 => {
            SegmentationMap::from_labels(arr.dims, labels).map_err(|e| Error::Format(e.to_string()))
        }
        _ => Err(Error::Format(
            "expected single-channel uint32 labels".into(),
        )),
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:05}.png"))
}

/// Writes `frame_00000.png`, `frame_00001.png`, ... into `dir`.
pub fn write_png_frames(v: &VideoTensor, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let d = v.dims();
    let c = v.channels();
    let frame = d.frame_len() * c;
    let mut paths = Vec::with_capacity(d.t);
    for t in 0..d.t {
        let bytes: Vec<u8> = v.data()[t * frame..(t + 1) * frame]
            .iter()
            .map(|&x| to_u8(x))
            .collect();
        let color = if c == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        let p = frame_path(dir, t);
        image::save_buffer(&p, &bytes, d.w as u32, d.h as u32, color)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Reads a `frame_%05d.png` sequence from `dir`, converting 8-bit values by /255.
pub fn read_png_frames(dir: impl AsRef<Path>) -> Result<VideoTensor> {
    let dir = dir.as_ref();
    let mut frames = Vec::new();
    while frame_path(dir, frames.len()).exists() {
        let p = frame_path(dir, frames.len());
        let img = image::open(&p).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        frames.push(img);
    }
    if frames.is_empty() {
        return Err(Error::Format(format!(
            "no frame_00000.png in {}",
            dir.display()
        )));
    }
    let (w, h) = (frames[0].width() as usize, frames[0].height() as usize);
    let gray = frames.iter().all(|f| f.color().channel_count() < 3);
    let c = if gray { 1 } else { 3 };
    let mut data = Vec::with_capacity(frames.len() * w * h * c);
    for (i, f) in frames.iter().enumerate() {
        if f.width() as usize != w || f.height() as usize != h {
            return Err(Error::Format(format!("frame {i} has a different size")));
        }
        let raw = if gray {
            f.to_luma8().into_raw()
        } else {
            f.to_rgb8().into_raw()
        };
        data.extend(raw.into_iter().map(|b| b as f32 / 255.0));
    }
    VideoTensor::new(Dims::new(frames.len(), h, w)?, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> VideoTensor {
        let d = Dims::new(2, 3, 4).unwrap();
        VideoTensor::from_fn(d, 3, |t, y, x, c| {
            ((t * 7 + y * 3 + x + c) % 10) as f32 / 9.0
        })
        .unwrap()
    }

    #[test]
    fn header_layout_is_exact() {
        let v = sample();
        let b = encode_rvx(v.dims(), 3, &RvxPayload::F32(v.data().to_vec()));
        assert_eq!(&b[..4], b"RVX1");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(&b[12..16], &4u32.to_le_bytes());
        assert_eq!(&b[16..20], &3u32.to_le_bytes());
        assert_eq!(&b[20..24], &1u32.to_le_bytes());
        assert_eq!(&b[24..28], &v.data()[0].to_le_bytes());
        assert_eq!(b.len(), 24 + 4 * 72);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let v = sample();
        let mut b = encode_rvx(v.dims(), 3, &RvxPayload::F32(v.data().to_vec()));
        b[0] = b'X';
        assert!(matches!(decode_rvx(&b), Err(Error::Format(_))));
    }

    #[test]
    fn payload_length_mismatch_is_rejected() {
        let v = sample();
        let b = encode_rvx(v.dims(), 3, &RvxPayload::F32(v.data().to_vec()));
        assert!(matches!(
            decode_rvx(&b[..b.len() - 4]),
            Err(Error::Format(_))
        ));
        let mut longer = b.clone();
        longer.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode_rvx(&longer), Err(Error::Format(_))));
        assert!(matches!(decode_rvx(&b[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let v = sample();
        let mut b = encode_rvx(v.dims(), 3, &RvxPayload::F32(v.data().to_vec()));
        b[20] = 9;
        assert!(decode_rvx(&b).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample();
        let paths = write_png_frames(&v, dir.path()).unwrap();
        assert!(paths[1].ends_with("frame_00001.png"));
        let back = read_png_frames(dir.path()).unwrap();
        assert!(back.same_shape(&v));
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
