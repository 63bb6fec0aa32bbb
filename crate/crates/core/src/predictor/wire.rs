//! JSON bodies of the model wire protocol.
//!
//! `POST /predict` takes `{"shape":[n,t,h,w,c],"dtype":"f32le","data":<base64>}`
//! and answers `{"confidences":[[..],..],"normalized":bool}`.
//! `GET /info` answers `{"class_count":K,"max_batch":B,"normalized":bool}`.
//! Malformed requests get HTTP 400 with `{"error":msg}`; 503 means overload.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, VideoTensor};

pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub shape: [usize; 5],
    pub dtype: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub confidences: Vec<Vec<f32>>,
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub class_count: usize,
    pub max_batch: usize,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Packs a batch of equally shaped videos.
pub fn encode_batch(videos: &[VideoTensor]) -> Result<PredictRequest> {
    let first = videos
        .first()
        .ok_or_else(|| Error::Param("cannot encode an empty batch".into()))?;
    if videos.iter().any(|v| !v.same_shape(first)) {
        return Err(Error::Param("all videos in a batch must share dims".into()));
    }
    let d = first.dims();
    let mut bytes = Vec::with_capacity(videos.len() * first.data().len() * 4);
    for v in videos {
        for x in v.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(PredictRequest {
        shape: [videos.len(), d.t, d.h, d.w, first.channels()],
        dtype: DTYPE.to_string(),
        data: STANDARD.encode(bytes),
    })
}

/// Inverse of [`encode_batch`], validating shape and payload length.
pub fn decode_batch(req: &PredictRequest) -> Result<Vec<VideoTensor>> {
    if req.dtype != DTYPE {
        return Err(Error::Protocol(format!(
            "unsupported dtype {:?}",
            req.dtype
        )));
    }
    let [n, t, h, w, c] = req.shape;
    let bytes = STANDARD
        .decode(&req.data)
        .map_err(|e| Error::Protocol(format!("bad base64: {e}")))?;
    let per = t * h * w * c;
    if n == 0 || per == 0 || bytes.len() != n * per * 4 {
        return Err(Error::Protocol(format!(
            "shape {:?} needs {} bytes, got {}",
            req.shape,
            n * per * 4,
            bytes.len()
        )));
    }
    let dims = Dims::new(t, h, w).map_err(|e| Error::Protocol(e.to_string()))?;
    bytes
        .chunks_exact(per * 4)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            VideoTensor::new(dims, c, data).map_err(|e| Error::Protocol(e.to_string()))
        })
        .collect()
}
