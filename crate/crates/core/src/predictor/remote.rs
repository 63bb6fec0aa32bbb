//! HTTP client for externally served models.

use std::thread;
use std::time::Duration;

use super::wire::{self, InfoResponse, PredictResponse};
use super::{PredictionVector, Predictor};
use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(60),
        }
    }
}

pub type RemoteInfo = InfoResponse;

/// A model behind `GET /info` and `POST /predict`.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    base: String,
    agent: ureq::Agent,
    info: RemoteInfo,
    retry: RetryPolicy,
}

enum Outcome {
    Done(u16, String),
    /// Transport failure or 503; worth another attempt.
    Retry(String),
}

impl RemoteClient {
    pub fn connect(endpoint: &str) -> Result<Self> {
        Self::connect_with(endpoint, RetryPolicy::default())
    }

    pub fn connect_with(endpoint: &str, retry: RetryPolicy) -> Result<Self> {
        let base = endpoint.trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(retry.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut client = Self {
            base,
            agent,
            info: InfoResponse {
                class_count: 0,
                max_batch: 1,
                normalized: false,
            },
            retry,
        };
        let (status, body) = client.request(None)?;
        if status != 200 {
            return Err(Error::Protocol(format!(
                "GET /info returned HTTP {status}: {body}"
            )));
        }
        let info: InfoResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Protocol(format!("malformed /info response: {e}")))?;
        if info.class_count == 0 || info.max_batch == 0 {
            return Err(Error::Protocol(format!("invalid /info values {info:?}")));
        }
        client.info = info;
        Ok(client)
    }

    pub fn info(&self) -> RemoteInfo {
        self.info
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn attempt(&self, body: Option<&[u8]>) -> Outcome {
        let res = match body {
            None => self.agent.get(format!("{}/info", self.base)).call(),
            Some(b) => self
                .agent
                .post(format!("{}/predict", self.base))
                .header("Content-Type", "application/json")
                .send(b),
        };
        match res {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 503 {
                    return Outcome::Retry("HTTP 503 (overloaded)".into());
                }
                match resp
                    .body_mut()
                    .with_config()
                    .limit(1 << 30)
                    .read_to_string()
                {
                    Ok(text) => Outcome::Done(status, text),
                    Err(e) => Outcome::Retry(e.to_string()),
                }
            }
            Err(e) => Outcome::Retry(e.to_string()),
        }
    }

    /// One logical request with retries and exponential backoff.
    fn request(&self, body: Option<&[u8]>) -> Result<(u16, String)> {
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.retry.attempts.max(1) {
            match self.attempt(body) {
                Outcome::Done(status, text) => return Ok((status, text)),
                Outcome::Retry(msg) => {
                    log::warn!("{}: attempt {attempt} failed: {msg}", self.base);
                    last = msg;
                }
            }
            if attempt < self.retry.attempts {
                thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(Error::Transport {
            attempts: self.retry.attempts.max(1),
            message: format!("{}: {last}", self.base),
        })
    }

    /// Sends exactly one batch (no splitting) and validates the response.
    pub fn predict_raw(&self, videos: &[VideoTensor]) -> Result<PredictResponse> {
        let req = wire::encode_batch(videos)?;
        let body = serde_json::to_vec(&req).map_err(|e| Error::Protocol(e.to_string()))?;
        let (status, text) = self.request(Some(&body))?;
        if status != 200 {
            let msg = serde_json::from_str::<wire::ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(Error::Protocol(format!("HTTP {status}: {msg}")));
        }
        let resp: PredictResponse = serde_json::from_str(&text)
            .map_err(|e| Error::Protocol(format!("malformed /predict response: {e}")))?;
        if resp.confidences.len() != videos.len() {
            return Err(Error::Protocol(format!(
                "{} rows for {} inputs",
                resp.confidences.len(),
                videos.len()
            )));
        }
        Ok(resp)
    }
}

impl Predictor for RemoteClient {
    fn class_count(&self) -> usize {
        self.info.class_count
    }

    fn max_batch(&self) -> usize {
        self.info.max_batch
    }

    fn predict_batch(&self, videos: &[VideoTensor]) -> Result<Vec<PredictionVector>> {
        let mut out = Vec::with_capacity(videos.len());
        for chunk in videos.chunks(self.info.max_batch) {
            let resp = self.predict_raw(chunk)?;
            for row in resp.confidences {
                if row.len() != self.info.class_count {
                    return Err(Error::Protocol(format!(
                        "row has {} confidences, /info declared {}",
                        row.len(),
                        self.info.class_count
                    )));
                }
                out.push(PredictionVector::new(row)?);
            }
        }
        Ok(out)
    }
}
