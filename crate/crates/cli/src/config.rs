use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use revex::io::{read_png_frames, read_tensor};
use revex::perturbation::RemovalOperator;
use revex::predictor::{Constant, Echo, Predictor, PredictorSpec};
use revex::synth::SynthSpec;
use revex::visualization::RenderConfig;
use revex::{BlurParams, VideoTensor};

use crate::args::{Common, RemovalArg};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            message: format!("{what}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<revex::Error> for CliError {
    fn from(e: revex::Error) -> Self {
        use revex::Error::*;
        let code = match &e {
            Param(_) | Format(_) | Io(_) => EXIT_USAGE,
            Transport { .. } | Protocol(_) => EXIT_TRANSPORT,
            Solver(_) | Undefined(_) => EXIT_INTERNAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub steps: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { steps: 20 }
    }
}

/// Everything a run needs; written back out fully resolved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub predictor: Option<String>,
    pub explain: revex::pipeline::ExplainConfig,
    pub render: RenderConfig,
    pub evaluate: EvaluateConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// Loads `--config` if given, then applies the shared flags.
    pub fn from_common(c: &Common) -> CliResult<Self> {
        let mut cfg = match &c.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(i) = &c.input {
            cfg.input = Some(i.clone());
        }
        if let Some(o) = &c.out {
            cfg.out = Some(o.clone());
        }
        if let Some(s) = c.seed {
            cfg.explain.seed = s;
        }
        Ok(cfg)
    }

    pub fn input(&self) -> CliResult<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::usage("no input given (use --input)"))
    }

    pub fn out(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::usage("no output directory given (use --out)"))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError {
            code: EXIT_INTERNAL,
            message: format!("cannot serialize config: {e}"),
        })
    }
}

/// Reads an RVX video or a PNG frame directory.
pub fn load_video(path: &Path) -> CliResult<VideoTensor> {
    if !path.exists() {
        return Err(CliError::usage(format!(
            "{}: no such file or directory",
            path.display()
        )));
    }
    let v = if path.is_dir() {
        read_png_frames(path)
    } else {
        read_tensor(path)
    };
    v.map_err(|e| CliError::from(e).context(path.display()))
}

pub fn parse_class(s: &str) -> CliResult<Option<usize>> {
    if s.eq_ignore_ascii_case("top1") {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| CliError::usage(format!("--class: expected an index or top1, got {s:?}")))
}

/// Resolves a `--predictor` value into a live predictor.
pub fn build_predictor(spec: &str) -> CliResult<Arc<dyn Predictor>> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        let p = PredictorSpec::Remote {
            endpoint: spec.to_string(),
        };
        return Ok(p.build(None)?);
    }
    let rest = spec.strip_prefix("builtin:").ok_or_else(|| {
        CliError::usage(format!(
            "--predictor: expected builtin:<spec> or http://..., got {spec:?}"
        ))
    })?;
    if rest == "echo" {
        return Ok(Arc::new(Echo { class_count: 2 }));
    }
    if let Some(c) = rest.strip_prefix("constant=") {
        let c: f32 = c
            .parse()
            .map_err(|_| CliError::usage(format!("--predictor: bad constant {c:?}")))?;
        let p = PredictorSpec::Constant(Constant {
            confidences: vec![c, 1.0 - c],
        });
        return Ok(p.build(None)?);
    }
    let path = Path::new(rest);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let p: PredictorSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    p.build(path.parent())
        .map_err(|e| CliError::from(e).context(path.display()))
}

pub fn removal_for(arg: RemovalArg, blur: BlurParams) -> RemovalOperator {
    match arg {
        RemovalArg::Blur => RemovalOperator::blur(blur),
        RemovalArg::Constant => RemovalOperator::constant(vec![0.0], Some(blur.fade())),
        RemovalArg::Mean => RemovalOperator::region_mean(Some(blur.fade())),
    }
}
