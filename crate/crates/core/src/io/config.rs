//! Pipeline configuration.
//!
//! The file is TOML. Keys may be written dotted (`ransac.max_iterations = 500`)
//! or inside section tables; both flatten to the same dotted names. Missing keys
//! keep their defaults and unknown keys are rejected.
//!
//! Any key can be overridden from the environment with
//! `MOTIONSEG_<SECTION>__<KEY>`, e.g. `MOTIONSEG_RANSAC__MAX_ITERATIONS=500`.

use std::path::Path;

use toml::Value;

use crate::egomotion::RansacConfig;
use crate::error::{ConfigError, Error, Result};
use crate::events::{DEFAULT_SLICE_PERIOD, DEFAULT_VOLUME_BINS};
use crate::geometry::{CameraIntrinsics, DepthMap};
use crate::labeler::{
    TotalVarianceRule, DEFAULT_BINS, DEFAULT_CLIP, DEFAULT_EPS_SEPARATION, DEFAULT_EPS_TOTAL_VAR,
    DEFAULT_MORPH_RADIUS,
};
use crate::metrics::{DEFAULT_DETECTION_IOU, DEFAULT_FOCAL_GAMMA};

pub const ENV_PREFIX: &str = "MOTIONSEG_";

/// Intrinsics; unset entries fall back to [`CameraIntrinsics::centered`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntrinsicsConfig {
    pub fx: Option<f64>,
    pub fy: Option<f64>,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
}

impl IntrinsicsConfig {
    pub fn resolve(&self, width: usize, height: usize) -> Result<CameraIntrinsics> {
        let base = CameraIntrinsics::centered(width, height);
        CameraIntrinsics::new(
            self.fx.unwrap_or(base.fx),
            self.fy.unwrap_or(base.fy),
            self.cx.unwrap_or(base.cx),
            self.cy.unwrap_or(base.cy),
            width,
            height,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelerConfig {
    pub clip_value: f64,
    pub bins: usize,
    pub eps_total_var: f64,
    pub eps_separation: f64,
    pub morph_radius: usize,
    pub total_variance_rule: TotalVarianceRule,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            clip_value: DEFAULT_CLIP,
            bins: DEFAULT_BINS,
            eps_total_var: DEFAULT_EPS_TOTAL_VAR,
            eps_separation: DEFAULT_EPS_SEPARATION,
            morph_radius: DEFAULT_MORPH_RADIUS,
            total_variance_rule: TotalVarianceRule::RejectAbove,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventConfig {
    pub bins: usize,
    pub slice_period: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_VOLUME_BINS,
            slice_period: DEFAULT_SLICE_PERIOD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    pub detection_iou: f64,
    pub focal_gamma: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            detection_iou: DEFAULT_DETECTION_IOU,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub intrinsics: IntrinsicsConfig,
    pub ransac: RansacConfig,
    pub labeler: LabelerConfig,
    pub events: EventConfig,
    pub z_max: f64,
    pub metrics: MetricsConfig,
    /// Worker threads for per-slice processing; `0` uses all cores.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: IntrinsicsConfig::default(),
            ransac: RansacConfig::default(),
            labeler: LabelerConfig::default(),
            events: EventConfig::default(),
            z_max: DepthMap::DEFAULT_MAX_DEPTH,
            metrics: MetricsConfig::default(),
            workers: 0,
        }
    }
}

/// Every recognised key, for `--help` output and error hints.
pub const KEYS: &[&str] = &[
    "intrinsics.fx",
    "intrinsics.fy",
    "intrinsics.cx",
    "intrinsics.cy",
    "ransac.max_iterations",
    "ransac.stop_probability",
    "ransac.sample_size",
    "ransac.inlier_threshold",
    "ransac.min_inlier_fraction",
    "ransac.scoring_subsample",
    "ransac.seed",
    "labeler.clip_value",
    "labeler.bins",
    "labeler.eps_total_var",
    "labeler.eps_separation",
    "labeler.morph_radius",
    "labeler.total_variance_rule",
    "events.bins",
    "events.slice_period",
    "depth.z_max",
    "metrics.detection_iou",
    "metrics.focal_gamma",
    "pipeline.workers",
];

fn float(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::Type {
            key: key.into(),
            expected: "float",
        }),
    }
}

fn uint(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(i) => Err(ConfigError::Range {
            key: key.into(),
            value: i.to_string(),
            constraint: ">= 0",
        }),
        _ => Err(ConfigError::Type {
            key: key.into(),
            expected: "non-negative integer",
        }),
    }
}

fn usize_in(key: &str, v: &Value, min: u64, constraint: &'static str) -> Result<usize, ConfigError> {
    let n = uint(key, v)?;
    if n < min || n > u32::MAX as u64 {
        return Err(ConfigError::Range {
            key: key.into(),
            value: n.to_string(),
            constraint,
        });
    }
    Ok(n as usize)
}

fn checked(key: &str, x: f64, ok: bool, constraint: &'static str) -> Result<f64, ConfigError> {
    if ok && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::Range {
            key: key.into(),
            value: x.to_string(),
            constraint,
        })
    }
}

fn positive(key: &str, v: &Value) -> Result<f64, ConfigError> {
    let x = float(key, v)?;
    checked(key, x, x > 0.0, "> 0")
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl PipelineConfig {
    /// Applies one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        match key {
            "intrinsics.fx" => self.intrinsics.fx = Some(positive(key, v)?),
            "intrinsics.fy" => self.intrinsics.fy = Some(positive(key, v)?),
            "intrinsics.cx" => self.intrinsics.cx = Some(checked(key, float(key, v)?, true, "finite")?),
            "intrinsics.cy" => self.intrinsics.cy = Some(checked(key, float(key, v)?, true, "finite")?),
            "ransac.max_iterations" => self.ransac.max_iterations = usize_in(key, v, 1, ">= 1")?,
            "ransac.stop_probability" => {
                let p = float(key, v)?;
                self.ransac.stop_probability = checked(key, p, p > 0.0 && p < 1.0, "in (0, 1)")?;
            }
            "ransac.sample_size" => self.ransac.sample_size = usize_in(key, v, 3, ">= 3")?,
            "ransac.inlier_threshold" => self.ransac.inlier_threshold = positive(key, v)?,
            "ransac.min_inlier_fraction" => {
                let f = float(key, v)?;
                self.ransac.min_inlier_fraction = checked(key, f, (0.0..=1.0).contains(&f), "in [0, 1]")?;
            }
            "ransac.scoring_subsample" => self.ransac.scoring_subsample = usize_in(key, v, 0, ">= 0")?,
            "ransac.seed" => self.ransac.rng_seed = uint(key, v)?,
            "labeler.clip_value" => self.labeler.clip_value = positive(key, v)?,
            "labeler.bins" => self.labeler.bins = usize_in(key, v, 2, ">= 2")?,
            "labeler.eps_total_var" => {
                let x = float(key, v)?;
                self.labeler.eps_total_var = checked(key, x, x >= 0.0, ">= 0")?;
            }
            "labeler.eps_separation" => {
                let x = float(key, v)?;
                self.labeler.eps_separation = checked(key, x, x >= 0.0, ">= 0")?;
            }
            "labeler.morph_radius" => self.labeler.morph_radius = usize_in(key, v, 0, ">= 0")?,
            "labeler.total_variance_rule" => {
                self.labeler.total_variance_rule = match v.as_str() {
                    Some("reject_above") => TotalVarianceRule::RejectAbove,
                    Some("reject_below") => TotalVarianceRule::RejectBelow,
                    Some(other) => {
                        return Err(ConfigError::Range {
                            key: key.into(),
                            value: format!("{other:?}"),
                            constraint: "\"reject_above\" or \"reject_below\"",
                        })
                    }
                    None => {
                        return Err(ConfigError::Type {
                            key: key.into(),
                            expected: "string",
                        })
                    }
                }
            }
            "events.bins" => self.events.bins = usize_in(key, v, 1, ">= 1")?,
            "events.slice_period" => self.events.slice_period = positive(key, v)?,
            "depth.z_max" => self.z_max = positive(key, v)?,
            "metrics.detection_iou" => {
                let x = float(key, v)?;
                self.metrics.detection_iou = checked(key, x, x > 0.0 && x < 1.0, "in (0, 1)")?;
            }
            "metrics.focal_gamma" => {
                let x = float(key, v)?;
                self.metrics.focal_gamma = checked(key, x, x >= 0.0, ">= 0")?;
            }
            "pipeline.workers" => self.workers = usize_in(key, v, 0, ">= 0")?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = Self::default();
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Applies `MOTIONSEG_SECTION__KEY=value` pairs. Values use TOML syntax;
    /// anything that does not parse as a TOML value is taken as a bare string.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.as_ref().strip_prefix(ENV_PREFIX)?;
                let key = rest.to_ascii_lowercase().replacen("__", ".", 1);
                Some((key, v.as_ref().to_owned()))
            })
            .collect();
        pairs.sort();
        for (key, raw) in pairs {
            self.set_str(&key, &raw)?;
        }
        Ok(())
    }

    /// Sets `key` from a TOML literal such as `7`, `0.5` or `"reject_above"`.
    /// Text that is not a TOML value is taken as a bare string.
    pub fn set_str(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_owned()));
        self.set(key, &value)
    }
}

/// Reads a config file. Environment overrides are applied separately.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(PipelineConfig::from_toml_str(&text)?)
}
