use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::frontend::{DetectorParams, TrackerParams};
use crate::loopmem::{MemoryParams, Transition};
use crate::posegraph::{JacobianMode, LmParams};
use crate::session::LocalizeParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Mapping,
    LocalizationOnly,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Every tunable of the pipeline. Defaults are the survey operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlamConfig {
    pub mode: RunMode,
    pub tracker: TrackerParams,
    pub memory_stm: usize,
    pub memory_wm: usize,
    pub loop_threshold: f64,
    pub retrieve_radius: usize,
    pub transition: Transition,
    pub lm: LmParams,
    pub voxel_size: f64,
    pub cloud_stride: u32,
    /// Lost frames tolerated before OdometryLost is reported.
    pub lost_limit: usize,
    pub localize_top_k: usize,
    /// Store keyframe images in the map archive.
    pub archive_rasters: bool,
}

impl Default for SlamConfig {
    fn default() -> Self {
        let memory = MemoryParams::default();
        Self {
            mode: RunMode::Mapping,
            tracker: TrackerParams::default(),
            memory_stm: memory.stm_capacity,
            memory_wm: memory.wm_capacity,
            loop_threshold: memory.loop_threshold,
            retrieve_radius: memory.retrieve_radius,
            transition: memory.transition,
            lm: LmParams {
                jacobians: JacobianMode::Analytic,
                ..LmParams::default()
            },
            voxel_size: 0.02,
            cloud_stride: 2,
            lost_limit: 30,
            localize_top_k: 5,
            archive_rasters: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

impl SlamConfig {
    pub fn memory_params(&self) -> MemoryParams {
        MemoryParams {
            stm_capacity: self.memory_stm,
            wm_capacity: self.memory_wm,
            loop_threshold: self.loop_threshold,
            retrieve_radius: self.retrieve_radius,
            transition: self.transition,
            matcher: self.tracker,
        }
    }

    pub fn localize_params(&self) -> LocalizeParams {
        LocalizeParams {
            top_k: self.localize_top_k,
            matcher: self.tracker,
        }
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.tracker;
        let d: &mut DetectorParams = &mut t.detector;
        match key {
            "mode" => {
                self.mode = match value {
                    "mapping" => RunMode::Mapping,
                    "localization" => RunMode::LocalizationOnly,
                    _ => return Err(format!("expected mapping or localization, got {value:?}")),
                }
            }
            "max_features" => d.max_features = parse_num(value)?,
            "min_distance" => d.min_distance = parse_num(value)?,
            "harris_k" => d.harris_k = parse_num(value)?,
            "quality" => d.quality = parse_num(value)?,
            "grid_cols" => d.grid_cols = parse_num(value)?,
            "grid_rows" => d.grid_rows = parse_num(value)?,
            "max_hamming" => t.max_hamming = parse_num(value)?,
            "ratio" => t.ratio = parse_num(value)?,
            "ransac_threshold" => t.ransac.threshold = parse_num(value)?,
            "ransac_confidence" => t.ransac.confidence = parse_num(value)?,
            "ransac_max_iterations" => t.ransac.max_iterations = parse_num(value)?,
            "min_inliers" => t.ransac.min_inliers = parse_num(value)?,
            "seed" => t.ransac.seed = parse_num(value)?,
            "keyframe_translation" => t.keyframe_translation = parse_num(value)?,
            "keyframe_rotation_deg" => t.keyframe_rotation = parse_num::<f64>(value)?.to_radians(),
            "stm_capacity" => self.memory_stm = parse_num(value)?,
            "wm_capacity" => self.memory_wm = parse_num(value)?,
            "loop_threshold" => self.loop_threshold = parse_num(value)?,
            "retrieve_radius" => self.retrieve_radius = parse_num(value)?,
            "transition_stay" => self.transition.stay = parse_num(value)?,
            "transition_self_share" => self.transition.self_share = parse_num(value)?,
            "lm_max_iters" => self.lm.max_iters = parse_num(value)?,
            "lm_lambda0" => self.lm.lambda0 = parse_num(value)?,
            "lm_tol_dchi2" => self.lm.tol_dchi2 = parse_num(value)?,
            "lm_jacobians" => {
                self.lm.jacobians = match value {
                    "analytic" => JacobianMode::Analytic,
                    "finite_difference" => JacobianMode::FiniteDifference,
                    _ => return Err(format!("expected analytic or finite_difference, got {value:?}")),
                }
            }
            "robust_loops" => self.lm.robust_loops = parse_bool(value)?,
            "huber_delta" => self.lm.huber_delta = parse_num(value)?,
            "voxel_size" => self.voxel_size = parse_num(value)?,
            "cloud_stride" => self.cloud_stride = parse_num(value)?,
            "lost_limit" => self.lost_limit = parse_num(value)?,
            "localize_top_k" => self.localize_top_k = parse_num(value)?,
            "archive_rasters" => self.archive_rasters = parse_bool(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.tracker;
        let d = &t.detector;
        vec![
            (
                "mode",
                match self.mode {
                    RunMode::Mapping => "mapping".into(),
                    RunMode::LocalizationOnly => "localization".into(),
                },
            ),
            ("max_features", d.max_features.to_string()),
            ("min_distance", d.min_distance.to_string()),
            ("harris_k", d.harris_k.to_string()),
            ("quality", d.quality.to_string()),
            ("grid_cols", d.grid_cols.to_string()),
            ("grid_rows", d.grid_rows.to_string()),
            ("max_hamming", t.max_hamming.to_string()),
            ("ratio", t.ratio.to_string()),
            ("ransac_threshold", t.ransac.threshold.to_string()),
            ("ransac_confidence", t.ransac.confidence.to_string()),
            ("ransac_max_iterations", t.ransac.max_iterations.to_string()),
            ("min_inliers", t.ransac.min_inliers.to_string()),
            ("seed", t.ransac.seed.to_string()),
            ("keyframe_translation", t.keyframe_translation.to_string()),
            ("keyframe_rotation_deg", t.keyframe_rotation.to_degrees().to_string()),
            ("stm_capacity", self.memory_stm.to_string()),
            ("wm_capacity", self.memory_wm.to_string()),
            ("loop_threshold", self.loop_threshold.to_string()),
            ("retrieve_radius", self.retrieve_radius.to_string()),
            ("transition_stay", self.transition.stay.to_string()),
            ("transition_self_share", self.transition.self_share.to_string()),
            ("lm_max_iters", self.lm.max_iters.to_string()),
            ("lm_lambda0", self.lm.lambda0.to_string()),
            ("lm_tol_dchi2", self.lm.tol_dchi2.to_string()),
            (
                "lm_jacobians",
                match self.lm.jacobians {
                    JacobianMode::Analytic => "analytic".into(),
                    JacobianMode::FiniteDifference => "finite_difference".into(),
                },
            ),
            ("robust_loops", self.lm.robust_loops.to_string()),
            ("huber_delta", self.lm.huber_delta.to_string()),
            ("voxel_size", self.voxel_size.to_string()),
            ("cloud_stride", self.cloud_stride.to_string()),
            ("lost_limit", self.lost_limit.to_string()),
            ("localize_top_k", self.localize_top_k.to_string()),
            ("archive_rasters", self.archive_rasters.to_string()),
        ]
    }

    /// Range checks for every value.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &'static str, message: &str| {
            Err(ConfigError::Invalid {
                key,
                message: message.to_string(),
            })
        };
        let t = &self.tracker;
        let d = &t.detector;
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if d.max_features == 0 {
            return bad("max_features", "must be positive");
        }
        if !(d.min_distance >= 0.0) {
            return bad("min_distance", "must be non-negative");
        }
        if !(d.harris_k > 0.0 && d.harris_k < 0.25) {
            return bad("harris_k", "must lie in (0, 0.25)");
        }
        if !unit(d.quality) {
            return bad("quality", "must lie in (0, 1)");
        }
        if d.grid_cols == 0 || d.grid_rows == 0 {
            return bad("grid_cols", "grid must have at least one cell");
        }
        if t.max_hamming == 0 || t.max_hamming > 256 {
            return bad("max_hamming", "must lie in 1..=256");
        }
        if !(t.ratio > 0.0 && t.ratio <= 1.0) {
            return bad("ratio", "must lie in (0, 1]");
        }
        if !(t.ransac.threshold > 0.0) {
            return bad("ransac_threshold", "must be positive");
        }
        if !unit(t.ransac.confidence) {
            return bad("ransac_confidence", "must lie in (0, 1)");
        }
        if t.ransac.max_iterations == 0 {
            return bad("ransac_max_iterations", "must be positive");
        }
        if t.ransac.min_inliers < 3 {
            return bad("min_inliers", "must be at least 3");
        }
        if !(t.keyframe_translation > 0.0) {
            return bad("keyframe_translation", "must be positive");
        }
        if !(t.keyframe_rotation > 0.0 && t.keyframe_rotation < std::f64::consts::PI) {
            return bad("keyframe_rotation_deg", "must lie in (0, 180)");
        }
        if self.memory_stm == 0 {
            return bad("stm_capacity", "must be positive");
        }
        if self.memory_wm == 0 {
            return bad("wm_capacity", "must be positive");
        }
        if !unit(self.loop_threshold) {
            return bad("loop_threshold", "must lie in (0, 1)");
        }
        if !unit(self.transition.stay) {
            return bad("transition_stay", "must lie in (0, 1)");
        }
        if !(self.transition.self_share > 0.0 && self.transition.self_share <= 1.0) {
            return bad("transition_self_share", "must lie in (0, 1]");
        }
        if self.lm.max_iters == 0 {
            return bad("lm_max_iters", "must be positive");
        }
        if !(self.lm.lambda0 > 0.0) {
            return bad("lm_lambda0", "must be positive");
        }
        if !(self.lm.tol_dchi2 >= 0.0) {
            return bad("lm_tol_dchi2", "must be non-negative");
        }
        if !(self.lm.huber_delta > 0.0) {
            return bad("huber_delta", "must be positive");
        }
        if !(self.voxel_size >= 0.0) {
            return bad("voxel_size", "must be non-negative (0 keeps every point)");
        }
        if self.cloud_stride == 0 {
            return bad("cloud_stride", "must be positive");
        }
        if self.localize_top_k == 0 {
            return bad("localize_top_k", "must be positive");
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            c.set(key, value).map_err(err)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl fmt::Display for SlamConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
