//! Observation pre-processing: temporal stacking, δ-sampled assembling,
//! tiling and sliding-window construction, plus the stale-update resampler
//! used for observation-frequency ablations.

mod assemble;
mod normalize;
mod stack;
mod tiling;
mod windows;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use assemble::{assemble, AssembledSequence, BANDS, OPT_BANDS, SAR_BANDS};
pub use normalize::{compute_manifest, normalize, BandRange, NormalizationManifest};
pub use stack::{stale_resample, temporal_stack};
pub use tiling::{tile_scene, TileLayout, TileSequence, TilingMode};
pub use windows::{build_tile_windows, build_windows, Window, WindowSet};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// A step length in whole days, or the "never update" sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Days(u32),
    Infinite,
}

impl Step {
    pub fn seconds(self) -> Option<i64> {
        match self {
            Step::Days(d) => Some(d as i64 * SECONDS_PER_DAY),
            Step::Infinite => None,
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Days(d) => write!(f, "{d}"),
            Step::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s == "∞" || s.eq_ignore_ascii_case("infinity") {
            return Ok(Step::Infinite);
        }
        match s.parse::<u32>() {
            Ok(d) if d >= 1 => Ok(Step::Days(d)),
            _ => Err(Error::InvalidParams(format!("step '{s}' must be a positive day count or 'inf'"))),
        }
    }
}

impl Serialize for Step {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Step::Days(d) => serializer.serialize_u32(*d),
            Step::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Step {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Days(u32),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Days(0) => Err(serde::de::Error::custom("step must be at least one day")),
            Raw::Days(d) => Ok(Step::Days(d)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Sampling, window and tile parameters of the data pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    /// Assembling step δ in days.
    pub step_days: u32,
    /// Window period Δ in days.
    pub window_days: u32,
    /// Minimum frames per window (ω); shorter windows are discarded.
    pub min_window: usize,
    /// Maximum frames per window (Ω).
    pub max_window: usize,
    /// Window stride ρ in assembled frames.
    pub stride: usize,
    pub tile_width: usize,
    pub tile_height: usize,
    /// Shared pixels between neighbouring inference tiles.
    pub overlap: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            step_days: 2,
            window_days: 183,
            min_window: 35,
            max_window: 92,
            stride: 1,
            tile_width: 32,
            tile_height: 32,
            overlap: 0,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.step_days < 1 {
            return fail("step_days must be >= 1");
        }
        if self.window_days < 1 {
            return fail("window_days must be >= 1");
        }
        if self.min_window > self.max_window {
            return fail("min_window must not exceed max_window");
        }
        if self.max_window == 0 {
            return fail("max_window must be positive");
        }
        if self.stride < 1 {
            return fail("stride must be >= 1");
        }
        if self.tile_width < 3 || self.tile_height < 3 {
            return fail("tiles must be at least 3x3");
        }
        if self.overlap >= self.tile_width.min(self.tile_height) {
            return fail("overlap must be smaller than the tile");
        }
        Ok(())
    }

    /// Upper bound ⌈Δ/δ⌉ on frames per window implied by the sampling.
    pub fn implied_max_window(&self) -> usize {
        (self.window_days as usize).div_ceil(self.step_days as usize)
    }
}
