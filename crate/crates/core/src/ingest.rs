//! Observation bundles: reading, writing and validating per-mode raster series.
//!
//! A bundle is a directory with `scene.json`, `manifest.json` and one raw
//! raster file per observation (plus a mask file for optical observations).

use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};
use crate::raster::{read_f32, read_u8, write_f32, write_u8};

/// Observation modes. SAR orbit directions are distinct modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "SAR_ASC")]
    SarAsc,
    #[serde(rename = "SAR_DSC")]
    SarDsc,
    #[serde(rename = "OPT")]
    Opt,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::SarAsc, Mode::SarDsc, Mode::Opt];

    /// VV+VH for SAR, 13 spectral bands for optical.
    pub fn bands(self) -> usize {
        match self {
            Mode::SarAsc | Mode::SarDsc => 2,
            Mode::Opt => 13,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Mode::SarAsc => 0,
            Mode::SarDsc => 1,
            Mode::Opt => 2,
        }
    }

    pub fn is_sar(self) -> bool {
        !matches!(self, Mode::Opt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SarAsc => "SAR_ASC",
            Mode::SarDsc => "SAR_DSC",
            Mode::Opt => "OPT",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mode: Mode,
    pub timestamp: DateTime<Utc>,
    /// `[bands][H][W]`.
    pub data: Vec<f32>,
    /// Per-pixel validity (1 = valid); present for optical observations only.
    pub mask: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub crs: String,
    #[serde(default)]
    pub bounds: String,
}

impl SceneMeta {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            crs: String::new(),
            bounds: String::new(),
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Per-mode chronologically sorted observation lists over one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub scene: SceneMeta,
    pub sar_asc: Vec<Observation>,
    pub sar_dsc: Vec<Observation>,
    pub opt: Vec<Observation>,
}

impl ObservationSeries {
    pub fn empty(scene: SceneMeta) -> Self {
        Self {
            scene,
            sar_asc: Vec::new(),
            sar_dsc: Vec::new(),
            opt: Vec::new(),
        }
    }

    pub fn mode(&self, mode: Mode) -> &[Observation] {
        match mode {
            Mode::SarAsc => &self.sar_asc,
            Mode::SarDsc => &self.sar_dsc,
            Mode::Opt => &self.opt,
        }
    }

    pub fn mode_mut(&mut self, mode: Mode) -> &mut Vec<Observation> {
        match mode {
            Mode::SarAsc => &mut self.sar_asc,
            Mode::SarDsc => &mut self.sar_dsc,
            Mode::Opt => &mut self.opt,
        }
    }

    /// Appends an observation to its mode list (no sorting).
    pub fn push(&mut self, obs: Observation) {
        self.mode_mut(obs.mode).push(obs);
    }

    pub fn len(&self) -> usize {
        self.sar_asc.len() + self.sar_dsc.len() + self.opt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sort(&mut self) {
        for mode in Mode::ALL {
            self.mode_mut(mode).sort_by_key(|o| o.timestamp);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    BandCount,
    MissingMask,
    UnexpectedMask,
    ShapeMismatch,
    MaskValue,
    NonFinite,
    NonMonotonicTimestamp,
    ModeMismatch,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::BandCount => "band-count violation",
            Rule::MissingMask => "missing mask",
            Rule::UnexpectedMask => "unexpected mask on SAR observation",
            Rule::ShapeMismatch => "shape mismatch",
            Rule::MaskValue => "mask value outside {0,1}",
            Rule::NonFinite => "non-finite value",
            Rule::NonMonotonicTimestamp => "non-monotonic timestamp",
            Rule::ModeMismatch => "observation filed under the wrong mode",
        }
    }
}

/// One violated invariant, naming mode, observation index and rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub mode: Mode,
    pub index: usize,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]: {}", self.mode, self.index, self.rule.describe())?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

pub fn validate_series(series: &ObservationSeries) -> Vec<Finding> {
    let mut findings = Vec::new();
    let pixels = series.scene.pixels();
    for mode in Mode::ALL {
        let mut push = |index: usize, rule: Rule, detail: String| {
            findings.push(Finding { mode, index, rule, detail })
        };
        let list = series.mode(mode);
        for (index, obs) in list.iter().enumerate() {
            if obs.mode != mode {
                push(index, Rule::ModeMismatch, format!("tagged {}", obs.mode));
            }
            let bands = obs.mode.bands();
            if obs.data.len() % pixels.max(1) != 0 || obs.data.len() / pixels.max(1) != bands {
                if pixels > 0 && obs.data.len() % pixels == 0 {
                    push(
                        index,
                        Rule::BandCount,
                        format!("{} bands, expected {bands}", obs.data.len() / pixels),
                    );
                } else {
                    push(
                        index,
                        Rule::ShapeMismatch,
                        format!("{} values for a {}x{} scene", obs.data.len(), series.scene.height, series.scene.width),
                    );
                }
            }
            match (&obs.mask, obs.mode) {
                (None, Mode::Opt) => push(index, Rule::MissingMask, String::new()),
                (Some(_), m) if m.is_sar() => push(index, Rule::UnexpectedMask, String::new()),
                (Some(mask), _) => {
                    if mask.len() != pixels {
                        push(index, Rule::ShapeMismatch, format!("mask of {} pixels", mask.len()));
                    } else if mask.iter().any(|&v| v > 1) {
                        push(index, Rule::MaskValue, String::new());
                    }
                }
                (None, _) => {}
            }
            if let Some(pos) = obs.data.iter().position(|v| !v.is_finite()) {
                push(index, Rule::NonFinite, format!("value index {pos}"));
            }
            if index > 0 && list[index - 1].timestamp >= obs.timestamp {
                push(
                    index,
                    Rule::NonMonotonicTimestamp,
                    format!("{} follows {}", format_ts(&obs.timestamp), format_ts(&list[index - 1].timestamp)),
                );
            }
        }
    }
    findings
}

pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRecord {
    mode: Mode,
    timestamp: String,
    data_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_path: Option<String>,
}

/// Reads and validates a bundle; observations are sorted per mode by timestamp.
pub fn read_bundle(root: &Path) -> Result<ObservationSeries> {
    let scene_path = root.join("scene.json");
    let scene: SceneMeta = read_json(&scene_path)?;
    let manifest_path = root.join("manifest.json");
    let records: Vec<ManifestRecord> = read_json(&manifest_path)?;

    let mut series = ObservationSeries::empty(scene);
    let pixels = series.scene.pixels();
    for rec in records {
        let timestamp = DateTime::parse_from_rfc3339(&rec.timestamp)
            .map_err(|e| Error::Manifest(format!("bad timestamp '{}': {e}", rec.timestamp)))?
            .with_timezone(&Utc);
        let data = read_f32(&root.join(&rec.data_path), rec.mode.bands() * pixels)?;
        let mask = match &rec.mask_path {
            Some(p) => Some(read_u8(&root.join(p), pixels)?),
            None => None,
        };
        series.push(Observation {
            mode: rec.mode,
            timestamp,
            data,
            mask,
        });
    }
    series.sort();
    let findings = validate_series(&series);
    if !findings.is_empty() {
        return Err(Error::InvalidSeries(findings));
    }
    Ok(series)
}

pub fn write_bundle(series: &ObservationSeries, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    write_json(&root.join("scene.json"), &series.scene)?;
    let mut records = Vec::with_capacity(series.len());
    for mode in Mode::ALL {
        for (i, obs) in series.mode(mode).iter().enumerate() {
            let stem = format!("rasters/{}_{i:05}", mode.as_str().to_ascii_lowercase());
            let data_path = format!("{stem}.f32");
            write_f32(&root.join(&data_path), &obs.data)?;
            let mask_path = match &obs.mask {
                Some(mask) => {
                    let p = format!("{stem}.mask");
                    write_u8(&root.join(&p), mask)?;
                    Some(p)
                }
                None => None,
            };
            records.push(ManifestRecord {
                mode,
                timestamp: format_ts(&obs.timestamp),
                data_path,
                mask_path,
            });
        }
    }
    write_json(&root.join("manifest.json"), &records)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}
