//! Observation-frequency ablation: stale resampling of one or both mode
//! groups, evaluated through the full predict and score chain.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::ensemble::{combine_variants, predict_variant, COMBINED};
use crate::error::{io_err, Error, Result};
use crate::eval::{score_dataset, ScoreBundle};
use crate::ingest::ObservationSeries;
use crate::model::ModelParams;
use crate::pipeline::{stale_resample, NormalizationManifest, PipelineParams, Step, TilingMode};
use crate::raster::{Raster, TileCoord};
use crate::transfer::{prepare_tiles, LabeledTile, PreparedScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModeAxis {
    #[serde(rename = "SAR")]
    Sar,
    #[serde(rename = "OPT")]
    Opt,
    #[serde(rename = "both")]
    Both,
}

impl ModeAxis {
    pub const ALL: [ModeAxis; 3] = [ModeAxis::Sar, ModeAxis::Opt, ModeAxis::Both];

    /// Per-group steps `(sar, opt)` for an ablation step `delta`.
    pub fn steps(self, delta: Step, native: Step) -> (Step, Step) {
        match self {
            ModeAxis::Sar => (delta, native),
            ModeAxis::Opt => (native, delta),
            ModeAxis::Both => (delta, delta),
        }
    }
}

impl fmt::Display for ModeAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeAxis::Sar => "SAR",
            ModeAxis::Opt => "OPT",
            ModeAxis::Both => "both",
        })
    }
}

impl FromStr for ModeAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sar" => Ok(ModeAxis::Sar),
            "opt" => Ok(ModeAxis::Opt),
            "both" => Ok(ModeAxis::Both),
            _ => Err(Error::InvalidParams(format!("unknown mode axis '{s}' (expected SAR, OPT or both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub delta_values: Vec<Step>,
    pub mode_axes: Vec<ModeAxis>,
    /// Score the geometric-mean combination alongside the individual models.
    #[serde(default = "yes")]
    pub combined: bool,
}

fn yes() -> bool {
    true
}

impl AblationGrid {
    /// Steps used on the training and validation tiles.
    pub fn trainval() -> Self {
        Self {
            delta_values: vec![Step::Days(120), Step::Days(600), Step::Infinite],
            mode_axes: ModeAxis::ALL.to_vec(),
            combined: true,
        }
    }

    /// Steps used on the testing tiles.
    pub fn testing() -> Self {
        Self {
            delta_values: vec![Step::Days(120), Step::Infinite],
            ..Self::trainval()
        }
    }

    /// All cells in evaluation order; `(both, native)` always comes first.
    pub fn cells(&self, native: Step) -> Vec<(ModeAxis, Step)> {
        let mut cells = vec![(ModeAxis::Both, native)];
        for &axis in &self.mode_axes {
            for &delta in &self.delta_values {
                let cell = if delta == native { (ModeAxis::Both, native) } else { (axis, delta) };
                if !cells.contains(&cell) {
                    cells.push(cell);
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct NamedModel {
    pub name: String,
    pub params: ModelParams,
}

/// Everything a cell needs besides the models.
#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub series: &'a ObservationSeries,
    pub params: &'a PipelineParams,
    /// Reused for every cell so that only the observations change.
    pub manifest: &'a NormalizationManifest,
    pub labels: &'a [LabeledTile],
    pub dataset: &'a str,
    pub center_crop: usize,
    pub exclude: &'a [TileCoord],
    pub tiling: TilingMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub mode_axis: ModeAxis,
    pub delta: Step,
    pub scores: Vec<ScoreBundle>,
    /// Per scored tile, the frame count of every window.
    pub window_sizes: Vec<(TileCoord, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode_axis: ModeAxis,
    pub delta_days: Step,
    pub model: String,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub kappa_max: f64,
    pub kappa_argmax: f64,
}

fn window_sizes(scene: &PreparedScene, coords: &[TileCoord]) -> Result<Vec<(TileCoord, Vec<usize>)>> {
    coords
        .iter()
        .map(|&c| {
            let tile = scene
                .tile(c)
                .ok_or_else(|| Error::Manifest(format!("tile {c} is not part of the scene")))?;
            Ok((c, tile.windows.windows.iter().map(|w| w.len()).collect()))
        })
        .collect()
}

/// Predicts and scores every model (and optionally their combination) on
/// one prepared scene.
pub fn score_scene(
    scene: &PreparedScene,
    models: &[NamedModel],
    data: &AblationData<'_>,
    combined: bool,
) -> Result<Vec<ScoreBundle>> {
    let coords = scored_coords(data);
    let mut per_model: Vec<Vec<(TileCoord, Raster)>> = Vec::with_capacity(models.len());
    for m in models {
        let preds = coords
            .iter()
            .map(|&c| {
                let tile = scene
                    .tile(c)
                    .ok_or_else(|| Error::Manifest(format!("tile {c} is not part of the scene")))?;
                Ok((c, predict_variant(&m.params, &tile.sequence, &tile.windows)?))
            })
            .collect::<Result<Vec<_>>>()?;
        per_model.push(preds);
    }
    let mut scores = Vec::with_capacity(models.len() + 1);
    for (m, preds) in models.iter().zip(&per_model) {
        scores.push(score_dataset(&m.name, data.dataset, preds, data.labels, data.center_crop, data.exclude)?);
    }
    if combined && !models.is_empty() {
        let combined_preds = coords
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let rasters: Vec<Raster> = per_model.iter().map(|p| p[i].1.clone()).collect();
                Ok((c, combine_variants(&rasters)?))
            })
            .collect::<Result<Vec<_>>>()?;
        scores.push(score_dataset(COMBINED, data.dataset, &combined_preds, data.labels, data.center_crop, data.exclude)?);
    }
    Ok(scores)
}

fn scored_coords(data: &AblationData<'_>) -> Vec<TileCoord> {
    let mut coords: Vec<TileCoord> = data
        .labels
        .iter()
        .map(|l| l.coord)
        .filter(|c| !data.exclude.contains(c))
        .collect();
    coords.sort();
    coords
}

/// Runs every cell of the grid. Fails if any cell changes the number or
/// size of windows relative to the `(both, native)` reference.
pub fn run_ablation(grid: &AblationGrid, data: &AblationData<'_>, models: &[NamedModel]) -> Result<Vec<AblationCell>> {
    if models.is_empty() {
        return Err(Error::Empty("ablation needs at least one model".into()));
    }
    let native = Step::Days(data.params.step_days);
    let coords = scored_coords(data);
    let mut cells: Vec<AblationCell> = Vec::new();
    for (axis, delta) in grid.cells(native) {
        let (sar, opt) = axis.steps(delta, native);
        let resampled = stale_resample(data.series, sar, opt);
        let scene = prepare_tiles(&resampled, data.params, Some(data.manifest), data.tiling)?;
        drop(resampled);
        let sizes = window_sizes(&scene, &coords)?;
        if let Some(reference) = cells.first() {
            if sizes != reference.window_sizes {
                return Err(Error::Context(format!(
                    "cell ({axis}, {delta}) changes the window layout of the reference"
                )));
            }
        }
        let scores = score_scene(&scene, models, data, grid.combined)?;
        for s in &scores {
            info!("ablation ({axis}, {delta}) {}: roc auc {:.4}", s.summary.model, s.summary.roc_auc);
        }
        cells.push(AblationCell {
            mode_axis: axis,
            delta,
            scores,
            window_sizes: sizes,
        });
    }
    Ok(cells)
}

pub fn ablation_rows(cells: &[AblationCell]) -> Vec<AblationRow> {
    cells
        .iter()
        .flat_map(|c| {
            c.scores.iter().map(move |s| AblationRow {
                mode_axis: c.mode_axis,
                delta_days: c.delta,
                model: s.summary.model.clone(),
                roc_auc: s.summary.roc_auc,
                pr_auc: s.summary.pr_auc,
                kappa_max: s.summary.kappa_max,
                kappa_argmax: s.summary.kappa_argmax_threshold,
            })
        })
        .collect()
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut s = String::from("mode_axis,delta_days,model,roc_auc,pr_auc,kappa_max,kappa_argmax\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode_axis, r.delta_days, r.model, r.roc_auc, r.pr_auc, r.kappa_max, r.kappa_argmax
        ));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, s).map_err(io_err(path))
}
