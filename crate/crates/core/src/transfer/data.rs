use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_json, write_json, ObservationSeries};
use crate::pipeline::{
    assemble, build_tile_windows, compute_manifest, normalize, temporal_stack, tile_scene, AssembledSequence,
    NormalizationManifest, PipelineParams, TileLayout, TilingMode, WindowSet,
};
use crate::raster::{Raster, TileCoord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Trainval,
    Testing,
}

/// Binary ground truth of one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTile {
    pub coord: TileCoord,
    pub label: Raster,
    pub dataset: Dataset,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    tile_y: usize,
    tile_x: usize,
    path: String,
    dataset: Dataset,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelManifest {
    tile_height: usize,
    tile_width: usize,
    tiles: Vec<LabelRecord>,
}

/// Writes `labels.json` and one raster per tile under `dir/labels/`.
pub fn write_labels(dir: &Path, tiles: &[LabeledTile]) -> Result<()> {
    let (tile_height, tile_width) = tiles.first().map_or((0, 0), |t| (t.label.height, t.label.width));
    let mut records = Vec::with_capacity(tiles.len());
    for t in tiles {
        if t.label.height != tile_height || t.label.width != tile_width {
            return Err(Error::Shape("label tiles differ in size".into()));
        }
        let rel = format!("labels/{}_{}.f32", t.coord.row, t.coord.col);
        t.label.write(&dir.join(&rel))?;
        records.push(LabelRecord {
            tile_y: t.coord.row,
            tile_x: t.coord.col,
            path: rel,
            dataset: t.dataset,
        });
    }
    write_json(
        &dir.join("labels.json"),
        &LabelManifest {
            tile_height,
            tile_width,
            tiles: records,
        },
    )
}

/// Reads a `labels.json` manifest; raster paths are relative to its directory.
pub fn read_labels(manifest: &Path) -> Result<Vec<LabeledTile>> {
    let m: LabelManifest = read_json(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    m.tiles
        .into_iter()
        .map(|r| {
            let label = Raster::read(&root.join(&r.path), m.tile_height, m.tile_width)?;
            if label.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Manifest(format!("label {} is not binary", r.path)));
            }
            Ok(LabeledTile {
                coord: TileCoord::new(r.tile_y, r.tile_x),
                label,
                dataset: r.dataset,
            })
        })
        .collect()
}

/// A normalized tile sequence with its sliding windows.
#[derive(Debug, Clone)]
pub struct TileSample {
    pub coord: TileCoord,
    pub sequence: AssembledSequence,
    pub windows: WindowSet,
}

#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub layout: TileLayout,
    pub manifest: NormalizationManifest,
    pub tiles: Vec<TileSample>,
}

impl PreparedScene {
    pub fn tile(&self, coord: TileCoord) -> Option<&TileSample> {
        self.tiles.iter().find(|t| t.coord == coord)
    }
}

/// Stack, assemble, normalize, tile and window a series. Without a manifest
/// one is computed over the whole assembled scene.
pub fn prepare_tiles(
    series: &ObservationSeries,
    params: &PipelineParams,
    manifest: Option<&NormalizationManifest>,
    mode: TilingMode,
) -> Result<PreparedScene> {
    params.validate()?;
    let assembled = assemble(&temporal_stack(series), params);
    if assembled.is_empty() {
        return Err(Error::Empty("the series has no observations".into()));
    }
    let manifest = match manifest {
        Some(m) => m.clone(),
        None => compute_manifest([&assembled]),
    };
    let normalized = normalize(&assembled, &manifest)?;
    drop(assembled);
    let (layout, tiles) = tile_scene(&normalized, params, mode)?;
    drop(normalized);
    let tiles = tiles
        .into_iter()
        .map(|t| TileSample {
            coord: t.coord,
            windows: build_tile_windows(&t, params),
            sequence: t.sequence,
        })
        .collect();
    Ok(PreparedScene { layout, manifest, tiles })
}
