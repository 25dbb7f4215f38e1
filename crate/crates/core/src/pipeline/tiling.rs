use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{crop_plane, Raster, TileCoord};

use super::{AssembledSequence, PipelineParams, BANDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TilingMode {
    /// Non-overlapping tiles; trailing partial tiles are dropped.
    Training,
    /// Overlapping tiles covering the whole scene; tiles running past the
    /// scene edge are zero-padded.
    Inference,
}

/// Tile origins along both axes and the crop rules for reassembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLayout {
    pub scene_height: usize,
    pub scene_width: usize,
    pub tile_height: usize,
    pub tile_width: usize,
    pub overlap: usize,
    pub mode: TilingMode,
    pub row_origins: Vec<usize>,
    pub col_origins: Vec<usize>,
}

fn training_origins(scene: usize, tile: usize) -> Vec<usize> {
    (0..scene / tile).map(|k| k * tile).collect()
}

fn inference_origins(scene: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let step = tile - overlap;
    let mut origins = vec![0];
    while origins.last().unwrap() + tile < scene {
        let next = origins.last().unwrap() + step;
        origins.push(next);
    }
    origins
}

/// Half-open span of scene coordinates that tile `k` contributes on one axis.
fn contribution(origins: &[usize], k: usize, tile: usize, overlap: usize, scene: usize, mode: TilingMode) -> (usize, usize) {
    match mode {
        TilingMode::Training => (origins[k], origins[k] + tile),
        TilingMode::Inference => {
            let start = if k == 0 { 0 } else { origins[k] + overlap / 2 };
            let end = if k + 1 == origins.len() {
                scene
            } else {
                origins[k + 1] + overlap / 2
            };
            (start, end)
        }
    }
}

impl TileLayout {
    pub fn new(scene_height: usize, scene_width: usize, params: &PipelineParams, mode: TilingMode) -> Result<Self> {
        let (th, tw) = (params.tile_height, params.tile_width);
        if th > scene_height || tw > scene_width {
            return Err(Error::TileTooLarge {
                tile_h: th,
                tile_w: tw,
                scene_h: scene_height,
                scene_w: scene_width,
            });
        }
        if th == 0 || tw == 0 {
            return Err(Error::InvalidParams("tile extent must be positive".into()));
        }
        let overlap = match mode {
            TilingMode::Training => 0,
            TilingMode::Inference => {
                if params.overlap >= th.min(tw) {
                    return Err(Error::InvalidParams("overlap must be smaller than the tile".into()));
                }
                params.overlap
            }
        };
        let (row_origins, col_origins) = match mode {
            TilingMode::Training => (training_origins(scene_height, th), training_origins(scene_width, tw)),
            TilingMode::Inference => (
                inference_origins(scene_height, th, overlap),
                inference_origins(scene_width, tw, overlap),
            ),
        };
        Ok(Self {
            scene_height,
            scene_width,
            tile_height: th,
            tile_width: tw,
            overlap,
            mode,
            row_origins,
            col_origins,
        })
    }

    pub fn rows(&self) -> usize {
        self.row_origins.len()
    }

    pub fn cols(&self) -> usize {
        self.col_origins.len()
    }

    pub fn coords(&self) -> Vec<TileCoord> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                out.push(TileCoord::new(r, c));
            }
        }
        out
    }

    pub fn origin(&self, coord: TileCoord) -> (usize, usize) {
        (self.row_origins[coord.row], self.col_origins[coord.col])
    }

    /// Extent of the reassembled raster: the full scene for inference, the
    /// covered (cropped) area for training tiles.
    pub fn mosaic_extent(&self) -> (usize, usize) {
        match self.mode {
            TilingMode::Training => (self.rows() * self.tile_height, self.cols() * self.tile_width),
            TilingMode::Inference => (self.scene_height, self.scene_width),
        }
    }

    /// Scene rectangle `(y0, y1, x0, x1)` a tile writes into the mosaic.
    pub fn contribution(&self, coord: TileCoord) -> (usize, usize, usize, usize) {
        let (y0, y1) = contribution(&self.row_origins, coord.row, self.tile_height, self.overlap, self.scene_height, self.mode);
        let (x0, x1) = contribution(&self.col_origins, coord.col, self.tile_width, self.overlap, self.scene_width, self.mode);
        (y0, y1, x0, x1)
    }

    /// Crops a single-band scene raster into this layout's tile at `coord`.
    pub fn crop(&self, scene: &Raster, coord: TileCoord) -> Raster {
        let (y, x) = self.origin(coord);
        Raster {
            height: self.tile_height,
            width: self.tile_width,
            data: crop_plane(&scene.data, scene.height, scene.width, y as isize, x as isize, self.tile_height, self.tile_width),
        }
    }

    /// Reassembles per-tile rasters; overlap margins are cropped so every
    /// mosaic pixel is written by exactly one tile.
    pub fn mosaic(&self, tiles: &[(TileCoord, Raster)]) -> Result<Raster> {
        let (h, w) = self.mosaic_extent();
        let mut out = Raster::zeros(h, w);
        for (coord, tile) in tiles {
            if coord.row >= self.rows() || coord.col >= self.cols() {
                return Err(Error::Shape(format!("tile {coord} outside the layout")));
            }
            if tile.height != self.tile_height || tile.width != self.tile_width {
                return Err(Error::Shape(format!(
                    "tile {coord} is {}x{}, layout expects {}x{}",
                    tile.height, tile.width, self.tile_height, self.tile_width
                )));
            }
            let (oy, ox) = self.origin(*coord);
            let (y0, y1, x0, x1) = self.contribution(*coord);
            for y in y0..y1 {
                for x in x0..x1 {
                    out.set(y, x, tile.get(y - oy, x - ox));
                }
            }
        }
        Ok(out)
    }
}

/// An assembled sequence restricted to one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSequence {
    pub coord: TileCoord,
    pub origin: (usize, usize),
    pub sequence: AssembledSequence,
}

/// Splits an assembled scene into per-tile sequences following `mode`.
pub fn tile_scene(
    scene: &AssembledSequence,
    params: &PipelineParams,
    mode: TilingMode,
) -> Result<(TileLayout, Vec<TileSequence>)> {
    let layout = TileLayout::new(scene.height, scene.width, params, mode)?;
    let tiles = layout
        .coords()
        .into_iter()
        .map(|coord| crop_tile(scene, &layout, coord))
        .collect();
    Ok((layout, tiles))
}

pub(crate) fn crop_tile(scene: &AssembledSequence, layout: &TileLayout, coord: TileCoord) -> TileSequence {
    let (y, x) = layout.origin(coord);
    let (th, tw) = (layout.tile_height, layout.tile_width);
    let pixels = scene.pixels();
    let frames = scene
        .frames
        .iter()
        .map(|frame| {
            let mut out = Vec::with_capacity(BANDS * th * tw);
            for b in 0..BANDS {
                out.extend(crop_plane(
                    &frame[b * pixels..(b + 1) * pixels],
                    scene.height,
                    scene.width,
                    y as isize,
                    x as isize,
                    th,
                    tw,
                ));
            }
            out
        })
        .collect();
    TileSequence {
        coord,
        origin: (y, x),
        sequence: AssembledSequence {
            height: th,
            width: tw,
            timestamps: scene.timestamps.clone(),
            frames,
            novelty: scene.novelty.clone(),
        },
    }
}
