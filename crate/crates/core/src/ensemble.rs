//! Monitoring-phase predictions: per-variant maximum over all sliding
//! windows and the geometric-mean combination of variants.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_json, write_json};
use crate::model::{ModelParams, Network, WindowTensor};
use crate::pipeline::{AssembledSequence, WindowSet};
use crate::raster::{Raster, TileCoord};

/// Model name used for the combined prediction in manifests.
pub const COMBINED: &str = "combined";

#[derive(Debug, Clone, PartialEq)]
pub struct VariantPrediction {
    pub model: String,
    pub coord: TileCoord,
    pub raster: Raster,
    pub windows: usize,
}

/// Inference-mode predictions of every window, in window order.
pub fn predict_windows(params: &ModelParams, sequence: &AssembledSequence, windows: &WindowSet) -> Result<Vec<Raster>> {
    let net = Network::<f32>::from_params(params)?;
    windows
        .windows
        .par_iter()
        .map(|w| net.predict(&WindowTensor::from_window(sequence, w, None)))
        .collect()
}

/// Element-wise maximum of the forward outputs over all windows.
pub fn predict_variant(params: &ModelParams, sequence: &AssembledSequence, windows: &WindowSet) -> Result<Raster> {
    if windows.is_empty() {
        return Err(Error::Empty(format!("tile {} has no windows to predict", windows.coord)));
    }
    let preds = predict_windows(params, sequence, windows)?;
    Ok(elementwise_max(&preds))
}

pub(crate) fn elementwise_max(preds: &[Raster]) -> Raster {
    let mut out = preds[0].clone();
    for p in &preds[1..] {
        for (o, &v) in out.data.iter_mut().zip(&p.data) {
            *o = o.max(v);
        }
    }
    out
}

/// Element-wise n-th root of the product of `n` predictions.
pub fn combine_variants(preds: &[Raster]) -> Result<Raster> {
    let first = preds
        .first()
        .ok_or_else(|| Error::Empty("no variant predictions to combine".into()))?;
    if preds.iter().any(|p| !p.same_shape(first)) {
        return Err(Error::Shape("variant predictions differ in shape".into()));
    }
    let inv = 1.0 / preds.len() as f64;
    let data = (0..first.data.len())
        .map(|k| {
            let product: f64 = preds.iter().map(|p| f64::from(p.data[k])).product();
            product.powf(inv) as f32
        })
        .collect();
    Ok(Raster {
        height: first.height,
        width: first.width,
        data,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    model: String,
    tile_y: usize,
    tile_x: usize,
    path: String,
    height: usize,
    width: usize,
    #[serde(default)]
    windows: usize,
}

/// Writes rasters under `dir/tiles/` and the `predictions.json` manifest.
pub fn write_predictions(dir: &Path, preds: &[VariantPrediction]) -> Result<()> {
    let mut records = Vec::with_capacity(preds.len());
    for p in preds {
        let rel = format!("tiles/{}_{}_{}.f32", p.model, p.coord.row, p.coord.col);
        p.raster.write(&dir.join(&rel))?;
        records.push(PredictionRecord {
            model: p.model.clone(),
            tile_y: p.coord.row,
            tile_x: p.coord.col,
            path: rel,
            height: p.raster.height,
            width: p.raster.width,
            windows: p.windows,
        });
    }
    write_json(&dir.join("predictions.json"), &records)
}

/// Reads a `predictions.json` manifest (or a directory holding one).
pub fn read_predictions(path: &Path) -> Result<Vec<VariantPrediction>> {
    let manifest = if path.is_dir() { path.join("predictions.json") } else { path.to_path_buf() };
    let root = manifest.parent().unwrap_or(Path::new("."));
    let records: Vec<PredictionRecord> = read_json(&manifest)?;
    records
        .into_iter()
        .map(|r| {
            Ok(VariantPrediction {
                raster: Raster::read(&root.join(&r.path), r.height, r.width)?,
                model: r.model,
                coord: TileCoord::new(r.tile_y, r.tile_x),
                windows: r.windows,
            })
        })
        .collect()
}
