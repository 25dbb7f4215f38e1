use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::model::{init_params, save_checkpoint, Gradients, ModelParams, Network, RunMode, WindowTensor};
use crate::pipeline::Window;
use crate::raster::{Raster, TileCoord};

use super::augment::{augment_raster, augment_window, AugmentTag};
use super::data::{LabeledTile, PreparedScene, TileSample};
use super::folds::FoldSplit;
use super::loss::{max_pool_over_time, tanimoto_complement_loss};
use super::select::select_windows;
use super::{derive_seed, TransferConfig};

const VALIDATION_STREAM: u64 = 0x5641_4c49_4441_5445;

/// SGD with momentum: `v <- m·v - α·g`, `θ <- θ + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f32,
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(learning_rate: f32, momentum: f32, params: &ModelParams) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: params.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients<f32>) {
        for ((t, v), g) in params.tensors.iter_mut().zip(&mut self.velocity).zip(&grads.tensors) {
            for ((theta, vel), &grad) in t.data.iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = self.momentum * *vel - self.learning_rate * grad;
                *theta += *vel;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub fold: FoldSplit,
    /// Parameters after the epoch with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub trace: Vec<EpochRecord>,
}

/// Loss of one tile on a center crop and, for training, its gradient.
struct TileStep {
    loss: f64,
    grads: Option<Gradients<f32>>,
}

fn crop_offsets(h: usize, w: usize, crop: usize) -> (usize, usize) {
    ((h - crop) / 2, (w - crop) / 2)
}

#[allow(clippy::too_many_arguments)]
fn tile_step(
    net: &Network<f32>,
    sample: &TileSample,
    label: &Raster,
    windows: &[Window],
    tag: AugmentTag,
    dropout_base: Option<u64>,
    crop: usize,
) -> Result<TileStep> {
    let tensors: Vec<WindowTensor> = windows
        .iter()
        .map(|w| {
            let t = WindowTensor::from_window(&sample.sequence, w, None);
            if tag == AugmentTag::IDENTITY {
                t
            } else {
                augment_window(&t, tag)
            }
        })
        .collect();
    let label = augment_raster(label, tag.spatial());
    let mut contexts = Vec::with_capacity(tensors.len());
    for (k, t) in tensors.iter().enumerate() {
        let mode = match dropout_base {
            Some(seed) => RunMode::Training { dropout_seed: derive_seed(seed, &[k as u64]) },
            None => RunMode::Inference,
        };
        contexts.push(net.forward(t, mode)?);
    }
    let rasters: Vec<Raster> = contexts.iter().map(|c| c.to_raster()).collect();
    let pooled = max_pool_over_time(&rasters)?;
    if !pooled.raster.same_shape(&label) {
        return Err(Error::Shape(format!(
            "label of tile {} is {}x{}, prediction {}x{}",
            sample.coord, label.height, label.width, pooled.raster.height, pooled.raster.width
        )));
    }
    let (h, w) = (label.height, label.width);
    let (y0, x0) = crop_offsets(h, w, crop);
    let mut pred = Vec::with_capacity(crop * crop);
    let mut truth = Vec::with_capacity(crop * crop);
    for r in y0..y0 + crop {
        for c in x0..x0 + crop {
            pred.push(f64::from(pooled.raster.get(r, c)));
            truth.push(f64::from(label.get(r, c)));
        }
    }
    let (loss, dcrop) = tanimoto_complement_loss(&pred, &truth)?;
    if dropout_base.is_none() {
        return Ok(TileStep { loss, grads: None });
    }
    let mut dfull = vec![0.0f32; h * w];
    for r in 0..crop {
        for c in 0..crop {
            dfull[(y0 + r) * w + x0 + c] = dcrop[r * crop + c] as f32;
        }
    }
    let mut total: Option<Gradients<f32>> = None;
    for (k, ctx) in contexts.iter().enumerate() {
        let routed = pooled.route(&dfull, k);
        if routed.iter().all(|&g| g == 0.0) {
            continue;
        }
        let g = net.backward(ctx, &routed)?;
        match &mut total {
            Some(t) => t.add(&g),
            None => total = Some(g),
        }
    }
    let grads = total.unwrap_or_else(|| Gradients {
        tensors: Vec::new(),
    });
    Ok(TileStep { loss, grads: Some(grads) })
}

fn resolve<'a>(
    coords: &[TileCoord],
    scene: &'a PreparedScene,
    labels: &'a [LabeledTile],
) -> Result<Vec<(&'a TileSample, &'a Raster)>> {
    coords
        .iter()
        .map(|c| {
            let sample = scene
                .tile(*c)
                .ok_or_else(|| Error::Manifest(format!("tile {c} is not part of the prepared scene")))?;
            let label = labels
                .iter()
                .find(|l| l.coord == *c)
                .ok_or_else(|| Error::Manifest(format!("tile {c} has no label")))?;
            Ok((sample, &label.label))
        })
        .collect()
}

fn tile_seed(base: u64, variant: usize, coord: TileCoord, epoch: u64) -> u64 {
    derive_seed(base, &[variant as u64, coord.row as u64, coord.col as u64, epoch])
}

/// Trains one variant on its fold and keeps the parameters of the epoch
/// with minimal validation loss. `init` defaults to a seeded random init.
pub fn train_variant(
    fold: &FoldSplit,
    scene: &PreparedScene,
    labels: &[LabeledTile],
    config: &TransferConfig,
    init: Option<ModelParams>,
) -> Result<TrainedVariant> {
    config.validate(scene.layout.tile_height, scene.layout.tile_width)?;
    let train = resolve(&fold.train, scene, labels)?;
    let validation = resolve(&fold.validation, scene, labels)?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidParams(format!("fold V{} needs training and validation tiles", fold.variant)));
    }
    let mut params = init.unwrap_or_else(|| init_params(config.init_seed));
    params.check_layout()?;
    let mut sgd = Sgd::new(config.learning_rate, config.momentum, &params);

    // validation windows are fixed for the whole run
    let val_windows: Vec<Vec<Window>> = validation
        .iter()
        .map(|(s, _)| select_windows(&s.windows, config, tile_seed(config.rng_seed, 0, s.coord, VALIDATION_STREAM)))
        .collect::<Result<_>>()?;

    let mut trace = Vec::with_capacity(config.epochs_max);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for epoch in 1..=config.epochs_max {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            config.rng_seed,
            &[fold.variant as u64, epoch as u64],
        )));
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let net = Network::<f32>::from_params(&params)?;
            let steps: Vec<Result<TileStep>> = batch
                .par_iter()
                .map(|&i| {
                    let (sample, label) = train[i];
                    let seed = tile_seed(config.rng_seed, fold.variant, sample.coord, epoch as u64);
                    let windows = select_windows(&sample.windows, config, seed)?;
                    let tag = if config.augment {
                        AugmentTag::from_seed(derive_seed(seed, &[1]))
                    } else {
                        AugmentTag::IDENTITY
                    };
                    tile_step(&net, sample, label, &windows, tag, Some(derive_seed(seed, &[2])), config.center_crop)
                })
                .collect();
            let mut total = Gradients::<f32>::zeros_like(&params);
            for (step, &i) in steps.into_iter().zip(batch) {
                let step = step?;
                if !step.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite loss on tile {}", train[i].0.coord),
                    });
                }
                loss_sum += step.loss;
                if let Some(g) = step.grads.filter(|g| !g.tensors.is_empty()) {
                    total.add(&g);
                }
            }
            total.scale(1.0 / batch.len() as f32);
            if !total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            sgd.step(&mut params, &total);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite parameters after the update".into(),
                });
            }
        }
        let train_loss = loss_sum / train.len() as f64;

        let net = Network::<f32>::from_params(&params)?;
        let val_losses: Vec<Result<f64>> = validation
            .par_iter()
            .zip(&val_windows)
            .map(|((sample, label), windows)| {
                tile_step(&net, sample, label, windows, AugmentTag::IDENTITY, None, config.center_crop).map(|s| s.loss)
            })
            .collect();
        let mut val_sum = 0.0;
        for v in val_losses {
            val_sum += v?;
        }
        let val_loss = val_sum / validation.len() as f64;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite validation loss".into(),
            });
        }
        info!("V{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}", fold.variant);
        trace.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            debug!("V{} new best epoch {epoch}", fold.variant);
            best = Some((val_loss, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best_params) = best.ok_or_else(|| Error::InvalidParams("epochs_max must be positive".into()))?;
    Ok(TrainedVariant {
        fold: fold.clone(),
        best: best_params,
        best_epoch,
        last: params,
        trace,
    })
}

/// Writes `V{k}_trace.csv`, `V{k}_best/` and `V{k}_last/` into `dir`.
pub fn save_variant(dir: &Path, trained: &TrainedVariant) -> Result<()> {
    let k = trained.fold.variant;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for r in &trained.trace {
        let _ = writeln!(csv, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
    }
    let path = dir.join(format!("V{k}_trace.csv"));
    fs::write(&path, csv).map_err(io_err(&path))?;
    save_checkpoint(&trained.best, &dir.join(format!("V{k}_best")))?;
    save_checkpoint(&trained.last, &dir.join(format!("V{k}_last")))
}
