use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use urbanmon::ablation::{ablation_rows, run_ablation, write_ablation_csv, AblationData, AblationGrid, NamedModel};
use urbanmon::ensemble::{combine_variants, predict_variant, predict_windows, read_predictions, write_predictions, VariantPrediction, COMBINED};
use urbanmon::eval::{score_dataset, write_scores};
use urbanmon::ingest::{format_ts, read_bundle, write_bundle, write_json, ObservationSeries};
use urbanmon::model::{init_with, load_checkpoint, param_count};
use urbanmon::pipeline::{assemble, compute_manifest, stale_resample, temporal_stack, Step, TilingMode};
use urbanmon::raster::TileCoord;
use urbanmon::synth::{generate_labels, generate_scene, ScenarioSpec};
use urbanmon::transfer::{make_folds, prepare_tiles, read_labels, save_variant, train_variant, write_labels, Dataset, LabeledTile, PreparedScene};
use urbanmon::Error;

use crate::{CliError, CliResult, Command, ConfigArgs, DatasetArg, ModelArg, Pixel, RunConfig};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth { spec, out, seed } => synth(spec.as_deref(), &out, seed),
        Command::Stack { cfg, out, sar_step, opt_step } => stack(&resolve(&cfg)?, &out, sar_step, opt_step),
        Command::Windows { cfg, out } => windows(&resolve(&cfg)?, &out),
        Command::Transfer { cfg, variant } => transfer(&resolve(&cfg)?, variant),
        Command::Predict { cfg, models, dataset, out } => predict(&resolve(&cfg)?, &models, dataset, out),
        Command::Combine { pred, out } => combine(&pred, out.as_deref().unwrap_or(&pred)),
        Command::Eval { pred, labels, exclude, dataset, crop, out } => {
            let out = out.unwrap_or_else(|| pred.join("metrics"));
            eval(&pred, &labels, &exclude, dataset, crop, &out)
        }
        Command::Ablate { cfg, models, deltas, axes, dataset, exclude, out } => {
            let grid = AblationGrid { delta_values: deltas, mode_axes: axes, combined: true };
            ablate(&resolve(&cfg)?, &models, &grid, dataset, &exclude, &out)
        }
        Command::Trace { cfg, models, tile, pixels, out } => trace(&resolve(&cfg)?, &models, tile, &pixels, out.as_deref()),
        Command::ParamCount { topology, verbose } => param_count_cmd(topology, verbose),
    }
}

/// Config file (or the paper preset) with command-line overrides applied.
pub fn resolve(args: &ConfigArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(b) = &args.bundle {
        cfg.bundle = Some(b.clone());
    }
    if let Some(l) = &args.labels {
        cfg.labels = Some(l.clone());
    }
    if let Some(r) = &args.run_dir {
        cfg.run_dir = Some(r.clone());
    }
    if let Some(s) = args.seed {
        cfg.transfer.rng_seed = s;
    }
    if let Some(s) = args.init_seed {
        cfg.transfer.init_seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.transfer.epochs_max = e;
    }
    cfg.pipeline.validate()?;
    info!("config sha256 {}", cfg.hash());
    Ok(cfg)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Context(format!("cannot create {}: {e}", dir.display())))?;
    write_text(&dir.join("config.json"), &cfg.to_json())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Context(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(Error::Context(format!("cannot write {}: {e}", path.display()))))
}

fn load_series(cfg: &RunConfig) -> CliResult<ObservationSeries> {
    let bundle = cfg.existing(&cfg.bundle, "bundle")?;
    info!("reading bundle {}", bundle.display());
    Ok(read_bundle(&bundle)?)
}

fn load_labels(cfg: &RunConfig) -> CliResult<Vec<LabeledTile>> {
    let labels = cfg.existing(&cfg.labels, "labels")?;
    Ok(read_labels(&labels)?)
}

fn select(labels: Vec<LabeledTile>, dataset: DatasetArg) -> Vec<LabeledTile> {
    labels
        .into_iter()
        .filter(|l| match dataset {
            DatasetArg::Testing => l.dataset == Dataset::Testing,
            DatasetArg::Trainval => l.dataset == Dataset::Trainval,
            DatasetArg::All => true,
        })
        .collect()
}

fn dataset_name(dataset: DatasetArg, exclude: &[TileCoord]) -> String {
    let base = match dataset {
        DatasetArg::Testing => "testing",
        DatasetArg::Trainval => "trainval",
        DatasetArg::All => "all",
    };
    if exclude.is_empty() {
        base.to_string()
    } else {
        format!("{base}-")
    }
}

fn prepare(cfg: &RunConfig, series: &ObservationSeries) -> CliResult<PreparedScene> {
    Ok(prepare_tiles(series, &cfg.pipeline, None, TilingMode::Training)?)
}

fn load_models(cfg: &RunConfig, models: &[ModelArg]) -> CliResult<Vec<NamedModel>> {
    let args = if models.is_empty() {
        let dir = cfg.existing(&cfg.run_dir, "run_dir")?;
        let mut found: Vec<ModelArg> = fs::read_dir(&dir)
            .map_err(|e| Error::Context(format!("cannot list {}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                (name.starts_with('V') && name.ends_with("_best")).then(|| ModelArg {
                    name: name.trim_end_matches("_best").to_string(),
                    path: e.path(),
                })
            })
            .collect();
        found.sort_by(|a, b| a.name.cmp(&b.name));
        if found.is_empty() {
            return Err(CliError::Usage(format!("no V*_best checkpoints in {}; pass --model", dir.display())));
        }
        found
    } else {
        models.to_vec()
    };
    args.iter()
        .map(|m| {
            Ok(NamedModel {
                name: m.name.clone(),
                params: load_checkpoint(&m.path)?,
            })
        })
        .collect()
}

fn synth(spec_path: Option<&Path>, out: &Path, seed: u64) -> CliResult<()> {
    let spec = match spec_path {
        Some(p) => ScenarioSpec::load(p)?,
        None => ScenarioSpec::desk(),
    };
    let series = generate_scene(&spec, seed)?;
    write_bundle(&series, out)?;
    let labels = generate_labels(&spec, (0.0, f64::from(spec.duration_days)))?;
    write_labels(out, &labels)?;
    spec.save(&out.join("scenario.json"))?;
    let mut cfg = RunConfig::preset("desk")?;
    cfg.bundle = Some(".".into());
    cfg.labels = Some("labels.json".into());
    cfg.run_dir = Some("run".into());
    cfg.pipeline = spec.pipeline_params();
    cfg.transfer.center_crop = spec.tile_size.saturating_sub(2);
    write_text(&out.join("run.json"), &cfg.to_json())?;
    info!("wrote {} observations and {} labeled tiles to {}", series.len(), labels.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct FrameRecord {
    timestamp: String,
    /// SAR_ASC, SAR_DSC, OPT.
    novelty: [bool; 3],
}

fn stack(cfg: &RunConfig, out: &Path, sar_step: Option<Step>, opt_step: Option<Step>) -> CliResult<()> {
    let mut series = load_series(cfg)?;
    let native = Step::Days(cfg.pipeline.step_days);
    if sar_step.is_some() || opt_step.is_some() {
        series = stale_resample(&series, sar_step.unwrap_or(native), opt_step.unwrap_or(native));
    }
    let assembled = assemble(&temporal_stack(&series), &cfg.pipeline);
    let frames: Vec<FrameRecord> = assembled
        .timestamps
        .iter()
        .zip(&assembled.novelty)
        .map(|(t, n)| FrameRecord { timestamp: format_ts(t), novelty: *n })
        .collect();
    echo_config(cfg, out)?;
    write_json(&out.join("frames.json"), &frames)?;
    write_json(&out.join("normalization.json"), &compute_manifest([&assembled]))?;
    info!("assembled {} frames", frames.len());
    Ok(())
}

#[derive(Serialize)]
struct WindowRecord {
    start_index: usize,
    end_index: usize,
    frames: usize,
    start: String,
}

#[derive(Serialize)]
struct TileWindows {
    tile_y: usize,
    tile_x: usize,
    windows: Vec<WindowRecord>,
}

fn windows(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let scene = prepare(cfg, &load_series(cfg)?)?;
    let records: Vec<TileWindows> = scene
        .tiles
        .iter()
        .map(|t| TileWindows {
            tile_y: t.coord.row,
            tile_x: t.coord.col,
            windows: t
                .windows
                .windows
                .iter()
                .map(|w| WindowRecord {
                    start_index: w.start_index,
                    end_index: w.end_index,
                    frames: w.len(),
                    start: format_ts(&w.start),
                })
                .collect(),
        })
        .collect();
    echo_config(cfg, out)?;
    write_json(&out.join("windows.json"), &records)?;
    Ok(())
}

fn transfer(cfg: &RunConfig, variant: Option<usize>) -> CliResult<()> {
    let run_dir = cfg.run_dir()?;
    let series = load_series(cfg)?;
    let labels = load_labels(cfg)?;
    let scene = prepare(cfg, &series)?;
    drop(series);
    let mut trainval: Vec<TileCoord> = labels
        .iter()
        .filter(|l| l.dataset == Dataset::Trainval)
        .map(|l| l.coord)
        .collect();
    trainval.sort();
    let folds = make_folds(&trainval, cfg.transfer.folds, cfg.transfer.rng_seed)?;
    echo_config(cfg, &run_dir)?;
    write_json(&run_dir.join("folds.json"), &folds)?;
    let selected: Vec<_> = match variant {
        Some(k) => {
            let fold = folds
                .iter()
                .find(|f| f.variant == k)
                .ok_or_else(|| CliError::Usage(format!("variant {k} is outside 1..={}", folds.len())))?;
            vec![fold.clone()]
        }
        None => folds,
    };
    for fold in &selected {
        let init = init_with(cfg.architecture(), cfg.transfer.init_seed);
        let trained = train_variant(fold, &scene, &labels, &cfg.transfer, Some(init))?;
        info!("V{} best epoch {} of {}", fold.variant, trained.best_epoch, trained.trace.len());
        save_variant(&run_dir, &trained)?;
    }
    Ok(())
}

fn predict(cfg: &RunConfig, models: &[ModelArg], dataset: DatasetArg, out: Option<PathBuf>) -> CliResult<()> {
    let out = match out {
        Some(o) => o,
        None => cfg.run_dir()?.join("predictions"),
    };
    let models = load_models(cfg, models)?;
    let mut coords: Vec<TileCoord> = select(load_labels(cfg)?, dataset).iter().map(|l| l.coord).collect();
    coords.sort();
    let scene = prepare(cfg, &load_series(cfg)?)?;
    let mut preds = Vec::new();
    for m in &models {
        for &c in &coords {
            let tile = scene
                .tile(c)
                .ok_or_else(|| Error::Manifest(format!("labeled tile {c} lies outside the scene")))?;
            preds.push(VariantPrediction {
                model: m.name.clone(),
                coord: c,
                raster: predict_variant(&m.params, &tile.sequence, &tile.windows)?,
                windows: tile.windows.len(),
            });
        }
        info!("predicted {} tiles with {}", coords.len(), m.name);
    }
    echo_config(cfg, &out)?;
    write_predictions(&out, &preds)?;
    Ok(())
}

fn combine(pred: &Path, out: &Path) -> CliResult<()> {
    let mut preds: Vec<VariantPrediction> = read_predictions(pred)?
        .into_iter()
        .filter(|p| p.model != COMBINED)
        .collect();
    preds.sort_by(|a, b| (a.coord, &a.model).cmp(&(b.coord, &b.model)));
    let mut coords: Vec<TileCoord> = preds.iter().map(|p| p.coord).collect();
    coords.dedup();
    let mut combined = Vec::with_capacity(coords.len());
    for c in coords {
        let members: Vec<&VariantPrediction> = preds.iter().filter(|p| p.coord == c).collect();
        let rasters: Vec<_> = members.iter().map(|p| p.raster.clone()).collect();
        combined.push(VariantPrediction {
            model: COMBINED.to_string(),
            coord: c,
            raster: combine_variants(&rasters)?,
            windows: members.iter().map(|p| p.windows).max().unwrap_or(0),
        });
    }
    preds.extend(combined);
    write_predictions(out, &preds)?;
    Ok(())
}

fn eval(pred: &Path, labels: &Path, exclude: &[TileCoord], dataset: DatasetArg, crop: Option<usize>, out: &Path) -> CliResult<()> {
    let preds = read_predictions(pred)?;
    let labels = select(read_labels(labels)?, dataset);
    let crop = match crop {
        Some(c) => c,
        None => labels
            .first()
            .map(|l| l.label.height.min(l.label.width).saturating_sub(2))
            .ok_or_else(|| Error::Empty("no labeled tiles in the selected dataset".into()))?,
    };
    let mut models: Vec<String> = preds.iter().map(|p| p.model.clone()).collect();
    models.sort();
    models.dedup();
    let name = dataset_name(dataset, exclude);
    let mut bundles = Vec::with_capacity(models.len());
    for m in &models {
        let rasters: Vec<_> = preds.iter().filter(|p| &p.model == m).map(|p| (p.coord, p.raster.clone())).collect();
        let b = score_dataset(m, &name, &rasters, &labels, crop, exclude)?;
        info!("{m} on {name}: roc auc {:.4}, pr auc {:.4}, kappa {:.4}", b.summary.roc_auc, b.summary.pr_auc, b.summary.kappa_max);
        bundles.push(b);
    }
    write_scores(out, &bundles)?;
    Ok(())
}

fn ablate(cfg: &RunConfig, models: &[ModelArg], grid: &AblationGrid, dataset: DatasetArg, exclude: &[TileCoord], out: &Path) -> CliResult<()> {
    let models = load_models(cfg, models)?;
    let labels = select(load_labels(cfg)?, dataset);
    let series = load_series(cfg)?;
    let assembled = assemble(&temporal_stack(&series), &cfg.pipeline);
    let manifest = compute_manifest([&assembled]);
    drop(assembled);
    let name = dataset_name(dataset, exclude);
    let data = AblationData {
        series: &series,
        params: &cfg.pipeline,
        manifest: &manifest,
        labels: &labels,
        dataset: &name,
        center_crop: cfg.transfer.center_crop,
        exclude,
        tiling: TilingMode::Training,
    };
    let cells = run_ablation(grid, &data, &models)?;
    echo_config(cfg, out)?;
    write_json(&out.join("grid.json"), grid)?;
    write_ablation_csv(&out.join("ablation.csv"), &ablation_rows(&cells))?;
    Ok(())
}

fn trace(cfg: &RunConfig, models: &[ModelArg], tile: TileCoord, pixels: &[Pixel], out: Option<&Path>) -> CliResult<()> {
    let models = load_models(cfg, models)?;
    let scene = prepare(cfg, &load_series(cfg)?)?;
    let sample = scene
        .tile(tile)
        .ok_or_else(|| Error::Manifest(format!("tile {tile} lies outside the scene")))?;
    let (h, w) = (sample.sequence.height, sample.sequence.width);
    if let Some(p) = pixels.iter().find(|p| p.row >= h || p.col >= w) {
        return Err(CliError::Data(Error::InvalidParams(format!(
            "pixel {},{} lies outside the {h}x{w} tile {tile}",
            p.row, p.col
        ))));
    }
    let mut csv = String::from("model,tile_y,tile_x,row,col,window,window_start,value\n");
    for m in &models {
        let preds = predict_windows(&m.params, &sample.sequence, &sample.windows)?;
        for p in pixels {
            for (i, (win, r)) in sample.windows.windows.iter().zip(&preds).enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{i},{},{}",
                    m.name,
                    tile.row,
                    tile.col,
                    p.row,
                    p.col,
                    format_ts(&win.start),
                    r.get(p.row, p.col)
                );
            }
        }
    }
    match out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn param_count_cmd(topology: Option<Vec<usize>>, verbose: bool) -> CliResult<()> {
    let mut cfg = RunConfig::default();
    if let Some(t) = topology {
        cfg.topology = t
            .try_into()
            .map_err(|_| CliError::Usage("--topology needs five filter counts".into()))?;
    }
    let arch = cfg.architecture();
    arch.validate()?;
    let params = init_with(arch.clone(), 0);
    if verbose {
        for t in &params.tensors {
            println!("{:<28} {:?} {}", t.name, t.shape, t.data.len());
        }
    }
    println!("{}", param_count(&params));
    Ok(())
}
