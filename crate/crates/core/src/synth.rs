//! Deterministic synthetic multi-modal scenes with injected change events
//! and exact ground truth.

use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_json, write_json, Mode, Observation, ObservationSeries, SceneMeta};
use crate::pipeline::{PipelineParams, TileLayout, TilingMode, OPT_BANDS};
use crate::raster::{Raster, TileCoord};
use crate::transfer::{derive_seed, Dataset, LabeledTile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Construction,
    Destruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub start_day: f64,
    pub ramp_days: f64,
    /// Per-band offset reached at the end of the ramp.
    pub optical_signature: Vec<f32>,
    /// Additive backscatter offset on VV (VH receives half).
    pub sar_signature: f32,
    pub kind: EventKind,
}

impl ChangeEvent {
    /// Fraction of the change completed at `day`.
    pub fn progress(&self, day: f64) -> f32 {
        ((day - self.start_day) / self.ramp_days).clamp(0.0, 1.0) as f32
    }

    /// True if `[start, start + ramp]` intersects `[from, to]`.
    pub fn active_during(&self, from: f64, to: f64) -> bool {
        self.start_day <= to && self.start_day + self.ramp_days >= from
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    /// Signature presets for the two event kinds.
    pub fn with_kind(kind: EventKind, row: usize, col: usize, size: (usize, usize), start_day: f64, ramp_days: f64) -> Self {
        let (optical_signature, sar_signature) = match kind {
            // brighter visible and SWIR, vegetation loss in the red edge and NIR
            EventKind::Construction => (
                vec![0.06, 0.10, 0.12, 0.14, 0.10, -0.06, -0.12, -0.14, -0.12, 0.02, 0.0, 0.14, 0.12],
                0.05,
            ),
            EventKind::Destruction => (
                vec![0.05, 0.08, 0.10, 0.12, 0.10, 0.02, -0.06, -0.08, -0.06, 0.02, 0.0, 0.16, 0.14],
                -0.04,
            ),
        };
        Self {
            row,
            col,
            height: size.0,
            width: size.1,
            start_day,
            ramp_days,
            optical_signature,
            sar_signature,
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cadence {
    pub sar_asc: u32,
    pub sar_dsc: u32,
    pub opt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub height: usize,
    pub width: usize,
    pub start: DateTime<Utc>,
    pub duration_days: u32,
    /// Revisit interval per mode in days.
    pub cadence: Cadence,
    pub cloud_probability: f64,
    pub texture_seed: u64,
    pub seasonal_amplitude: f32,
    pub optical_noise: f32,
    pub speckle_looks: f32,
    pub tile_size: usize,
    pub testing_tiles: Vec<TileCoord>,
    pub events: Vec<ChangeEvent>,
}

impl ScenarioSpec {
    /// 128×128 scene over 730 days with 12 events; one event inside each
    /// of the four testing tiles.
    pub fn desk() -> Self {
        use EventKind::{Construction as C, Destruction as D};
        // (tile row, tile col, offset y, offset x, h, w, start, ramp, kind)
        let layout: [(usize, usize, usize, usize, usize, usize, f64, f64, EventKind); 12] = [
            (0, 0, 6, 8, 12, 14, 150.0, 40.0, C),
            (0, 1, 10, 6, 14, 12, 260.0, 30.0, C),
            (0, 2, 4, 12, 10, 16, 420.0, 60.0, D),
            (0, 3, 14, 4, 12, 10, 330.0, 20.0, C),
            (1, 0, 8, 10, 16, 12, 480.0, 45.0, C),
            (1, 1, 12, 14, 10, 12, 200.0, 25.0, D),
            (1, 3, 6, 6, 14, 16, 380.0, 50.0, C),
            (2, 0, 10, 8, 12, 14, 300.0, 35.0, D),
            (2, 2, 5, 5, 16, 14, 540.0, 30.0, C),
            (2, 3, 12, 10, 10, 14, 240.0, 60.0, C),
            (3, 1, 8, 12, 14, 12, 440.0, 40.0, D),
            (3, 2, 9, 7, 12, 16, 180.0, 30.0, C),
        ];
        let tile = 32;
        let events = layout
            .iter()
            .map(|&(tr, tc, dy, dx, h, w, start, ramp, kind)| {
                ChangeEvent::with_kind(kind, tr * tile + dy, tc * tile + dx, (h, w), start, ramp)
            })
            .collect();
        Self {
            height: 128,
            width: 128,
            start: Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap(),
            duration_days: 730,
            cadence: Cadence {
                sar_asc: 6,
                sar_dsc: 6,
                opt: 4,
            },
            cloud_probability: 0.3,
            texture_seed: 17,
            seasonal_amplitude: 0.04,
            optical_noise: 0.01,
            speckle_looks: 4.0,
            tile_size: tile,
            testing_tiles: vec![TileCoord::new(0, 1), TileCoord::new(1, 3), TileCoord::new(2, 0), TileCoord::new(3, 2)],
            events,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.height == 0 || self.width == 0 || self.duration_days == 0 {
            return bad("scene size and duration must be positive".into());
        }
        let c = self.cadence;
        if c.sar_asc == 0 || c.sar_dsc == 0 || c.opt == 0 {
            return bad("cadences must be at least one day".into());
        }
        if !(0.0..1.0).contains(&self.cloud_probability) {
            return bad("cloud probability must lie in [0, 1)".into());
        }
        if self.speckle_looks <= 0.0 || self.optical_noise < 0.0 {
            return bad("speckle looks must be positive and noise non-negative".into());
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.height == 0 || e.width == 0 || e.row + e.height > self.height || e.col + e.width > self.width {
                return bad(format!("event {i} lies outside the {}x{} scene", self.height, self.width));
            }
            if e.ramp_days < 1.0 {
                return bad(format!("event {i} needs a ramp of at least one day"));
            }
            if e.optical_signature.len() != OPT_BANDS {
                return bad(format!("event {i} needs {OPT_BANDS} optical offsets"));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            tile_height: self.tile_size,
            tile_width: self.tile_size,
            ..PipelineParams::default()
        }
    }
}

/// Independent random streams for the optical and SAR acquisitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub optical: u64,
    pub sar: u64,
}

impl SeedPlan {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            optical: derive_seed(seed, &[1]),
            sar: derive_seed(seed, &[2]),
        }
    }
}

/// Smooth field in `[0, 1]`: bilinear interpolation of a random lattice.
fn smooth_field(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.random()).collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let fy = r as f32 / cell as f32;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for c in 0..w {
            let fx = c as f32 / cell as f32;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let v = |y: usize, x: usize| lattice[y * gw + x];
            let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
            let bottom = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Static scene content derived from the texture seed.
struct Background {
    optical: Vec<Vec<f32>>,
    seasonal: Vec<Vec<f32>>,
    /// `[orbit][band]` backscatter, orbit 0 = ascending.
    sar: [[Vec<f32>; 2]; 2],
}

fn background(spec: &ScenarioSpec) -> Background {
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let urban = smooth_field(h, w, 16, &mut rng);
    let vegetation = smooth_field(h, w, 12, &mut rng);
    let detail = smooth_field(h, w, 4, &mut rng);
    let mut optical = Vec::with_capacity(OPT_BANDS);
    let mut seasonal = Vec::with_capacity(OPT_BANDS);
    for b in 0..OPT_BANDS {
        let base: f32 = rng.random_range(0.08..0.2);
        let u: f32 = rng.random_range(0.0..0.12);
        let nir = (5..=8).contains(&b);
        let v: f32 = if nir { rng.random_range(0.1..0.2) } else { rng.random_range(-0.05..0.0) };
        let d: f32 = rng.random_range(0.0..0.03);
        optical.push(
            (0..h * w)
                .map(|k| base + u * urban[k] + v * vegetation[k] + d * detail[k])
                .collect(),
        );
        let s = if nir { 1.0 } else { -0.3 };
        seasonal.push(vegetation.iter().map(|&x| s * x).collect());
    }
    let mut orbit = || {
        let phase = smooth_field(h, w, 8, &mut rng);
        let vv: Vec<f32> = (0..h * w).map(|k| 0.06 + 0.12 * urban[k] + 0.04 * phase[k]).collect();
        let vh: Vec<f32> = (0..h * w).map(|k| 0.3 * vv[k] + 0.02 * vegetation[k]).collect();
        [vv, vh]
    };
    let asc = orbit();
    let dsc = orbit();
    Background {
        optical,
        seasonal,
        sar: [asc, dsc],
    }
}

fn acquisition_days(duration: u32, cadence: u32) -> Vec<u32> {
    (0..duration).step_by(cadence as usize).collect()
}

/// Random elliptical blobs covering part of the scene (0 = cloud).
fn cloud_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut mask = vec![1u8; h * w];
    let blobs = rng.random_range(1..=3);
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..h as f32);
        let cx = rng.random_range(0.0..w as f32);
        let ry = rng.random_range(6.0..(h as f32 / 3.0).max(7.0));
        let rx = rng.random_range(6.0..(w as f32 / 3.0).max(7.0));
        for r in 0..h {
            for c in 0..w {
                let dy = (r as f32 - cy) / ry;
                let dx = (c as f32 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    mask[r * w + c] = 0;
                }
            }
        }
    }
    mask
}

fn optical_frame(spec: &ScenarioSpec, bg: &Background, day: u32, seed: u64) -> Observation {
    let (h, w) = (spec.height, spec.width);
    let p = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let season = (2.0 * std::f64::consts::PI * f64::from(day) / 365.0).sin() as f32 * spec.seasonal_amplitude;
    let mut data = Vec::with_capacity(OPT_BANDS * p);
    for b in 0..OPT_BANDS {
        data.extend((0..p).map(|k| bg.optical[b][k] + season * bg.seasonal[b][k]));
    }
    for e in &spec.events {
        let f = e.progress(f64::from(day));
        if f == 0.0 {
            continue;
        }
        for r in e.row..e.row + e.height {
            for c in e.col..e.col + e.width {
                for b in 0..OPT_BANDS {
                    data[b * p + r * w + c] += f * e.optical_signature[b];
                }
            }
        }
    }
    if spec.optical_noise > 0.0 {
        let noise = Normal::new(0.0f32, spec.optical_noise).expect("finite sigma");
        for v in &mut data {
            *v += noise.sample(&mut rng);
        }
    }
    let mask = if spec.cloud_probability > 0.0 && rng.random_bool(spec.cloud_probability) {
        let mask = cloud_mask(h, w, &mut rng);
        for b in 0..OPT_BANDS {
            for (k, &m) in mask.iter().enumerate() {
                if m == 0 {
                    data[b * p + k] = 0.6 + 0.2 * rng.random::<f32>();
                }
            }
        }
        mask
    } else {
        vec![1u8; p]
    };
    Observation {
        mode: Mode::Opt,
        timestamp: spec.start + Duration::days(i64::from(day)),
        data,
        mask: Some(mask),
    }
}

fn sar_frame(spec: &ScenarioSpec, bg: &Background, mode: Mode, day: u32, seed: u64) -> Observation {
    let (h, w) = (spec.height, spec.width);
    let p = h * w;
    let orbit = usize::from(mode == Mode::SarDsc);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * p);
    data.extend_from_slice(&bg.sar[orbit][0]);
    data.extend_from_slice(&bg.sar[orbit][1]);
    for e in &spec.events {
        let f = e.progress(f64::from(day));
        if f == 0.0 {
            continue;
        }
        for r in e.row..e.row + e.height {
            for c in e.col..e.col + e.width {
                let k = r * w + c;
                data[k] = (data[k] + f * e.sar_signature).max(0.005);
                data[p + k] = (data[p + k] + 0.5 * f * e.sar_signature).max(0.002);
            }
        }
    }
    let looks = spec.speckle_looks;
    let speckle = Gamma::new(looks, 1.0 / looks).expect("positive looks");
    for v in &mut data {
        *v *= speckle.sample(&mut rng);
    }
    Observation {
        mode,
        timestamp: spec.start + Duration::days(i64::from(day)),
        data,
        mask: None,
    }
}

pub fn generate_scene(spec: &ScenarioSpec, seed: u64) -> Result<ObservationSeries> {
    generate_scene_with(spec, SeedPlan::from_seed(seed))
}

/// Each frame draws from its own stream, derived from the mode seed and the
/// frame counter.
pub fn generate_scene_with(spec: &ScenarioSpec, seeds: SeedPlan) -> Result<ObservationSeries> {
    spec.validate()?;
    let bg = background(spec);
    let mut series = ObservationSeries::empty(SceneMeta::new(spec.height, spec.width));
    series.opt = acquisition_days(spec.duration_days, spec.cadence.opt)
        .into_par_iter()
        .enumerate()
        .map(|(i, day)| optical_frame(spec, &bg, day, derive_seed(seeds.optical, &[i as u64])))
        .collect();
    for (mode, cadence, stream) in [
        (Mode::SarAsc, spec.cadence.sar_asc, 0u64),
        (Mode::SarDsc, spec.cadence.sar_dsc, 1u64),
    ] {
        *series.mode_mut(mode) = acquisition_days(spec.duration_days, cadence)
            .into_par_iter()
            .enumerate()
            .map(|(i, day)| sar_frame(spec, &bg, mode, day, derive_seed(seeds.sar, &[stream, i as u64])))
            .collect();
    }
    Ok(series)
}

/// Scene-sized ground truth: 1 where an event active during `[from, to]` (days) lies.
pub fn label_raster(spec: &ScenarioSpec, period: (f64, f64)) -> Result<Raster> {
    spec.validate()?;
    let (from, to) = period;
    if from.is_nan() || to.is_nan() || from > to {
        return Err(Error::Scenario(format!("empty label period [{from}, {to}]")));
    }
    let mut out = Raster::zeros(spec.height, spec.width);
    for e in spec.events.iter().filter(|e| e.active_during(from, to)) {
        for r in e.row..e.row + e.height {
            for c in e.col..e.col + e.width {
                out.set(r, c, 1.0);
            }
        }
    }
    Ok(out)
}

/// Per-tile labels on the training grid, tagged by the spec's testing tiles.
pub fn generate_labels(spec: &ScenarioSpec, period: (f64, f64)) -> Result<Vec<LabeledTile>> {
    let scene = label_raster(spec, period)?;
    let layout = TileLayout::new(spec.height, spec.width, &spec.pipeline_params(), TilingMode::Training)?;
    Ok(layout
        .coords()
        .into_iter()
        .map(|coord| LabeledTile {
            coord,
            label: layout.crop(&scene, coord),
            dataset: if spec.testing_tiles.contains(&coord) {
                Dataset::Testing
            } else {
                Dataset::Trainval
            },
        })
        .collect())
}

/// Whether pixel `(r, c)` belongs to any event.
pub fn in_event(spec: &ScenarioSpec, r: usize, c: usize) -> bool {
    spec.events.iter().any(|e| e.contains(r, c))
}
