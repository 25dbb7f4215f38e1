use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_json, write_json};

use super::{AssembledSequence, BANDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub min: f32,
    pub max: f32,
}

/// Per-band value ranges used to map frames to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizationManifest {
    pub bands: BTreeMap<usize, BandRange>,
}

impl NormalizationManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        if (0..BANDS).any(|b| !m.bands.contains_key(&b)) {
            return Err(Error::Manifest(format!("normalization manifest must list bands 0..{BANDS}")));
        }
        Ok(m)
    }
}

/// Per-band min/max over every frame and pixel of the given sequences.
pub fn compute_manifest<'a>(seqs: impl IntoIterator<Item = &'a AssembledSequence>) -> NormalizationManifest {
    let mut lo = [f32::INFINITY; BANDS];
    let mut hi = [f32::NEG_INFINITY; BANDS];
    for seq in seqs {
        let p = seq.pixels();
        for frame in &seq.frames {
            for b in 0..BANDS {
                for &v in &frame[b * p..(b + 1) * p] {
                    lo[b] = lo[b].min(v);
                    hi[b] = hi[b].max(v);
                }
            }
        }
    }
    let bands = (0..BANDS)
        .map(|b| {
            let range = if lo[b].is_finite() {
                BandRange { min: lo[b], max: hi[b] }
            } else {
                BandRange { min: 0.0, max: 0.0 }
            };
            (b, range)
        })
        .collect();
    NormalizationManifest { bands }
}

/// Affinely maps each band to `[0, 1]` with clamping; degenerate bands map to 0.
pub fn normalize(seq: &AssembledSequence, manifest: &NormalizationManifest) -> Result<AssembledSequence> {
    let mut ranges = [(0.0f32, 0.0f32); BANDS];
    for (b, r) in ranges.iter_mut().enumerate() {
        let band = manifest
            .bands
            .get(&b)
            .ok_or_else(|| Error::Manifest(format!("normalization manifest lacks band {b}")))?;
        *r = (band.min, band.max);
    }
    let p = seq.pixels();
    let frames = seq
        .frames
        .iter()
        .map(|frame| {
            let mut out = frame.clone();
            for (b, &(min, max)) in ranges.iter().enumerate() {
                let span = max - min;
                for v in &mut out[b * p..(b + 1) * p] {
                    *v = if span > 0.0 { ((*v - min) / span).clamp(0.0, 1.0) } else { 0.0 };
                }
            }
            out
        })
        .collect();
    Ok(AssembledSequence {
        frames,
        ..seq.clone_meta()
    })
}

impl AssembledSequence {
    fn clone_meta(&self) -> AssembledSequence {
        AssembledSequence {
            height: self.height,
            width: self.width,
            timestamps: self.timestamps.clone(),
            frames: Vec::new(),
            novelty: self.novelty.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn one_pixel_seq(values: &[[f32; BANDS]]) -> AssembledSequence {
        let t0 = Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap();
        AssembledSequence {
            height: 1,
            width: 1,
            timestamps: (0..values.len()).map(|i| t0 + chrono::Duration::days(2 * i as i64)).collect(),
            frames: values.iter().map(|v| v.to_vec()).collect(),
            novelty: values.iter().map(|_| [true; 3]).collect(),
        }
    }

    #[test]
    fn midpoint_and_clamping() {
        let train = one_pixel_seq(&[[0.0; BANDS], [2.0; BANDS]]);
        let m = compute_manifest([&train]);
        let probe = one_pixel_seq(&[[1.0; BANDS], [5.0; BANDS]]);
        let n = normalize(&probe, &m).unwrap();
        assert!(n.frames[0].iter().all(|&v| v == 0.5));
        assert!(n.frames[1].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn degenerate_band_maps_to_zero() {
        let train = one_pixel_seq(&[[3.0; BANDS], [3.0; BANDS]]);
        let m = compute_manifest([&train]);
        let n = normalize(&train, &m).unwrap();
        assert!(n.frames.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn manifest_round_trip_gives_identical_output() {
        let mut rows = Vec::new();
        for k in 0..5 {
            let mut row = [0.0f32; BANDS];
            for (b, v) in row.iter_mut().enumerate() {
                *v = (k as f32 * 0.37 + b as f32 * 1.3).sin() * 10.0;
            }
            rows.push(row);
        }
        let seq = one_pixel_seq(&rows);
        let m = compute_manifest([&seq]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("norm.json");
        m.save(&path).unwrap();
        let back = NormalizationManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(normalize(&seq, &back).unwrap(), normalize(&seq, &m).unwrap());
    }
}
