//! Transfer training: window selection, augmentation, pooled Tanimoto loss,
//! SGD with momentum and cross-validation folds.

mod augment;
mod data;
mod folds;
mod loss;
mod select;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_json, write_json};

pub use augment::{augment_raster, augment_sample, augment_window, AugmentTag};
pub use data::{prepare_tiles, read_labels, write_labels, Dataset, LabeledTile, PreparedScene, TileSample};
pub use folds::{make_folds, FoldSplit};
pub use loss::{max_pool_over_time, tanimoto_complement_loss, PooledPrediction, TANIMOTO_EPS};
pub use select::select_windows;
pub use train::{save_variant, train_variant, EpochRecord, Sgd, TrainedVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub windows_per_tile: usize,
    pub first_window_index: usize,
    pub offset_range: [usize; 2],
    pub center_crop: usize,
    pub folds: usize,
    pub augment: bool,
    pub init_seed: u64,
    pub rng_seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.008,
            momentum: 0.8,
            epochs_max: 160,
            batch_size: 64,
            windows_per_tile: 10,
            first_window_index: 21,
            offset_range: [40, 49],
            center_crop: 30,
            folds: 4,
            augment: true,
            init_seed: 0,
            rng_seed: 0,
        }
    }
}

impl TransferConfig {
    /// Settings sized for the synthetic desk-scale scenario.
    pub fn desk() -> Self {
        Self {
            learning_rate: 0.05,
            epochs_max: 30,
            batch_size: 1,
            windows_per_tile: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self, tile_height: usize, tile_width: usize) -> Result<()> {
        let [lo, hi] = self.offset_range;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidParams(format!("offset range [{lo}, {hi}] must be positive and ordered")));
        }
        if self.windows_per_tile == 0 || self.batch_size == 0 || self.folds == 0 {
            return Err(Error::InvalidParams("windows_per_tile, batch_size and folds must be positive".into()));
        }
        if self.center_crop + 2 != tile_height || self.center_crop + 2 != tile_width {
            return Err(Error::InvalidParams(format!(
                "center crop {c}x{c} must leave a one-pixel border on a {tile_height}x{tile_width} tile",
                c = self.center_crop
            )));
        }
        if !(self.learning_rate >= 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidParams("learning rate must be >= 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Mixes a base seed with a list of identifiers (splitmix64 finaliser).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_method() {
        let c = TransferConfig::default();
        assert_eq!((c.learning_rate, c.momentum), (0.008, 0.8));
        assert_eq!((c.first_window_index, c.offset_range), (21, [40, 49]));
        c.validate(32, 32).unwrap();
        assert!(c.validate(31, 32).is_err());
    }

    #[test]
    fn derived_seeds_depend_on_every_part() {
        let a = derive_seed(1, &[2, 3]);
        assert_eq!(a, derive_seed(1, &[2, 3]));
        assert_ne!(a, derive_seed(1, &[3, 2]));
        assert_ne!(a, derive_seed(2, &[2, 3]));
    }
}
