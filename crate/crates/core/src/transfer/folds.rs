use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::TileCoord;

/// Training and validation tiles of one transfer variant (`variant` is 1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub variant: usize,
    pub train: Vec<TileCoord>,
    pub validation: Vec<TileCoord>,
}

/// Shuffles the tiles and cuts them into `k` contiguous validation chunks
/// whose sizes differ by at most one.
pub fn make_folds(tile_ids: &[TileCoord], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k == 0 || k > tile_ids.len() {
        return Err(Error::InvalidParams(format!("cannot make {k} folds from {} tiles", tile_ids.len())));
    }
    let mut shuffled = tile_ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (shuffled.len() / k, shuffled.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for v in 0..k {
        let size = base + usize::from(v < extra);
        let validation = shuffled[start..start + size].to_vec();
        let train = shuffled[..start].iter().chain(&shuffled[start + size..]).copied().collect();
        folds.push(FoldSplit {
            variant: v + 1,
            train,
            validation,
        });
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn grid(n: usize) -> Vec<TileCoord> {
        (0..n).map(|i| TileCoord::new(i / 13, i % 13)).collect()
    }

    #[test]
    fn paper_sized_split() {
        let folds = make_folds(&grid(164), 4, 1).unwrap();
        let sizes: Vec<_> = folds.iter().map(|f| f.validation.len()).collect();
        assert_eq!(sizes, vec![41; 4]);
    }

    #[test]
    fn uneven_split() {
        let folds = make_folds(&grid(5), 4, 1).unwrap();
        let sizes: Vec<_> = folds.iter().map(|f| f.validation.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1, 1]);
        assert!(make_folds(&grid(3), 4, 1).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_the_tiles(n in 1usize..60, k in 1usize..8, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let tiles = grid(n);
            let folds = make_folds(&tiles, k, seed).unwrap();
            prop_assert_eq!(&folds, &make_folds(&tiles, k, seed).unwrap());
            let all: BTreeSet<_> = tiles.iter().copied().collect();
            let mut seen = BTreeSet::new();
            for f in &folds {
                for t in &f.validation {
                    prop_assert!(seen.insert(*t));
                }
                let union: BTreeSet<_> = f.train.iter().chain(&f.validation).copied().collect();
                prop_assert_eq!(&union, &all);
                prop_assert_eq!(f.train.len() + f.validation.len(), n);
            }
            prop_assert_eq!(seen, all);
            let sizes: Vec<_> = folds.iter().map(|f| f.validation.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
