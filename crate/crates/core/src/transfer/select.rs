use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::{Window, WindowSet};

use super::TransferConfig;

/// Picks `windows_per_tile` partially overlapping windows by start frame:
/// `s1 = first_window_index`, `s(k+1) = s(k) + U{offset_range}`.
///
/// Fails upfront unless the set could serve the largest possible offsets.
/// A start that falls on a discarded window moves to the next retained one.
pub fn select_windows(window_set: &WindowSet, config: &TransferConfig, seed: u64) -> Result<Vec<Window>> {
    let [lo, hi] = config.offset_range;
    let n = config.windows_per_tile;
    let worst = config.first_window_index + n.saturating_sub(1) * hi;
    let last = window_set.windows.last().map(|w| w.start_index);
    if last.is_none_or(|l| l < worst) {
        return Err(Error::SeriesTooShort {
            required: worst + 1,
            available: last.map_or(0, |l| l + 1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start = config.first_window_index;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            start += rng.random_range(lo..=hi);
        }
        let w = match window_set.starting_at(start) {
            Some(w) => *w,
            None => {
                let i = window_set.windows.partition_point(|w| w.start_index < start);
                window_set.windows[i]
            }
        };
        out.push(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};

    fn full_set(n: usize) -> WindowSet {
        WindowSet {
            coord: Default::default(),
            windows: (0..n)
                .map(|i| Window {
                    start_index: i,
                    end_index: i + 35,
                    start: DateTime::<Utc>::UNIX_EPOCH,
                })
                .collect(),
        }
    }

    #[test]
    fn minimal_offsets_end_at_381() {
        let config = TransferConfig {
            offset_range: [40, 40],
            ..Default::default()
        };
        let picked = select_windows(&full_set(500), &config, 3).unwrap();
        let starts: Vec<_> = picked.iter().map(|w| w.start_index).collect();
        let expected: Vec<_> = (0..10).map(|k| 21 + 40 * k).collect();
        assert_eq!(starts, expected);
        assert_eq!(*starts.last().unwrap(), 381);
    }

    #[test]
    fn offsets_stay_in_range_and_are_seeded() {
        let config = TransferConfig::default();
        let set = full_set(500);
        let a = select_windows(&set, &config, 9).unwrap();
        assert_eq!(a, select_windows(&set, &config, 9).unwrap());
        assert_eq!(a[0].start_index, 21);
        for pair in a.windows(2) {
            let d = pair[1].start_index - pair[0].start_index;
            assert!((40..=49).contains(&d));
        }
    }

    #[test]
    fn short_series_is_rejected() {
        let config = TransferConfig::default();
        // worst case needs a window starting at 21 + 9*49 = 462
        let err = select_windows(&full_set(462), &config, 1).unwrap_err();
        assert!(matches!(err, Error::SeriesTooShort { required: 463, available: 462 }));
        assert!(select_windows(&full_set(463), &config, 1).is_ok());
    }
}
