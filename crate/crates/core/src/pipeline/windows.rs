use chrono::{DateTime, Utc};

use crate::raster::TileCoord;

use super::{AssembledSequence, PipelineParams, TileSequence, SECONDS_PER_DAY};

/// A contiguous run of assembled frames `[start_index, end_index)` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start_index: usize,
    pub end_index: usize,
    pub start: DateTime<Utc>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start_index..self.end_index
    }
}

/// All retained sliding windows of one tile sequence, ordered by start.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowSet {
    pub coord: TileCoord,
    pub windows: Vec<Window>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// The window starting at assembled frame `start_index`, if retained.
    pub fn starting_at(&self, start_index: usize) -> Option<&Window> {
        self.windows
            .binary_search_by_key(&start_index, |w| w.start_index)
            .ok()
            .map(|i| &self.windows[i])
    }
}

/// Builds sliding windows: a candidate starts at every `stride`-th frame and
/// holds all frames in `[t, t + Δ)` (at most Ω). Candidates with fewer than ω
/// frames are discarded; nothing is padded here.
pub fn build_windows(seq: &AssembledSequence, params: &PipelineParams) -> WindowSet {
    let period = params.window_days as i64 * SECONDS_PER_DAY;
    let n = seq.len();
    let mut windows = Vec::new();
    let mut end = 0usize;
    for start in (0..n).step_by(params.stride.max(1)) {
        let t = seq.timestamps[start];
        end = end.max(start);
        while end < n && (seq.timestamps[end] - t).num_seconds() < period {
            end += 1;
        }
        let stop = end.min(start + params.max_window);
        if stop - start >= params.min_window {
            windows.push(Window {
                start_index: start,
                end_index: stop,
                start: t,
            });
        }
    }
    WindowSet {
        coord: TileCoord::default(),
        windows,
    }
}

pub fn build_tile_windows(tile: &TileSequence, params: &PipelineParams) -> WindowSet {
    WindowSet {
        coord: tile.coord,
        ..build_windows(&tile.sequence, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    fn seq_from_days(days: &[i64]) -> AssembledSequence {
        let t0 = Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap();
        AssembledSequence {
            height: 1,
            width: 1,
            timestamps: days.iter().map(|d| t0 + Duration::days(*d)).collect(),
            frames: days.iter().map(|_| vec![0.0; 17]).collect(),
            novelty: days.iter().map(|_| [true; 3]).collect(),
        }
    }

    /// Brute force: for each start, count frames within the period.
    fn brute_force(days: &[i64], p: &PipelineParams) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in (0..days.len()).step_by(p.stride) {
            let count = days.iter().filter(|&&d| d >= days[s] && d < days[s] + p.window_days as i64).count();
            let count = count.min(p.max_window);
            if count >= p.min_window {
                out.push((s, count));
            }
        }
        out
    }

    #[test]
    fn two_day_frames_fill_window_to_max() {
        let days: Vec<i64> = (0..184).map(|k| 2 * k).collect();
        let ws = build_windows(&seq_from_days(&days), &PipelineParams::default());
        assert_eq!(ws.windows[0].len(), 92);
        assert!(ws.windows.iter().all(|w| w.len() >= 35 && w.len() <= 92));
        let bf = brute_force(&days, &PipelineParams::default());
        let got: Vec<_> = ws.windows.iter().map(|w| (w.start_index, w.len())).collect();
        assert_eq!(got, bf);
    }

    #[test]
    fn sparse_period_is_discarded() {
        // 30 frames in the first half year, then nothing
        let days: Vec<i64> = (0..30).map(|k| 6 * k).collect();
        let ws = build_windows(&seq_from_days(&days), &PipelineParams::default());
        assert!(ws.is_empty());
    }

    #[test]
    fn empty_sequence_has_no_windows() {
        let ws = build_windows(&seq_from_days(&[]), &PipelineParams::default());
        assert!(ws.is_empty());
    }

    proptest! {
        #[test]
        fn window_enumeration_matches_brute_force(
            gaps in proptest::collection::vec(1i64..9, 0..120),
            min_window in 1usize..12,
            extra in 0usize..30,
            window_days in 5u32..60,
            stride in 1usize..4,
        ) {
            let mut days = vec![0i64];
            for g in gaps { let last = *days.last().unwrap(); days.push(last + g); }
            let p = PipelineParams {
                min_window, max_window: min_window + extra, window_days, stride, ..Default::default()
            };
            let ws = build_windows(&seq_from_days(&days), &p);
            let got: Vec<_> = ws.windows.iter().map(|w| (w.start_index, w.len())).collect();
            prop_assert_eq!(got, brute_force(&days, &p));
            for w in &ws.windows {
                let span = (days[w.end_index - 1] - days[w.start_index]) as u32;
                prop_assert!(span < window_days);
            }
        }
    }
}
