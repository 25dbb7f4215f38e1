use chrono::{DateTime, Duration, Utc};

use crate::ingest::{Mode, ObservationSeries};

use super::{PipelineParams, SECONDS_PER_DAY};

/// Bands per assembled frame: SAR_ASC VV,VH; SAR_DSC VV,VH; OPT b1..b13.
pub const BANDS: usize = 17;
pub const SAR_BANDS: usize = 4;
pub const OPT_BANDS: usize = 13;

fn band_offset(mode: Mode) -> usize {
    match mode {
        Mode::SarAsc => 0,
        Mode::SarDsc => 2,
        Mode::Opt => 4,
    }
}

/// Joint 17-band frames on a δ-day grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledSequence {
    pub height: usize,
    pub width: usize,
    pub timestamps: Vec<DateTime<Utc>>,
    /// One `[17][H][W]` buffer per timestamp.
    pub frames: Vec<Vec<f32>>,
    /// Which modes delivered a new observation in the frame's step
    /// (indexed by [`Mode::index`]).
    pub novelty: Vec<[bool; 3]>,
}

impl AssembledSequence {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            timestamps: Vec::new(),
            frames: Vec::new(),
            novelty: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, frame: usize, band: usize) -> &[f32] {
        let p = self.pixels();
        &self.frames[frame][band * p..(band + 1) * p]
    }
}

/// Merges stacked per-mode observations into joint frames.
///
/// Steps are `[t0 + kδ, t0 + (k+1)δ)` with `t0` the earliest observation; a
/// frame (timestamped at its step start) is emitted only for steps where at
/// least one mode delivered a new observation. Each frame carries every mode's
/// latest raster; modes without any observation yet contribute zeros.
pub fn assemble(series: &ObservationSeries, params: &PipelineParams) -> AssembledSequence {
    let (h, w) = (series.scene.height, series.scene.width);
    let pixels = h * w;
    let mut events: Vec<(DateTime<Utc>, Mode, usize)> = Vec::with_capacity(series.len());
    for mode in Mode::ALL {
        for (i, obs) in series.mode(mode).iter().enumerate() {
            events.push((obs.timestamp, mode, i));
        }
    }
    events.sort_by_key(|&(t, m, _)| (t, m));
    let mut seq = AssembledSequence::empty(h, w);
    let Some(&(t0, _, _)) = events.first() else {
        return seq;
    };
    let step = params.step_days.max(1) as i64 * SECONDS_PER_DAY;

    let mut latest: [Option<usize>; 3] = [None; 3];
    let mut i = 0;
    while i < events.len() {
        let k = (events[i].0 - t0).num_seconds().div_euclid(step);
        let mut novelty = [false; 3];
        while i < events.len() && (events[i].0 - t0).num_seconds().div_euclid(step) == k {
            let (_, mode, idx) = events[i];
            latest[mode.index()] = Some(idx);
            novelty[mode.index()] = true;
            i += 1;
        }
        let mut frame = vec![0.0f32; BANDS * pixels];
        for mode in Mode::ALL {
            if let Some(idx) = latest[mode.index()] {
                let off = band_offset(mode) * pixels;
                let data = &series.mode(mode)[idx].data;
                frame[off..off + data.len()].copy_from_slice(data);
            }
        }
        seq.timestamps.push(t0 + Duration::seconds(k * step));
        seq.frames.push(frame);
        seq.novelty.push(novelty);
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Observation, SceneMeta};
    use chrono::TimeZone;

    fn day(d: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap() + Duration::days(d)
    }

    fn obs(mode: Mode, d: i64, value: f32) -> Observation {
        Observation {
            mode,
            timestamp: day(d),
            data: vec![value; mode.bands()],
            mask: (mode == Mode::Opt).then(|| vec![1]),
        }
    }

    /// Reference resampler: enumerate steps by hand.
    fn reference_frame_count(days: &[i64], step: i64) -> usize {
        let t0 = *days.iter().min().unwrap();
        let mut steps: Vec<i64> = days.iter().map(|d| (d - t0).div_euclid(step)).collect();
        steps.sort();
        steps.dedup();
        steps.len()
    }

    #[test]
    fn sar_then_optical_share_one_step() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        s.push(obs(Mode::SarAsc, 0, 3.0));
        s.push(obs(Mode::Opt, 1, 7.0));
        let a = assemble(&s, &PipelineParams::default());
        assert_eq!(a.len(), 1);
        assert_eq!(a.timestamps[0], day(0));
        assert_eq!(a.novelty[0], [true, false, true]);
        let f = &a.frames[0];
        assert_eq!(&f[0..2], &[3.0, 3.0]);
        assert_eq!(&f[2..4], &[0.0, 0.0]);
        assert!(f[4..].iter().all(|&v| v == 7.0));
    }

    #[test]
    fn daily_observations_over_ten_days() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        for d in 0..10 {
            s.push(obs(Mode::Opt, d, d as f32));
        }
        let a = assemble(&s, &PipelineParams::default());
        let days: Vec<i64> = (0..10).collect();
        assert_eq!(a.len(), reference_frame_count(&days, 2));
        assert_eq!(a.len(), 5);
        // latest observation of each step wins
        assert_eq!(a.frames[0][4], 1.0);
        assert!(a.timestamps.windows(2).all(|w| (w[1] - w[0]).num_days() >= 2));
    }

    #[test]
    fn single_sar_dsc_has_zero_optical_bands() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        s.push(obs(Mode::SarDsc, 0, 2.5));
        let a = assemble(&s, &PipelineParams::default());
        assert_eq!(a.len(), 1);
        assert_eq!(&a.frames[0][2..4], &[2.5, 2.5]);
        assert!(a.frames[0][4..].iter().all(|&v| v == 0.0));
        assert_eq!(a.novelty[0], [false, true, false]);
    }

    #[test]
    fn empty_series_gives_empty_sequence() {
        let s = ObservationSeries::empty(SceneMeta::new(3, 3));
        assert!(assemble(&s, &PipelineParams::default()).is_empty());
    }
}
