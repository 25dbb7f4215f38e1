use crate::ingest::{Mode, Observation, ObservationSeries};

use super::Step;

/// Carries each masked pixel forward from the most recent valid observation of
/// the same mode. Pixels without any prior valid value become zero. Output
/// masks are fully valid.
pub fn temporal_stack(series: &ObservationSeries) -> ObservationSeries {
    let pixels = series.scene.pixels();
    let mut out = ObservationSeries::empty(series.scene.clone());
    for mode in Mode::ALL {
        let bands = mode.bands();
        let mut last = vec![0.0f32; bands * pixels];
        for obs in series.mode(mode) {
            match &obs.mask {
                None => last.copy_from_slice(&obs.data),
                Some(mask) => {
                    for b in 0..bands {
                        let src = &obs.data[b * pixels..(b + 1) * pixels];
                        let dst = &mut last[b * pixels..(b + 1) * pixels];
                        for ((d, s), m) in dst.iter_mut().zip(src).zip(mask) {
                            if *m != 0 {
                                *d = *s;
                            }
                        }
                    }
                }
            }
            out.push(Observation {
                mode,
                timestamp: obs.timestamp,
                data: last.clone(),
                mask: obs.mask.as_ref().map(|_| vec![1u8; pixels]),
            });
        }
    }
    out
}

/// Holds observation values constant until `step` has elapsed since the last
/// update, keeping every timestamp. Both SAR orbit directions use `sar_step`.
/// `Step::Infinite` freezes each mode at its first observation.
pub fn stale_resample(series: &ObservationSeries, sar_step: Step, opt_step: Step) -> ObservationSeries {
    let mut out = ObservationSeries::empty(series.scene.clone());
    for mode in Mode::ALL {
        let step = if mode.is_sar() { sar_step } else { opt_step };
        let list = series.mode(mode);
        let mut held: Option<&Observation> = None;
        for obs in list {
            let update = match (held, step.seconds()) {
                (None, _) => true,
                (Some(_), None) => false,
                (Some(h), Some(s)) => (obs.timestamp - h.timestamp).num_seconds() >= s,
            };
            if update {
                held = Some(obs);
            }
            let src = held.expect("held set on first observation");
            out.push(Observation {
                mode,
                timestamp: obs.timestamp,
                data: src.data.clone(),
                mask: src.mask.clone(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SceneMeta;
    use chrono::{DateTime, TimeZone, Utc};

    fn day(d: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::days(d)
    }

    fn opt(d: i64, value: f32, valid: bool) -> Observation {
        Observation {
            mode: Mode::Opt,
            timestamp: day(d),
            data: vec![value; 13],
            mask: Some(vec![valid as u8]),
        }
    }

    fn sar(mode: Mode, d: i64, value: f32) -> Observation {
        Observation {
            mode,
            timestamp: day(d),
            data: vec![value; 2],
            mask: None,
        }
    }

    #[test]
    fn masked_pixel_carries_last_valid_value() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        s.push(opt(0, 5.0, true));
        s.push(opt(2, 9.0, false));
        let st = temporal_stack(&s);
        assert_eq!(st.opt[1].data[0], 5.0);
        assert_eq!(st.opt[1].mask.as_deref(), Some(&[1u8][..]));
    }

    #[test]
    fn never_valid_pixel_is_zeroed() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        s.push(opt(0, 5.0, false));
        s.push(opt(2, 7.0, false));
        let st = temporal_stack(&s);
        assert!(st.opt.iter().all(|o| o.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn fully_valid_series_is_unchanged() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        s.push(opt(0, 1.0, true));
        s.push(opt(3, 2.0, true));
        s.push(sar(Mode::SarAsc, 1, 4.0));
        assert_eq!(temporal_stack(&s), s);
    }

    #[test]
    fn stale_native_step_is_identity() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        for d in (0..40).step_by(4) {
            s.push(opt(d, d as f32, true));
        }
        for d in (1..40).step_by(6) {
            s.push(sar(Mode::SarAsc, d, d as f32));
            s.push(sar(Mode::SarDsc, d + 2, d as f32));
        }
        assert_eq!(stale_resample(&s, Step::Days(2), Step::Days(2)), s);
    }

    #[test]
    fn stale_infinite_freezes_first_state() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        for d in 0..10 {
            s.push(opt(d * 3, d as f32, true));
            s.push(sar(Mode::SarDsc, d * 3 + 1, -(d as f32)));
        }
        let r = stale_resample(&s, Step::Infinite, Step::Infinite);
        assert_eq!(r.opt.len(), 10);
        assert!(r.opt.iter().all(|o| o.data == s.opt[0].data));
        assert!(r.sar_dsc.iter().all(|o| o.data == s.sar_dsc[0].data));
        let ts: Vec<_> = r.opt.iter().map(|o| o.timestamp).collect();
        let orig: Vec<_> = s.opt.iter().map(|o| o.timestamp).collect();
        assert_eq!(ts, orig);
    }

    /// Reference: value at day d is the value of the latest update day u with
    /// updates at 0 and each time d - u >= 120.
    #[test]
    fn stale_hold_interval_matches_reference() {
        let mut s = ObservationSeries::empty(SceneMeta::new(1, 1));
        for d in (0..=360).step_by(10) {
            s.push(sar(Mode::SarAsc, d, d as f32));
        }
        let r = stale_resample(&s, Step::Days(120), Step::Days(2));
        let values: Vec<f32> = r.sar_asc.iter().map(|o| o.data[0]).collect();
        let mut expected = Vec::new();
        let mut last_update = 0i64;
        for d in (0..=360).step_by(10) {
            if d - last_update >= 120 {
                last_update = d;
            }
            expected.push(last_update as f32);
        }
        assert_eq!(values, expected);
        let mut change_days: Vec<i64> = vec![0];
        for i in 1..values.len() {
            if values[i] != values[i - 1] {
                change_days.push(i as i64 * 10);
            }
        }
        assert_eq!(change_days, vec![0, 120, 240, 360]);
    }
}
