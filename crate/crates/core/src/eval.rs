//! Threshold-sweep evaluation: confusion counts, ROC and PR curves with
//! trapezoidal AUC, and Cohen's kappa across thresholds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::ingest::write_json;
use crate::raster::{Raster, TileCoord};
use crate::transfer::LabeledTile;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Cohen's kappa in exact integer arithmetic; 0 when chance agreement is 1.
    pub fn kappa(&self) -> f64 {
        let (tp, fp, tn, fn_) = (self.tp as i128, self.fp as i128, self.tn as i128, self.fn_ as i128);
        let n = tp + fp + tn + fn_;
        let chance = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
        let denom = n * n - chance;
        if denom == 0 {
            return 0.0;
        }
        (n * (tp + tn) - chance) as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CurveKind {
    Roc,
    Pr,
    Kappa,
}

/// ROC points are `(fpr, tpr)`, PR points `(recall, precision)` and kappa
/// points `(threshold, kappa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCurve {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
    pub auc: Option<f64>,
}

fn check_shapes(pred: &[f32], label: &[f32]) -> Result<()> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), label.len())));
    }
    Ok(())
}

/// A pixel is predicted positive iff `pred >= threshold`.
pub fn confusion_at(pred: &[f32], label: &[f32], threshold: f64) -> Result<ConfusionCounts> {
    check_shapes(pred, label)?;
    let mut c = ConfusionCounts::default();
    for (&p, &l) in pred.iter().zip(label) {
        match (f64::from(p) >= threshold, l >= 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Cumulative (tp, fp) after admitting each distinct score, highest first.
fn sweep(pred: &[f32], label: &[f32]) -> (Vec<(u64, u64)>, u64, u64) {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    let positives = label.iter().filter(|&&l| l >= 0.5).count() as u64;
    let negatives = label.len() as u64 - positives;
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let score = pred[order[i]];
        while i < order.len() && pred[order[i]] == score {
            if label[order[i]] >= 0.5 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((tp, fp));
    }
    (steps, positives, negatives)
}

pub fn roc_curve(pred: &[f32], label: &[f32]) -> Result<MetricsCurve> {
    check_shapes(pred, label)?;
    let (steps, pos, neg) = sweep(pred, label);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("{pos} positive and {neg} negative pixels")));
    }
    let mut points = vec![(0.0, 0.0)];
    // twice the trapezoid area in units of one (positive, negative) pair
    let mut area2: u128 = 0;
    let (mut tp0, mut fp0) = (0u64, 0u64);
    for &(tp, fp) in &steps {
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        (tp0, fp0) = (tp, fp);
    }
    let auc = area2 as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64;
    Ok(MetricsCurve {
        kind: CurveKind::Roc,
        points,
        auc: Some(auc),
    })
}

/// Starts at `(recall 0, precision 1)`; AUC by trapezoid over recall.
pub fn pr_curve(pred: &[f32], label: &[f32]) -> Result<MetricsCurve> {
    check_shapes(pred, label)?;
    let (steps, pos, _) = sweep(pred, label);
    if pos == 0 {
        return Err(Error::DegenerateLabels("no positive pixels".into()));
    }
    let mut points = vec![(0.0, 1.0)];
    for &(tp, fp) in &steps {
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(MetricsCurve {
        kind: CurveKind::Pr,
        points,
        auc: Some(auc),
    })
}

/// 101 evenly spaced thresholds in `[0, 1]`.
pub fn kappa_grid() -> Vec<f64> {
    (0..=100).map(|i| f64::from(i) / 100.0).collect()
}

pub fn kappa_sweep(pred: &[f32], label: &[f32], thresholds: &[f64]) -> Result<MetricsCurve> {
    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let points = sorted
        .into_iter()
        .map(|t| Ok((t, confusion_at(pred, label, t)?.kappa())))
        .collect::<Result<_>>()?;
    Ok(MetricsCurve {
        kind: CurveKind::Kappa,
        points,
        auc: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub model: String,
    pub dataset: String,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub kappa_max: f64,
    pub kappa_argmax_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    pub summary: MetricsSummary,
    pub roc: MetricsCurve,
    pub pr: MetricsCurve,
    pub kappa: MetricsCurve,
    pub pixels: usize,
}

fn center_crop_values(r: &Raster, crop: usize) -> Result<Vec<f32>> {
    Ok(r.center_crop(crop)?.data)
}

/// Pools center-cropped pixels of every labeled tile (sorted by coordinate,
/// minus `exclude`) and computes all curves.
pub fn score_dataset(
    model: &str,
    dataset: &str,
    preds: &[(TileCoord, Raster)],
    labels: &[LabeledTile],
    crop: usize,
    exclude: &[TileCoord],
) -> Result<ScoreBundle> {
    let by_coord: BTreeMap<TileCoord, &Raster> = preds.iter().map(|(c, r)| (*c, r)).collect();
    let mut tiles: Vec<&LabeledTile> = labels.iter().filter(|l| !exclude.contains(&l.coord)).collect();
    tiles.sort_by_key(|l| l.coord);
    if tiles.is_empty() {
        return Err(Error::Empty(format!("no tiles left to score for {model}")));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for t in tiles {
        let p = by_coord
            .get(&t.coord)
            .ok_or_else(|| Error::Manifest(format!("model {model} has no prediction for tile {}", t.coord)))?;
        if !p.same_shape(&t.label) {
            return Err(Error::Shape(format!("prediction and label of tile {} differ in size", t.coord)));
        }
        pred.extend(center_crop_values(p, crop)?);
        truth.extend(center_crop_values(&t.label, crop)?);
    }
    score_pixels(model, dataset, &pred, &truth)
}

pub fn score_pixels(model: &str, dataset: &str, pred: &[f32], truth: &[f32]) -> Result<ScoreBundle> {
    let roc = roc_curve(pred, truth)?;
    let pr = pr_curve(pred, truth)?;
    let kappa = kappa_sweep(pred, truth, &kappa_grid())?;
    let (mut best_t, mut best_k) = (0.0, f64::NEG_INFINITY);
    for &(t, k) in &kappa.points {
        if k > best_k {
            (best_t, best_k) = (t, k);
        }
    }
    Ok(ScoreBundle {
        summary: MetricsSummary {
            model: model.to_string(),
            dataset: dataset.to_string(),
            roc_auc: roc.auc.unwrap_or(f64::NAN),
            pr_auc: pr.auc.unwrap_or(f64::NAN),
            kappa_max: best_k,
            kappa_argmax_threshold: best_t,
        },
        roc,
        pr,
        kappa,
        pixels: pred.len(),
    })
}

fn write_csv(path: &Path, header: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from(header);
    s.push('\n');
    for (x, y) in points {
        let _ = writeln!(s, "{x},{y}");
    }
    fs::write(path, s).map_err(io_err(path))
}

/// Writes `{model}_{dataset}_{roc,pr,kappa}.csv` per bundle plus `metrics.json`.
pub fn write_scores(dir: &Path, bundles: &[ScoreBundle]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for b in bundles {
        let stem = format!("{}_{}", b.summary.model, b.summary.dataset);
        write_csv(&dir.join(format!("{stem}_roc.csv")), "x,y", &b.roc.points)?;
        write_csv(&dir.join(format!("{stem}_pr.csv")), "x,y", &b.pr.points)?;
        write_csv(&dir.join(format!("{stem}_kappa.csv")), "threshold,kappa", &b.kappa.points)?;
    }
    let summaries: Vec<&MetricsSummary> = bundles.iter().map(|b| &b.summary).collect();
    write_json(&dir.join("metrics.json"), &summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::Dataset;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_counting_auc(pred: &[f32], label: &[f32]) -> f64 {
        let (mut wins2, mut pairs) = (0u64, 0u64);
        for (i, &li) in label.iter().enumerate() {
            if li < 0.5 {
                continue;
            }
            for (j, &lj) in label.iter().enumerate() {
                if lj >= 0.5 {
                    continue;
                }
                pairs += 1;
                wins2 += match pred[i].partial_cmp(&pred[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        wins2 as f64 / (2 * pairs) as f64
    }

    #[test]
    fn confusion_matches_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred: Vec<f32> = (0..16).map(|_| rng.random()).collect();
        let label: Vec<f32> = (0..16).map(|_| f32::from(rng.random_bool(0.5) as u8)).collect();
        for t in [0.0, 0.25, 0.5, 0.9] {
            let c = confusion_at(&pred, &label, t).unwrap();
            let tp = (0..16).filter(|&k| f64::from(pred[k]) >= t && label[k] == 1.0).count() as u64;
            let fp = (0..16).filter(|&k| f64::from(pred[k]) >= t && label[k] == 0.0).count() as u64;
            assert_eq!((c.tp, c.fp, c.total()), (tp, fp, 16));
        }
        let all = confusion_at(&[0.1, 0.2, 0.3], &[1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!((all.tp + all.fp, all.tn, all.fn_), (3, 0, 0));
        let exact = confusion_at(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], 0.5).unwrap();
        assert_eq!((exact.fp, exact.fn_), (0, 0));
    }

    #[test]
    fn roc_reference_cases() {
        let auc = |p: &[f32], l: &[f32]| roc_curve(p, l).unwrap().auc.unwrap();
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]), 1.0);
        assert_eq!(auc(&[0.5; 4], &[0.0, 1.0, 0.0, 1.0]), 0.5);
        assert!(matches!(roc_curve(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::DegenerateLabels(_))));
        let curve = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
        assert!(curve.points.windows(2).all(|w| w[1].0 >= w[0].0));
    }

    #[test]
    fn roc_auc_equals_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(2..40);
            // coarse scores force ties
            let pred: Vec<f32> = (0..n).map(|_| f32::from(rng.random_range(0u8..10)) / 10.0).collect();
            let mut label: Vec<f32> = (0..n).map(|_| f32::from(rng.random_bool(0.4) as u8)).collect();
            label[0] = 1.0;
            label[1] = 0.0;
            let auc = roc_curve(&pred, &label).unwrap().auc.unwrap();
            assert!((auc - pair_counting_auc(&pred, &label)).abs() <= 1e-12);
        }
    }

    /// Enumerates thresholds at every distinct score directly.
    fn pr_enumeration(pred: &[f32], label: &[f32]) -> Vec<(f64, f64)> {
        let mut scores: Vec<f32> = pred.to_vec();
        scores.sort_by(|a, b| b.total_cmp(a));
        scores.dedup();
        let pos = label.iter().filter(|&&l| l == 1.0).count() as f64;
        let mut out = vec![(0.0, 1.0)];
        for s in scores {
            let c = confusion_at(pred, label, f64::from(s)).unwrap();
            out.push((c.tp as f64 / pos, c.tp as f64 / (c.tp + c.fp) as f64));
        }
        out
    }

    #[test]
    fn pr_reference_cases() {
        let (p, l) = ([0.1, 0.4, 0.35, 0.8], [0.0, 0.0, 1.0, 1.0]);
        let curve = pr_curve(&p, &l).unwrap();
        assert_eq!(curve.points, pr_enumeration(&p, &l));
        assert_eq!(pr_curve(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap().auc, Some(1.0));
        let all_pos = pr_curve(&[0.3, 0.1, 0.7], &[1.0; 3]).unwrap();
        assert!(all_pos.points.iter().all(|&(_, prec)| prec == 1.0));
        assert_eq!(all_pos.auc, Some(1.0));
        assert!(pr_curve(&[0.3], &[0.0]).is_err());
    }

    #[test]
    fn kappa_reference_cases() {
        let c = ConfusionCounts { tp: 40, tn: 40, fp: 10, fn_: 10 };
        assert_eq!(c.kappa(), 0.6);
        let label = [1.0, 0.0, 1.0, 0.0, 0.0];
        let k = kappa_sweep(&label, &label, &[0.3, 0.5, 0.9]).unwrap();
        assert!(k.points.iter().all(|&(_, v)| v == 1.0));
        let constant = kappa_sweep(&[0.4; 5], &label, &kappa_grid()).unwrap();
        assert!(constant.points.iter().all(|&(_, v)| v == 0.0));
        assert_eq!(kappa_grid().len(), 101);
    }

    fn tile(coord: TileCoord, values: Vec<f32>) -> LabeledTile {
        LabeledTile {
            coord,
            label: Raster::new(4, 4, values).unwrap(),
            dataset: Dataset::Testing,
        }
    }

    #[test]
    fn dataset_scoring_pools_and_excludes() {
        let l0: Vec<f32> = (0..16).map(|k| f32::from(k % 3 == 0)).collect();
        let l1: Vec<f32> = (0..16).map(|k| f32::from(k % 5 == 0)).collect();
        let (a, b) = (TileCoord::new(0, 0), TileCoord::new(43, 18));
        let labels = vec![tile(a, l0.clone()), tile(b, l1.clone())];
        let p0 = Raster::new(4, 4, (0..16).map(|k| (k as f32 * 0.37).sin().abs()).collect()).unwrap();
        let p1 = Raster::new(4, 4, (0..16).map(|k| (k as f32 * 0.11).cos().abs()).collect()).unwrap();
        let preds = vec![(a, p0.clone()), (b, p1.clone())];
        let pooled = score_dataset("V1", "testing", &preds, &labels, 2, &[]).unwrap();
        assert_eq!(pooled.pixels, 8);
        let mut pv = p0.center_crop(2).unwrap().data;
        pv.extend(p1.center_crop(2).unwrap().data);
        let mut lv = labels[0].label.center_crop(2).unwrap().data;
        lv.extend(labels[1].label.center_crop(2).unwrap().data);
        let concat = score_pixels("V1", "testing", &pv, &lv).unwrap();
        assert_eq!(pooled, concat);
        let reversed: Vec<_> = preds.iter().rev().cloned().collect();
        let rev_labels: Vec<_> = labels.iter().rev().cloned().collect();
        assert_eq!(score_dataset("V1", "testing", &reversed, &rev_labels, 2, &[]).unwrap(), pooled);
        let identical = score_dataset("V1", "t", &[(a, labels[0].label.clone())], &labels[..1], 2, &[]).unwrap();
        assert_eq!(identical.summary.roc_auc, 1.0);
        assert_eq!(identical.summary.kappa_max, 1.0);
        assert!(score_dataset("V1", "t", &preds[..1], &labels, 2, &[]).is_err());
    }

    #[test]
    fn excluding_a_tile_drops_its_center_pixels() {
        let labels: Vec<LabeledTile> = [(0, 0), (43, 18)]
            .into_iter()
            .map(|(r, c)| LabeledTile {
                coord: TileCoord::new(r, c),
                label: Raster::new(32, 32, (0..1024).map(|k| f32::from(k % 4 == 0)).collect()).unwrap(),
                dataset: Dataset::Testing,
            })
            .collect();
        let preds: Vec<_> = labels.iter().map(|l| (l.coord, Raster::filled(32, 32, 0.3))).collect();
        let all = score_dataset("C", "testing", &preds, &labels, 30, &[]).unwrap();
        let minus = score_dataset("C", "testing-", &preds, &labels, 30, &["43:18".parse().unwrap()]).unwrap();
        assert_eq!(all.pixels - minus.pixels, 900);
    }

    proptest! {
        #[test]
        fn roc_points_stay_in_unit_square(
            pred in proptest::collection::vec(0.0f32..1.0, 2..30),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut label: Vec<f32> = pred.iter().map(|_| f32::from(rng.random_bool(0.5) as u8)).collect();
            label[0] = 1.0;
            label[1] = 0.0;
            let roc = roc_curve(&pred, &label).unwrap();
            for &(x, y) in &roc.points {
                prop_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            }
            let auc = roc.auc.unwrap();
            prop_assert!((0.0..=1.0).contains(&auc));
        }
    }
}
