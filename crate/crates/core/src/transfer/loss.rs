use crate::error::{Error, Result};
use crate::raster::Raster;

pub const TANIMOTO_EPS: f64 = 1e-7;

/// Element-wise maximum with the winning window per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPrediction {
    pub raster: Raster,
    /// Index of the maximal input per pixel; ties go to the lowest index.
    pub argmax: Vec<usize>,
}

impl PooledPrediction {
    /// Routes a gradient on the pooled raster back to input `index`.
    pub fn route(&self, grad: &[f32], index: usize) -> Vec<f32> {
        grad.iter()
            .zip(&self.argmax)
            .map(|(&g, &a)| if a == index { g } else { 0.0 })
            .collect()
    }
}

pub fn max_pool_over_time(predictions: &[Raster]) -> Result<PooledPrediction> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::Empty("max pooling needs at least one prediction".into()))?;
    if predictions.iter().any(|p| !p.same_shape(first)) {
        return Err(Error::Shape("predictions to pool differ in shape".into()));
    }
    let mut raster = first.clone();
    let mut argmax = vec![0usize; raster.data.len()];
    for (k, p) in predictions.iter().enumerate().skip(1) {
        for ((best, arg), &v) in raster.data.iter_mut().zip(&mut argmax).zip(&p.data) {
            if v > *best {
                *best = v;
                *arg = k;
            }
        }
    }
    Ok(PooledPrediction { raster, argmax })
}

fn tanimoto_with_grad(p: &[f64], l: &[f64]) -> (f64, Vec<f64>) {
    let (mut pl, mut pp, mut ll) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(l) {
        pl += a * b;
        pp += a * a;
        ll += b * b;
    }
    let num = pl + TANIMOTO_EPS;
    let den = pp + ll - pl + TANIMOTO_EPS;
    let grad = p
        .iter()
        .zip(l)
        .map(|(&a, &b)| (b * den - num * (2.0 * a - b)) / (den * den))
        .collect();
    (num / den, grad)
}

/// `L = 1 - (T(p,l) + T(1-p,1-l)) / 2` with
/// `T(p,l) = (Σpl + ε) / (Σp² + Σl² - Σpl + ε)`, and `dL/dp`.
pub fn tanimoto_complement_loss(pred: &[f64], label: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != label.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, label has {}",
            pred.len(),
            label.len()
        )));
    }
    let (t1, g1) = tanimoto_with_grad(pred, label);
    let q: Vec<f64> = pred.iter().map(|v| 1.0 - v).collect();
    let m: Vec<f64> = label.iter().map(|v| 1.0 - v).collect();
    let (t2, g2) = tanimoto_with_grad(&q, &m);
    let loss = 1.0 - 0.5 * (t1 + t2);
    let grad = g1.iter().zip(&g2).map(|(a, b)| -0.5 * (a - b)).collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_values() {
        let label = [1.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(tanimoto_complement_loss(&label, &label).unwrap().0, 0.0);
        let comp: Vec<f64> = label.iter().map(|v| 1.0 - v).collect();
        assert!((tanimoto_complement_loss(&comp, &label).unwrap().0 - 1.0).abs() < 1e-6);
        let (l, _) = tanimoto_complement_loss(&[0.5; 25], &[1.0; 25]).unwrap();
        // T(p,l) = 12.5/18.75, T(1-p,1-l) = eps/(6.25+eps)
        let expected = 1.0 - 0.5 * ((12.5 + TANIMOTO_EPS) / (18.75 + TANIMOTO_EPS) + TANIMOTO_EPS / (6.25 + TANIMOTO_EPS));
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 2.0 / 3.0).abs() < 1e-6);
        let zero_one = tanimoto_complement_loss(&[0.0; 9], &[1.0; 9]).unwrap().0;
        assert!((zero_one - 1.0).abs() < 1e-6);
        assert!(tanimoto_complement_loss(&[0.5; 3], &[1.0; 4]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p: Vec<f64> = (0..25).map(|_| rng.random_range(0.01..0.99)).collect();
            let l: Vec<f64> = (0..25).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
            let (_, g) = tanimoto_complement_loss(&p, &l).unwrap();
            for k in 0..25 {
                let h = 1e-6;
                let mut up = p.clone();
                up[k] += h;
                let mut dn = p.clone();
                dn[k] -= h;
                let fd = (tanimoto_complement_loss(&up, &l).unwrap().0 - tanimoto_complement_loss(&dn, &l).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - g[k]).abs() / (fd.abs() + g[k].abs()).max(1e-8);
                assert!(rel < 1e-4, "pixel {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn pooling_ties_go_to_lowest_index() {
        let a = Raster::new(1, 3, vec![0.2, 0.9, 0.5]).unwrap();
        let b = Raster::new(1, 3, vec![0.2, 1.0, 0.1]).unwrap();
        let pooled = max_pool_over_time(&[a.clone(), b]).unwrap();
        assert_eq!(pooled.raster.data, vec![0.2, 1.0, 0.5]);
        assert_eq!(pooled.argmax, vec![0, 1, 0]);
        assert_eq!(max_pool_over_time(std::slice::from_ref(&a)).unwrap().raster, a);
        assert!(max_pool_over_time(&[]).is_err());
    }

    #[test]
    fn non_argmax_perturbation_keeps_loss() {
        let a = Raster::new(1, 4, vec![0.9, 0.1, 0.6, 0.3]).unwrap();
        let b = Raster::new(1, 4, vec![0.2, 0.4, 0.7, 0.1]).unwrap();
        let label = [1.0, 0.0, 1.0, 0.0];
        let loss = |rs: &[Raster]| {
            let p = max_pool_over_time(rs).unwrap();
            let v: Vec<f64> = p.raster.data.iter().map(|&x| x as f64).collect();
            tanimoto_complement_loss(&v, &label).unwrap().0
        };
        let base = loss(&[a.clone(), b.clone()]);
        let mut a2 = a.clone();
        a2.data[2] += 1e-3; // window 1 wins pixel 2
        assert_eq!(loss(&[a2, b.clone()]), base);
        let pooled = max_pool_over_time(&[a, b]).unwrap();
        assert_eq!(pooled.route(&[1.0; 4], 1), vec![0.0, 1.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn loss_is_bounded_and_complement_symmetric(
            p in proptest::collection::vec(0.0f64..=1.0, 1..40),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l: Vec<f64> = p.iter().map(|_| f64::from(rng.random_bool(0.5) as u8)).collect();
            let (a, _) = tanimoto_complement_loss(&p, &l).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            let pc: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
            let lc: Vec<f64> = l.iter().map(|v| 1.0 - v).collect();
            let (b, _) = tanimoto_complement_loss(&pc, &lc).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn pooled_dominates_inputs(
            vals in proptest::collection::vec(proptest::collection::vec(0.0f32..1.0, 6), 1..5)
        ) {
            let rs: Vec<Raster> = vals.iter().map(|v| Raster::new(2, 3, v.clone()).unwrap()).collect();
            let pooled = max_pool_over_time(&rs).unwrap();
            for r in &rs {
                for (p, v) in pooled.raster.data.iter().zip(&r.data) {
                    prop_assert!(p >= v);
                }
            }
            for (i, &a) in pooled.argmax.iter().enumerate() {
                prop_assert_eq!(rs[a].data[i], pooled.raster.data[i]);
            }
        }
    }
}
