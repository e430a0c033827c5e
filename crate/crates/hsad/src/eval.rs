//! ROC curves, AUC, and fixed-false-alarm-rate detection maps.
//!
//! The curve sweeps thresholds over the unique score values in descending
//! order, grouping ties at one threshold. The area accumulates in integer
//! arithmetic (trapezoids scaled by `2 * P * N`), which makes it exactly the
//! Mann-Whitney statistic: concordant pairs count 2, ties count 1.

use std::path::Path;

use crate::cube::Raster;
use crate::error::{Error, Result};

/// An ROC curve: `(FPR, TPR)` points from `(0, 0)` to `(1, 1)` and the area
/// under it.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(threshold, fpr, tpr)` per sweep point; the leading `(0, 0)` point
    /// carries an infinite threshold.
    pub points: Vec<(f64, f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Write as CSV with columns `threshold,fpr,tpr`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("threshold,fpr,tpr\n");
        for (t, fpr, tpr) in &self.points {
            out.push_str(&format!("{t},{fpr},{tpr}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn split_by_class(scores: &Raster, reference: &Raster) -> Result<(Vec<f64>, Vec<f64>)> {
    if !scores.same_shape(reference) {
        return Err(Error::Shape(format!(
            "scores {}x{} vs reference {}x{}",
            scores.height(),
            scores.width(),
            reference.height(),
            reference.width()
        )));
    }
    if !reference.is_binary() {
        return Err(Error::InvalidParam(
            "reference map must contain only 0 and 1".into(),
        ));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &c) in scores.data().iter().zip(reference.data()) {
        if c == 1.0 {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClassReference);
    }
    Ok((pos, neg))
}

/// Build the ROC curve of a score map against a binary reference map.
pub fn roc_curve(scores: &Raster, reference: &Raster) -> Result<RocCurve> {
    let (pos, neg) = split_by_class(scores, reference)?;
    let p = pos.len() as u128;
    let n = neg.len() as u128;

    // Descending sweep with ties grouped at one threshold.
    let mut labeled: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    labeled.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores are finite"));

    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let mut area2: u128 = 0; // area scaled by 2 * P * N
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut i = 0;
    while i < labeled.len() {
        let threshold = labeled[i].0;
        let (prev_tp, prev_fp) = (tp, fp);
        while i < labeled.len() && labeled[i].0 == threshold {
            if labeled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - prev_fp) * (tp + prev_tp);
        points.push((threshold, fp as f64 / n as f64, tp as f64 / p as f64));
    }
    let auc = area2 as f64 / (2 * p * n) as f64;
    Ok(RocCurve { points, auc })
}

/// Binary detection map at a fixed false-alarm rate: the threshold is the
/// smallest value keeping the background false-positive fraction at or below
/// `far`, and strictly greater scores are flagged.
pub fn detection_map(scores: &Raster, reference: &Raster, far: f64) -> Result<Raster> {
    if !(0.0..=1.0).contains(&far) {
        return Err(Error::InvalidParam(format!(
            "false alarm rate must be in [0, 1], got {far}"
        )));
    }
    let (_, mut neg) = split_by_class(scores, reference)?;
    neg.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
    // floor(far * N_bg) allowed false positives, with slack against upward
    // rounding of exact multiples.
    let allowed = ((far * neg.len() as f64 + 1e-9).floor() as usize).min(neg.len());
    let threshold = if allowed >= neg.len() {
        f64::NEG_INFINITY
    } else {
        neg[allowed]
    };
    let data: Vec<f64> = scores
        .data()
        .iter()
        .map(|&s| if s > threshold { 1.0 } else { 0.0 })
        .collect();
    Raster::new(scores.height(), scores.width(), data)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rasters(scores: Vec<f64>, labels: Vec<f64>) -> (Raster, Raster) {
        let n = scores.len();
        (
            Raster::new(1, n, scores).unwrap(),
            Raster::new(1, n, labels).unwrap(),
        )
    }

    /// Mann-Whitney oracle on the same integer scale: concordant pairs
    /// count 2, ties 1, divided by 2 * P * N.
    fn pair_counting_auc(scores: &[f64], labels: &[f64]) -> f64 {
        let mut num: u128 = 0;
        let mut p: u128 = 0;
        let mut n: u128 = 0;
        for (i, &li) in labels.iter().enumerate() {
            if li == 1.0 {
                p += 1;
                for (j, &lj) in labels.iter().enumerate() {
                    if lj == 0.0 {
                        if scores[i] > scores[j] {
                            num += 2;
                        } else if scores[i] == scores[j] {
                            num += 1;
                        }
                    }
                }
            } else {
                n += 1;
            }
        }
        num as f64 / (2 * p * n) as f64
    }

    #[test]
    fn perfect_separation_gives_auc_one() {
        let (s, r) = rasters(
            vec![9.0, 8.0, 7.0, 1.0, 0.5, 0.2],
            vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        );
        let roc = roc_curve(&s, &r).unwrap();
        assert_eq!(roc.auc, 1.0);
    }

    #[test]
    fn constant_scores_give_auc_half() {
        let (s, r) = rasters(vec![3.0; 6], vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let roc = roc_curve(&s, &r).unwrap();
        assert_eq!(roc.auc, 0.5);
        // Single diagonal segment: (0,0) then (1,1).
        assert_eq!(roc.points.len(), 2);
    }

    #[test]
    fn six_pixel_worked_example() {
        let (s, r) = rasters(
            vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        );
        let roc = roc_curve(&s, &r).unwrap();
        assert_eq!(roc.auc, 0.875);
    }

    #[test]
    fn curve_endpoints_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 200;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<f64> = (0..n).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
        let (s, r) = rasters(scores, labels);
        let roc = roc_curve(&s, &r).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.1, first.2), (0.0, 0.0));
        assert_eq!((last.1, last.2), (1.0, 1.0));
        for pair in roc.points.windows(2) {
            assert!(pair[1].1 >= pair[0].1, "fpr not nondecreasing");
            assert!(pair[1].2 >= pair[0].2, "tpr not nondecreasing");
        }
    }

    #[test]
    fn trapezoid_equals_pair_counting_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(4..1000);
            // Coarse score grid to force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64 / 3.0).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.2))).collect();
            labels[0] = 1.0;
            labels[1] = 0.0;
            let oracle = pair_counting_auc(&scores, &labels);
            let (s, r) = rasters(scores, labels);
            let roc = roc_curve(&s, &r).unwrap();
            assert_eq!(roc.auc, oracle, "trapezoid vs pair counting");
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 300;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.3))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let transformed: Vec<f64> = scores.iter().map(|&v| (0.5 * v).exp() + 3.0).collect();
        let (s1, r1) = rasters(scores, labels.clone());
        let (s2, r2) = rasters(transformed, labels);
        assert_eq!(
            roc_curve(&s1, &r1).unwrap().auc,
            roc_curve(&s2, &r2).unwrap().auc
        );
    }

    #[test]
    fn single_class_reference_rejected() {
        let (s, r) = rasters(vec![1.0, 2.0], vec![0.0, 0.0]);
        assert!(matches!(
            roc_curve(&s, &r).unwrap_err(),
            Error::SingleClassReference
        ));
        let (s, r) = rasters(vec![1.0, 2.0], vec![1.0, 1.0]);
        assert!(matches!(
            roc_curve(&s, &r).unwrap_err(),
            Error::SingleClassReference
        ));
    }

    #[test]
    fn non_binary_reference_rejected() {
        let (s, r) = rasters(vec![1.0, 2.0], vec![0.5, 1.0]);
        assert!(roc_curve(&s, &r).is_err());
    }

    #[test]
    fn far_zero_allows_no_false_positives() {
        let (s, r) = rasters(vec![5.0, 4.0, 3.0, 2.0, 1.0], vec![1.0, 0.0, 1.0, 0.0, 0.0]);
        let map = detection_map(&s, &r, 0.0).unwrap();
        // Threshold = max background score (4.0); only the 5.0 pixel flags.
        assert_eq!(map.data(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn perfect_separation_recovers_reference() {
        let (s, r) = rasters(
            vec![9.0, 8.0, 1.0, 0.5, 0.2, 0.1],
            vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        );
        let map = detection_map(&s, &r, 0.01).unwrap();
        assert_eq!(map.data(), r.data());
    }

    #[test]
    fn false_positive_budget_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let n = rng.gen_range(10..400);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.1))).collect();
            labels[0] = 1.0;
            labels[1] = 0.0;
            let far = [0.0, 0.01, 0.05, 0.25][rng.gen_range(0..4)];
            let (s, r) = rasters(scores, labels);
            let map = detection_map(&s, &r, far).unwrap();
            let n_bg = r.data().iter().filter(|&&c| c == 0.0).count();
            let fps = map
                .data()
                .iter()
                .zip(r.data())
                .filter(|&(&m, &c)| m == 1.0 && c == 0.0)
                .count();
            assert!(
                fps <= (far * n_bg as f64 + 1e-9).floor() as usize,
                "{fps} false positives exceed budget at far {far} with {n_bg} background"
            );
        }
    }

    #[test]
    fn hundred_background_pixels_at_far_001_allow_one() {
        let scores: Vec<f64> = (0..104).map(|i| (104 - i) as f64).collect();
        let mut labels = vec![0.0; 104];
        for l in labels.iter_mut().take(4) {
            *l = 1.0;
        }
        let (s, r) = rasters(scores, labels);
        let map = detection_map(&s, &r, 0.01).unwrap();
        let fps = map
            .data()
            .iter()
            .zip(r.data())
            .filter(|&(&m, &c)| m == 1.0 && c == 0.0)
            .count();
        assert!(fps <= 1, "{fps} false positives");
    }

    #[test]
    fn roc_csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roc.csv");
        let (s, r) = rasters(vec![3.0, 2.0, 1.0], vec![1.0, 0.0, 0.0]);
        let roc = roc_curve(&s, &r).unwrap();
        roc.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("threshold,fpr,tpr\n"));
        assert_eq!(text.lines().count(), 1 + roc.points.len());
    }
}
