//! Confusion metrics, ROC analysis, cross-validated threshold tuning and the
//! predict-like-today baseline.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::SignificanceSeries;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(predictions: &[bool], labels: &[bool]) -> Self {
        assert_eq!(predictions.len(), labels.len(), "unaligned predictions and labels");
        let mut c = ConfusionCounts::default();
        for (&p, &t) in predictions.iter().zip(labels) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    /// `None` when there are no positive labels.
    pub fn tpr(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.tp as f64 / self.positives() as f64)
    }

    /// `None` when there are no negative labels.
    pub fn tnr(&self) -> Option<f64> {
        (self.negatives() > 0).then(|| self.tn as f64 / self.negatives() as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        self.tnr().map(|t| 1.0 - t)
    }

    /// `(TPR + TNR) / 2`; an undefined rate contributes 0.5.
    pub fn bac(&self) -> f64 {
        (self.tpr().unwrap_or(0.5) + self.tnr().unwrap_or(0.5)) / 2.0
    }

    /// Whether either rate was undefined.
    pub fn undefined_rate(&self) -> bool {
        self.tpr().is_none() || self.tnr().is_none()
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.positives() + self.negatives();
        if n == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / n as f64
    }
}

/// Balanced accuracy of thresholded scores (`score >= threshold` is
/// positive).
pub fn bac_at(scores: &[f64], labels: &[bool], threshold: f64) -> ConfusionCounts {
    let preds: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    ConfusionCounts::from_pairs(&preds, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Sorted by decreasing threshold, so FPR and TPR are nondecreasing.
    /// The first point is `(0,0)` at `+inf`; the last is `(1,1)`.
    pub points: Vec<RocPoint>,
}

/// Sweep every distinct score as an inclusive threshold.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    assert_eq!(scores.len(), labels.len(), "unaligned scores and labels");
    let pos = labels.iter().filter(|&&t| t).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(RocCurve { points })
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    /// Area under the upper convex hull: the rates reachable by randomizing
    /// between two thresholds.
    pub fn hull_auc(&self) -> f64 {
        let hull = self.upper_hull();
        hull.windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    pub fn upper_hull(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        pts.push((0.0, 0.0));
        pts.push((1.0, 1.0));
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pts.dedup();
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for p in pts {
            while hull.len() >= 2 {
                let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
                if cross >= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "threshold\tfpr\ttpr")?;
        for p in &self.points {
            writeln!(w, "{}\t{}\t{}", p.threshold, p.fpr, p.tpr)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub confusion: ConfusionCounts,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub bac: f64,
    pub undefined_rate: bool,
    pub auc: Option<f64>,
    pub hull_auc: Option<f64>,
}

/// Score-based report: confusion at `threshold` plus ROC areas when both
/// classes are present.
pub fn evaluate_scores(scores: &[f64], labels: &[bool], threshold: f64) -> EvalReport {
    let confusion = bac_at(scores, labels, threshold);
    let curve = roc(scores, labels).ok();
    EvalReport {
        n: labels.len(),
        threshold,
        confusion,
        tpr: confusion.tpr(),
        tnr: confusion.tnr(),
        bac: confusion.bac(),
        undefined_rate: confusion.undefined_rate(),
        auc: curve.as_ref().map(RocCurve::auc),
        hull_auc: curve.as_ref().map(RocCurve::hull_auc),
    }
}

pub fn evaluate_predictions(predictions: &[bool], labels: &[bool]) -> EvalReport {
    let confusion = ConfusionCounts::from_pairs(predictions, labels);
    EvalReport {
        n: labels.len(),
        threshold: 0.5,
        confusion,
        tpr: confusion.tpr(),
        tnr: confusion.tnr(),
        bac: confusion.bac(),
        undefined_rate: confusion.undefined_rate(),
        auc: None,
        hull_auc: None,
    }
}

/// How cross-validation folds are formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    /// Contiguous blocks of periods; one period never spans two folds.
    #[default]
    Temporal,
    /// Instances shuffled into folds.
    Random,
}

/// Fold index per instance.
pub fn assign_folds(periods: &[usize], n_folds: usize, mode: FoldMode, seed: u64) -> Vec<usize> {
    let n = periods.len();
    match mode {
        FoldMode::Temporal => {
            let mut distinct: Vec<usize> = periods.to_vec();
            distinct.sort_unstable();
            // fold of a period by the number of instances strictly before it
            periods
                .iter()
                .map(|p| {
                    let before = distinct.partition_point(|q| q < p);
                    (before * n_folds / n.max(1)).min(n_folds - 1)
                })
                .collect()
        }
        FoldMode::Random => {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut folds = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                folds[i] = pos % n_folds;
            }
            folds
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub threshold: f64,
    pub cv_bac: f64,
    /// Folds whose held-out labels had a single class.
    pub single_class_folds: usize,
}

/// Pick the grid value maximizing mean held-out BAC; ties go to the
/// smallest value. `held_out_scores(f)` returns scores for the instances of
/// fold `f`, in instance order.
pub fn tune_by_cv(
    labels: &[bool],
    folds: &[usize],
    n_folds: usize,
    grid: &[f64],
    mut held_out_scores: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let mut total = vec![0.0; grid.len()];
    let mut single_class_folds = 0;
    let mut used = 0;
    for f in 0..n_folds {
        let held: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
        if held.is_empty() {
            continue;
        }
        used += 1;
        let scores = held_out_scores(f)?;
        let ys: Vec<bool> = held.iter().map(|&i| labels[i]).collect();
        let pos = ys.iter().filter(|&&t| t).count();
        if pos == 0 || pos == ys.len() {
            single_class_folds += 1;
        }
        // rates at every grid value from one sorted pass
        let mut pos_scores: Vec<f64> = Vec::with_capacity(pos);
        let mut neg_scores: Vec<f64> = Vec::with_capacity(ys.len() - pos);
        for (s, &t) in scores.iter().zip(&ys) {
            if t {
                pos_scores.push(*s);
            } else {
                neg_scores.push(*s);
            }
        }
        pos_scores.sort_by(f64::total_cmp);
        neg_scores.sort_by(f64::total_cmp);
        for (g, &tau) in grid.iter().enumerate() {
            let tp = pos_scores.len() - pos_scores.partition_point(|&s| s < tau);
            let tn = neg_scores.partition_point(|&s| s < tau);
            let c = ConfusionCounts {
                tp,
                fn_: pos_scores.len() - tp,
                tn,
                fp: neg_scores.len() - tn,
            };
            total[g] += c.bac();
        }
    }
    if used == 0 {
        return Err(Error::NoInstances);
    }
    let mut best = 0;
    for g in 1..grid.len() {
        let better = total[g] > total[best] || (total[g] == total[best] && grid[g] < grid[best]);
        if better {
            best = g;
        }
    }
    Ok(TuneResult {
        threshold: grid[best],
        cv_bac: total[best] / used as f64,
        single_class_folds,
    })
}

/// Whether the baseline reads the window ending today or the one centered
/// on today.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineWindow {
    /// Days `i-2 ..= i`, fully observed on day `i`.
    #[default]
    Trailing,
    /// Days `i-1 ..= i+1`.
    Centered,
}

/// Predict for any horizon the situation today: positive iff the latest
/// three-day window is significant.
pub fn baseline_predict(
    series: &SignificanceSeries,
    entity: usize,
    day: usize,
    _horizon: usize,
    window: BaselineWindow,
) -> Option<bool> {
    let center = match window {
        BaselineWindow::Trailing => day as isize - 1,
        BaselineWindow::Centered => day as isize,
    };
    series.is_significant(entity, center)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: usize,
    pub model: EvalReport,
    pub baseline: EvalReport,
}

pub fn write_sweep_table<W: Write>(rows: &[HorizonRow], mut w: W) -> Result<()> {
    writeln!(w, "horizon\tmodel_bac\tbaseline_bac")?;
    for r in rows {
        writeln!(w, "{}\t{:.6}\t{:.6}", r.horizon, r.model.bac, r.baseline.bac)?;
    }
    Ok(())
}

/// Vote fractions per prediction day (rows) and horizon (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub entity: String,
    pub days: Vec<usize>,
    pub horizons: Vec<usize>,
    /// `cells[row][col]`: `(vote fraction, decision)` or `None` where the
    /// instance could not be built.
    pub cells: Vec<Vec<Option<(f64, bool)>>>,
}

impl PredictionGrid {
    pub fn write_table<W: Write>(&self, calendar: &crate::calendar::Calendar, mut w: W) -> Result<()> {
        writeln!(w, "prediction_day\thorizon\twindow_start\tvote_fraction\tpositive")?;
        for (r, &d) in self.days.iter().enumerate() {
            for (c, &k) in self.horizons.iter().enumerate() {
                if let Some((v, p)) = self.cells[r][c] {
                    writeln!(
                        w,
                        "{}\t{k}\t{}\t{v:.6}\t{}",
                        calendar.day_date(d),
                        calendar.day_date(d + k),
                        u8::from(p)
                    )?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Tie-adjusted Mann–Whitney statistic over all positive/negative pairs.
    fn rank_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn reported_rates_average() {
        // 7551 of 10000 positives and 6931 of 10000 negatives
        let c = ConfusionCounts {
            tp: 7551,
            fn_: 2449,
            tn: 6931,
            fp: 3069,
        };
        assert!((c.bac() - 0.7241).abs() < 1e-12);
    }

    #[test]
    fn all_negative_predictor_on_rare_positives() {
        let labels: Vec<bool> = (0..100).map(|i| i < 6).collect();
        let c = ConfusionCounts::from_pairs(&[false; 100], &labels);
        assert_eq!(c.tpr(), Some(0.0));
        assert_eq!(c.tnr(), Some(1.0));
        assert_eq!(c.bac(), 0.5);
        assert!((c.accuracy() - 0.94).abs() < 1e-12);
        let perfect = ConfusionCounts::from_pairs(&labels, &labels);
        assert_eq!(perfect.bac(), 1.0);
    }

    #[test]
    fn undefined_rate_counts_half() {
        let c = ConfusionCounts::from_pairs(&[true, false], &[false, false]);
        assert_eq!(c.tpr(), None);
        assert!(c.undefined_rate());
        assert_eq!(c.bac(), (0.5 + 0.5) / 2.0);
    }

    #[test]
    fn four_point_auc() {
        let scores = [0.9, 0.4, 0.6, 0.1];
        let labels = [true, true, false, false];
        let curve = roc(&scores, &labels).unwrap();
        assert_eq!(curve.auc(), 0.75);
        assert_eq!(rank_auc(&scores, &labels), 0.75);
        assert!(curve.hull_auc() >= curve.auc());
        let sep = roc(&[0.9, 0.8, 0.2], &[true, true, false]).unwrap();
        assert_eq!(sep.auc(), 1.0);
        assert!(roc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn roc_has_both_endpoints() {
        let curve = roc(&[0.3, 0.3, 0.7], &[true, false, true]).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn tuning_prefers_smallest_tie() {
        let labels = [true, false, true, false];
        let folds = [0, 0, 1, 1];
        let scores = [0.9, 0.1, 0.8, 0.2];
        let r = tune_by_cv(&labels, &folds, 2, &[0.3, 0.5, 0.7], |f| {
            Ok((0..4).filter(|&i| folds[i] == f).map(|i| scores[i]).collect())
        })
        .unwrap();
        assert_eq!(r.threshold, 0.3);
        assert_eq!(r.cv_bac, 1.0);
        let single = tune_by_cv(&labels, &folds, 2, &[0.5], |_| Ok(vec![0.0, 0.0])).unwrap();
        assert_eq!(single.threshold, 0.5);
    }

    #[test]
    fn temporal_folds_keep_periods_together() {
        let periods = [5, 1, 1, 2, 3, 3, 4, 6];
        let folds = assign_folds(&periods, 4, FoldMode::Temporal, 0);
        for i in 0..periods.len() {
            for j in 0..periods.len() {
                if periods[i] == periods[j] {
                    assert_eq!(folds[i], folds[j]);
                }
                if periods[i] < periods[j] {
                    assert!(folds[i] <= folds[j]);
                }
            }
        }
        assert_eq!(*folds.iter().max().unwrap(), 3);
    }

    #[test]
    fn baseline_reads_yesterday_centered_window() {
        let s = SignificanceSeries {
            entities: vec!["A".into()],
            values: vec![vec![Some(1.0), Some(3.0), Some(1.0), Some(1.0)]],
            theta: 2.875,
        };
        for k in 1..5 {
            assert_eq!(baseline_predict(&s, 0, 2, k, BaselineWindow::Trailing), Some(true));
            assert_eq!(baseline_predict(&s, 0, 2, k, BaselineWindow::Centered), Some(false));
        }
        assert_eq!(baseline_predict(&s, 0, 3, 1, BaselineWindow::Trailing), Some(false));
    }

    proptest! {
        #[test]
        fn auc_equals_rank_statistic(data in prop::collection::vec((0u8..20, any::<bool>()), 2..80)) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            prop_assume!(labels.iter().any(|&t| t) && labels.iter().any(|&t| !t));
            let curve = roc(&scores, &labels).unwrap();
            prop_assert!((curve.auc() - rank_auc(&scores, &labels)).abs() < 1e-9);
            prop_assert!(curve.hull_auc() >= curve.auc() - 1e-12);
            for w in curve.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }
    }
}
