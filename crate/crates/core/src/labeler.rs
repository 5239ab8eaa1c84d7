//! Ground-truth labels: the smoothed significance series for day-level
//! tasks and quantile thresholds for the weekly task.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, Granularity};
use crate::detrend::{BaselineMean, NormalizedCube};
use crate::error::{Error, Result};

pub const DEFAULT_THETA: f64 = 2.875;
pub const DEFAULT_WEEKLY_QUANTILE: f64 = 0.15;

/// Three-day moving average of same-day normalized reporting over each
/// entity's baseline mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceSeries {
    pub entities: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub theta: f64,
}

impl SignificanceSeries {
    pub fn get(&self, entity: usize, period: isize) -> Option<f64> {
        if period < 0 {
            return None;
        }
        self.values[entity].get(period as usize).copied().flatten()
    }

    pub fn is_significant(&self, entity: usize, period: isize) -> Option<bool> {
        self.get(entity, period).map(|v| v >= self.theta)
    }

    /// Defined values of `entity` over `periods`, ignoring time.
    pub fn sample(&self, entity: usize, periods: std::ops::Range<usize>) -> Vec<f64> {
        periods
            .filter_map(|i| self.get(entity, i as isize))
            .collect()
    }

    pub fn n_periods(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

/// `M''_c(i) = (r(i-1) + r(i) + r(i+1)) / 3` with `r(j) = value(c, j, j) /
/// mean_c`, defined only where all three neighbours are defined.
pub fn significance(
    norm: &NormalizedCube,
    baseline: &BaselineMean,
    event: usize,
    source: usize,
    theta: f64,
) -> Result<SignificanceSeries> {
    let n = norm.n_periods;
    let mut values = Vec::with_capacity(norm.entities.len());
    for e in 0..norm.entities.len() {
        let mean = baseline.get(e)?;
        let ratio: Vec<Option<f64>> = (0..n)
            .map(|j| norm.get(e, event, source, j, 0).map(|v| v / mean))
            .collect();
        let mut series = vec![None; n];
        for i in 1..n.saturating_sub(1) {
            if let (Some(a), Some(b), Some(c)) = (ratio[i - 1], ratio[i], ratio[i + 1]) {
                series[i] = Some((a + b + c) / 3.0);
            }
        }
        values.push(series);
    }
    Ok(SignificanceSeries {
        entities: norm.entities.clone(),
        values,
        theta,
    })
}

/// Binary labels for one horizon, keyed by (entity, period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub entities: Vec<String>,
    pub horizon: usize,
    pub labels: BTreeMap<(usize, usize), bool>,
}

impl LabelSet {
    pub fn get(&self, entity: usize, period: usize) -> Option<bool> {
        self.labels.get(&(entity, period)).copied()
    }

    pub fn positives_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.values().filter(|&&t| t).count() as f64 / self.labels.len() as f64
    }

    pub fn write_table<W: Write>(&self, calendar: &Calendar, granularity: Granularity, mut w: W) -> Result<()> {
        writeln!(w, "entity\tdate\thorizon\tlabel")?;
        for (&(e, p), &t) in &self.labels {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                self.entities[e],
                calendar.period_date(granularity, p),
                self.horizon,
                u8::from(t)
            )?;
        }
        Ok(())
    }
}

/// `T(c,i,k) = [M''_c(i+k+1) >= theta]`: a significant stretch over days
/// `i+k ..= i+k+2`, as seen from day `i`.
pub fn label_days(series: &SignificanceSeries, horizon: usize) -> Result<LabelSet> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut labels = BTreeMap::new();
    for e in 0..series.entities.len() {
        for i in 0..series.n_periods() {
            if let Some(t) = series.is_significant(e, (i + horizon + 1) as isize) {
                labels.insert((e, i), t);
            }
        }
    }
    Ok(LabelSet {
        entities: series.entities.clone(),
        horizon,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieWarning {
    /// Even the largest value is shared by more than the target fraction.
    ExceedsQuantile,
    /// Ties leave fewer positives than the target fraction allows.
    Shortfall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileThreshold {
    pub theta: f64,
    pub positive_fraction: f64,
    pub warning: Option<TieWarning>,
}

/// Smallest training value `v` with `#{x >= v} / n <= q`, so that labeling
/// with `>= v` marks the largest achievable fraction not exceeding `q`.
pub fn threshold_from_quantile(values: &[f64], q: f64) -> Result<QuantileThreshold> {
    if values.is_empty() {
        return Err(Error::EmptySample("quantile threshold"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let count_ge = |v: f64| n - sorted.partition_point(|&x| x < v);
    let mut chosen = None;
    // distinct values from the top down; the count only grows
    let mut idx = n;
    while idx > 0 {
        let v = sorted[idx - 1];
        let c = count_ge(v);
        if c as f64 > q * n as f64 {
            break;
        }
        chosen = Some((v, c));
        idx = sorted.partition_point(|&x| x < v);
    }
    Ok(match chosen {
        Some((theta, c)) => {
            let target = (q * n as f64 + 1e-9).floor() as usize;
            QuantileThreshold {
                theta,
                positive_fraction: c as f64 / n as f64,
                warning: (c < target).then_some(TieWarning::Shortfall),
            }
        }
        None => {
            let theta = sorted[n - 1];
            QuantileThreshold {
                theta,
                positive_fraction: count_ge(theta) as f64 / n as f64,
                warning: Some(TieWarning::ExceedsQuantile),
            }
        }
    })
}

/// `T(n*, i, h) = [value(i+h, i+h) >= theta]` on a weekly normalized cube.
pub fn label_weeks(
    norm: &NormalizedCube,
    event: usize,
    source: usize,
    theta: f64,
    horizon: usize,
) -> Result<LabelSet> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut labels = BTreeMap::new();
    for e in 0..norm.entities.len() {
        for i in 0..norm.n_periods {
            if let Some(v) = norm.get(e, event, source, i + horizon, 0) {
                labels.insert((e, i), v >= theta);
            }
        }
    }
    Ok(LabelSet {
        entities: norm.entities.clone(),
        horizon,
        labels,
    })
}
