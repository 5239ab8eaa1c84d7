//! Trailing-window normalization that removes source-bank growth from
//! mention counts.
//!
//! Daily counts are divided by the cross-entity average volume over the
//! trailing window (shared by every entity, specific to source and target
//! offset). Weekly counts are divided by the entity's own total published
//! volume over the trailing window, pooled across event types.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, Granularity};
use crate::cube::{CountCube, SeriesCounts, ViolenceSum};
use crate::error::{Error, Result};
use crate::mention::SourceType;

pub const DAILY_WINDOW: usize = 90;
pub const WEEKLY_WINDOW: usize = 12;

/// A cell whose trailing denominator was zero; its value is stored as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ZeroDenominator {
    pub entity: usize,
    pub event: usize,
    pub source: usize,
    pub offset: i32,
    pub period: usize,
}

/// Which reading of the weekly denominator to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeeklyDenominator {
    /// Total mentions published in each trailing week, all target offsets
    /// and event types pooled.
    #[default]
    PublishedVolume,
    /// Trailing mentions at the same target offset, event types pooled.
    SameOffset,
}

/// Dense normalized values indexed by (entity, event type, source, offset,
/// period). Values before `warmup_end` are undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCube {
    pub granularity: Granularity,
    pub entities: Vec<String>,
    pub event_types: Vec<String>,
    pub sources: Vec<SourceType>,
    pub offsets: Vec<i32>,
    pub n_periods: usize,
    pub warmup_end: usize,
    values: Vec<f64>,
    pub violence: Option<NormalizedViolence>,
    pub zero_denominators: BTreeSet<ZeroDenominator>,
}

/// Normalized violence ratings indexed by (entity, source, period) for a
/// single event type.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedViolence {
    pub entities: Vec<String>,
    pub sources: Vec<SourceType>,
    pub n_periods: usize,
    pub warmup_end: usize,
    values: Vec<f64>,
    pub zero_denominators: BTreeSet<ZeroDenominator>,
}

impl NormalizedViolence {
    pub fn get(&self, entity: usize, source: usize, period: usize) -> Option<f64> {
        if period < self.warmup_end || period >= self.n_periods {
            return None;
        }
        Some(self.values[(entity * self.sources.len() + source) * self.n_periods + period])
    }

    pub fn source_index(&self, source: SourceType) -> Option<usize> {
        self.sources.iter().position(|&s| s == source)
    }
}

impl NormalizedCube {
    fn alloc(
        granularity: Granularity,
        entities: Vec<String>,
        event_types: Vec<String>,
        sources: Vec<SourceType>,
        offsets: Vec<i32>,
        n_periods: usize,
        warmup_end: usize,
    ) -> Self {
        let len = entities.len() * event_types.len() * sources.len() * offsets.len() * n_periods;
        Self {
            granularity,
            entities,
            event_types,
            sources,
            offsets,
            n_periods,
            warmup_end,
            values: vec![f64::NAN; len],
            violence: None,
            zero_denominators: BTreeSet::new(),
        }
    }

    fn slot(&self, entity: usize, event: usize, source: usize, offset_idx: usize) -> usize {
        (((entity * self.event_types.len() + event) * self.sources.len() + source)
            * self.offsets.len()
            + offset_idx)
            * self.n_periods
    }

    pub fn entity_index(&self, entity: &str) -> Option<usize> {
        self.entities.iter().position(|e| e == entity)
    }

    pub fn event_index(&self, event: &str) -> Option<usize> {
        self.event_types.iter().position(|e| e == event)
    }

    pub fn source_index(&self, source: SourceType) -> Option<usize> {
        self.sources.iter().position(|&s| s == source)
    }

    pub fn offset_index(&self, offset: i32) -> Option<usize> {
        self.offsets.iter().position(|&o| o == offset)
    }

    /// Normalized value for publish period `period` and target offset
    /// `offset`; `None` inside the warm-up, outside the corpus, or for an
    /// offset that was not materialized.
    pub fn get(&self, entity: usize, event: usize, source: usize, period: usize, offset: i32) -> Option<f64> {
        if period < self.warmup_end || period >= self.n_periods {
            return None;
        }
        let o = self.offset_index(offset)?;
        Some(self.values[self.slot(entity, event, source, o) + period])
    }

    fn set(&mut self, entity: usize, event: usize, source: usize, offset_idx: usize, period: usize, v: f64) {
        let s = self.slot(entity, event, source, offset_idx);
        self.values[s + period] = v;
    }

    /// Defined periods of the cube.
    pub fn defined_periods(&self) -> Range<usize> {
        self.warmup_end.min(self.n_periods)..self.n_periods
    }

    pub fn is_flagged(&self, entity: usize, event: usize, source: usize, period: usize, offset: i32) -> bool {
        self.zero_denominators.contains(&ZeroDenominator {
            entity,
            event,
            source,
            offset,
            period,
        })
    }

    /// Sparse table with values at 9 significant digits, sorted by key.
    pub fn write_table<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# crowdcast normalized-cube v1")?;
        writeln!(
            w,
            "# granularity={} warmup_end={} periods={}",
            self.granularity.as_str(),
            self.warmup_end,
            self.n_periods
        )?;
        for (e, entity) in self.entities.iter().enumerate() {
            for (t, event) in self.event_types.iter().enumerate() {
                for (s, source) in self.sources.iter().enumerate() {
                    for &off in &self.offsets {
                        for p in self.defined_periods() {
                            let v = self.get(e, t, s, p, off).unwrap_or(0.0);
                            if v != 0.0 {
                                writeln!(w, "value\t{entity}\t{event}\t{source}\t{p}\t{off}\t{}", sig9(v))?;
                            }
                        }
                    }
                }
            }
        }
        if let Some(viol) = &self.violence {
            for (e, entity) in viol.entities.iter().enumerate() {
                for (s, source) in viol.sources.iter().enumerate() {
                    for p in viol.warmup_end..viol.n_periods {
                        let v = viol.get(e, s, p).unwrap_or(0.0);
                        if v != 0.0 {
                            writeln!(w, "violence\t{entity}\t{source}\t{p}\t{}", sig9(v))?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Format with 9 significant digits.
pub fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

fn check_day(cube: &CountCube) -> Result<()> {
    if cube.granularity != Granularity::Day {
        return Err(Error::Granularity {
            expected: "day",
            found: cube.granularity.as_str(),
        });
    }
    Ok(())
}

fn empty_series() -> &'static SeriesCounts {
    static EMPTY: std::sync::OnceLock<SeriesCounts> = std::sync::OnceLock::new();
    EMPTY.get_or_init(SeriesCounts::default)
}

/// Daily de-trending: `value(c,s,i,k) = M_cs(i,i+k) / D_sk(i)` where
/// `D_sk(i)` is the average of `M_c's(j,j+k)` over all entities `c'` and the
/// `window` days `j` before `i`.
pub fn normalize_daily(
    cube: &CountCube,
    entities: &[String],
    event_type: &str,
    sources: &[SourceType],
    offsets: &[i32],
    window: usize,
) -> Result<NormalizedCube> {
    check_day(cube)?;
    if window == 0 || entities.is_empty() {
        return Err(Error::Config("window and entity list must be nonempty".into()));
    }
    let n = cube.n_periods();
    let mut out = NormalizedCube::alloc(
        Granularity::Day,
        entities.to_vec(),
        vec![event_type.to_owned()],
        sources.to_vec(),
        offsets.to_vec(),
        n,
        window,
    );
    let scale = (entities.len() * window) as f64;
    for (s, &source) in sources.iter().enumerate() {
        let series: Vec<&SeriesCounts> = entities
            .iter()
            .map(|e| cube.series(e, event_type, source).unwrap_or(empty_series()))
            .collect();
        for (o, &k) in offsets.iter().enumerate() {
            // prefix[j] = Σ_{c'} Σ_{u<j} M_c'(u, u+k)
            let mut prefix = vec![0u64; n + 1];
            for j in 0..n {
                let day_total: u64 = series.iter().map(|sc| sc.count(j, k)).sum();
                prefix[j + 1] = prefix[j] + day_total;
            }
            for i in window..n {
                let denom = (prefix[i] - prefix[i - window]) as f64 / scale;
                for (e, sc) in series.iter().enumerate() {
                    let v = if denom > 0.0 {
                        sc.count(i, k) as f64 / denom
                    } else {
                        out.zero_denominators.insert(ZeroDenominator {
                            entity: e,
                            event: 0,
                            source: s,
                            offset: k,
                            period: i,
                        });
                        0.0
                    };
                    out.set(e, 0, s, o, i, v);
                }
            }
        }
    }
    Ok(out)
}

/// Violence analogue of [`normalize_daily`] with no target offset.
pub fn normalize_violence(
    cube: &CountCube,
    entities: &[String],
    event_type: &str,
    sources: &[SourceType],
    window: usize,
) -> Result<NormalizedViolence> {
    check_day(cube)?;
    if window == 0 || entities.is_empty() {
        return Err(Error::Config("window and entity list must be nonempty".into()));
    }
    let n = cube.n_periods();
    let mut values = vec![f64::NAN; entities.len() * sources.len() * n];
    let mut flags = BTreeSet::new();
    let scale = (entities.len() * window) as f64;
    let units = ViolenceSum::UNITS_PER_ONE as f64;
    for (s, &source) in sources.iter().enumerate() {
        let series: Vec<&SeriesCounts> = entities
            .iter()
            .map(|e| cube.series(e, event_type, source).unwrap_or(empty_series()))
            .collect();
        let raw = |sc: &SeriesCounts, j: usize| -> u128 {
            sc.violence
                .get(&(j as u32))
                .map_or(0, |v| (v.value() * units).round() as u128)
        };
        let mut prefix = vec![0u128; n + 1];
        for j in 0..n {
            let total: u128 = series.iter().map(|sc| raw(sc, j)).sum();
            prefix[j + 1] = prefix[j] + total;
        }
        for i in window..n {
            let denom = (prefix[i] - prefix[i - window]) as f64 / units / scale;
            for (e, sc) in series.iter().enumerate() {
                let v = if denom > 0.0 {
                    sc.violence(i) / denom
                } else {
                    flags.insert(ZeroDenominator {
                        entity: e,
                        event: 0,
                        source: s,
                        offset: 0,
                        period: i,
                    });
                    0.0
                };
                values[(e * sources.len() + s) * n + i] = v;
            }
        }
    }
    Ok(NormalizedViolence {
        entities: entities.to_vec(),
        sources: sources.to_vec(),
        n_periods: n,
        warmup_end: window,
        values,
        zero_denominators: flags,
    })
}

/// Weekly de-trending for one entity: `value(e,s,i,k) = M_es(i,i+k) / D_s(i)`
/// with `D_s(i)` the entity's trailing `window`-week volume pooled over all
/// event types (see [`WeeklyDenominator`]).
pub fn normalize_weekly(
    cube: &CountCube,
    entity: &str,
    event_types: &[String],
    sources: &[SourceType],
    offsets: &[i32],
    window: usize,
    mode: WeeklyDenominator,
) -> Result<NormalizedCube> {
    if cube.granularity != Granularity::Week {
        return Err(Error::Granularity {
            expected: "week",
            found: cube.granularity.as_str(),
        });
    }
    if window == 0 || event_types.is_empty() {
        return Err(Error::Config("window and event-type list must be nonempty".into()));
    }
    let n = cube.n_periods();
    let mut out = NormalizedCube::alloc(
        Granularity::Week,
        vec![entity.to_owned()],
        event_types.to_vec(),
        sources.to_vec(),
        offsets.to_vec(),
        n,
        window,
    );
    for (s, &source) in sources.iter().enumerate() {
        let series: Vec<&SeriesCounts> = event_types
            .iter()
            .map(|e| cube.series(entity, e, source).unwrap_or(empty_series()))
            .collect();
        let prefix_of = |per_week: &dyn Fn(&SeriesCounts, usize) -> u64| {
            let mut prefix = vec![0u64; n + 1];
            for j in 0..n {
                prefix[j + 1] = prefix[j] + series.iter().map(|sc| per_week(sc, j)).sum::<u64>();
            }
            prefix
        };
        let published = prefix_of(&|sc, j| sc.published(j));
        for (o, &k) in offsets.iter().enumerate() {
            let prefix = match mode {
                WeeklyDenominator::PublishedVolume => published.clone(),
                WeeklyDenominator::SameOffset => prefix_of(&|sc, j| sc.count(j, k)),
            };
            for i in window..n {
                let denom = (prefix[i] - prefix[i - window]) as f64;
                for (t, sc) in series.iter().enumerate() {
                    let v = if denom > 0.0 {
                        sc.count(i, k) as f64 / denom
                    } else {
                        out.zero_denominators.insert(ZeroDenominator {
                            entity: 0,
                            event: t,
                            source: s,
                            offset: k,
                            period: i,
                        });
                        0.0
                    };
                    out.set(0, t, s, o, i, v);
                }
            }
        }
    }
    Ok(out)
}

/// Per-entity training-set average of same-day normalized reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMean {
    pub entities: Vec<String>,
    pub mean: Vec<f64>,
    pub zero: Vec<bool>,
}

impl BaselineMean {
    /// Mean for `entity`, refusing entities whose mean is zero.
    pub fn get(&self, entity: usize) -> Result<f64> {
        if self.zero[entity] {
            Err(Error::ZeroBaseline(self.entities[entity].clone()))
        } else {
            Ok(self.mean[entity])
        }
    }

    /// Unit means for every entity: the absolute significance scale.
    pub fn unit(entities: &[String]) -> Self {
        Self {
            entities: entities.to_vec(),
            mean: vec![1.0; entities.len()],
            zero: vec![false; entities.len()],
        }
    }
}

/// Average of `values(c, event, source, i, 0)` over training periods past
/// the warm-up.
pub fn training_mean(
    norm: &NormalizedCube,
    calendar: &Calendar,
    event: usize,
    source: usize,
) -> Result<BaselineMean> {
    let train = calendar.train_periods(norm.granularity);
    let periods: Vec<usize> = (train.start.max(norm.warmup_end)..train.end.min(norm.n_periods)).collect();
    if periods.is_empty() {
        return Err(Error::Calendar("training range lies inside the warm-up".into()));
    }
    let mut mean = Vec::with_capacity(norm.entities.len());
    for e in 0..norm.entities.len() {
        let sum: f64 = periods
            .iter()
            .map(|&i| norm.get(e, event, source, i, 0).unwrap_or(0.0))
            .sum();
        mean.push(sum / periods.len() as f64);
    }
    let zero = mean.iter().map(|&m| m <= 0.0).collect();
    Ok(BaselineMean {
        entities: norm.entities.clone(),
        mean,
        zero,
    })
}
