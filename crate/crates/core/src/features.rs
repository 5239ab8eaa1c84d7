//! Feature vectors for the day-level (country, city) and week-level tasks.
//!
//! Day-level blocks, for an entity observed on day `t`:
//!
//! | block                  | len | value                                          |
//! |------------------------|-----|------------------------------------------------|
//! | `sameday_reporting`    | 10  | `r(t), …, r(t-9)`, `r(j) = M'(j,j) / scale`     |
//! | `sameday_diffs`        | 2   | `r(t)-r(t-1)`, `r(t-1)-r(t-2)`                  |
//! | `violence_cumsum`      | 10  | partial sums of `V'(t-u) / scale`               |
//! | `fwd_mainstream_cumsum`| 10  | partial sums of forward-looking mainstream     |
//! | `fwd_twitter_cumsum`   | 10  | partial sums of forward-looking Twitter        |
//!
//! Predicting `k` days out pushes every index back by `k - 1`.

use sha2::{Digest, Sha256};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::detrend::{BaselineMean, NormalizedCube, NormalizedViolence};
use crate::error::{Error, Result};
use crate::mention::SourceType;

pub const RECENT_DAYS: usize = 10;
pub const FORWARD_DAYS: usize = 3;
pub const DAILY_BLOCK_LEN: usize = 2 * RECENT_DAYS + 2 + 2 * RECENT_DAYS + RECENT_DAYS;
pub const DEFAULT_WEEKLY_LAGS: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumsumOrder {
    /// Element 1 is the most recent day alone.
    #[default]
    MostRecentFirst,
    /// Element 1 is the oldest of the ten days alone.
    OldestFirst,
}

/// Which three target days a forward-looking count covers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardWindow {
    /// Mentions published on `t-u` about days `t+1 ..= t+3`.
    #[default]
    TargetAnchored,
    /// Mentions published on `t-u` about days `t-u+1 ..= t-u+3`.
    PublicationAnchored,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    #[serde(default)]
    pub cumsum_order: CumsumOrder,
    #[serde(default)]
    pub forward_window: ForwardWindow,
}

impl FeatureOptions {
    /// Target offsets the day-level builders read from a normalized cube.
    pub fn required_offsets(&self) -> Vec<i32> {
        let max = match self.forward_window {
            ForwardWindow::TargetAnchored => RECENT_DAYS - 1 + FORWARD_DAYS,
            ForwardWindow::PublicationAnchored => FORWARD_DAYS,
        };
        (0..=max as i32).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub len: usize,
}

/// Ordered, named feature blocks. The version changes whenever the meaning
/// of a position changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub task: String,
    pub options: FeatureOptions,
    pub blocks: Vec<FeatureBlock>,
}

const DAILY_BLOCKS: [(&str, usize); 5] = [
    ("sameday_reporting", RECENT_DAYS),
    ("sameday_diffs", 2),
    ("violence_cumsum", RECENT_DAYS),
    ("fwd_mainstream_cumsum", RECENT_DAYS),
    ("fwd_twitter_cumsum", RECENT_DAYS),
];

impl FeatureSchema {
    pub const VERSION: u32 = 1;

    pub fn country(k: usize, options: FeatureOptions) -> Self {
        let mut blocks = vec![FeatureBlock {
            name: "cluster_onehot".into(),
            len: k,
        }];
        blocks.extend(DAILY_BLOCKS.iter().map(|&(n, len)| FeatureBlock { name: n.into(), len }));
        Self {
            version: Self::VERSION,
            task: "country_day".into(),
            options,
            blocks,
        }
    }

    pub fn city(k: usize, options: FeatureOptions) -> Self {
        let mut blocks = vec![FeatureBlock {
            name: "city_cluster_onehot".into(),
            len: k,
        }];
        for prefix in ["city", "country"] {
            blocks.extend(DAILY_BLOCKS.iter().map(|&(n, len)| FeatureBlock {
                name: format!("{prefix}_{n}"),
                len,
            }));
        }
        Self {
            version: Self::VERSION,
            task: "city_day".into(),
            options,
            blocks,
        }
    }

    /// One block per (event type, source) holding `2 * lags` values ordered
    /// by lag, same-week value before forward-looking value.
    pub fn weekly(event_types: &[String], sources: &[SourceType], lags: usize) -> Self {
        let mut blocks = Vec::new();
        for e in event_types {
            for s in sources {
                blocks.push(FeatureBlock {
                    name: format!("{e}.{s}"),
                    len: 2 * lags,
                });
            }
        }
        Self {
            version: Self::VERSION,
            task: "weekly_nb".into(),
            options: FeatureOptions::default(),
            blocks,
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `block[index]` names, in vector order.
    pub fn names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| (0..b.len).map(move |i| format!("{}[{i}]", b.name)))
            .collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("v{}|{}|{:?}|", self.version, self.task, self.options));
        for n in self.names() {
            h.update(n.as_bytes());
            h.update(b"|");
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn check(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.len() {
            return Err(Error::FeatureLength {
                expected: self.len(),
                found: features.len(),
            });
        }
        Ok(())
    }
}

/// One prediction case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub entity: String,
    /// The prediction period: the latest period whose data the features use.
    pub period: usize,
    pub horizon: usize,
    pub features: Vec<f64>,
    pub label: Option<bool>,
    pub score: Option<f64>,
    /// The predict-like-today baseline's call for the same case.
    #[serde(default)]
    pub baseline: Option<bool>,
}

/// Normalized day-level inputs for one family of entities.
#[derive(Debug, Clone, Copy)]
pub struct DailyView<'a> {
    pub norm: &'a NormalizedCube,
    pub violence: &'a NormalizedViolence,
    /// Per-entity divisor: training baseline means, or unit means for the
    /// absolute scale.
    pub scale: &'a BaselineMean,
    pub event: usize,
    pub mainstream: usize,
    pub twitter: usize,
    pub violence_source: usize,
}

impl<'a> DailyView<'a> {
    pub fn new(
        norm: &'a NormalizedCube,
        violence: &'a NormalizedViolence,
        scale: &'a BaselineMean,
    ) -> Result<Self> {
        let src = |s: SourceType| {
            norm.source_index(s).ok_or_else(|| Error::Unknown {
                kind: "normalized source",
                name: s.to_string(),
            })
        };
        Ok(Self {
            norm,
            violence,
            scale,
            event: 0,
            mainstream: src(SourceType::Mainstream)?,
            twitter: src(SourceType::Twitter)?,
            violence_source: violence
                .source_index(SourceType::Mainstream)
                .ok_or_else(|| Error::Unknown {
                    kind: "violence source",
                    name: "mainstream".into(),
                })?,
        })
    }

    pub fn entity_index(&self, entity: &str) -> Result<usize> {
        self.norm.entity_index(entity).ok_or_else(|| Error::Unknown {
            kind: "entity",
            name: entity.to_owned(),
        })
    }
}

fn cumsum(values: &[f64], order: CumsumOrder) -> Vec<f64> {
    let mut acc = 0.0;
    let mut push = |v: &f64| {
        acc += v;
        acc
    };
    match order {
        CumsumOrder::MostRecentFirst => values.iter().map(&mut push).collect(),
        CumsumOrder::OldestFirst => values.iter().rev().map(&mut push).collect(),
    }
}

/// The 42 day-level values for `entity` observed on day `t`, or `None` when
/// a referenced day lies in the warm-up.
pub fn daily_blocks(view: &DailyView<'_>, entity: usize, t: usize, options: &FeatureOptions) -> Result<Option<Vec<f64>>> {
    if t + 1 < RECENT_DAYS {
        return Ok(None);
    }
    let scale = view.scale.get(entity)?;
    let norm = view.norm;
    let mut same = Vec::with_capacity(RECENT_DAYS);
    let mut viol = Vec::with_capacity(RECENT_DAYS);
    let mut fwd_ms = Vec::with_capacity(RECENT_DAYS);
    let mut fwd_tw = Vec::with_capacity(RECENT_DAYS);
    for u in 0..RECENT_DAYS {
        let j = t - u;
        let Some(m) = norm.get(entity, view.event, view.mainstream, j, 0) else {
            return Ok(None);
        };
        same.push(m / scale);
        let Some(v) = view.violence.get(entity, view.violence_source, j) else {
            return Ok(None);
        };
        viol.push(v / scale);
        for (source, out) in [(view.mainstream, &mut fwd_ms), (view.twitter, &mut fwd_tw)] {
            let mut total = 0.0;
            for kappa in 1..=FORWARD_DAYS {
                let offset = match options.forward_window {
                    ForwardWindow::TargetAnchored => u + kappa,
                    ForwardWindow::PublicationAnchored => kappa,
                } as i32;
                let Some(x) = norm.get(entity, view.event, source, j, offset) else {
                    return Err(Error::Config(format!("normalized cube lacks target offset {offset}")));
                };
                total += x;
            }
            out.push(total / scale);
        }
    }
    let mut out = Vec::with_capacity(DAILY_BLOCK_LEN);
    out.extend_from_slice(&same);
    out.push(same[0] - same[1]);
    out.push(same[1] - same[2]);
    out.extend(cumsum(&viol, options.cumsum_order));
    out.extend(cumsum(&fwd_ms, options.cumsum_order));
    out.extend(cumsum(&fwd_tw, options.cumsum_order));
    Ok(Some(out))
}

/// Push-back: the day whose data a horizon-`k` instance anchored at `day`
/// reads.
fn pushed_back(day: usize, horizon: usize) -> Option<usize> {
    (horizon >= 1).then_some(())?;
    day.checked_sub(horizon - 1)
}

/// Country-task features: cluster one-hot followed by the day-level blocks
/// scaled by the country's baseline mean, read at day `day - (horizon-1)`.
pub fn build_country_features(
    view: &DailyView<'_>,
    clusters: &ClusterAssignment,
    schema: &FeatureSchema,
    entity: usize,
    day: usize,
    horizon: usize,
) -> Result<Option<Instance>> {
    let Some(t) = pushed_back(day, horizon) else {
        return Ok(None);
    };
    let Some(blocks) = daily_blocks(view, entity, t, &schema.options)? else {
        return Ok(None);
    };
    let name = &view.norm.entities[entity];
    let ci = clusters
        .entities
        .iter()
        .position(|e| e == name)
        .ok_or_else(|| Error::Unknown {
            kind: "clustered entity",
            name: name.clone(),
        })?;
    let mut features = clusters.onehot(ci);
    features.extend(blocks);
    schema.check(&features)?;
    Ok(Some(Instance {
        entity: name.clone(),
        period: t,
        horizon,
        features,
        label: None,
        score: None,
        baseline: None,
    }))
}

/// City-task features: city cluster one-hot, the city's unnormalized
/// day-level blocks, then the containing country's.
#[allow(clippy::too_many_arguments)]
pub fn build_city_features(
    city_view: &DailyView<'_>,
    country_view: &DailyView<'_>,
    clusters: &ClusterAssignment,
    schema: &FeatureSchema,
    parent_of: impl Fn(&str) -> Option<String>,
    city: usize,
    day: usize,
    horizon: usize,
) -> Result<Option<Instance>> {
    let name = &city_view.norm.entities[city];
    let parent = parent_of(name).ok_or_else(|| Error::MissingParent(name.clone()))?;
    let country = country_view.entity_index(&parent)?;
    let Some(t) = pushed_back(day, horizon) else {
        return Ok(None);
    };
    let Some(city_blocks) = daily_blocks(city_view, city, t, &schema.options)? else {
        return Ok(None);
    };
    let Some(country_blocks) = daily_blocks(country_view, country, t, &schema.options)? else {
        return Ok(None);
    };
    let ci = clusters
        .entities
        .iter()
        .position(|e| e == name)
        .ok_or_else(|| Error::Unknown {
            kind: "clustered entity",
            name: name.clone(),
        })?;
    let mut features = clusters.onehot(ci);
    features.extend(city_blocks);
    features.extend(country_blocks);
    schema.check(&features)?;
    Ok(Some(Instance {
        entity: name.clone(),
        period: t,
        horizon,
        features,
        label: None,
        score: None,
        baseline: None,
    }))
}

/// Weekly features for the single entity of `norm` at week `week`:
/// for each event type, source and lag `κ < lags`, the same-week value
/// `M'(week-κ, week-κ)` and the forward-looking `M'(week-κ, week+horizon)`.
pub fn build_weekly_features(
    norm: &NormalizedCube,
    schema: &FeatureSchema,
    week: usize,
    horizon: usize,
    lags: usize,
) -> Result<Option<Instance>> {
    if horizon == 0 || lags == 0 || week + 1 < lags {
        return Ok(None);
    }
    let mut features = Vec::with_capacity(schema.len());
    for e in 0..norm.event_types.len() {
        for s in 0..norm.sources.len() {
            for kappa in 0..lags {
                let j = week - kappa;
                let Some(same) = norm.get(0, e, s, j, 0) else {
                    return Ok(None);
                };
                let offset = (kappa + horizon) as i32;
                let fwd = norm.get(0, e, s, j, offset).ok_or_else(|| {
                    Error::Config(format!("normalized cube lacks target offset {offset}"))
                })?;
                features.push(same);
                features.push(fwd);
            }
        }
    }
    schema.check(&features)?;
    Ok(Some(Instance {
        entity: norm.entities[0].clone(),
        period: week,
        horizon,
        features,
        label: None,
        score: None,
        baseline: None,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_lengths() {
        let opts = FeatureOptions::default();
        assert_eq!(FeatureSchema::country(8, opts).len(), 50);
        assert_eq!(FeatureSchema::city(12, opts).len(), 96);
        let events: Vec<String> = (0..112).map(|i| format!("e{i}")).collect();
        let sources = [SourceType::Any, SourceType::Mainstream, SourceType::SocialMedia, SourceType::Blog];
        assert_eq!(FeatureSchema::weekly(&events, &sources, 5).len(), 4480);
    }

    #[test]
    fn names_follow_blocks() {
        let s = FeatureSchema::country(2, FeatureOptions::default());
        let names = s.names();
        assert_eq!(names[0], "cluster_onehot[0]");
        assert_eq!(names[2], "sameday_reporting[0]");
        assert_eq!(names[12], "sameday_diffs[0]");
        assert_eq!(names.last().unwrap(), "fwd_twitter_cumsum[9]");
        assert_ne!(
            s.fingerprint(),
            FeatureSchema::country(3, FeatureOptions::default()).fingerprint()
        );
    }

    #[test]
    fn cumsum_orders() {
        let v = [1.0, 2.0, 3.0];
        assert_eq!(cumsum(&v, CumsumOrder::MostRecentFirst), vec![1.0, 3.0, 6.0]);
        assert_eq!(cumsum(&v, CumsumOrder::OldestFirst), vec![3.0, 5.0, 6.0]);
    }

    #[test]
    fn offsets_needed() {
        assert_eq!(FeatureOptions::default().required_offsets(), (0..=12).collect::<Vec<_>>());
        let pubs = FeatureOptions {
            forward_window: ForwardWindow::PublicationAnchored,
            ..Default::default()
        };
        assert_eq!(pubs.required_offsets(), vec![0, 1, 2, 3]);
    }
}
