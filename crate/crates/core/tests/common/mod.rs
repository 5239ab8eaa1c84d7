#![allow(dead_code)]

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdcast::calendar::Calendar;
use crowdcast::cube::{ingest, CountCube};
use crowdcast::features::{ForwardWindow, RECENT_DAYS};
use crowdcast::mention::{EntityKind, MentionRecord, SourceType};

pub const EVENT: &str = "protest";
pub const SOURCES: [SourceType; 3] = [SourceType::Mainstream, SourceType::Twitter, SourceType::Blog];

pub fn calendar(days: i64) -> Calendar {
    let start = NaiveDate::from_ymd_opt(2012, 1, 2).unwrap();
    let end = start + Duration::days(days - 1);
    let train_end = start + Duration::days(days * 2 / 3);
    Calendar::new(start, end, train_end, train_end + Duration::days(1)).unwrap()
}

/// Sparse random counts for countries `K0..` and cities `K0-a`, `K0-b`, ...
/// over two event types. Some source/offset cells are left empty for whole
/// stretches so zero denominators occur.
pub fn random_records(rng: &mut ChaCha8Rng, cal: &Calendar, countries: usize, cities_each: usize, max_offset: i64) -> Vec<MentionRecord> {
    let mut out = Vec::new();
    let quiet_until = rng.gen_range(0..cal.n_days() / 3);
    for c in 0..countries {
        let country = format!("K{c}");
        let mut ents = vec![(country.clone(), EntityKind::Country, None)];
        for j in 0..cities_each {
            ents.push((format!("{country}-{j}"), EntityKind::City, Some(country.clone())));
        }
        for (id, kind, parent) in ents {
            for day in 0..cal.n_days() {
                let date = cal.day_date(day);
                for event in [EVENT, "strike"] {
                    for (si, &source) in SOURCES.iter().enumerate() {
                        for k in 0..=max_offset {
                            if si == 2 && day < quiet_until {
                                continue;
                            }
                            let p = if k == 0 { 0.7 } else { 0.25 };
                            if !rng.gen_bool(p) {
                                continue;
                            }
                            for _ in 0..rng.gen_range(1..4) {
                                out.push(MentionRecord {
                                    entity_id: id.clone(),
                                    entity_kind: kind,
                                    parent_entity: parent.clone(),
                                    event_type: event.into(),
                                    source_type: source,
                                    publish_day: date,
                                    target_day: date + Duration::days(k),
                                    violence_score: (rng.gen_range(0..1000) as f64) / 1000.0,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn random_cube(seed: u64, days: i64, countries: usize, cities_each: usize, max_offset: i64) -> CountCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cal = calendar(days);
    let records = random_records(&mut rng, &cal, countries, cities_each, max_offset);
    ingest(records.iter(), &cal, &[EVENT, "strike"]).cube
}

/// Daily normalization read straight off the raw counts.
pub fn oracle_daily(cube: &CountCube, entities: &[String], source: SourceType, entity: &str, i: usize, k: i32, window: usize) -> Option<f64> {
    if i < window {
        return None;
    }
    let mut total = 0.0;
    for c in entities {
        for j in i - window..i {
            total += cube.count(c, EVENT, source, j, k) as f64;
        }
    }
    let denom = total / (entities.len() * window) as f64;
    let m = cube.count(entity, EVENT, source, i, k) as f64;
    Some(if denom == 0.0 { 0.0 } else { m / denom })
}

pub fn oracle_violence(cube: &CountCube, entities: &[String], entity: &str, i: usize, window: usize) -> Option<f64> {
    if i < window {
        return None;
    }
    let mut total = 0.0;
    for c in entities {
        for j in i - window..i {
            total += cube.violence(c, EVENT, SourceType::Mainstream, j);
        }
    }
    let denom = total / (entities.len() * window) as f64;
    let v = cube.violence(entity, EVENT, SourceType::Mainstream, i);
    Some(if denom == 0.0 { 0.0 } else { v / denom })
}

/// Total mentions published in week `j`, every target offset.
pub fn published(cube: &CountCube, entity: &str, event: &str, source: SourceType, j: usize) -> f64 {
    cube.series(entity, event, source)
        .map(|s| s.counts.iter().filter(|((p, _), _)| *p as usize == j).map(|(_, &c)| c as f64).sum())
        .unwrap_or(0.0)
}

#[allow(clippy::too_many_arguments)]
pub fn oracle_weekly(cube: &CountCube, entity: &str, events: &[String], source: SourceType, event: &str, i: usize, k: i32, window: usize) -> Option<f64> {
    if i < window {
        return None;
    }
    let mut denom = 0.0;
    for e in events {
        for j in i - window..i {
            denom += published(cube, entity, e, source, j);
        }
    }
    let m = cube.count(entity, event, source, i, k) as f64;
    Some(if denom == 0.0 { 0.0 } else { m / denom })
}

/// The 42 day-level values read index by index from the definitions.
/// `m(source, j, k)` is the normalized count published on `j` about `j+k`,
/// `v(j)` the normalized violence.
pub fn oracle_blocks(
    m: &dyn Fn(SourceType, usize, i32) -> Option<f64>,
    v: &dyn Fn(usize) -> Option<f64>,
    mean: f64,
    t: usize,
    window: ForwardWindow,
) -> Option<Vec<f64>> {
    if t + 1 < RECENT_DAYS {
        return None;
    }
    let r = |j: usize| m(SourceType::Mainstream, j, 0).map(|x| x / mean);
    let mut out = Vec::new();
    for u in 0..10 {
        out.push(r(t - u)?);
    }
    out.push(r(t)? - r(t - 1)?);
    out.push(r(t - 1)? - r(t - 2)?);
    for t_ in 1..=10 {
        let mut s = 0.0;
        for u in 0..t_ {
            s += v(t - u)? / mean;
        }
        out.push(s);
    }
    for src in [SourceType::Mainstream, SourceType::Twitter] {
        for t_ in 1..=10 {
            let mut s = 0.0;
            for u in 0..t_ {
                let j = t - u;
                let mut f = 0.0;
                for kappa in 1..=3 {
                    let off = match window {
                        ForwardWindow::TargetAnchored => u + kappa,
                        ForwardWindow::PublicationAnchored => kappa,
                    };
                    f += m(src, j, off as i32)?;
                }
                s += f / mean;
            }
            out.push(s);
        }
    }
    Some(out)
}

/// `oracle_daily` and `oracle_violence` tabulated for every entity of a
/// family, so feature oracles can read them repeatedly.
pub struct OracleTable {
    daily: std::collections::HashMap<(String, SourceType, usize, i32), Option<f64>>,
    violence: std::collections::HashMap<(String, usize), Option<f64>>,
}

impl OracleTable {
    pub fn new(cube: &CountCube, entities: &[String], max_offset: i32, window: usize) -> Self {
        let mut daily = std::collections::HashMap::new();
        let mut violence = std::collections::HashMap::new();
        for e in entities {
            for i in 0..cube.n_periods() {
                for &s in &SOURCES {
                    for k in 0..=max_offset {
                        daily.insert((e.clone(), s, i, k), oracle_daily(cube, entities, s, e, i, k, window));
                    }
                }
                violence.insert((e.clone(), i), oracle_violence(cube, entities, e, i, window));
            }
        }
        OracleTable { daily, violence }
    }

    pub fn m(&self, entity: &str, source: SourceType, i: usize, k: i32) -> Option<f64> {
        self.daily[&(entity.to_string(), source, i, k)]
    }

    pub fn v(&self, entity: &str, i: usize) -> Option<f64> {
        self.violence[&(entity.to_string(), i)]
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A country-level record published on day `i` about day `i + k`.
pub fn rec(cal: &Calendar, entity: &str, source: SourceType, i: usize, k: i64, violence: f64) -> MentionRecord {
    let publish = cal.day_date(i);
    MentionRecord {
        entity_id: entity.into(),
        entity_kind: EntityKind::Country,
        parent_entity: None,
        event_type: EVENT.into(),
        source_type: source,
        publish_day: publish,
        target_day: publish + Duration::days(k),
        violence_score: violence,
    }
}

/// A cube holding `count` mentions for every `(entity, source, day, offset,
/// count)` cell.
pub fn cells_cube(cal: &Calendar, cells: &[(&str, SourceType, usize, i64, usize)]) -> CountCube {
    let mut records = Vec::new();
    for &(e, s, i, k, n) in cells {
        for _ in 0..n {
            records.push(rec(cal, e, s, i, k, 0.0));
        }
    }
    ingest(records.iter(), cal, &[EVENT]).cube
}

/// Every record repeated `times` times.
pub fn repeated(records: &[MentionRecord], times: usize) -> Vec<MentionRecord> {
    records.iter().flat_map(|r| std::iter::repeat_n(r.clone(), times)).collect()
}
