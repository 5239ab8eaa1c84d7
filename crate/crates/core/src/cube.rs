//! Sparse count cubes: mention counts keyed by (entity, event type, source,
//! publish period, target offset) plus pooled violence ratings.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::ops::Bound;

use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, Granularity};
use crate::error::{Error, Result};
use crate::mention::{EntityKind, MentionRecord, Rejection, SourceType};

/// Violence totals are accumulated in fixed point so that sums do not
/// depend on record order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViolenceSum(u64);

impl ViolenceSum {
    pub const UNITS_PER_ONE: u64 = 1_000_000_000_000;

    pub fn from_score(score: f64) -> Self {
        ViolenceSum((score.clamp(0.0, 1.0) * Self::UNITS_PER_ONE as f64).round() as u64)
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / Self::UNITS_PER_ONE as f64
    }

    fn to_decimal(self) -> String {
        format!("{}.{:012}", self.0 / Self::UNITS_PER_ONE, self.0 % Self::UNITS_PER_ONE)
    }

    fn from_decimal(s: &str) -> Option<Self> {
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 12 {
            return None;
        }
        let int: u64 = int.parse().ok()?;
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<12}").parse().ok()?
        };
        Some(ViolenceSum(int * Self::UNITS_PER_ONE + frac))
    }
}

impl std::ops::AddAssign for ViolenceSum {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub entity: String,
    pub event_type: String,
    pub source: SourceType,
}

impl SeriesKey {
    pub fn new(entity: &str, event_type: &str, source: SourceType) -> Self {
        Self {
            entity: entity.to_owned(),
            event_type: event_type.to_owned(),
            source,
        }
    }
}

/// Counts of one (entity, event type, source) series.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeriesCounts {
    /// (publish period, target offset) → count
    pub counts: BTreeMap<(u32, i32), u64>,
    /// publish period → summed violence
    pub violence: BTreeMap<u32, ViolenceSum>,
}

impl SeriesCounts {
    pub fn count(&self, period: usize, offset: i32) -> u64 {
        self.counts.get(&(period as u32, offset)).copied().unwrap_or(0)
    }

    /// Mentions published in `period`, pooled over all target offsets.
    pub fn published(&self, period: usize) -> u64 {
        let p = period as u32;
        self.counts
            .range((Bound::Included((p, i32::MIN)), Bound::Included((p, i32::MAX))))
            .map(|(_, c)| c)
            .sum()
    }

    pub fn violence(&self, period: usize) -> f64 {
        self.violence
            .get(&(period as u32))
            .map_or(0.0, |v| v.value())
    }

    fn merge(&mut self, other: &SeriesCounts) {
        for (k, c) in &other.counts {
            *self.counts.entry(*k).or_default() += c;
        }
        for (k, v) in &other.violence {
            *self.violence.entry(*k).or_default() += *v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountCube {
    pub granularity: Granularity,
    pub calendar: Calendar,
    series: BTreeMap<SeriesKey, SeriesCounts>,
    kinds: BTreeMap<String, EntityKind>,
    parents: BTreeMap<String, String>,
}

/// Tally of records dropped during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionTally(pub BTreeMap<Rejection, usize>);

impl RejectionTally {
    pub fn add(&mut self, reason: Rejection) {
        *self.0.entry(reason).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn merge(&mut self, other: &RejectionTally) {
        for (r, n) in &other.0 {
            *self.0.entry(*r).or_default() += n;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub cube: CountCube,
    pub rejected: RejectionTally,
}

/// Accumulates validated records into a day-granularity cube. Builders over
/// disjoint shards of the input combine with [`CubeBuilder::merge`].
#[derive(Debug, Clone)]
pub struct CubeBuilder {
    event_types: Vec<String>,
    cube: CountCube,
    rejected: RejectionTally,
}

impl CubeBuilder {
    pub fn new<S: AsRef<str>>(calendar: &Calendar, event_types: &[S]) -> Self {
        Self {
            event_types: event_types.iter().map(|e| e.as_ref().to_owned()).collect(),
            cube: CountCube::empty(calendar.clone(), Granularity::Day),
            rejected: RejectionTally::default(),
        }
    }

    pub fn push(&mut self, record: &MentionRecord) {
        if let Err(reason) = record.validate(&self.event_types, &self.cube.calendar) {
            self.rejected.add(reason);
            return;
        }
        if record.entity_id.contains(['\t', '\n']) || record.event_type.contains(['\t', '\n']) {
            self.rejected.add(Rejection::Malformed);
            return;
        }
        let cal = &self.cube.calendar;
        let i = cal.day_index(record.publish_day).expect("validated") as u32;
        let j = cal.day_index(record.target_day).expect("validated") as i64;
        let k = (j - i as i64) as i32;
        let series = self
            .cube
            .series
            .entry(SeriesKey::new(&record.entity_id, &record.event_type, record.source_type))
            .or_default();
        *series.counts.entry((i, k)).or_default() += 1;
        *series.violence.entry(i).or_default() += ViolenceSum::from_score(record.violence_score);
        self.cube
            .kinds
            .entry(record.entity_id.clone())
            .or_insert(record.entity_kind);
        if let Some(parent) = &record.parent_entity {
            self.cube
                .parents
                .entry(record.entity_id.clone())
                .or_insert_with(|| parent.clone());
        }
    }

    pub fn reject(&mut self, reason: Rejection) {
        self.rejected.add(reason);
    }

    pub fn merge(&mut self, other: CubeBuilder) {
        self.cube.merge(&other.cube);
        self.rejected.merge(&other.rejected);
    }

    pub fn finish(self) -> Ingested {
        Ingested {
            cube: self.cube,
            rejected: self.rejected,
        }
    }
}

/// Count an in-memory record stream into a day-granularity cube. Invalid
/// records are tallied and skipped.
pub fn ingest<'a, I, S>(records: I, calendar: &Calendar, event_types: &[S]) -> Ingested
where
    I: IntoIterator<Item = &'a MentionRecord>,
    S: AsRef<str>,
{
    let mut builder = CubeBuilder::new(calendar, event_types);
    for r in records {
        builder.push(r);
    }
    builder.finish()
}

/// Like [`ingest`], for parsed lines where malformed input is already a
/// rejection.
pub fn ingest_parsed<I, S>(records: I, calendar: &Calendar, event_types: &[S]) -> Ingested
where
    I: IntoIterator<Item = Result<MentionRecord, Rejection>>,
    S: AsRef<str>,
{
    let mut builder = CubeBuilder::new(calendar, event_types);
    for r in records {
        match r {
            Ok(r) => builder.push(&r),
            Err(reason) => builder.reject(reason),
        }
    }
    builder.finish()
}

impl CountCube {
    pub fn empty(calendar: Calendar, granularity: Granularity) -> Self {
        Self {
            granularity,
            calendar,
            series: BTreeMap::new(),
            kinds: BTreeMap::new(),
            parents: BTreeMap::new(),
        }
    }

    pub fn n_periods(&self) -> usize {
        self.calendar.n_periods(self.granularity)
    }

    pub fn series(&self, entity: &str, event_type: &str, source: SourceType) -> Option<&SeriesCounts> {
        self.series.get(&SeriesKey::new(entity, event_type, source))
    }

    pub fn iter_series(&self) -> impl Iterator<Item = (&SeriesKey, &SeriesCounts)> {
        self.series.iter()
    }

    pub fn count(&self, entity: &str, event_type: &str, source: SourceType, period: usize, offset: i32) -> u64 {
        self.series(entity, event_type, source)
            .map_or(0, |s| s.count(period, offset))
    }

    pub fn violence(&self, entity: &str, event_type: &str, source: SourceType, period: usize) -> f64 {
        self.series(entity, event_type, source)
            .map_or(0.0, |s| s.violence(period))
    }

    pub fn total(&self) -> u64 {
        self.series
            .values()
            .flat_map(|s| s.counts.values())
            .sum()
    }

    pub fn entities(&self) -> Vec<String> {
        let mut out: Vec<String> = self.kinds.keys().cloned().collect();
        for k in self.series.keys() {
            if !self.kinds.contains_key(&k.entity) {
                out.push(k.entity.clone());
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn entity_kind(&self, entity: &str) -> Option<EntityKind> {
        self.kinds.get(entity).copied()
    }

    pub fn parent(&self, entity: &str) -> Option<&str> {
        self.parents.get(entity).map(String::as_str)
    }

    pub fn set_parent(&mut self, entity: &str, parent: &str) {
        self.parents.insert(entity.to_owned(), parent.to_owned());
    }

    pub fn event_types(&self) -> Vec<String> {
        let mut out: Vec<String> = self.series.keys().map(|k| k.event_type.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Commutative, associative addition of two cubes over the same calendar.
    pub fn merge(&mut self, other: &CountCube) {
        for (k, s) in &other.series {
            self.series.entry(k.clone()).or_default().merge(s);
        }
        for (e, kind) in &other.kinds {
            self.kinds.entry(e.clone()).or_insert(*kind);
        }
        for (e, p) in &other.parents {
            self.parents.entry(e.clone()).or_insert_with(|| p.clone());
        }
    }

    /// Re-bucket a day cube into weeks. Target offsets become target week
    /// minus publish week.
    pub fn aggregate_weekly(&self) -> Result<CountCube> {
        if self.granularity != Granularity::Day {
            return Err(Error::Granularity {
                expected: "day",
                found: self.granularity.as_str(),
            });
        }
        let cal = &self.calendar;
        let mut out = CountCube::empty(cal.clone(), Granularity::Week);
        out.kinds = self.kinds.clone();
        out.parents = self.parents.clone();
        for (key, s) in &self.series {
            let mut weekly = SeriesCounts::default();
            for (&(i, k), &c) in &s.counts {
                let wi = cal.week_of_day_index(i as usize);
                let wj = cal.week_of_day_index((i as i64 + k as i64) as usize);
                *weekly.counts.entry((wi as u32, wj as i32 - wi as i32)).or_default() += c;
            }
            for (&i, &v) in &s.violence {
                *weekly
                    .violence
                    .entry(cal.week_of_day_index(i as usize) as u32)
                    .or_default() += v;
            }
            out.series.insert(key.clone(), weekly);
        }
        Ok(out)
    }

    /// Merge `from` into `to` (for example Twitter into Social Media).
    pub fn remap_source(&self, from: SourceType, to: SourceType) -> CountCube {
        let mut out = CountCube::empty(self.calendar.clone(), self.granularity);
        out.kinds = self.kinds.clone();
        out.parents = self.parents.clone();
        for (key, s) in &self.series {
            let mut key = key.clone();
            if key.source == from {
                key.source = to;
            }
            out.series.entry(key).or_default().merge(s);
        }
        out
    }

    /// Keep only the listed entities and the parents of any kept city.
    pub fn restrict_entities<S: AsRef<str>>(&self, keep: &[S]) -> CountCube {
        let mut names: std::collections::BTreeSet<String> = keep.iter().map(|s| s.as_ref().to_owned()).collect();
        let parents: Vec<String> = names.iter().filter_map(|n| self.parents.get(n).cloned()).collect();
        names.extend(parents);
        let mut out = self.clone();
        out.series.retain(|k, _| names.contains(&k.entity));
        out.kinds.retain(|k, _| names.contains(k));
        out.parents.retain(|k, _| names.contains(k));
        out
    }

    /// Add `SourceType::Any` series pooling every concrete source.
    pub fn with_pooled_any(&self) -> CountCube {
        let mut out = self.clone();
        out.series.retain(|k, _| k.source != SourceType::Any);
        let mut pooled: BTreeMap<SeriesKey, SeriesCounts> = BTreeMap::new();
        for (key, s) in &out.series {
            let mut k = key.clone();
            k.source = SourceType::Any;
            pooled.entry(k).or_default().merge(s);
        }
        out.series.extend(pooled);
        out
    }

    /// Sorted sparse table: one key tuple and value per line.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        let cal = &self.calendar;
        writeln!(w, "# crowdcast count-cube v1")?;
        writeln!(
            w,
            "# granularity={} corpus_start={} corpus_end={} train_end={} test_start={} week_start={}",
            self.granularity.as_str(),
            cal.corpus_start,
            cal.corpus_end,
            cal.train_end,
            cal.test_start,
            cal.week_start
        )?;
        for (e, kind) in &self.kinds {
            let kind = serde_json::to_value(kind)?;
            writeln!(w, "kind\t{e}\t{}", kind.as_str().unwrap_or("other"))?;
        }
        for (e, p) in &self.parents {
            writeln!(w, "parent\t{e}\t{p}")?;
        }
        for (k, s) in &self.series {
            for (&(i, off), &c) in &s.counts {
                writeln!(w, "count\t{}\t{}\t{}\t{i}\t{off}\t{c}", k.entity, k.event_type, k.source)?;
            }
        }
        for (k, s) in &self.series {
            for (&i, &v) in &s.violence {
                writeln!(
                    w,
                    "violence\t{}\t{}\t{}\t{i}\t{}",
                    k.entity,
                    k.event_type,
                    k.source,
                    v.to_decimal()
                )?;
            }
        }
        Ok(())
    }

    pub fn read_table<R: BufRead>(r: R) -> Result<CountCube> {
        let mut cube: Option<CountCube> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let perr = |message: String| Error::Parse { line: lineno, message };
            if let Some(header) = line.strip_prefix("# granularity=") {
                cube = Some(parse_cube_header(header).map_err(perr)?);
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let c = cube
                .as_mut()
                .ok_or_else(|| perr("missing header".into()))?;
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["kind", e, kind] => {
                    let kind: EntityKind = serde_json::from_value(serde_json::Value::String(kind.to_string()))
                        .map_err(|e| perr(e.to_string()))?;
                    c.kinds.insert(e.to_string(), kind);
                }
                ["parent", e, p] => {
                    c.parents.insert(e.to_string(), p.to_string());
                }
                ["count", e, ev, src, i, off, n] => {
                    let key = SeriesKey::new(e, ev, src.parse().map_err(perr)?);
                    let i: u32 = i.parse().map_err(|_| perr(format!("bad period `{i}`")))?;
                    let off: i32 = off.parse().map_err(|_| perr(format!("bad offset `{off}`")))?;
                    let n: u64 = n.parse().map_err(|_| perr(format!("bad count `{n}`")))?;
                    c.series.entry(key).or_default().counts.insert((i, off), n);
                }
                ["violence", e, ev, src, i, v] => {
                    let key = SeriesKey::new(e, ev, src.parse().map_err(perr)?);
                    let i: u32 = i.parse().map_err(|_| perr(format!("bad period `{i}`")))?;
                    let v = ViolenceSum::from_decimal(v)
                        .ok_or_else(|| perr(format!("bad violence `{v}`")))?;
                    c.series.entry(key).or_default().violence.insert(i, v);
                }
                _ => return Err(perr(format!("unrecognized line `{line}`"))),
            }
        }
        cube.ok_or(Error::Parse {
            line: 0,
            message: "empty cube table".into(),
        })
    }
}

fn parse_cube_header(header: &str) -> std::result::Result<CountCube, String> {
    let mut fields = BTreeMap::new();
    let mut parts = header.split(' ');
    fields.insert("granularity", parts.next().unwrap_or_default());
    for p in parts {
        if let Some((k, v)) = p.split_once('=') {
            fields.insert(k, v);
        }
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("header lacks {k}"));
    let date = |k: &str| -> std::result::Result<chrono::NaiveDate, String> {
        get(k)?.parse().map_err(|e| format!("{k}: {e}"))
    };
    let granularity = match get("granularity")? {
        "day" => Granularity::Day,
        "week" => Granularity::Week,
        g => return Err(format!("bad granularity `{g}`")),
    };
    let cal = Calendar::new(
        date("corpus_start")?,
        date("corpus_end")?,
        date("train_end")?,
        date("test_start")?,
    )
    .map_err(|e| e.to_string())?
    .with_week_start(
        get("week_start")?
            .parse()
            .map_err(|_| "bad week_start".to_string())?,
    );
    Ok(CountCube::empty(cal, granularity))
}
