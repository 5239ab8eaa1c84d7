//! Extracted event-mention records and their line-oriented JSON encoding.

use std::borrow::Borrow;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::Calendar;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Country,
    City,
    Organization,
    Person,
    Other,
}

/// Where a mention was published. `Any` is never carried by a record: it is
/// the pooled view over all concrete sources, materialized by
/// [`CountCube::with_pooled_any`](crate::cube::CountCube::with_pooled_any).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceType {
    Mainstream,
    Twitter,
    SocialMedia,
    Blog,
    Other,
    Any,
}

impl SourceType {
    pub const CONCRETE: [SourceType; 5] = [
        SourceType::Mainstream,
        SourceType::Twitter,
        SourceType::SocialMedia,
        SourceType::Blog,
        SourceType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceType::Mainstream => "mainstream",
            SourceType::Twitter => "twitter",
            SourceType::SocialMedia => "social_media",
            SourceType::Blog => "blog",
            SourceType::Other => "other",
            SourceType::Any => "any",
        }
    }
}

impl fmt::Display for SourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "mainstream" => SourceType::Mainstream,
            "twitter" => SourceType::Twitter,
            "social_media" => SourceType::SocialMedia,
            "blog" => SourceType::Blog,
            "other" => SourceType::Other,
            "any" => SourceType::Any,
            _ => return Err(format!("unknown source type `{s}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub entity_id: String,
    pub entity_kind: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_entity: Option<String>,
    pub event_type: String,
    pub source_type: SourceType,
    pub publish_day: NaiveDate,
    pub target_day: NaiveDate,
    #[serde(default)]
    pub violence_score: f64,
}

/// Why a record was not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    Malformed,
    UnknownEventType,
    UnknownSourceType,
    PublishOutOfRange,
    TargetOutOfRange,
    ViolenceOutOfRange,
    MissingParent,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::Malformed => "malformed",
            Rejection::UnknownEventType => "unknown_event_type",
            Rejection::UnknownSourceType => "unknown_source_type",
            Rejection::PublishOutOfRange => "publish_out_of_range",
            Rejection::TargetOutOfRange => "target_out_of_range",
            Rejection::ViolenceOutOfRange => "violence_out_of_range",
            Rejection::MissingParent => "missing_parent",
        }
    }
}

impl MentionRecord {
    /// Check the record invariants against the configured event types and
    /// calendar.
    pub fn validate<S: AsRef<str>>(
        &self,
        event_types: &[S],
        calendar: &Calendar,
    ) -> Result<(), Rejection> {
        if !event_types.iter().any(|e| e.as_ref() == self.event_type) {
            return Err(Rejection::UnknownEventType);
        }
        if self.source_type == SourceType::Any {
            return Err(Rejection::UnknownSourceType);
        }
        if !calendar.contains(self.publish_day) {
            return Err(Rejection::PublishOutOfRange);
        }
        if !calendar.contains(self.target_day) {
            return Err(Rejection::TargetOutOfRange);
        }
        if !(0.0..=1.0).contains(&self.violence_score) {
            return Err(Rejection::ViolenceOutOfRange);
        }
        if self.entity_kind == EntityKind::City && self.parent_entity.is_none() {
            return Err(Rejection::MissingParent);
        }
        Ok(())
    }
}

/// Lenient first-pass shape so an unrecognized source string is tallied as
/// such instead of as a malformed line.
#[derive(Deserialize)]
struct RawRecord {
    entity_id: String,
    entity_kind: EntityKind,
    #[serde(default)]
    parent_entity: Option<String>,
    event_type: String,
    source_type: String,
    publish_day: NaiveDate,
    target_day: NaiveDate,
    #[serde(default)]
    violence_score: f64,
}

/// Parse one input line. Unknown extra fields are ignored.
pub fn parse_line(line: &str) -> Result<MentionRecord, Rejection> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|_| Rejection::Malformed)?;
    let source_type = raw
        .source_type
        .parse()
        .map_err(|_| Rejection::UnknownSourceType)?;
    Ok(MentionRecord {
        entity_id: raw.entity_id,
        entity_kind: raw.entity_kind,
        parent_entity: raw.parent_entity,
        event_type: raw.event_type,
        source_type,
        publish_day: raw.publish_day,
        target_day: raw.target_day,
        violence_score: raw.violence_score,
    })
}

/// Lazily parse newline-delimited records; blank lines are skipped.
pub fn read_records<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<Result<MentionRecord, Rejection>>> {
    reader.lines().filter_map(|line| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok(parse_line(&l))),
        Err(e) => Some(Err(e.into())),
    })
}

pub fn write_records<W, I>(mut out: W, records: I) -> Result<usize>
where
    W: Write,
    I: IntoIterator,
    I::Item: Borrow<MentionRecord>,
{
    let mut n = 0;
    for r in records {
        serde_json::to_writer(&mut out, r.borrow())?;
        out.write_all(b"\n")?;
        n += 1;
    }
    Ok(n)
}
