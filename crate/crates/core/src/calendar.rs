//! Corpus calendar: date ↔ period index mapping and train/test splits.

use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Day,
    Week,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Day => "day",
            Granularity::Week => "week",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub corpus_start: NaiveDate,
    pub corpus_end: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    #[serde(with = "weekday_serde", default = "default_week_start")]
    pub week_start: Weekday,
}

fn default_week_start() -> Weekday {
    Weekday::Mon
}

impl Calendar {
    pub fn new(
        corpus_start: NaiveDate,
        corpus_end: NaiveDate,
        train_end: NaiveDate,
        test_start: NaiveDate,
    ) -> Result<Self> {
        let cal = Self {
            corpus_start,
            corpus_end,
            train_end,
            test_start,
            week_start: Weekday::Mon,
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn with_week_start(mut self, week_start: Weekday) -> Self {
        self.week_start = week_start;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.corpus_start < self.train_end
            && self.train_end < self.test_start
            && self.test_start <= self.corpus_end)
        {
            return Err(Error::Calendar(format!(
                "need corpus_start < train_end < test_start <= corpus_end, got {} / {} / {} / {}",
                self.corpus_start, self.train_end, self.test_start, self.corpus_end
            )));
        }
        Ok(())
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.corpus_start && date <= self.corpus_end
    }

    pub fn n_days(&self) -> usize {
        (self.corpus_end - self.corpus_start).num_days() as usize + 1
    }

    /// Day index of `date`, or `None` outside the corpus.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.contains(date)
            .then(|| (date - self.corpus_start).num_days() as usize)
    }

    pub fn day_date(&self, index: usize) -> NaiveDate {
        self.corpus_start + Duration::days(index as i64)
    }

    /// First day of week 0: the latest `week_start` on or before the corpus start.
    pub fn first_week_start(&self) -> NaiveDate {
        let back = (7 + self.corpus_start.weekday().num_days_from_monday()
            - self.week_start.num_days_from_monday())
            % 7;
        self.corpus_start - Duration::days(back as i64)
    }

    pub fn week_of_date(&self, date: NaiveDate) -> Option<usize> {
        self.contains(date)
            .then(|| ((date - self.first_week_start()).num_days() / 7) as usize)
    }

    pub fn week_of_day_index(&self, day: usize) -> usize {
        let lead = (self.corpus_start - self.first_week_start()).num_days() as usize;
        (day + lead) / 7
    }

    pub fn week_date(&self, week: usize) -> NaiveDate {
        self.first_week_start() + Duration::days(7 * week as i64)
    }

    pub fn n_weeks(&self) -> usize {
        self.week_of_day_index(self.n_days() - 1) + 1
    }

    pub fn n_periods(&self, granularity: Granularity) -> usize {
        match granularity {
            Granularity::Day => self.n_days(),
            Granularity::Week => self.n_weeks(),
        }
    }

    pub fn period_date(&self, granularity: Granularity, period: usize) -> NaiveDate {
        match granularity {
            Granularity::Day => self.day_date(period),
            Granularity::Week => self.week_date(period),
        }
    }

    pub fn period_of_date(&self, granularity: Granularity, date: NaiveDate) -> Option<usize> {
        match granularity {
            Granularity::Day => self.day_index(date),
            Granularity::Week => self.week_of_date(date),
        }
    }

    /// Periods available for supervised training. A week straddling the
    /// train/test boundary belongs to the test side.
    pub fn train_periods(&self, granularity: Granularity) -> Range<usize> {
        match granularity {
            Granularity::Day => 0..self.day_index(self.train_end).unwrap_or(0) + 1,
            Granularity::Week => {
                let test = self.week_of_date(self.test_start).unwrap_or(0);
                let last = self.week_of_date(self.train_end).unwrap_or(0);
                0..(last + 1).min(test)
            }
        }
    }

    pub fn test_periods(&self, granularity: Granularity) -> Range<usize> {
        let start = self
            .period_of_date(granularity, self.test_start)
            .unwrap_or(0);
        start..self.n_periods(granularity)
    }
}

mod weekday_serde {
    use chrono::Weekday;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(day: &Weekday, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&day.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Weekday, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse::<Weekday>()
            .map_err(|_| serde::de::Error::custom(format!("bad weekday `{raw}`")))
    }
}
