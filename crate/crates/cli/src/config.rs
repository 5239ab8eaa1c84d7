//! The TOML run configuration.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crowdcast::calendar::Calendar;
use crowdcast::forest::{ForestParams, TuneOptions};
use crowdcast::nbseq::NbTuneOptions;
use crowdcast::pipeline::{DailyTaskConfig, DailyTaskKind, WeeklyTaskConfig};
use crowdcast::synth::{benchmark_config, SynthConfig};

use crate::Invalid;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    CountryDay,
    CityDay,
    WeeklyNb,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Newline-delimited JSON mention records.
    pub corpus: Option<PathBuf>,
    /// Directory for every artifact; `CROWDCAST_OUT` and `--out` override.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalendarSection {
    pub corpus_start: NaiveDate,
    pub corpus_end: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    #[serde(default = "monday")]
    pub week_start: String,
}

fn monday() -> String {
    "Mon".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// `benchmark`, or a JSON file holding a full generator configuration.
    pub preset: String,
    pub file: Option<PathBuf>,
    pub seed: u64,
    /// Keep only the first `entities` entities of the preset.
    pub entities: Option<usize>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            preset: "benchmark".into(),
            file: None,
            seed: 2013,
            entities: None,
        }
    }
}

// `flatten` rules out `deny_unknown_fields` here
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestSection {
    #[serde(flatten)]
    pub params: ForestParams,
    pub tune: TuneOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    /// Event types counted at ingestion.
    pub event_types: Vec<String>,
    /// Restrict the task to these entities when nonempty.
    pub entities: Vec<String>,
    pub horizon: usize,
    pub max_horizon: usize,
    pub paths: Paths,
    pub calendar: Option<CalendarSection>,
    pub daily: DailyTaskConfig,
    pub weekly: WeeklyTaskConfig,
    pub forest: ForestSection,
    pub nb: NbTuneOptions,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::CountryDay,
            event_types: vec!["protest".into()],
            entities: Vec::new(),
            horizon: 1,
            max_horizon: 9,
            paths: Paths::default(),
            calendar: None,
            daily: DailyTaskConfig::default(),
            weekly: WeeklyTaskConfig::default(),
            forest: ForestSection::default(),
            nb: NbTuneOptions::default(),
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// The calendar section, or the benchmark's dates when absent.
    pub fn calendar(&self) -> anyhow::Result<Calendar> {
        let Some(c) = &self.calendar else {
            return Ok(benchmark_config(0).calendar);
        };
        let week_start: Weekday = c
            .week_start
            .parse()
            .map_err(|_| Invalid(format!("bad week_start `{}`", c.week_start)))?;
        let cal = Calendar::new(c.corpus_start, c.corpus_end, c.train_end, c.test_start)
            .map_err(|e| Invalid(e.to_string()))?
            .with_week_start(week_start);
        Ok(cal)
    }

    pub fn daily(&self) -> DailyTaskConfig {
        let mut d = self.daily.clone();
        d.kind = match self.task {
            TaskKind::CityDay => DailyTaskKind::City,
            _ => DailyTaskKind::Country,
        };
        d
    }

    pub fn weekly(&self) -> WeeklyTaskConfig {
        let mut w = self.weekly.clone();
        w.max_horizon = w.max_horizon.max(self.max_horizon).max(self.horizon);
        w
    }

    pub fn synth_config(&self) -> anyhow::Result<SynthConfig> {
        let mut cfg = match (&self.synth.file, self.synth.preset.as_str()) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?
            }
            (None, "benchmark") => {
                let mut c = benchmark_config(self.synth.seed);
                if self.calendar.is_some() {
                    c.calendar = self.calendar()?;
                }
                c
            }
            (None, other) => return Err(Invalid(format!("unknown synth preset `{other}`")).into()),
        };
        cfg.seed = self.synth.seed;
        if let Some(n) = self.synth.entities {
            cfg.entities.truncate(n);
        }
        cfg.validate().map_err(|e| Invalid(e.to_string()))?;
        Ok(cfg)
    }
}
