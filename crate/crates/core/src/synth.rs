//! Planted-signal synthetic mention corpora.
//!
//! Counts are independent Poisson draws. An episode for entity `c` on day
//! `D` multiplies same-day reporting on `D ..= D+2`, adds forward-looking
//! Twitter chatter about `D` on `D-L ..= D-1`, and ramps violence scores up
//! over the lead days.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::Calendar;
use crate::cube::{CountCube, CubeBuilder, RejectionTally};
use crate::error::{Error, Result};
use crate::mention::{EntityKind, MentionRecord, SourceType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntity {
    pub id: String,
    pub kind: EntityKind,
    #[serde(default)]
    pub parent: Option<String>,
    /// Multiplies every base rate.
    pub scale: f64,
}

/// Expected mentions per day for one event type and source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRate {
    pub event_type: String,
    pub source: SourceType,
    pub same_day: f64,
    /// Per target offset `1 ..= max_offset`.
    pub forward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub event_type: String,
    pub rate_per_year: f64,
    /// Same-day reporting multiplier on the episode days.
    pub amplitude: f64,
    pub duration_days: u32,
    /// Lead time `L`: days of precursor chatter.
    pub lead_days: u32,
    /// Extra forward-looking Twitter mentions per lead day.
    pub precursor_per_day: f64,
    /// Violence score added at the peak of the ramp.
    pub violence_ramp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub calendar: Calendar,
    pub entities: Vec<SynthEntity>,
    pub rates: Vec<BaseRate>,
    pub max_offset: u32,
    pub episodes: EpisodeConfig,
    /// Background violence scores are uniform on `[0, base_violence)`.
    pub base_violence: f64,
    /// Multiplicative growth of every rate per 30 days.
    pub growth_per_30_days: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.calendar.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.entities.is_empty() {
            return bad("no entities".into());
        }
        for e in &self.entities {
            if !(e.scale >= 0.0 && e.scale.is_finite()) {
                return bad(format!("entity {} has scale {}", e.id, e.scale));
            }
        }
        for r in &self.rates {
            if !(r.same_day >= 0.0 && r.forward >= 0.0 && r.same_day.is_finite() && r.forward.is_finite()) {
                return bad(format!("negative rate for {} {}", r.event_type, r.source));
            }
            if r.source == SourceType::Any {
                return bad("rates must name a concrete source".into());
            }
        }
        let ep = &self.episodes;
        if !(ep.rate_per_year >= 0.0 && ep.amplitude >= 0.0 && ep.precursor_per_day >= 0.0 && ep.violence_ramp >= 0.0) {
            return bad("episode parameters must be nonnegative".into());
        }
        if !(self.growth_per_30_days >= 1.0 && self.growth_per_30_days.is_finite()) {
            return bad(format!("growth {} below 1", self.growth_per_30_days));
        }
        if !(0.0..=1.0).contains(&self.base_violence) {
            return bad("base violence outside [0,1]".into());
        }
        if self.episodes.lead_days > self.max_offset && self.episodes.precursor_per_day > 0.0 {
            return bad("lead time exceeds the largest target offset".into());
        }
        Ok(())
    }

    pub fn event_types(&self) -> Vec<String> {
        let mut v: Vec<String> = self.rates.iter().map(|r| r.event_type.clone()).collect();
        v.push(self.episodes.event_type.clone());
        v.sort();
        v.dedup();
        v
    }

    fn growth(&self, day: usize) -> f64 {
        self.growth_per_30_days.powf(day as f64 / 30.0)
    }

    /// Episode start days for entity `index`.
    pub fn episode_days(&self, index: usize) -> Vec<usize> {
        let mut rng = entity_rng(self.seed, index, 0);
        let p = (self.episodes.rate_per_year / 365.25).min(1.0);
        (0..self.calendar.n_days()).filter(|_| rng.gen_bool(p)).collect()
    }

    /// Sum of all Poisson intensities given the drawn episodes.
    pub fn expected_total(&self) -> f64 {
        (0..self.entities.len())
            .map(|e| {
                let plan = EntityPlan::new(self, e);
                let mut total = 0.0;
                for day in 0..self.calendar.n_days() {
                    plan.for_each_intensity(self, day, |_, _, _, lambda| total += lambda);
                }
                total
            })
            .sum()
    }
}

fn entity_rng(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index as u64 + purpose);
    rng
}

/// Per-day episode multipliers for one entity.
struct EntityPlan {
    scale: f64,
    /// Same-day multiplier per day.
    spike: Vec<f64>,
    /// `(publish day, target offset, expected extra mentions)`.
    chatter: Vec<Vec<(u32, f64)>>,
    /// Violence ramp added on each day.
    ramp: Vec<f64>,
}

impl EntityPlan {
    fn new(cfg: &SynthConfig, index: usize) -> Self {
        let n = cfg.calendar.n_days();
        let ep = &cfg.episodes;
        let mut spike = vec![1.0f64; n];
        let mut chatter = vec![Vec::new(); n];
        let mut ramp = vec![0.0f64; n];
        for d in cfg.episode_days(index) {
            for day in spike.iter_mut().skip(d).take(ep.duration_days as usize) {
                *day = (*day).max(ep.amplitude);
            }
            for lead in 1..=ep.lead_days as usize {
                let Some(i) = d.checked_sub(lead) else { break };
                chatter[i].push((lead as u32, ep.precursor_per_day));
                let frac = (ep.lead_days as usize + 1 - lead) as f64 / (ep.lead_days as f64 + 1.0);
                ramp[i] = ramp[i].max(ep.violence_ramp * frac);
            }
            for day in ramp.iter_mut().skip(d).take(ep.duration_days as usize) {
                *day = (*day).max(ep.violence_ramp);
            }
        }
        EntityPlan {
            scale: cfg.entities[index].scale,
            spike,
            chatter,
            ramp,
        }
    }

    /// Calls `f(rate index, source, offset, lambda)` for every nonzero
    /// intensity on `day`.
    fn for_each_intensity(&self, cfg: &SynthConfig, day: usize, mut f: impl FnMut(usize, SourceType, u32, f64)) {
        let g = cfg.growth(day) * self.scale;
        for (ri, r) in cfg.rates.iter().enumerate() {
            let episodic = r.event_type == cfg.episodes.event_type;
            let same = r.same_day * g * if episodic { self.spike[day] } else { 1.0 };
            if same > 0.0 {
                f(ri, r.source, 0, same);
            }
            for k in 1..=cfg.max_offset {
                let mut lambda = r.forward * g;
                if episodic && r.source == SourceType::Twitter {
                    lambda += self.chatter[day]
                        .iter()
                        .filter(|c| c.0 == k)
                        .map(|c| c.1 * g)
                        .sum::<f64>();
                }
                if lambda > 0.0 {
                    f(ri, r.source, k, lambda);
                }
            }
        }
    }
}

/// Lazily generated records for one entity, ordered by publish day.
pub struct EntityStream<'a> {
    cfg: &'a SynthConfig,
    entity: usize,
    plan: EntityPlan,
    rng: ChaCha8Rng,
    day: usize,
    buffer: std::vec::IntoIter<MentionRecord>,
}

impl<'a> EntityStream<'a> {
    pub fn new(cfg: &'a SynthConfig, entity: usize) -> Self {
        EntityStream {
            cfg,
            entity,
            plan: EntityPlan::new(cfg, entity),
            rng: entity_rng(cfg.seed, entity, 1),
            day: 0,
            buffer: Vec::new().into_iter(),
        }
    }

    fn fill(&mut self) {
        let cfg = self.cfg;
        let ent = &cfg.entities[self.entity];
        let date = cfg.calendar.day_date(self.day);
        let ramp = self.plan.ramp[self.day];
        let mut out = Vec::new();
        let mut draws: Vec<(usize, SourceType, u32, f64)> = Vec::new();
        self.plan
            .for_each_intensity(cfg, self.day, |ri, s, k, lambda| draws.push((ri, s, k, lambda)));
        for (ri, source, k, lambda) in draws {
            let count = Poisson::new(lambda).expect("positive intensity").sample(&mut self.rng) as u64;
            let event_type = &cfg.rates[ri].event_type;
            let episodic = *event_type == cfg.episodes.event_type;
            for _ in 0..count {
                let mut violence = cfg.base_violence * self.rng.gen::<f64>();
                if episodic {
                    violence += ramp;
                }
                out.push(MentionRecord {
                    entity_id: ent.id.clone(),
                    entity_kind: ent.kind,
                    parent_entity: ent.parent.clone(),
                    event_type: event_type.clone(),
                    source_type: source,
                    publish_day: date,
                    target_day: date + Duration::days(k as i64),
                    violence_score: violence.min(1.0),
                });
            }
        }
        self.day += 1;
        self.buffer = out.into_iter();
    }
}

impl Iterator for EntityStream<'_> {
    type Item = MentionRecord;

    fn next(&mut self) -> Option<MentionRecord> {
        loop {
            if let Some(r) = self.buffer.next() {
                return Some(r);
            }
            if self.day >= self.cfg.calendar.n_days() {
                return None;
            }
            self.fill();
        }
    }
}

/// All records, entity by entity in configuration order. Target days past
/// the corpus end are kept; ingestion rejects them.
pub fn generate(cfg: &SynthConfig) -> Result<impl Iterator<Item = MentionRecord> + '_> {
    cfg.validate()?;
    Ok((0..cfg.entities.len()).flat_map(move |e| EntityStream::new(cfg, e)))
}

/// Generate straight into a day cube, in parallel over entities.
pub fn generate_cube(cfg: &SynthConfig) -> Result<(CountCube, RejectionTally)> {
    cfg.validate()?;
    let event_types = cfg.event_types();
    let builders: Vec<CubeBuilder> = (0..cfg.entities.len())
        .into_par_iter()
        .map(|e| {
            let mut b = CubeBuilder::new(&cfg.calendar, &event_types);
            for r in EntityStream::new(cfg, e) {
                b.push(&r);
            }
            b
        })
        .collect();
    let mut all = CubeBuilder::new(&cfg.calendar, &event_types);
    for b in builders {
        all.merge(b);
    }
    let ingested = all.finish();
    Ok((ingested.cube, ingested.rejected))
}

pub const BENCHMARK_EVENT: &str = "protest";

/// The planted-signal benchmark: 18 countries over two and a half years,
/// lead time 4, tuned to roughly 6% positive three-day stretches.
pub fn benchmark_config(seed: u64) -> SynthConfig {
    let start = NaiveDate::from_ymd_opt(2011, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(2013, 6, 30).unwrap();
    let train_end = NaiveDate::from_ymd_opt(2012, 8, 31).unwrap();
    let test_start = NaiveDate::from_ymd_opt(2012, 9, 1).unwrap();
    let calendar = Calendar::new(start, end, train_end, test_start).expect("valid benchmark calendar");
    let entities = (0..18)
        .map(|i| SynthEntity {
            id: format!("C{i:02}"),
            kind: EntityKind::Country,
            parent: None,
            // sizes spread over a factor of four
            scale: 0.5 * 4f64.powf(i as f64 / 17.0),
        })
        .collect();
    let rate = |source, same_day, forward| BaseRate {
        event_type: BENCHMARK_EVENT.into(),
        source,
        same_day,
        forward,
    };
    SynthConfig {
        calendar,
        entities,
        rates: vec![
            rate(SourceType::Mainstream, 24.0, 0.6),
            rate(SourceType::Twitter, 12.0, 0.6),
            rate(SourceType::SocialMedia, 6.0, 0.2),
            rate(SourceType::Blog, 3.0, 0.1),
        ],
        max_offset: 12,
        episodes: EpisodeConfig {
            event_type: BENCHMARK_EVENT.into(),
            rate_per_year: 7.5,
            amplitude: 6.0,
            duration_days: 3,
            lead_days: 4,
            precursor_per_day: 3.0,
            violence_ramp: 0.3,
        },
        base_violence: 0.2,
        growth_per_30_days: 1.02,
        seed,
    }
}
