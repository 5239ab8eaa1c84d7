//! End-to-end tasks: normalize, label, cluster and featurize a cube, then
//! train, tune and evaluate a classifier against the baseline.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::{Calendar, Granularity};
use crate::cluster::{cluster_entities, ClusterAssignment, WardVariant};
use crate::cube::CountCube;
use crate::detrend::{
    normalize_daily, normalize_violence, normalize_weekly, training_mean, BaselineMean, NormalizedCube,
    NormalizedViolence, WeeklyDenominator, DAILY_WINDOW, WEEKLY_WINDOW,
};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_predict, evaluate_predictions, evaluate_scores, BaselineWindow, EvalReport, HorizonRow,
    PredictionGrid, TuneResult,
};
use crate::features::{
    build_city_features, build_country_features, build_weekly_features, DailyView, FeatureOptions, FeatureSchema,
    Instance, DEFAULT_WEEKLY_LAGS,
};
use crate::forest::{self, ForestModel, ForestParams, TuneOptions};
use crate::labeler::{
    label_days, label_weeks, significance, LabelSet, threshold_from_quantile, QuantileThreshold, SignificanceSeries,
    DEFAULT_THETA, DEFAULT_WEEKLY_QUANTILE,
};
use crate::mention::{EntityKind, SourceType};
use crate::nbseq::{self, NbModel, NbTuneOptions};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DailyTaskKind {
    #[default]
    Country,
    City,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DailyTaskConfig {
    pub kind: DailyTaskKind,
    pub event_type: String,
    pub theta: f64,
    pub window: usize,
    /// `None` means `floor(2 sqrt(n))`.
    pub clusters: Option<usize>,
    pub ward: WardVariant,
    pub features: FeatureOptions,
    pub baseline_window: BaselineWindow,
}

impl Default for DailyTaskConfig {
    fn default() -> Self {
        DailyTaskConfig {
            kind: DailyTaskKind::Country,
            event_type: "protest".into(),
            theta: DEFAULT_THETA,
            window: DAILY_WINDOW,
            clusters: None,
            ward: WardVariant::D2,
            features: FeatureOptions::default(),
            baseline_window: BaselineWindow::Trailing,
        }
    }
}

/// Train and test instances for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// A prepared task that can produce labeled instances per horizon.
pub trait Task {
    fn schema(&self) -> &FeatureSchema;
    fn calendar(&self) -> &Calendar;
    fn granularity(&self) -> Granularity;
    fn entities(&self) -> &[String];
    /// Instances for periods in `periods`, labeled where the label is
    /// defined, with the baseline's call attached.
    fn instances(&self, horizon: usize, periods: Range<usize>) -> Result<Vec<Instance>>;

    /// Training instances are those whose label window ends inside the
    /// training range; test instances start inside the test range.
    fn split(&self, horizon: usize) -> Result<Split> {
        let g = self.granularity();
        let train_range = self.calendar().train_periods(g);
        let test_range = self.calendar().test_periods(g);
        let span = match g {
            Granularity::Day => horizon + 2,
            Granularity::Week => horizon,
        };
        let train = self
            .instances(horizon, train_range.clone())?
            .into_iter()
            .filter(|i| i.label.is_some() && i.period + span < train_range.end)
            .collect();
        let test = self
            .instances(horizon, test_range)?
            .into_iter()
            .filter(|i| i.label.is_some())
            .collect();
        Ok(Split { train, test })
    }
}

/// Normalized country-level inputs without baseline scaling, for the city
/// task's appended blocks.
#[derive(Debug, Clone)]
pub struct ParentInputs {
    pub norm: NormalizedCube,
    pub violence: NormalizedViolence,
    pub scale: BaselineMean,
    pub parents: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct DailyTask {
    pub config: DailyTaskConfig,
    pub calendar: Calendar,
    pub norm: NormalizedCube,
    pub violence: NormalizedViolence,
    pub scale: BaselineMean,
    pub series: SignificanceSeries,
    pub clusters: ClusterAssignment,
    pub schema: FeatureSchema,
    pub parent: Option<ParentInputs>,
}

const DAILY_SOURCES: [SourceType; 2] = [SourceType::Mainstream, SourceType::Twitter];

fn entities_of_kind(cube: &CountCube, kind: EntityKind) -> Vec<String> {
    cube.entities()
        .into_iter()
        .filter(|e| cube.entity_kind(e) == Some(kind))
        .collect()
}

fn normalize_family(
    cube: &CountCube,
    entities: &[String],
    cfg: &DailyTaskConfig,
) -> Result<(NormalizedCube, NormalizedViolence)> {
    let offsets = cfg.features.required_offsets();
    let norm = normalize_daily(cube, entities, &cfg.event_type, &DAILY_SOURCES, &offsets, cfg.window)?;
    let violence = normalize_violence(cube, entities, &cfg.event_type, &[SourceType::Mainstream], cfg.window)?;
    Ok((norm, violence))
}

impl DailyTask {
    /// Country task: relative significance against each country's training
    /// mean, countries clustered on their training significance values.
    /// City task: absolute scale, cities clustered on training `M'` values,
    /// containing countries' unscaled blocks appended.
    pub fn prepare(cube: &CountCube, cfg: &DailyTaskConfig) -> Result<Self> {
        let calendar = cube.calendar.clone();
        let kind = match cfg.kind {
            DailyTaskKind::Country => EntityKind::Country,
            DailyTaskKind::City => EntityKind::City,
        };
        let entities = entities_of_kind(cube, kind);
        if entities.is_empty() {
            return Err(Error::Config(format!("cube has no {kind:?} entities")));
        }
        let (norm, violence) = normalize_family(cube, &entities, cfg)?;
        let ms = norm.source_index(SourceType::Mainstream).expect("mainstream normalized");
        let scale = match cfg.kind {
            DailyTaskKind::Country => training_mean(&norm, &calendar, 0, ms)?,
            DailyTaskKind::City => BaselineMean::unit(&entities),
        };
        let series = significance(&norm, &scale, 0, ms, cfg.theta)?;
        let train = calendar.train_periods(Granularity::Day);
        let samples: Vec<Vec<f64>> = (0..entities.len())
            .map(|e| match cfg.kind {
                DailyTaskKind::Country => series.sample(e, train.clone()),
                DailyTaskKind::City => train
                    .clone()
                    .filter_map(|i| norm.get(e, 0, ms, i, 0))
                    .collect(),
            })
            .collect();
        let clusters = cluster_entities(&entities, &samples, cfg.clusters, cfg.ward)?;
        let (schema, parent) = match cfg.kind {
            DailyTaskKind::Country => (FeatureSchema::country(clusters.k, cfg.features), None),
            DailyTaskKind::City => {
                let mut parents = BTreeMap::new();
                for c in &entities {
                    let p = cube.parent(c).ok_or_else(|| Error::MissingParent(c.clone()))?;
                    parents.insert(c.clone(), p.to_string());
                }
                let mut countries: Vec<String> = parents.values().cloned().collect();
                countries.sort();
                countries.dedup();
                let (pn, pv) = normalize_family(cube, &countries, cfg)?;
                let parent = ParentInputs {
                    scale: BaselineMean::unit(&countries),
                    norm: pn,
                    violence: pv,
                    parents,
                };
                (FeatureSchema::city(clusters.k, cfg.features), Some(parent))
            }
        };
        Ok(DailyTask {
            config: cfg.clone(),
            calendar,
            norm,
            violence,
            scale,
            series,
            clusters,
            schema,
            parent,
        })
    }

    /// Replace the computed clusters with a stored assignment over the same
    /// entities.
    pub fn with_clusters(mut self, clusters: ClusterAssignment) -> Result<Self> {
        let mut ours = self.norm.entities.clone();
        let mut theirs = clusters.entities.clone();
        ours.sort();
        theirs.sort();
        if ours != theirs {
            return Err(Error::Config("cluster assignment covers different entities".into()));
        }
        self.schema = match self.config.kind {
            DailyTaskKind::Country => FeatureSchema::country(clusters.k, self.config.features),
            DailyTaskKind::City => FeatureSchema::city(clusters.k, self.config.features),
        };
        self.clusters = clusters;
        Ok(self)
    }

    pub fn view(&self) -> Result<DailyView<'_>> {
        DailyView::new(&self.norm, &self.violence, &self.scale)
    }

    /// Features for `entity` predicting `horizon` periods past `day`, without
    /// label.
    pub fn build(&self, entity: usize, day: usize, horizon: usize) -> Result<Option<Instance>> {
        let view = self.view()?;
        let anchor = day + horizon - 1;
        match &self.parent {
            None => build_country_features(&view, &self.clusters, &self.schema, entity, anchor, horizon),
            Some(p) => {
                let pview = DailyView::new(&p.norm, &p.violence, &p.scale)?;
                build_city_features(
                    &view,
                    &pview,
                    &self.clusters,
                    &self.schema,
                    |c| p.parents.get(c).cloned(),
                    entity,
                    anchor,
                    horizon,
                )
            }
        }
    }
}

impl Task for DailyTask {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    fn granularity(&self) -> Granularity {
        Granularity::Day
    }

    fn entities(&self) -> &[String] {
        &self.norm.entities
    }

    fn instances(&self, horizon: usize, periods: Range<usize>) -> Result<Vec<Instance>> {
        let labels = label_days(&self.series, horizon)?;
        let mut out = Vec::new();
        for e in 0..self.norm.entities.len() {
            for day in periods.clone() {
                if let Some(mut inst) = self.build(e, day, horizon)? {
                    inst.label = labels.get(e, day);
                    inst.baseline = baseline_predict(&self.series, e, day, horizon, self.config.baseline_window);
                    out.push(inst);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeeklyTaskConfig {
    pub entity: String,
    pub target_event: String,
    /// All event types in the cube when empty.
    pub event_types: Vec<String>,
    pub sources: Vec<SourceType>,
    pub label_source: SourceType,
    pub lags: usize,
    pub window: usize,
    pub quantile: f64,
    pub denominator: WeeklyDenominator,
    /// Largest horizon the normalized cube must support.
    pub max_horizon: usize,
}

impl Default for WeeklyTaskConfig {
    fn default() -> Self {
        WeeklyTaskConfig {
            entity: String::new(),
            target_event: "cyber_attack".into(),
            event_types: Vec::new(),
            sources: vec![
                SourceType::Any,
                SourceType::Mainstream,
                SourceType::SocialMedia,
                SourceType::Blog,
            ],
            label_source: SourceType::Any,
            lags: DEFAULT_WEEKLY_LAGS,
            window: WEEKLY_WINDOW,
            quantile: DEFAULT_WEEKLY_QUANTILE,
            denominator: WeeklyDenominator::PublishedVolume,
            max_horizon: 9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeeklyTask {
    pub config: WeeklyTaskConfig,
    pub calendar: Calendar,
    pub norm: NormalizedCube,
    pub threshold: QuantileThreshold,
    pub schema: FeatureSchema,
    event: usize,
    source: usize,
}

impl WeeklyTask {
    /// `cube` may be daily (aggregated here) or weekly.
    pub fn prepare(cube: &CountCube, cfg: &WeeklyTaskConfig) -> Result<Self> {
        let weekly = match cube.granularity {
            Granularity::Day => cube.aggregate_weekly()?,
            Granularity::Week => cube.clone(),
        };
        let weekly = weekly.with_pooled_any();
        let event_types = if cfg.event_types.is_empty() {
            weekly.event_types()
        } else {
            cfg.event_types.clone()
        };
        let event = event_types
            .iter()
            .position(|e| *e == cfg.target_event)
            .ok_or_else(|| Error::Unknown {
                kind: "event type",
                name: cfg.target_event.clone(),
            })?;
        let source = cfg
            .sources
            .iter()
            .position(|&s| s == cfg.label_source)
            .ok_or_else(|| Error::Config(format!("label source {} is not among the feature sources", cfg.label_source)))?;
        let offsets: Vec<i32> = (0..(cfg.lags + cfg.max_horizon) as i32).collect();
        let norm = normalize_weekly(&weekly, &cfg.entity, &event_types, &cfg.sources, &offsets, cfg.window, cfg.denominator)?;
        let train = weekly.calendar.train_periods(Granularity::Week);
        let values: Vec<f64> = train.filter_map(|w| norm.get(0, event, source, w, 0)).collect();
        let threshold = threshold_from_quantile(&values, cfg.quantile)?;
        let schema = FeatureSchema::weekly(&event_types, &cfg.sources, cfg.lags);
        Ok(WeeklyTask {
            config: cfg.clone(),
            calendar: weekly.calendar.clone(),
            norm,
            threshold,
            schema,
            event,
            source,
        })
    }
}

impl WeeklyTask {
    pub fn labels(&self, horizon: usize) -> Result<LabelSet> {
        label_weeks(&self.norm, self.event, self.source, self.threshold.theta, horizon)
    }
}

impl Task for WeeklyTask {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    fn granularity(&self) -> Granularity {
        Granularity::Week
    }

    fn entities(&self) -> &[String] {
        &self.norm.entities
    }

    fn instances(&self, horizon: usize, periods: Range<usize>) -> Result<Vec<Instance>> {
        if horizon > self.config.max_horizon {
            return Err(Error::Config(format!(
                "horizon {horizon} exceeds the prepared maximum {}",
                self.config.max_horizon
            )));
        }
        let labels = self.labels(horizon)?;
        let mut out = Vec::new();
        for week in periods {
            if let Some(mut inst) = build_weekly_features(&self.norm, &self.schema, week, horizon, self.config.lags)? {
                inst.label = labels.get(0, week);
                inst.baseline = self
                    .norm
                    .get(0, self.event, self.source, week, 0)
                    .map(|v| v >= self.threshold.theta);
                out.push(inst);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Forest {
        #[serde(default)]
        params: ForestParams,
        #[serde(default)]
        tune: TuneOptions,
    },
    NaiveBayes {
        #[serde(default)]
        tune: NbTuneOptions,
    },
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Forest {
            params: ForestParams::default(),
            tune: TuneOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Forest(ForestModel),
    NaiveBayes(NbModel),
}

impl TrainedModel {
    pub fn threshold(&self) -> f64 {
        match self {
            TrainedModel::Forest(m) => m.vote_threshold,
            TrainedModel::NaiveBayes(m) => m.pstar,
        }
    }

    pub fn score(&self, instances: &[Instance], fingerprint: &str) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Forest(m) => m.score(instances, fingerprint),
            TrainedModel::NaiveBayes(m) => m.score(instances, fingerprint),
        }
    }
}

pub fn train(classifier: &ClassifierConfig, train: &[Instance], schema: &FeatureSchema) -> Result<(TrainedModel, TuneResult)> {
    let fp = schema.fingerprint();
    match classifier {
        ClassifierConfig::Forest { params, tune } => {
            let (m, t) = forest::train_tuned(train, &fp, params, tune)?;
            Ok((TrainedModel::Forest(m), t))
        }
        ClassifierConfig::NaiveBayes { tune } => {
            let (mut m, t) = nbseq::train_tuned(train, &fp, tune)?;
            m.lags = schema.blocks.first().map_or(0, |b| b.len / 2);
            Ok((TrainedModel::NaiveBayes(m), t.pstar))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub horizon: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_positive_fraction: f64,
    pub tune: TuneResult,
    pub model: EvalReport,
    pub baseline: EvalReport,
}

/// Score `test` with a trained model and compare with the baseline calls
/// attached to each instance.
pub fn evaluate_on(model: &TrainedModel, test: &mut [Instance], fingerprint: &str) -> Result<(EvalReport, EvalReport)> {
    let scores = model.score(test, fingerprint)?;
    for (inst, s) in test.iter_mut().zip(&scores) {
        inst.score = Some(*s);
    }
    let labels: Vec<bool> = test
        .iter()
        .map(|i| i.label.ok_or_else(|| Error::Config("unlabeled test instance".into())))
        .collect::<Result<_>>()?;
    let report = evaluate_scores(&scores, &labels, model.threshold());
    let (base_preds, base_labels): (Vec<bool>, Vec<bool>) = test
        .iter()
        .filter_map(|i| Some((i.baseline?, i.label?)))
        .unzip();
    Ok((report, evaluate_predictions(&base_preds, &base_labels)))
}

/// Train with tuning on the split's training part and evaluate on its test
/// part. Returns the scored test instances too.
pub fn run_split(classifier: &ClassifierConfig, schema: &FeatureSchema, mut split: Split, horizon: usize) -> Result<(TrainedModel, Evaluation, Vec<Instance>)> {
    if split.test.is_empty() {
        return Err(Error::Config("no test instances".into()));
    }
    let (model, tune) = train(classifier, &split.train, schema)?;
    let (report, baseline) = evaluate_on(&model, &mut split.test, &schema.fingerprint())?;
    let pos = split.train.iter().filter(|i| i.label == Some(true)).count();
    let eval = Evaluation {
        horizon,
        n_train: split.train.len(),
        n_test: split.test.len(),
        train_positive_fraction: pos as f64 / split.train.len() as f64,
        tune,
        model: report,
        baseline,
    };
    Ok((model, eval, split.test))
}

pub fn evaluate(task: &dyn Task, classifier: &ClassifierConfig, horizon: usize) -> Result<(TrainedModel, Evaluation, Vec<Instance>)> {
    run_split(classifier, task.schema(), task.split(horizon)?, horizon)
}

/// Re-train and re-tune per horizon.
pub fn horizon_sweep(task: &dyn Task, classifier: &ClassifierConfig, horizons: &[usize]) -> Result<Vec<HorizonRow>> {
    horizons
        .iter()
        .map(|&h| {
            let (_, eval, _) = evaluate(task, classifier, h)?;
            Ok(HorizonRow {
                horizon: h,
                model: eval.model,
                baseline: eval.baseline,
            })
        })
        .collect()
}

/// Shuffle labels across instances, keeping the class balance.
pub fn shuffle_labels(instances: &mut [Instance], seed: u64) {
    let mut labels: Vec<Option<bool>> = instances.iter().map(|i| i.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (i, l) in instances.iter_mut().zip(labels) {
        i.label = l;
    }
}

/// Vote fractions for one entity over prediction days and horizons, with
/// the model trained for each horizon.
pub fn prediction_grid(
    task: &DailyTask,
    entity: &str,
    days: Range<usize>,
    models: &BTreeMap<usize, ForestModel>,
) -> Result<PredictionGrid> {
    let e = task.norm.entity_index(entity).ok_or_else(|| Error::Unknown {
        kind: "entity",
        name: entity.to_string(),
    })?;
    let fp = task.schema.fingerprint();
    let horizons: Vec<usize> = models.keys().copied().collect();
    let mut cells = Vec::new();
    for day in days.clone() {
        let mut row = Vec::new();
        for (&h, model) in models {
            model.check_schema(&fp)?;
            let cell = match task.build(e, day, h)? {
                Some(inst) => {
                    let v = model.vote_fraction(&inst.features)?;
                    Some((v, v >= model.vote_threshold))
                }
                None => None,
            };
            row.push(cell);
        }
        cells.push(row);
    }
    Ok(PredictionGrid {
        entity: entity.to_string(),
        days: days.collect(),
        horizons,
        cells,
    })
}
