//! `crowdcast`: config-driven runs of the crowd-event forecasting pipeline.
//!
//! Every command reads its inputs from and writes its outputs to one output
//! directory, plus a `manifest_<command>.json` describing the run.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crowdcast::calendar::Granularity;
use crowdcast::cluster::ClusterAssignment;
use crowdcast::cube::{CountCube, CubeBuilder};
use crowdcast::dataset::{read_instances, write_instances, Dataset};
use crowdcast::eval::{evaluate_predictions, evaluate_scores, roc, write_sweep_table, EvalReport, TuneResult};
use crowdcast::forest::{self, ForestModel};
use crowdcast::labeler::label_days;
use crowdcast::mention::{read_records, write_records};
use crowdcast::nbseq::{self, NbModel};
use crowdcast::pipeline::{horizon_sweep, prediction_grid, ClassifierConfig, DailyTask, Task, WeeklyTask};
use crowdcast::synth::generate;

use config::{RunConfig, TaskKind};
use manifest::{file_digest, sha256_hex, Manifest};

/// A problem with the user's configuration or inputs (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "crowdcast", version, about = "Forecast significant crowd events from mention counts")]
struct Cli {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory. Takes precedence over `CROWDCAST_OUT` and `paths.out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Task, overriding `task` in the config.
    #[arg(long, global = true, value_enum)]
    task: Option<TaskKind>,

    /// Comma-separated entities to keep, overriding `entities` in the config.
    #[arg(long, global = true, value_delimiter = ',')]
    entities: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelKind {
    Forest,
    Nb,
}

#[derive(Debug, Args)]
struct HorizonArg {
    /// Prediction horizon; `horizon` from the config when omitted.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Classifier; naive Bayes for `weekly_nb`, otherwise the forest.
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic mention corpus: writes corpus.jsonl.
    Synth {
        /// Generator seed, overriding `synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Count a mention corpus into cube.tsv and tally rejections.tsv.
    Ingest {
        /// Corpus file; `paths.corpus`, then <out>/corpus.jsonl by default.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Write binary labels for one horizon: labels_h<k>.tsv.
    Label(HorizonArg),
    /// Cluster the task's entities: clusters.tsv.
    Cluster,
    /// Build train_h<k>.tsv and test_h<k>.tsv. Uses clusters.tsv when present.
    Featurize(HorizonArg),
    /// Train and tune a random forest on train_h<k>.tsv: forest_h<k>.json.
    TrainRf {
        #[command(flatten)]
        horizon: HorizonArg,
        /// Forest seed, overriding `forest.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of trees, overriding `forest.n_trees`.
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Train and tune naive Bayes on train_h<k>.tsv: nb_h<k>.txt.
    TrainNb(HorizonArg),
    /// Score test_h<k>.tsv with a trained model: predictions_h<k>.tsv.
    Predict {
        #[command(flatten)]
        horizon: HorizonArg,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Compare predictions_h<k>.tsv with the labels and the baseline:
    /// report_h<k>.json, report_h<k>.txt and roc_h<k>.tsv.
    Evaluate {
        #[command(flatten)]
        horizon: HorizonArg,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Train, tune and evaluate at horizons 1..=max: sweep.tsv and sweep.json.
    SweepHorizon {
        /// Largest horizon, overriding `max_horizon`.
        #[arg(long)]
        max: Option<usize>,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Vote fractions for one entity over a date range, using every
    /// forest_h<k>.json present: grid_<entity>.tsv.
    Grid {
        #[arg(long)]
        entity: String,
        /// First prediction day (YYYY-MM-DD).
        #[arg(long)]
        from: NaiveDate,
        /// Last prediction day, inclusive.
        #[arg(long)]
        to: NaiveDate,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Label(_) => "label",
            Command::Cluster => "cluster",
            Command::Featurize(_) => "featurize",
            Command::TrainRf { .. } => "train-rf",
            Command::TrainNb(_) => "train-nb",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::SweepHorizon { .. } => "sweep-horizon",
            Command::Grid { .. } => "grid",
        }
    }
}

/// One command invocation: the effective config and the files it touched.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
    command: &'static str,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    /// An existing input file, recorded for the manifest.
    fn input(&mut self, path: PathBuf) -> Result<PathBuf> {
        if !path.is_file() {
            return Err(Invalid(format!("missing input {}", path.display())).into());
        }
        self.inputs.push(path.clone());
        Ok(path)
    }

    fn artifact(&mut self, name: &str) -> Result<PathBuf> {
        self.input(self.out.join(name))
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.outputs.push(path);
        Ok(BufWriter::new(file))
    }

    fn horizon(&self, arg: &HorizonArg) -> Result<usize> {
        let h = arg.horizon.unwrap_or(self.cfg.horizon);
        if h == 0 {
            return Err(Invalid("horizon must be at least 1".into()).into());
        }
        Ok(h)
    }

    fn model_kind(&self, arg: &ModelArg) -> ModelKind {
        arg.model.unwrap_or(match self.cfg.task {
            TaskKind::WeeklyNb => ModelKind::Nb,
            _ => ModelKind::Forest,
        })
    }

    fn classifier(&self, kind: ModelKind) -> ClassifierConfig {
        match kind {
            ModelKind::Forest => ClassifierConfig::Forest {
                params: self.cfg.forest.params.clone(),
                tune: self.cfg.forest.tune.clone(),
            },
            ModelKind::Nb => ClassifierConfig::NaiveBayes {
                tune: self.cfg.nb.clone(),
            },
        }
    }

    fn cube(&mut self) -> Result<CountCube> {
        let path = self.artifact("cube.tsv")?;
        let cube = CountCube::read_table(BufReader::new(File::open(&path)?))?;
        if self.cfg.entities.is_empty() {
            return Ok(cube);
        }
        let known = cube.entities();
        if let Some(missing) = self.cfg.entities.iter().find(|e| !known.contains(e)) {
            return Err(Invalid(format!("entity `{missing}` does not occur in {}", path.display())).into());
        }
        Ok(cube.restrict_entities(&self.cfg.entities))
    }

    fn daily_task(&mut self, stored_clusters: bool) -> Result<DailyTask> {
        let cube = self.cube()?;
        let task = DailyTask::prepare(&cube, &self.cfg.daily())?;
        let path = self.out.join("clusters.tsv");
        if stored_clusters && path.is_file() {
            let path = self.input(path)?;
            let clusters = ClusterAssignment::read_table(BufReader::new(File::open(path)?))?;
            return Ok(task.with_clusters(clusters)?);
        }
        Ok(task)
    }

    fn weekly_task(&mut self) -> Result<WeeklyTask> {
        let mut wcfg = self.cfg.weekly();
        if let [one] = self.cfg.entities.as_slice() {
            wcfg.entity = one.clone();
        }
        if wcfg.entity.is_empty() {
            return Err(Invalid("weekly_nb needs `weekly.entity` or a single `--entities` value".into()).into());
        }
        let cube = self.cube()?;
        if !cube.entities().contains(&wcfg.entity) {
            return Err(Invalid(format!("entity `{}` does not occur in the cube", wcfg.entity)).into());
        }
        Ok(WeeklyTask::prepare(&cube, &wcfg)?)
    }

    fn task(&mut self) -> Result<Box<dyn Task>> {
        Ok(match self.cfg.task {
            TaskKind::WeeklyNb => Box::new(self.weekly_task()?),
            _ => Box::new(self.daily_task(true)?),
        })
    }

    fn dataset(&mut self, name: &str) -> Result<Dataset> {
        let path = self.artifact(name)?;
        Ok(read_instances(BufReader::new(File::open(path)?))?)
    }

    fn write_manifest(&self) -> Result<()> {
        let digests = |paths: &[PathBuf]| {
            paths
                .iter()
                .map(|p| {
                    let mut d = file_digest(p)?;
                    // relative to the output directory, so identical runs in different places match
                    if let Ok(rel) = p.strip_prefix(&self.out) {
                        d.path = rel.to_path_buf();
                    }
                    Ok(d)
                })
                .collect::<std::io::Result<Vec<_>>>()
        };
        let m = Manifest {
            format: manifest::FORMAT,
            version: manifest::VERSION,
            command: self.command.to_string(),
            crowdcast_version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(&serde_json::to_vec(&self.cfg)?),
            seed: self.seed,
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
        };
        let path = self.out.join(format!("manifest_{}.json", self.command));
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &m)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

enum Model {
    Forest(ForestModel),
    Nb(NbModel),
}

impl Model {
    fn load(run: &mut Run, kind: ModelKind, h: usize) -> Result<Model> {
        Ok(match kind {
            ModelKind::Forest => {
                let path = run.artifact(&format!("forest_h{h}.json"))?;
                Model::Forest(ForestModel::read(File::open(path)?)?)
            }
            ModelKind::Nb => {
                let path = run.artifact(&format!("nb_h{h}.txt"))?;
                Model::Nb(NbModel::read(BufReader::new(File::open(path)?))?)
            }
        })
    }

    fn threshold(&self) -> f64 {
        match self {
            Model::Forest(m) => m.vote_threshold,
            Model::Nb(m) => m.pstar,
        }
    }

    fn score(&self, ds: &Dataset) -> Result<Vec<f64>> {
        Ok(match self {
            Model::Forest(m) => m.score(&ds.instances, &ds.fingerprint)?,
            Model::Nb(m) => m.score(&ds.instances, &ds.fingerprint)?,
        })
    }
}

#[derive(Serialize)]
struct Report<'a> {
    horizon: usize,
    model: &'a str,
    classifier: &'a EvalReport,
    baseline: &'a EvalReport,
}

fn write_report_text<W: Write>(mut w: W, h: usize, kind: &str, model: &EvalReport, baseline: &EvalReport) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    writeln!(w, "horizon {h}, {} test instances", model.n)?;
    for (name, r) in [(kind, model), ("baseline", baseline)] {
        let c = &r.confusion;
        writeln!(
            w,
            "{name:<9} BAC {:.4}  TPR {}  TNR {}  AUC {}  hull AUC {}  (tp {} fp {} tn {} fn {})",
            r.bac,
            opt(r.tpr),
            opt(r.tnr),
            opt(r.auc),
            opt(r.hull_auc),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )?;
    }
    writeln!(w, "threshold {}", model.threshold)?;
    Ok(())
}

fn print_tune(t: &TuneResult) {
    eprintln!(
        "tuned threshold {} (cross-validated BAC {:.4}, {} single-class folds)",
        t.threshold, t.cv_bac, t.single_class_folds
    );
}

fn execute(run: &mut Run, command: Command) -> Result<()> {
    match command {
        Command::Synth { seed } => {
            if let Some(s) = seed {
                run.cfg.synth.seed = s;
            }
            let scfg = run.cfg.synth_config()?;
            run.seed = Some(scfg.seed);
            let mut w = run.create("corpus.jsonl")?;
            let n = write_records(&mut w, generate(&scfg)?)?;
            w.flush()?;
            eprintln!("wrote {n} mention records");
        }
        Command::Ingest { corpus } => {
            let path = corpus
                .or_else(|| run.cfg.paths.corpus.clone())
                .unwrap_or_else(|| run.out.join("corpus.jsonl"));
            let path = run.input(path)?;
            let calendar = run.cfg.calendar()?;
            let mut builder = CubeBuilder::new(&calendar, &run.cfg.event_types);
            for rec in read_records(BufReader::new(File::open(&path)?)) {
                match rec? {
                    Ok(r) => builder.push(&r),
                    Err(reason) => builder.reject(reason),
                }
            }
            let ingested = builder.finish();
            let mut w = run.create("cube.tsv")?;
            ingested.cube.write_table(&mut w)?;
            w.flush()?;
            let mut w = run.create("rejections.tsv")?;
            writeln!(w, "reason\tcount")?;
            for (reason, n) in &ingested.rejected.0 {
                writeln!(w, "{}\t{n}", reason.as_str())?;
            }
            w.flush()?;
            eprintln!(
                "counted {} mentions, rejected {}",
                ingested.cube.total(),
                ingested.rejected.total()
            );
        }
        Command::Label(arg) => {
            let h = run.horizon(&arg)?;
            let (labels, calendar, granularity) = match run.cfg.task {
                TaskKind::WeeklyNb => {
                    let t = run.weekly_task()?;
                    (t.labels(h)?, t.calendar.clone(), Granularity::Week)
                }
                _ => {
                    let t = run.daily_task(false)?;
                    (label_days(&t.series, h)?, t.calendar.clone(), Granularity::Day)
                }
            };
            let mut w = run.create(&format!("labels_h{h}.tsv"))?;
            labels.write_table(&calendar, granularity, &mut w)?;
            w.flush()?;
            eprintln!("{:.2}% positive", 100.0 * labels.positives_fraction());
        }
        Command::Cluster => {
            if run.cfg.task == TaskKind::WeeklyNb {
                return Err(Invalid("the weekly task has a single entity and no clusters".into()).into());
            }
            let task = run.daily_task(false)?;
            let mut w = run.create("clusters.tsv")?;
            task.clusters.write_table(&mut w)?;
            w.flush()?;
            eprintln!("{} entities in {} clusters", task.clusters.entities.len(), task.clusters.k);
        }
        Command::Featurize(arg) => {
            let h = run.horizon(&arg)?;
            let task = run.task()?;
            let split = task.split(h)?;
            for (name, set) in [("train", &split.train), ("test", &split.test)] {
                let mut w = run.create(&format!("{name}_h{h}.tsv"))?;
                write_instances(task.schema(), set, &mut w)?;
                w.flush()?;
            }
            eprintln!("{} training and {} test instances", split.train.len(), split.test.len());
        }
        Command::TrainRf { horizon, seed, trees } => {
            let h = run.horizon(&horizon)?;
            let mut params = run.cfg.forest.params.clone();
            if let Some(s) = seed {
                params.seed = s;
            }
            if let Some(n) = trees {
                params.n_trees = n;
            }
            run.seed = Some(params.seed);
            let ds = run.dataset(&format!("train_h{h}.tsv"))?;
            let (mut model, tune) = forest::train_tuned(&ds.instances, &ds.fingerprint, &params, &run.cfg.forest.tune)?;
            model.horizon = h;
            print_tune(&tune);
            let mut w = run.create(&format!("forest_h{h}.json"))?;
            model.write(&mut w)?;
            w.flush()?;
        }
        Command::TrainNb(arg) => {
            let h = run.horizon(&arg)?;
            run.seed = Some(run.cfg.nb.seed);
            let ds = run.dataset(&format!("train_h{h}.tsv"))?;
            let (mut model, tune) = nbseq::train_tuned(&ds.instances, &ds.fingerprint, &run.cfg.nb)?;
            if run.cfg.task == TaskKind::WeeklyNb {
                model.lags = run.cfg.weekly.lags;
            }
            eprintln!("alpha {}", tune.alpha);
            print_tune(&tune.pstar);
            let mut w = run.create(&format!("nb_h{h}.txt"))?;
            model.write(&mut w)?;
            w.flush()?;
        }
        Command::Predict { horizon, model } => {
            let h = run.horizon(&horizon)?;
            let kind = run.model_kind(&model);
            let m = Model::load(run, kind, h)?;
            let mut ds = run.dataset(&format!("test_h{h}.tsv"))?;
            let scores = m.score(&ds)?;
            for (inst, s) in ds.instances.iter_mut().zip(scores) {
                inst.score = Some(s);
            }
            let mut w = run.create(&format!("predictions_h{h}.tsv"))?;
            ds.write(&mut w)?;
            w.flush()?;
        }
        Command::Evaluate { horizon, model } => {
            let h = run.horizon(&horizon)?;
            let kind = run.model_kind(&model);
            let m = Model::load(run, kind, h)?;
            let ds = run.dataset(&format!("predictions_h{h}.tsv"))?;
            let mut scores = Vec::new();
            let mut labels = Vec::new();
            for inst in &ds.instances {
                match (inst.score, inst.label) {
                    (Some(s), Some(t)) => {
                        scores.push(s);
                        labels.push(t);
                    }
                    (None, _) => return Err(Invalid(format!("predictions_h{h}.tsv has unscored rows")).into()),
                    (_, None) => {}
                }
            }
            let report = evaluate_scores(&scores, &labels, m.threshold());
            let (bp, bl): (Vec<bool>, Vec<bool>) = ds
                .instances
                .iter()
                .filter_map(|i| Some((i.baseline?, i.label?)))
                .unzip();
            let baseline = evaluate_predictions(&bp, &bl);
            let kind_name = match kind {
                ModelKind::Forest => "forest",
                ModelKind::Nb => "naive_bayes",
            };
            let mut w = run.create(&format!("report_h{h}.json"))?;
            serde_json::to_writer_pretty(
                &mut w,
                &Report {
                    horizon: h,
                    model: kind_name,
                    classifier: &report,
                    baseline: &baseline,
                },
            )?;
            writeln!(w)?;
            w.flush()?;
            let mut w = run.create(&format!("report_h{h}.txt"))?;
            write_report_text(&mut w, h, kind_name, &report, &baseline)?;
            w.flush()?;
            match roc(&scores, &labels) {
                Ok(curve) => {
                    let mut w = run.create(&format!("roc_h{h}.tsv"))?;
                    curve.write_table(&mut w)?;
                    w.flush()?;
                }
                Err(e) => eprintln!("no ROC curve: {e}"),
            }
            write_report_text(std::io::stderr(), h, kind_name, &report, &baseline)?;
        }
        Command::SweepHorizon { max, model } => {
            if let Some(m) = max {
                run.cfg.max_horizon = m;
            }
            if run.cfg.max_horizon == 0 {
                return Err(Invalid("max horizon must be at least 1".into()).into());
            }
            let kind = run.model_kind(&model);
            run.seed = Some(match kind {
                ModelKind::Forest => run.cfg.forest.params.seed,
                ModelKind::Nb => run.cfg.nb.seed,
            });
            let classifier = run.classifier(kind);
            let task = run.task()?;
            let horizons: Vec<usize> = (1..=run.cfg.max_horizon).collect();
            let rows = horizon_sweep(task.as_ref(), &classifier, &horizons)?;
            let mut w = run.create("sweep.tsv")?;
            write_sweep_table(&rows, &mut w)?;
            w.flush()?;
            let mut w = run.create("sweep.json")?;
            serde_json::to_writer_pretty(&mut w, &rows)?;
            writeln!(w)?;
            w.flush()?;
            write_sweep_table(&rows, std::io::stderr())?;
        }
        Command::Grid { entity, from, to } => {
            if run.cfg.task == TaskKind::WeeklyNb {
                return Err(Invalid("grids are defined for the day-level tasks".into()).into());
            }
            let task = run.daily_task(true)?;
            let cal = &task.calendar;
            let (Some(a), Some(b)) = (cal.day_index(from), cal.day_index(to)) else {
                return Err(Invalid(format!("{from}..{to} is outside the corpus calendar")).into());
            };
            if a > b {
                return Err(Invalid(format!("empty date range {from}..{to}")).into());
            }
            let mut models = BTreeMap::new();
            for h in 1..=run.cfg.max_horizon {
                let path = run.out.join(format!("forest_h{h}.json"));
                if path.is_file() {
                    let path = run.input(path)?;
                    models.insert(h, ForestModel::read(File::open(path)?)?);
                }
            }
            if models.is_empty() {
                return Err(Invalid(format!("no forest_h<k>.json in {}", run.out.display())).into());
            }
            let grid = prediction_grid(&task, &entity, a..b + 1, &models)?;
            let mut w = run.create(&format!("grid_{entity}.tsv"))?;
            grid.write_table(&task.calendar, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("CROWDCAST_OUT").map(PathBuf::from))
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn setup(cli: Cli) -> Result<(Run, Command)> {
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Invalid(format!("missing input {}", path.display())).into());
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(t) = cli.task {
        cfg.task = t;
    }
    if !cli.entities.is_empty() {
        cfg.entities = cli.entities;
    }
    let out = out_dir(cli.out, &cfg);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let run = Run {
        cfg,
        out,
        command: cli.command.name(),
        seed: None,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    Ok((run, cli.command))
}

/// 1 for problems with the user's config or inputs, 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    match e.downcast_ref::<crowdcast::Error>() {
        Some(crowdcast::Error::Io(_)) | None => 2,
        Some(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share exit code 1 with every other invalid input
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = setup(cli).and_then(|(mut run, command)| {
        execute(&mut run, command)?;
        run.write_manifest()
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
