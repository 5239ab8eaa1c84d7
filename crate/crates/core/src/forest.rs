//! Bagged binary decision trees with per-split feature sampling, scored by
//! the fraction of trees voting positive.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{assign_folds, tune_by_cv, FoldMode, TuneResult};
use crate::features::Instance;

pub const DEFAULT_TREES: usize = 500;
pub const FORMAT: &str = "crowdcast-forest";
pub const FORMAT_VERSION: u32 = 1;

/// A split must lower total weighted impurity by more than this many units
/// per weighted sample; smaller gains are float noise.
const MIN_GAIN_PER_SAMPLE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSampling {
    /// A fresh random subset of `mtry` features at every split.
    #[default]
    PerSplit,
    /// One random subset per tree, searched in full at every split.
    PerTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` means `floor(sqrt(F))`.
    pub mtry: Option<usize>,
    pub seed: u64,
    pub sampling: FeatureSampling,
    pub parallel: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: DEFAULT_TREES,
            mtry: None,
            seed: 0,
            sampling: FeatureSampling::PerSplit,
            parallel: true,
        }
    }
}

/// Serialized compactly: splits as `[feature, threshold, left, right]`,
/// leaves as `[negatives, positives]` (bootstrap-weighted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split(u32, f64, u32, u32),
    Leaf(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Class counts of the leaf reached by `x`; `value <= threshold` goes
    /// left.
    pub fn leaf(&self, x: &[f64]) -> (u32, u32) {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split(f, t, l, r) => i = if x[f as usize] <= t { l } else { r } as usize,
                Node::Leaf(neg, pos) => return (neg, pos),
            }
        }
    }

    /// Leaf majority; ties vote positive.
    pub fn vote(&self, x: &[f64]) -> bool {
        let (neg, pos) = self.leaf(x);
        pos >= neg
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(..))).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    /// Horizon of the training instances.
    #[serde(default = "one")]
    pub horizon: usize,
    pub n_features: usize,
    pub mtry: usize,
    pub sampling: FeatureSampling,
    pub seed: u64,
    pub vote_threshold: f64,
    pub schema_fingerprint: String,
    /// Out-of-bag misclassification rate at the 0.5 majority vote.
    pub oob_error: Option<f64>,
    pub trees: Vec<DecisionTree>,
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    model: ForestModel,
}

/// Column-major training matrix with per-feature ranks of distinct values.
#[derive(Debug, Clone)]
pub struct TrainingData {
    n: usize,
    columns: Vec<Vec<f64>>,
    ranks: Vec<Vec<u32>>,
    distinct: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

impl TrainingData {
    pub fn new<R: AsRef<[f64]>>(rows: &[R], labels: &[bool]) -> Result<Self> {
        assert_eq!(rows.len(), labels.len(), "unaligned rows and labels");
        let n = rows.len();
        if n == 0 {
            return Err(Error::NoInstances);
        }
        if !labels.iter().any(|&t| t) {
            return Err(Error::MissingClass("positive"));
        }
        if labels.iter().all(|&t| t) {
            return Err(Error::MissingClass("negative"));
        }
        let f = rows[0].as_ref().len();
        let mut columns = vec![Vec::with_capacity(n); f];
        for r in rows {
            let r = r.as_ref();
            if r.len() != f {
                return Err(Error::FeatureLength {
                    expected: f,
                    found: r.len(),
                });
            }
            for (j, &v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Config(format!("feature {j} is not finite")));
                }
                columns[j].push(v);
            }
        }
        let mut ranks = Vec::with_capacity(f);
        let mut distinct = Vec::with_capacity(f);
        for col in &columns {
            let mut d = col.clone();
            d.sort_by(f64::total_cmp);
            d.dedup();
            ranks.push(
                col.iter()
                    .map(|v| d.partition_point(|x| x < v) as u32)
                    .collect(),
            );
            distinct.push(d);
        }
        Ok(TrainingData {
            n,
            columns,
            ranks,
            distinct,
            labels: labels.to_vec(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, i: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.columns.iter().map(|c| c[i]));
    }
}

/// Sub-seed for stream `stream` of a run seeded with `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.gen()
}

fn gini(n: u64, p: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    2.0 * p as f64 * (n - p) as f64 / n as f64
}

struct Grower<'a> {
    data: &'a TrainingData,
    weights: Vec<u32>,
    mtry: usize,
    sampling: FeatureSampling,
    features: Vec<usize>,
    keys: Vec<u64>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Grower<'_> {
    fn best_split(&mut self, samples: &[u32], rng: &mut ChaCha8Rng, n: u64, p: u64) -> Option<SplitChoice> {
        let candidates: &[usize] = match self.sampling {
            FeatureSampling::PerSplit => {
                let (chosen, _) = self.features.partial_shuffle(rng, self.mtry);
                chosen
            }
            FeatureSampling::PerTree => &self.features[..self.mtry],
        };
        let mut best: Option<SplitChoice> = None;
        for &f in candidates {
            let ranks = &self.data.ranks[f];
            self.keys.clear();
            self.keys.extend(samples.iter().map(|&i| {
                let i = i as usize;
                ((ranks[i] as u64) << 32) | ((self.weights[i] as u64) << 1) | self.data.labels[i] as u64
            }));
            self.keys.sort_unstable();
            let (mut nl, mut pl) = (0u64, 0u64);
            for j in 0..self.keys.len() - 1 {
                let k = self.keys[j];
                let w = (k & 0xffff_ffff) >> 1;
                nl += w;
                pl += w * (k & 1);
                let (r, r_next) = (k >> 32, self.keys[j + 1] >> 32);
                if r == r_next {
                    continue;
                }
                let imp = gini(nl, pl) + gini(n - nl, p - pl);
                if best.as_ref().is_none_or(|b| imp < b.impurity) {
                    let (a, b) = (self.data.distinct[f][r as usize], self.data.distinct[f][r_next as usize]);
                    let mid = a + (b - a) / 2.0;
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: if mid < b { mid } else { a },
                        impurity: imp,
                    });
                }
            }
        }
        best.filter(|b| gini(n, p) - b.impurity > MIN_GAIN_PER_SAMPLE * n as f64)
    }

    fn grow(mut self, rng: &mut ChaCha8Rng) -> DecisionTree {
        let mut samples: Vec<u32> = (0..self.data.n as u32)
            .filter(|&i| self.weights[i as usize] > 0)
            .collect();
        let mut nodes = vec![Node::Leaf(0, 0)];
        let mut stack = vec![(0usize, 0usize, samples.len())];
        while let Some((id, lo, hi)) = stack.pop() {
            let (mut n, mut p) = (0u64, 0u64);
            for &i in &samples[lo..hi] {
                let w = self.weights[i as usize] as u64;
                n += w;
                if self.data.labels[i as usize] {
                    p += w;
                }
            }
            let leaf = Node::Leaf((n - p) as u32, p as u32);
            if p == 0 || p == n {
                nodes[id] = leaf;
                continue;
            }
            let Some(split) = self.best_split(&samples[lo..hi], rng, n, p) else {
                nodes[id] = leaf;
                continue;
            };
            let col = &self.data.columns[split.feature];
            let mut mid = lo;
            for j in lo..hi {
                if col[samples[j] as usize] <= split.threshold {
                    samples.swap(j, mid);
                    mid += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node::Leaf(0, 0));
            nodes.push(Node::Leaf(0, 0));
            nodes[id] = Node::Split(split.feature as u32, split.threshold, left as u32, left as u32 + 1);
            stack.push((left + 1, mid, hi));
            stack.push((left, lo, mid));
        }
        DecisionTree { nodes }
    }
}

fn grow_tree(data: &TrainingData, mtry: usize, sampling: FeatureSampling, seed: u64, index: usize) -> (DecisionTree, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut weights = vec![0u32; data.n];
    for _ in 0..data.n {
        weights[rng.gen_range(0..data.n)] += 1;
    }
    let mut features: Vec<usize> = (0..data.n_features()).collect();
    if sampling == FeatureSampling::PerTree {
        features.partial_shuffle(&mut rng, mtry);
    }
    let grower = Grower {
        data,
        weights: weights.clone(),
        mtry,
        sampling,
        features,
        keys: Vec::with_capacity(data.n),
    };
    (grower.grow(&mut rng), weights)
}

pub fn default_mtry(n_features: usize) -> usize {
    ((n_features as f64).sqrt().floor() as usize).max(1)
}

/// Grow a forest on prepared data; the vote threshold starts at 0.5.
pub fn fit(data: &TrainingData, params: &ForestParams, schema_fingerprint: &str) -> Result<ForestModel> {
    let f = data.n_features();
    if f == 0 {
        return Err(Error::Config("no features".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    let mtry = params.mtry.unwrap_or_else(|| default_mtry(f));
    if mtry == 0 || mtry > f {
        return Err(Error::Config(format!("mtry {mtry} outside 1..={f}")));
    }
    let grow = |t: usize| grow_tree(data, mtry, params.sampling, params.seed, t);
    let grown: Vec<(DecisionTree, Vec<u32>)> = if params.parallel {
        (0..params.n_trees).into_par_iter().map(grow).collect()
    } else {
        (0..params.n_trees).map(grow).collect()
    };

    let mut oob_votes = vec![(0u32, 0u32); data.n];
    let mut row = Vec::with_capacity(f);
    for (tree, weights) in &grown {
        for i in (0..data.n).filter(|&i| weights[i] == 0) {
            data.row(i, &mut row);
            let v = &mut oob_votes[i];
            if tree.vote(&row) {
                v.1 += 1;
            } else {
                v.0 += 1;
            }
        }
    }
    let (mut wrong, mut counted) = (0usize, 0usize);
    for (i, &(neg, pos)) in oob_votes.iter().enumerate() {
        if neg + pos > 0 {
            counted += 1;
            if (pos >= neg) != data.labels[i] {
                wrong += 1;
            }
        }
    }

    Ok(ForestModel {
        horizon: 1,
        n_features: f,
        mtry,
        sampling: params.sampling,
        seed: params.seed,
        vote_threshold: 0.5,
        schema_fingerprint: schema_fingerprint.to_string(),
        oob_error: (counted > 0).then(|| wrong as f64 / counted as f64),
        trees: grown.into_iter().map(|(t, _)| t).collect(),
    })
}

fn labeled(instances: &[Instance]) -> Result<(Vec<&[f64]>, Vec<bool>)> {
    let mut rows = Vec::with_capacity(instances.len());
    let mut labels = Vec::with_capacity(instances.len());
    for inst in instances {
        let label = inst
            .label
            .ok_or_else(|| Error::Config(format!("unlabeled training instance for {}", inst.entity)))?;
        rows.push(inst.features.as_slice());
        labels.push(label);
    }
    Ok((rows, labels))
}

pub fn train_forest(instances: &[Instance], schema_fingerprint: &str, params: &ForestParams) -> Result<ForestModel> {
    let (rows, labels) = labeled(instances)?;
    let data = TrainingData::new(&rows, &labels)?;
    let mut model = fit(&data, params, schema_fingerprint)?;
    model.horizon = instances[0].horizon;
    Ok(model)
}

/// `{0, 1/n_trees, ..., 1}`: every attainable vote fraction.
pub fn default_grid(n_trees: usize) -> Vec<f64> {
    (0..=n_trees).map(|j| j as f64 / n_trees as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneOptions {
    pub folds: usize,
    pub mode: FoldMode,
    /// Defaults to [`default_grid`].
    pub grid: Option<Vec<f64>>,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            folds: 4,
            mode: FoldMode::Temporal,
            grid: None,
        }
    }
}

/// Choose τ by k-fold cross-validation over the training instances. A fold
/// whose training part lacks a class scores every held-out case 0.
pub fn tune_threshold(instances: &[Instance], params: &ForestParams, opts: &TuneOptions) -> Result<TuneResult> {
    let (rows, labels) = labeled(instances)?;
    let periods: Vec<usize> = instances.iter().map(|i| i.period).collect();
    let folds = assign_folds(&periods, opts.folds, opts.mode, params.seed);
    let grid = opts.grid.clone().unwrap_or_else(|| default_grid(params.n_trees));
    tune_by_cv(&labels, &folds, opts.folds, &grid, |fold| {
        let (train, held): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| folds[i] != fold);
        let train_rows: Vec<&[f64]> = train.iter().map(|&i| rows[i]).collect();
        let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let fold_params = ForestParams {
            seed: sub_seed(params.seed, fold as u64 + 1),
            ..params.clone()
        };
        match TrainingData::new(&train_rows, &train_labels) {
            Ok(data) => {
                let model = fit(&data, &fold_params, "")?;
                Ok(held.iter().map(|&i| model.vote_fraction_unchecked(rows[i])).collect())
            }
            Err(Error::MissingClass(_)) => Ok(vec![0.0; held.len()]),
            Err(e) => Err(e),
        }
    })
}

/// Train on all instances with τ chosen by cross-validation.
pub fn train_tuned(
    instances: &[Instance],
    schema_fingerprint: &str,
    params: &ForestParams,
    opts: &TuneOptions,
) -> Result<(ForestModel, TuneResult)> {
    let tune = tune_threshold(instances, params, opts)?;
    let mut model = train_forest(instances, schema_fingerprint, params)?;
    model.vote_threshold = tune.threshold;
    Ok((model, tune))
}

impl ForestModel {
    fn vote_fraction_unchecked(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.vote(x)).count();
        votes as f64 / self.trees.len() as f64
    }

    pub fn vote_fraction(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::FeatureLength {
                expected: self.n_features,
                found: x.len(),
            });
        }
        Ok(self.vote_fraction_unchecked(x))
    }

    /// `vote_fraction >= vote_threshold`.
    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.vote_fraction(x)? >= self.vote_threshold)
    }

    pub fn check_schema(&self, fingerprint: &str) -> Result<()> {
        if fingerprint != self.schema_fingerprint {
            return Err(Error::SchemaMismatch {
                model: self.schema_fingerprint.clone(),
                instances: fingerprint.to_string(),
            });
        }
        Ok(())
    }

    /// Score instances built under the schema with `fingerprint`.
    pub fn score(&self, instances: &[Instance], fingerprint: &str) -> Result<Vec<f64>> {
        self.check_schema(fingerprint)?;
        instances.iter().map(|i| self.vote_fraction(&i.features)).collect()
    }

    /// How often each feature is split on across the forest.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split(f, ..) = n {
                    counts[*f as usize] += 1;
                }
            }
        }
        counts
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let file = ForestFile {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let file: ForestFile = serde_json::from_reader(std::io::BufReader::new(r))?;
        if file.format != FORMAT || file.version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "expected {FORMAT} v{FORMAT_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.model)
    }
}
