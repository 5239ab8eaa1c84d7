//! Naive Bayes over quartile-binned features, thresholded at a tuned
//! posterior `p*`.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{assign_folds, tune_by_cv, FoldMode, TuneResult};
use crate::features::Instance;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const FORMAT_HEADER: &str = "# crowdcast nb-model v1";

/// Nearest-rank percentile: the `ceil(p n)`-th smallest value.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileBinner {
    /// `(q25, q50, q75)` per feature.
    pub edges: Vec<[f64; 3]>,
}

impl QuartileBinner {
    /// Bin in `0..4`; a value equal to an edge falls in the lower bin.
    pub fn bin(&self, feature: usize, v: f64) -> u8 {
        self.edges[feature].iter().filter(|&&e| e < v).count() as u8
    }

    pub fn bin_row(&self, x: &[f64]) -> Result<Vec<u8>> {
        if x.len() != self.edges.len() {
            return Err(Error::FeatureLength {
                expected: self.edges.len(),
                found: x.len(),
            });
        }
        Ok(x.iter().enumerate().map(|(j, &v)| self.bin(j, v)).collect())
    }

    /// Features whose three edges coincide.
    pub fn degenerate_features(&self) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e[0] == e[2])
            .map(|(j, _)| j)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

pub fn fit_binner<R: AsRef<[f64]> + Sync>(rows: &[R]) -> Result<QuartileBinner> {
    let first = rows.first().ok_or(Error::NoInstances)?.as_ref();
    let f = first.len();
    for r in rows {
        if r.as_ref().len() != f {
            return Err(Error::FeatureLength {
                expected: f,
                found: r.as_ref().len(),
            });
        }
    }
    let edges = (0..f)
        .into_par_iter()
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r.as_ref()[j]).collect();
            col.sort_by(f64::total_cmp);
            [0.25, 0.5, 0.75].map(|p| nearest_rank(&col, p))
        })
        .collect();
    Ok(QuartileBinner { edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    pub prior: f64,
    pub alpha: f64,
    pub pstar: f64,
    pub lags: usize,
    pub schema_fingerprint: String,
    pub binner: QuartileBinner,
    /// `tables[j][t][q] = P(F_j = q | T = t)`.
    pub tables: Vec<[[f64; 4]; 2]>,
    /// The class missing from training, whose conditionals are uniform.
    pub absent_class: Option<bool>,
}

/// Count co-occurrences of bins and labels and pad each count by `alpha`.
pub fn train_nb(binner: QuartileBinner, binned: &[Vec<u8>], labels: &[bool], alpha: f64) -> Result<NbModel> {
    assert_eq!(binned.len(), labels.len(), "unaligned rows and labels");
    if binned.is_empty() {
        return Err(Error::NoInstances);
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let n = binned.len();
    let n1 = labels.iter().filter(|&&t| t).count();
    let class_n = [(n - n1) as f64, n1 as f64];
    let tables = (0..binner.len())
        .into_par_iter()
        .map(|j| {
            let mut counts = [[0usize; 4]; 2];
            for (row, &t) in binned.iter().zip(labels) {
                counts[t as usize][row[j] as usize] += 1;
            }
            let mut table = [[0.0; 4]; 2];
            for t in 0..2 {
                for q in 0..4 {
                    table[t][q] = (counts[t][q] as f64 + alpha) / (class_n[t] + 4.0 * alpha);
                }
            }
            table
        })
        .collect();
    let absent_class = match n1 {
        0 => Some(true),
        x if x == n => Some(false),
        _ => None,
    };
    Ok(NbModel {
        prior: n1 as f64 / n as f64,
        alpha,
        pstar: 0.5,
        lags: crate::features::DEFAULT_WEEKLY_LAGS,
        schema_fingerprint: String::new(),
        binner,
        tables,
        absent_class,
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

/// Fit quartile edges and conditional tables on raw feature rows.
pub fn fit<R: AsRef<[f64]> + Sync>(rows: &[R], labels: &[bool], alpha: f64) -> Result<NbModel> {
    let binner = fit_binner(rows)?;
    let binned = rows
        .iter()
        .map(|r| binner.bin_row(r.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    train_nb(binner, &binned, labels, alpha)
}

impl NbModel {
    pub fn posterior_binned(&self, bins: &[u8]) -> f64 {
        // an absent class has prior 0; the log stays finite only by skipping it
        match self.absent_class {
            Some(true) => return 0.0,
            Some(false) => return 1.0,
            None => {}
        }
        let mut s0 = (1.0 - self.prior).ln();
        let mut s1 = self.prior.ln();
        for (table, &q) in self.tables.iter().zip(bins) {
            s0 += table[0][q as usize].ln();
            s1 += table[1][q as usize].ln();
        }
        let m = s0.max(s1);
        let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
        e1 / (e0 + e1)
    }

    pub fn posterior(&self, x: &[f64]) -> Result<f64> {
        Ok(self.posterior_binned(&self.binner.bin_row(x)?))
    }

    /// `posterior >= p*`.
    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.posterior(x)? >= self.pstar)
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

    pub fn score(&self, instances: &[Instance], fingerprint: &str) -> Result<Vec<f64>> {
        self.check_schema(fingerprint)?;
        instances.iter().map(|i| self.posterior(&i.features)).collect()
    }

    /// The `m` features with the largest `max_q |log P(q|1) - log P(q|0)|`;
    /// ties by feature index.
    pub fn top_features(&self, m: usize) -> Vec<(usize, f64)> {
        let mut lifts: Vec<(usize, f64)> = self
            .tables
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let lift = (0..4)
                    .map(|q| (t[1][q].ln() - t[0][q].ln()).abs())
                    .fold(0.0, f64::max);
                (j, lift)
            })
            .collect();
        lifts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        lifts.truncate(m);
        lifts
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{FORMAT_HEADER}")?;
        writeln!(w, "prior\t{}", self.prior)?;
        writeln!(w, "alpha\t{}", self.alpha)?;
        writeln!(w, "pstar\t{}", self.pstar)?;
        writeln!(w, "lags\t{}", self.lags)?;
        writeln!(w, "schema\t{}", self.schema_fingerprint)?;
        let absent = match self.absent_class {
            None => "none",
            Some(true) => "positive",
            Some(false) => "negative",
        };
        writeln!(w, "absent_class\t{absent}")?;
        writeln!(w, "features\t{}", self.tables.len())?;
        for (j, (e, t)) in self.binner.edges.iter().zip(&self.tables).enumerate() {
            write!(w, "{j}\t{}\t{}\t{}", e[0], e[1], e[2])?;
            for v in t.iter().flatten() {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |expect: &str| -> Result<(usize, String)> {
            let (i, line) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing {expect}"),
            })?;
            Ok((i + 1, line?))
        };
        let (_, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected `{FORMAT_HEADER}`"),
            });
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (i, line) = next(key)?;
            match line.split_once('\t') {
                Some((k, v)) if k == key => Ok((i, v.to_string())),
                _ => Err(Error::Parse {
                    line: i,
                    message: format!("expected `{key}`"),
                }),
            }
        };
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number `{s}`"),
            })
        }
        let (i, v) = field("prior")?;
        let prior = num(i, &v)?;
        let (i, v) = field("alpha")?;
        let alpha = num(i, &v)?;
        let (i, v) = field("pstar")?;
        let pstar = num(i, &v)?;
        let (i, v) = field("lags")?;
        let lags = num(i, &v)?;
        let (_, schema_fingerprint) = field("schema")?;
        let (i, v) = field("absent_class")?;
        let absent_class = match v.as_str() {
            "none" => None,
            "positive" => Some(true),
            "negative" => Some(false),
            _ => {
                return Err(Error::Parse {
                    line: i,
                    message: format!("bad absent class `{v}`"),
                })
            }
        };
        let (i, v) = field("features")?;
        let f: usize = num(i, &v)?;
        let mut edges = Vec::with_capacity(f);
        let mut tables = Vec::with_capacity(f);
        for _ in 0..f {
            let (i, line) = next("feature row")?;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 12 {
                return Err(Error::Parse {
                    line: i,
                    message: format!("expected 12 columns, found {}", cols.len()),
                });
            }
            let vals = cols[1..]
                .iter()
                .map(|s| num::<f64>(i, s))
                .collect::<Result<Vec<f64>>>()?;
            edges.push([vals[0], vals[1], vals[2]]);
            let mut t = [[0.0; 4]; 2];
            for (k, v) in vals[3..].iter().enumerate() {
                t[k / 4][k % 4] = *v;
            }
            tables.push(t);
        }
        Ok(NbModel {
            prior,
            alpha,
            pstar,
            lags,
            schema_fingerprint,
            binner: QuartileBinner { edges },
            tables,
            absent_class,
        })
    }
}

/// `{0.00, 0.01, ..., 1.00}`.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|j| j as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbTuneOptions {
    pub folds: usize,
    pub mode: FoldMode,
    /// Defaults to [`default_grid`].
    pub grid: Option<Vec<f64>>,
    /// Candidate concentrations, searched jointly with `p*`.
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl Default for NbTuneOptions {
    fn default() -> Self {
        NbTuneOptions {
            folds: 4,
            mode: FoldMode::Temporal,
            grid: None,
            alphas: vec![DEFAULT_ALPHA],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbTuneResult {
    pub alpha: f64,
    pub pstar: TuneResult,
}

/// Choose `(alpha, p*)` by cross-validated BAC; ties go to the smallest
/// alpha, then the smallest `p*`.
pub fn tune_pstar(instances: &[Instance], opts: &NbTuneOptions) -> Result<NbTuneResult> {
    let (rows, labels) = labeled(instances)?;
    let periods: Vec<usize> = instances.iter().map(|i| i.period).collect();
    tune_rows(&rows, &labels, &periods, opts)
}

pub fn tune_rows(rows: &[&[f64]], labels: &[bool], periods: &[usize], opts: &NbTuneOptions) -> Result<NbTuneResult> {
    if opts.alphas.is_empty() {
        return Err(Error::Config("no alpha candidates".into()));
    }
    let folds = assign_folds(periods, opts.folds, opts.mode, opts.seed);
    let grid = opts.grid.clone().unwrap_or_else(default_grid);
    let mut alphas = opts.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    let mut best: Option<NbTuneResult> = None;
    for &alpha in &alphas {
        let r = tune_by_cv(labels, &folds, opts.folds, &grid, |fold| {
            let (train, held): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| folds[i] != fold);
            let train_rows: Vec<&[f64]> = train.iter().map(|&i| rows[i]).collect();
            let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
            if train_rows.is_empty() {
                return Ok(vec![0.0; held.len()]);
            }
            let model = fit(&train_rows, &train_labels, alpha)?;
            held.iter().map(|&i| model.posterior(rows[i])).collect()
        })?;
        if best.as_ref().is_none_or(|b| r.cv_bac > b.pstar.cv_bac) {
            best = Some(NbTuneResult { alpha, pstar: r });
        }
    }
    Ok(best.expect("alphas is nonempty"))
}

/// Tune `(alpha, p*)`, then train on all instances.
pub fn train_tuned(instances: &[Instance], schema_fingerprint: &str, opts: &NbTuneOptions) -> Result<(NbModel, NbTuneResult)> {
    let tune = tune_pstar(instances, opts)?;
    let (rows, labels) = labeled(instances)?;
    let mut model = fit(&rows, &labels, tune.alpha)?;
    model.pstar = tune.pstar.threshold;
    model.schema_fingerprint = schema_fingerprint.to_string();
    Ok((model, tune))
}
