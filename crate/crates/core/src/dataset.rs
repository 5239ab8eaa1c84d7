//! Instances as tab-separated text with one named column per feature.
//!
//! Values are written in shortest round-trip form, so reading and writing a
//! file again reproduces it byte for byte.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, Instance};

const FIXED: [&str; 6] = ["entity", "period", "horizon", "label", "baseline", "score"];

fn opt_bool(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "1",
        Some(false) => "0",
        None => "",
    }
}

pub fn write_instances<W: Write>(schema: &FeatureSchema, instances: &[Instance], w: W) -> Result<()> {
    for inst in instances {
        schema.check(&inst.features)?;
    }
    write_rows(&schema.fingerprint(), &schema.task, &schema.names(), instances, w)
}

fn write_rows<W: Write>(fingerprint: &str, task: &str, names: &[String], instances: &[Instance], mut w: W) -> Result<()> {
    writeln!(w, "# schema={fingerprint} task={task}")?;
    let mut header: Vec<&str> = FIXED.to_vec();
    header.extend(names.iter().map(String::as_str));
    writeln!(w, "{}", header.join("\t"))?;
    for inst in instances {
        if inst.features.len() != names.len() {
            return Err(Error::FeatureLength {
                expected: names.len(),
                found: inst.features.len(),
            });
        }
        write!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            inst.entity,
            inst.period,
            inst.horizon,
            opt_bool(inst.label),
            opt_bool(inst.baseline),
            inst.score.map(|s| s.to_string()).unwrap_or_default()
        )?;
        for v in &inst.features {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// A parsed instance file: the schema fingerprint, feature names and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fingerprint: String,
    pub task: String,
    pub names: Vec<String>,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_rows(&self.fingerprint, &self.task, &self.names, &self.instances, w)
    }
}

pub fn read_instances<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let meta = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))??;
    let mut fingerprint = None;
    let mut task = None;
    for field in meta.trim_start_matches('#').split_whitespace() {
        match field.split_once('=') {
            Some(("schema", v)) => fingerprint = Some(v.to_string()),
            Some(("task", v)) => task = Some(v.to_string()),
            _ => {}
        }
    }
    let (Some(fingerprint), Some(task)) = (fingerprint, task) else {
        return Err(parse_err(1, "missing schema line".into()));
    };
    let header = lines.next().ok_or_else(|| parse_err(2, "missing header".into()))??;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < FIXED.len() || cols[..FIXED.len()] != FIXED {
        return Err(parse_err(2, "unexpected header".into()));
    }
    let names: Vec<String> = cols[FIXED.len()..].iter().map(|s| s.to_string()).collect();
    let mut instances = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 3;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols.len() {
            return Err(parse_err(n, format!("expected {} columns, found {}", cols.len(), f.len())));
        }
        let bool_col = |s: &str| -> Result<Option<bool>> {
            match s {
                "" => Ok(None),
                "1" => Ok(Some(true)),
                "0" => Ok(Some(false)),
                _ => Err(parse_err(n, format!("bad flag `{s}`"))),
            }
        };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| parse_err(n, format!("bad number `{s}`"))) };
        let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| parse_err(n, format!("bad integer `{s}`"))) };
        instances.push(Instance {
            entity: f[0].to_string(),
            period: int(f[1])?,
            horizon: int(f[2])?,
            label: bool_col(f[3])?,
            baseline: bool_col(f[4])?,
            score: if f[5].is_empty() { None } else { Some(num(f[5])?) },
            features: f[FIXED.len()..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        });
    }
    Ok(Dataset {
        fingerprint,
        task,
        names,
        instances,
    })
}
