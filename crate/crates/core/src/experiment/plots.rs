use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{read_file, spread, write_file, ExperimentError, Result};
use crate::metrics::ause::{fraction, STEPS};
use crate::metrics::{ause, ReportRegion};

const METRICS: [&str; 7] = ["mae", "mse", "gm", "pearson", "spearman", "nll", "ause"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub region_bars: PathBuf,
    pub sparsification: PathBuf,
    /// Written only when the run has λ-sweep cells.
    pub lambda_sweep: Option<PathBuf>,
    /// Written only when the run has bin-sweep cells.
    pub bins_sweep: Option<PathBuf>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ExperimentError::Config(format!("metrics.csv has no `{name}` column")))
    }

    fn read(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }
}

fn num(s: &str) -> Option<f64> {
    s.parse().ok()
}

type Grouped<'a> = Vec<((String, String), Vec<&'a Vec<String>>)>;

/// Rows of one sweep grouped by (variant, axis value) in first-seen order
/// of variants and ascending axis value.
fn groups<'a>(t: &'a Table, sweep: &str, axis: usize) -> Result<Grouped<'a>> {
    let (c_sweep, c_variant) = (t.col("sweep")?, t.col("variant")?);
    let mut variants: Vec<&str> = Vec::new();
    let mut map: BTreeMap<(usize, u64, String), Vec<&Vec<String>>> = BTreeMap::new();
    for row in t.rows.iter().filter(|r| r[c_sweep] == sweep) {
        let v = row[c_variant].as_str();
        let vi = variants.iter().position(|&x| x == v).unwrap_or_else(|| {
            variants.push(v);
            variants.len() - 1
        });
        // Non-negative floats order like their bit patterns.
        let order = num(&row[axis]).map_or(u64::MAX, f64::to_bits);
        map.entry((vi, order, row[axis].clone()))
            .or_default()
            .push(row);
    }
    Ok(map
        .into_iter()
        .map(|((vi, _, value), rows)| ((variants[vi].to_string(), value), rows))
        .collect())
}

fn to_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| ExperimentError::Csv(e.into_error().into()))
}

fn fmt(v: Option<f64>) -> String {
    super::fmt_opt(v)
}

fn config_hash(t: &Table) -> Result<String> {
    let c = t.col("config_hash")?;
    Ok(t.rows.first().map(|r| r[c].clone()).unwrap_or_default())
}

fn region_bars(t: &Table, hash: &str) -> Result<Vec<u8>> {
    let c_lambda = t.col("lambda")?;
    let header = [
        "config_hash",
        "variant",
        "region",
        "metric",
        "median",
        "q25",
        "q75",
        "n",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    for ((variant, _), cells) in groups(t, "main", c_lambda)? {
        for region in ReportRegion::ALL {
            for metric in METRICS {
                let c = t.col(&format!("{metric}_{}", region.as_str()))?;
                let s = spread(cells.iter().filter_map(|r| num(&r[c])));
                rows.push(vec![
                    hash.to_string(),
                    variant.clone(),
                    region.as_str().to_string(),
                    metric.to_string(),
                    fmt(s.map(|s| s.median)),
                    fmt(s.map(|s| s.q25)),
                    fmt(s.map(|s| s.q75)),
                    s.map_or(0, |s| s.n).to_string(),
                ]);
            }
        }
    }
    to_bytes(header, rows)
}

/// Median of every metric column per (variant, axis value).
fn sweep_curve(t: &Table, sweep: &str, axis_name: &str, hash: &str) -> Result<Option<Vec<u8>>> {
    let axis = t.col(axis_name)?;
    let groups = groups(t, sweep, axis)?;
    if groups.is_empty() {
        return Ok(None);
    }
    let metric_cols: Vec<String> = METRICS
        .iter()
        .flat_map(|m| {
            ReportRegion::ALL
                .iter()
                .map(move |r| format!("{m}_{}", r.as_str()))
        })
        .collect();
    let mut header = vec![
        "config_hash".to_string(),
        "variant".into(),
        axis_name.into(),
        "seeds".into(),
    ];
    header.extend(metric_cols.iter().cloned());
    let mut rows = Vec::new();
    for ((variant, value), cells) in groups {
        let mut row = vec![hash.to_string(), variant, value, cells.len().to_string()];
        for name in &metric_cols {
            let c = t.col(name)?;
            row.push(fmt(
                spread(cells.iter().filter_map(|r| num(&r[c]))).map(|s| s.median)
            ));
        }
        rows.push(row);
    }
    Ok(Some(to_bytes(header, rows)?))
}

/// Mean model and oracle sparsification curves over seeds for every main
/// variant with predictive uncertainty.
fn sparsification(dir: &Path, t: &Table, hash: &str) -> Result<Vec<u8>> {
    let (c_lambda, c_bins, c_seed, c_error) = (
        t.col("lambda")?,
        t.col("bins")?,
        t.col("seed")?,
        t.col("error")?,
    );
    let mut header = vec!["config_hash".to_string(), "t".into()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut missing = Vec::new();
    for ((variant, lambda), cells) in groups(t, "main", c_lambda)? {
        let mut model = vec![0.0; STEPS];
        let mut oracle = vec![0.0; STEPS];
        let mut used = 0usize;
        for row in cells.iter().filter(|r| r[c_error].is_empty()) {
            let id = format!("main-{variant}-l{lambda}-b{}-s{}", row[c_bins], row[c_seed]);
            let path = dir.join("cells").join(id).join("predictions.csv");
            if !path.exists() {
                missing.push(path);
                continue;
            }
            let p = Table::read(&path)?;
            let (cy, cm, cv) = (p.col("y")?, p.col("mean")?, p.col("variance")?);
            let mut unc = Vec::new();
            let mut err = Vec::new();
            for r in &p.rows {
                let (Some(y), Some(m), Some(v)) = (num(&r[cy]), num(&r[cm]), num(&r[cv])) else {
                    break;
                };
                unc.push(v);
                err.push((y - m).abs());
            }
            if unc.len() != p.rows.len() || unc.len() < crate::metrics::ause::MIN_SAMPLES {
                continue;
            }
            let s = ause(&unc, &err)?;
            for k in 0..STEPS {
                model[k] += s.model[k];
                oracle[k] += s.oracle[k];
            }
            used += 1;
        }
        if used > 0 {
            header.push(format!("{variant}_model"));
            header.push(format!("{variant}_oracle"));
            columns.push(model.iter().map(|v| v / used as f64).collect());
            columns.push(oracle.iter().map(|v| v / used as f64).collect());
        }
    }
    if !missing.is_empty() {
        return Err(ExperimentError::Missing(missing));
    }
    let rows = (0..STEPS)
        .map(|k| {
            let mut row = vec![hash.to_string(), format!("{:.2}", fraction(k))];
            row.extend(columns.iter().map(|c| c[k].to_string()));
            row
        })
        .collect();
    to_bytes(header, rows)
}

/// Reads a finished run directory and writes plot-ready CSVs under
/// `<dir>/report/`: per-region bars, sparsification curves, and λ and
/// bin-count sweep curves.
pub fn report(dir: &Path) -> Result<ReportFiles> {
    let merged = dir.join("metrics.csv");
    if !merged.exists() {
        return Err(ExperimentError::Missing(vec![merged]));
    }
    let t = Table::read(&merged)?;
    let hash = config_hash(&t)?;
    let out = dir.join("report");
    let files = ReportFiles {
        region_bars: out.join("region_bars.csv"),
        sparsification: out.join("sparsification.csv"),
        lambda_sweep: None,
        bins_sweep: None,
    };
    let bars = region_bars(&t, &hash)?;
    let sparse = sparsification(dir, &t, &hash)?;
    let lambda = sweep_curve(&t, "lambda", "lambda", &hash)?;
    let bins = sweep_curve(&t, "bins", "bins", &hash)?;
    write_file(&files.region_bars, bars)?;
    write_file(&files.sparsification, sparse)?;
    let mut files = files;
    for (name, data, slot) in [
        ("lambda_sweep.csv", lambda, &mut files.lambda_sweep),
        ("bins_sweep.csv", bins, &mut files.bins_sweep),
    ] {
        let path = out.join(name);
        if let Some(d) = data {
            write_file(&path, d)?;
            *slot = Some(path);
        } else if path.exists() {
            std::fs::remove_file(&path).map_err(super::io_err(&path))?;
        }
    }
    Ok(files)
}
