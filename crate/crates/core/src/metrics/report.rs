use serde::{Deserialize, Serialize};

use super::ause::ause;
use super::regression::{check_lengths, regression_metrics};
use super::{gaussian_nll, MetricsError, Predictions, Result};
use crate::evidential::nig_nll;
use crate::label_space::{LabelSpace, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportRegion {
    All,
    Many,
    Medium,
    Few,
}

impl ReportRegion {
    pub const ALL: [ReportRegion; 4] = [
        ReportRegion::All,
        ReportRegion::Many,
        ReportRegion::Medium,
        ReportRegion::Few,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportRegion::All => "all",
            ReportRegion::Many => "many",
            ReportRegion::Medium => "medium",
            ReportRegion::Few => "few",
        }
    }

    fn contains(self, region: Region) -> bool {
        match self {
            ReportRegion::All => region != Region::Empty,
            ReportRegion::Many => region == Region::Many,
            ReportRegion::Medium => region == Region::Medium,
            ReportRegion::Few => region == Region::Few,
        }
    }
}

/// Metrics of one region; `None` marks a metric that does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub mae: f64,
    pub mse: f64,
    pub gm: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub nll: Option<f64>,
    pub ause: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub region: ReportRegion,
    pub count: usize,
    /// Absent for an empty region.
    pub metrics: Option<RegionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub regions: Vec<RegionReport>,
    /// Samples whose bin holds no training data.
    pub excluded: usize,
}

impl MetricReport {
    pub fn compute(predictions: &Predictions, labels: &[f64], space: &LabelSpace) -> Result<Self> {
        check_lengths(predictions.mean.len(), labels.len())?;
        let mut sample_regions = Vec::with_capacity(labels.len());
        for &y in labels {
            let b = space
                .binning
                .assign(y)
                .map_err(|e| MetricsError::Label(e.to_string()))?;
            sample_regions.push(space.regions[b]);
        }
        let excluded = sample_regions
            .iter()
            .filter(|&&r| r == Region::Empty)
            .count();
        let mut regions = Vec::with_capacity(4);
        for region in ReportRegion::ALL {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| region.contains(sample_regions[i]))
                .collect();
            let metrics = if idx.is_empty() {
                None
            } else {
                Some(region_metrics(predictions, labels, &idx)?)
            };
            regions.push(RegionReport {
                region,
                count: idx.len(),
                metrics,
            });
        }
        Ok(Self { regions, excluded })
    }

    pub fn region(&self, region: ReportRegion) -> &RegionReport {
        self.regions
            .iter()
            .find(|r| r.region == region)
            .expect("every region is reported")
    }

    pub fn metric(
        &self,
        region: ReportRegion,
        f: impl Fn(&RegionMetrics) -> Option<f64>,
    ) -> Option<f64> {
        self.region(region).metrics.as_ref().and_then(f)
    }

    pub fn mae(&self, region: ReportRegion) -> Option<f64> {
        self.metric(region, |m| Some(m.mae))
    }

    pub fn to_rows(&self, variant: &str, seed: u64) -> Vec<MetricRow> {
        self.regions
            .iter()
            .map(|r| {
                let m = r.metrics;
                MetricRow {
                    variant: variant.to_string(),
                    seed,
                    region: r.region.as_str().to_string(),
                    count: r.count,
                    mae: m.map(|m| m.mae),
                    mse: m.map(|m| m.mse),
                    gm: m.map(|m| m.gm),
                    pearson: m.and_then(|m| m.pearson),
                    spearman: m.and_then(|m| m.spearman),
                    nll: m.and_then(|m| m.nll),
                    ause: m.and_then(|m| m.ause),
                }
            })
            .collect()
    }
}

fn region_metrics(
    predictions: &Predictions,
    labels: &[f64],
    idx: &[usize],
) -> Result<RegionMetrics> {
    let pred: Vec<f64> = idx.iter().map(|&i| predictions.mean[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
    let r = regression_metrics(&pred, &ys)?;
    let nll = if let Some(post) = &predictions.posterior {
        Some(
            idx.iter()
                .map(|&i| nig_nll(&post[i], labels[i]))
                .sum::<f64>()
                / idx.len() as f64,
        )
    } else {
        predictions.variance.as_ref().map(|v| {
            let var: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            gaussian_nll(&pred, &var, &ys)
        })
    };
    let ause = match &predictions.variance {
        Some(v) if idx.len() >= super::ause::MIN_SAMPLES => {
            let unc: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            let err: Vec<f64> = pred.iter().zip(&ys).map(|(p, y)| (p - y).abs()).collect();
            Some(ause(&unc, &err)?.ause)
        }
        _ => None,
    };
    Ok(RegionMetrics {
        mae: r.mae,
        mse: r.mse,
        gm: r.gm,
        pearson: r.pearson,
        spearman: r.spearman,
        nll,
        ause,
    })
}

/// One CSV row per (variant, seed, region); absent metrics are empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: String,
    pub seed: u64,
    pub region: String,
    pub count: usize,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub gm: Option<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub nll: Option<f64>,
    pub ause: Option<f64>,
}

pub fn write_rows<W: std::io::Write>(
    rows: &[MetricRow],
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
