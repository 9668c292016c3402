use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, resolve_output_dir, DatasetConfig, ExperimentConfig};
use super::{
    claim_output_dir, fmt_opt, spread, to_json, write_file, ExperimentError, Result, Spread,
};
use crate::data::{
    generate_balanced_test, generate_balanced_val, generate_synthetic, load_csv, split, Dataset,
    Samples, SplitTag, SyntheticSpec,
};
use crate::label_space::{LabelSpace, ShotThresholds};
use crate::metrics::{
    calibrate_scales, Calibration, MetricReport, Predictions, RegionMetrics, ReportRegion,
};
use crate::model::{train, write_epoch_log, ModelError};
use crate::par::{self, Execution};

pub(super) const ARTIFACTS: [&str; 3] = ["cells", "metrics.csv", "summary.json"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Main,
    Lambda,
    Bins,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::Main => "main",
            Sweep::Lambda => "lambda",
            Sweep::Bins => "bins",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub sweep: Sweep,
    pub variant: String,
    pub lambda: f64,
    pub bins: usize,
    pub seed: u64,
    /// Position of the variant in the config; orders cells.
    #[serde(skip)]
    pub variant_index: usize,
}

impl CellKey {
    /// The key without its seed: names a group of cells across seeds.
    pub fn group(&self) -> String {
        format!(
            "{}-{}-l{}-b{}",
            self.sweep.as_str(),
            self.variant,
            self.lambda,
            self.bins
        )
    }

    pub fn id(&self) -> String {
        format!("{}-s{}", self.group(), self.seed)
    }

    fn order(&self, other: &Self) -> std::cmp::Ordering {
        (self.sweep, self.variant_index)
            .cmp(&(other.sweep, other.variant_index))
            .then(self.lambda.total_cmp(&other.lambda))
            .then(self.bins.cmp(&other.bins))
            .then(self.seed.cmp(&other.seed))
    }
}

/// Result of one cell, written to `cells/<id>/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub config_hash: String,
    pub key: CellKey,
    pub model_config_hash: Option<String>,
    /// Completed epochs at the selected checkpoint.
    pub best_epoch: Option<usize>,
    /// Test-set report of the selected checkpoint.
    pub report: Option<MetricReport>,
    pub calibration: Option<Calibration>,
    /// Test NLL over all regions after applying the calibration weights.
    pub calibrated_test_nll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Overrides the config's `jobs`.
    pub jobs: Option<usize>,
    /// Added to every configured seed.
    pub seed_offset: u64,
    /// Overrides the config's `output_dir`.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub sweep: Sweep,
    pub variant: String,
    pub lambda: f64,
    pub bins: usize,
    pub seeds: Vec<u64>,
    /// `<metric>_<region>` → median and IQR across seeds.
    pub metrics: BTreeMap<String, Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed_offset: u64,
    pub output_dir: PathBuf,
    pub cells: usize,
    /// `(cell id, error)` of cells that did not finish.
    pub failed: Vec<(String, String)>,
    pub groups: Vec<GroupSummary>,
}

/// Train, validation and test samples with the label space fitted on the
/// training labels.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
    pub space: LabelSpace,
}

enum Source {
    Synthetic {
        spec: SyntheticSpec,
        val_per_bin: usize,
        test_per_bin: usize,
    },
    Csv {
        dataset: Dataset,
        fractions: [f64; 3],
        balanced_test: bool,
        num_bins: usize,
    },
}

impl Source {
    fn load(config: &ExperimentConfig) -> Result<Self> {
        Ok(match &config.dataset {
            DatasetConfig::AgedbMini {
                val_per_bin,
                test_per_bin,
            } => Source::Synthetic {
                spec: SyntheticSpec::agedb_mini(0),
                val_per_bin: *val_per_bin,
                test_per_bin: *test_per_bin,
            },
            DatasetConfig::Synthetic {
                spec,
                val_per_bin,
                test_per_bin,
            } => {
                spec.validate()?;
                Source::Synthetic {
                    spec: spec.clone(),
                    val_per_bin: *val_per_bin,
                    test_per_bin: *test_per_bin,
                }
            }
            DatasetConfig::Csv {
                path,
                schema,
                num_bins,
                fractions,
                balanced_test,
            } => {
                let (dataset, _) = load_csv(&config.dataset_path(path), schema)?;
                dataset.binning(*num_bins)?;
                Source::Csv {
                    dataset,
                    fractions: *fractions,
                    balanced_test: *balanced_test,
                    num_bins: *num_bins,
                }
            }
        })
    }

    fn default_bins(&self) -> usize {
        match self {
            Source::Synthetic { spec, .. } => spec.num_bins,
            Source::Csv { num_bins, .. } => *num_bins,
        }
    }

    fn prepare(
        &self,
        seed: u64,
        bins: usize,
        kernel: &crate::label_space::Kernel,
    ) -> Result<PreparedData> {
        let (train, val, test, binning) = match self {
            Source::Synthetic {
                spec,
                val_per_bin,
                test_per_bin,
            } => {
                let spec = SyntheticSpec {
                    seed,
                    ..spec.clone()
                };
                let train = generate_synthetic(&spec)?.all();
                let val = generate_balanced_val(&spec, *val_per_bin)?;
                let test = generate_balanced_test(&spec, *test_per_bin)?;
                let binning = crate::label_space::Binning::new(spec.lo, spec.hi, bins)
                    .map_err(|e| ExperimentError::Config(e.to_string()))?;
                (train, val, test, binning)
            }
            Source::Csv {
                dataset,
                fractions,
                balanced_test,
                ..
            } => {
                let binning = dataset.binning(bins)?;
                let tagged = split(dataset, *fractions, seed, balanced_test.then_some(&binning))?;
                (
                    tagged.samples(SplitTag::Train),
                    tagged.samples(SplitTag::Val),
                    tagged.samples(SplitTag::Test),
                    binning,
                )
            }
        };
        let space = LabelSpace::fit(
            binning,
            &train.y,
            *kernel,
            ShotThresholds::for_dataset_size(train.len()),
        )
        .map_err(ModelError::from)?;
        Ok(PreparedData {
            train,
            val,
            test,
            space,
        })
    }
}

/// Data for one seed and bin count (the dataset's own count when `None`).
pub fn prepare_data(
    config: &ExperimentConfig,
    seed: u64,
    bins: Option<usize>,
) -> Result<PreparedData> {
    let source = Source::load(config)?;
    let kernel = config.model_config(&config.variants[0], None, 0)?.kernel;
    let bins = bins.unwrap_or_else(|| source.default_bins());
    source.prepare(seed, bins, &kernel)
}

struct Cell {
    key: CellKey,
    spec_index: usize,
}

fn cells(config: &ExperimentConfig, default_bins: usize) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for (i, spec) in config.variants.iter().enumerate() {
        let base_lambda = config.model_config(spec, None, 0)?.lambda;
        let mut push = |sweep, lambda, bins| {
            for &seed in &config.seeds {
                out.push(Cell {
                    key: CellKey {
                        sweep,
                        variant: spec.label(),
                        lambda,
                        bins,
                        seed,
                        variant_index: i,
                    },
                    spec_index: i,
                });
            }
        };
        push(Sweep::Main, base_lambda, default_bins);
        if spec.variant.is_evidential() {
            for &l in &config.lambda_sweep {
                push(Sweep::Lambda, l, default_bins);
            }
        }
        for &b in &config.bin_sweep {
            push(Sweep::Bins, base_lambda, b);
        }
    }
    out.sort_by(|a, b| a.key.order(&b.key));
    Ok(out)
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    source: &'a Source,
    hash: &'a str,
    seed_offset: u64,
    dir: &'a Path,
}

fn write_predictions(path: &Path, labels: &[f64], p: &Predictions) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["y", "mean", "variance"])?;
    for (i, y) in labels.iter().enumerate() {
        let var = p.variance.as_ref().map(|v| v[i]);
        w.write_record([y.to_string(), p.mean[i].to_string(), fmt_opt(var)])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::Csv(e.into_error().into()))?;
    write_file(path, bytes)
}

fn run_cell(ctx: &Context, cell: &Cell) -> Result<CellRecord> {
    let key = &cell.key;
    let spec = &ctx.config.variants[cell.spec_index];
    let seed = key.seed + ctx.seed_offset;
    let lambda = (key.sweep == Sweep::Lambda).then_some(key.lambda);
    let model_config = ctx
        .config
        .model_config(spec, lambda, derive_seed(seed, &key.group()))?;
    let dir = ctx.dir.join("cells").join(key.id());
    let mut record = CellRecord {
        config_hash: ctx.hash.to_string(),
        key: key.clone(),
        model_config_hash: Some(model_config.hash()),
        best_epoch: None,
        report: None,
        calibration: None,
        calibrated_test_nll: None,
        error: None,
    };
    let data = ctx.source.prepare(seed, key.bins, &model_config.kernel)?;
    match train(&model_config, &data.train, &data.val, &data.space) {
        Ok(outcome) => {
            let mut log = Vec::new();
            write_epoch_log(&outcome.log, &mut log)?;
            write_file(&dir.join("log.csv"), log)?;
            let (predictions, report) = outcome.best.evaluate(&data.test)?;
            write_predictions(&dir.join("predictions.csv"), &data.test.y, &predictions)?;
            outcome
                .best
                .save(&dir.join("checkpoint.json"))
                .map_err(ExperimentError::from)?;
            if ctx.config.calibrate && !data.val.is_empty() {
                if let Some(val_post) = outcome.best.predict(&data.val)?.posterior {
                    let cal = calibrate_scales(&val_post, &data.val.y)?;
                    let test_post: Vec<_> = predictions
                        .posterior
                        .as_ref()
                        .expect("evidential models return posteriors")
                        .iter()
                        .map(|p| cal.weights.apply(p))
                        .collect();
                    record.calibrated_test_nll =
                        Some(crate::metrics::evidential_nll(&test_post, &data.test.y));
                    record.calibration = Some(cal);
                }
            }
            record.best_epoch = Some(outcome.best.epoch);
            record.report = Some(report);
        }
        Err(e @ ModelError::Diverged { .. }) => record.error = Some(e.to_string()),
        Err(e) => return Err(e.into()),
    }
    write_file(&dir.join("metrics.json"), to_json(&record)?)?;
    Ok(record)
}

type MetricFn = fn(&RegionMetrics) -> Option<f64>;

const METRICS: [(&str, MetricFn); 7] = [
    ("mae", |m| Some(m.mae)),
    ("mse", |m| Some(m.mse)),
    ("gm", |m| Some(m.gm)),
    ("pearson", |m| m.pearson),
    ("spearman", |m| m.spearman),
    ("nll", |m| m.nll),
    ("ause", |m| m.ause),
];

/// `<metric>_<region>` values of a record, in column order.
fn metric_columns(record: &CellRecord) -> Vec<(String, Option<f64>)> {
    let mut cols = Vec::new();
    for region in ReportRegion::ALL {
        let count = record
            .report
            .as_ref()
            .map(|r| r.region(region).count as f64);
        cols.push((format!("count_{}", region.as_str()), count));
    }
    for (name, f) in METRICS {
        for region in ReportRegion::ALL {
            let v = record.report.as_ref().and_then(|r| r.metric(region, f));
            cols.push((format!("{name}_{}", region.as_str()), v));
        }
    }
    cols.push(("nll_all_calibrated".into(), record.calibrated_test_nll));
    cols
}

/// Header of the merged metrics table.
pub(super) fn merged_header() -> Vec<String> {
    let blank = CellRecord {
        config_hash: String::new(),
        key: CellKey {
            sweep: Sweep::Main,
            variant: String::new(),
            lambda: 0.0,
            bins: 0,
            seed: 0,
            variant_index: 0,
        },
        model_config_hash: None,
        best_epoch: None,
        report: None,
        calibration: None,
        calibrated_test_nll: None,
        error: None,
    };
    let mut header: Vec<String> = [
        "config_hash",
        "sweep",
        "variant",
        "lambda",
        "bins",
        "seed",
        "best_epoch",
    ]
    .map(String::from)
    .to_vec();
    header.extend(metric_columns(&blank).into_iter().map(|(k, _)| k));
    header.push("error".into());
    header
}

fn merged_csv(records: &[CellRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(merged_header())?;
    for r in records {
        let k = &r.key;
        let mut row = vec![
            r.config_hash.clone(),
            k.sweep.as_str().to_string(),
            k.variant.clone(),
            k.lambda.to_string(),
            k.bins.to_string(),
            k.seed.to_string(),
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
        ];
        row.extend(metric_columns(r).into_iter().map(|(_, v)| fmt_opt(v)));
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(row)?;
    }
    w.into_inner()
        .map_err(|e| ExperimentError::Csv(e.into_error().into()))
}

fn summarize(records: &[CellRecord]) -> Vec<GroupSummary> {
    let mut groups: Vec<GroupSummary> = Vec::new();
    let mut columns: Vec<BTreeMap<String, Vec<f64>>> = Vec::new();
    for r in records {
        let k = &r.key;
        let same = groups.last().is_some_and(|g| {
            g.sweep == k.sweep && g.variant == k.variant && g.lambda == k.lambda && g.bins == k.bins
        });
        if !same {
            groups.push(GroupSummary {
                sweep: k.sweep,
                variant: k.variant.clone(),
                lambda: k.lambda,
                bins: k.bins,
                seeds: Vec::new(),
                metrics: BTreeMap::new(),
            });
            columns.push(BTreeMap::new());
        }
        groups.last_mut().expect("pushed").seeds.push(k.seed);
        let cols = columns.last_mut().expect("pushed");
        for (name, v) in metric_columns(r) {
            if let Some(v) = v {
                cols.entry(name).or_default().push(v);
            }
        }
    }
    for (g, cols) in groups.iter_mut().zip(columns) {
        g.metrics = cols
            .into_iter()
            .filter_map(|(k, vs)| spread(vs).map(|s| (k, s)))
            .collect();
    }
    groups
}

/// Runs every cell of the sweep and writes the per-cell directories, the
/// merged `metrics.csv` and `summary.json`. Cells that diverge are recorded
/// as failures; other errors abort the run.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let dir = resolve_output_dir(options.output_dir.as_deref().unwrap_or(&config.output_dir));
    let source = Source::load(config)?;
    let cells = cells(config, source.default_bins())?;
    claim_output_dir(&dir, &ARTIFACTS, options.force)?;
    let hash = config.hash(options.seed_offset);
    let ctx = Context {
        config,
        source: &source,
        hash: &hash,
        seed_offset: options.seed_offset,
        dir: &dir,
    };
    let jobs = options.jobs.unwrap_or(config.jobs);
    let mode = if jobs == 1 {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    let results = par::with_jobs(jobs, || par::map(mode, &cells, |c| run_cell(&ctx, c)));
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;

    write_file(&dir.join("metrics.csv"), merged_csv(&records)?)?;
    let summary = RunSummary {
        config_hash: hash.clone(),
        seed_offset: options.seed_offset,
        output_dir: dir.clone(),
        cells: records.len(),
        failed: records
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| (r.key.id(), e.clone())))
            .collect(),
        groups: summarize(&records),
    };
    let mut doc = serde_json::to_value(&summary)?;
    doc.as_object_mut().expect("object").remove("output_dir");
    write_file(&dir.join("summary.json"), to_json(&doc)?)?;
    Ok(summary)
}
