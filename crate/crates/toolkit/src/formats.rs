//! Label files, run logs, prediction dumps and report records.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use lesionelev_core::data::{DatasetManifest, Modality};
use lesionelev_core::labels::ElevationPrediction;
use lesionelev_core::metrics::{MetricKind, MetricReport};
use lesionelev_core::stats::{McNemar, RunSummary};
use lesionelev_core::train::{EpochRecord, RunLog};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};

fn row_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> ToolError {
    ToolError::Data(format!("{}:{line}: {msg}", path.display()))
}

pub fn label_header(classes: &[String]) -> Vec<String> {
    let mut h = vec!["image_id".to_string()];
    h.extend(classes.iter().map(|c| format!("p_{c}")));
    h.extend(["argmax", "source_model", "source_modality"].map(String::from));
    h
}

pub fn write_labels(path: &Path, classes: &[String], preds: &[ElevationPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ToolError::write(path, e))?;
    w.write_record(label_header(classes)).map_err(|e| ToolError::write(path, e))?;
    for p in preds {
        let mut row = vec![p.image_id.clone()];
        row.extend(p.probs.iter().map(|v| format!("{v:.9}")));
        row.extend([p.argmax_class.clone(), p.source_model.clone(), p.source_modality.name().to_string()]);
        w.write_record(row).map_err(|e| ToolError::write(path, e))?;
    }
    w.flush().map_err(|e| ToolError::write(path, e))
}

/// Reads a label file written for `classes`, validating every row.
pub fn read_labels(path: &Path, classes: &[String]) -> Result<Vec<ElevationPrediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers().map_err(|e| row_err(path, 1, e))?.iter().map(String::from).collect();
    if header != label_header(classes) {
        return Err(row_err(path, 1, format!("expected header {}", label_header(classes).join(","))));
    }
    let k = classes.len();
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| row_err(path, line, e))?;
        let probs = (1..=k)
            .map(|c| row[c].parse::<f64>().map_err(|e| row_err(path, line, format!("column {}: {e}", header[c]))))
            .collect::<Result<Vec<_>>>()?;
        let source_modality: Modality = row[k + 3].parse().map_err(|e| row_err(path, line, e))?;
        let p = ElevationPrediction {
            image_id: row[0].to_string(),
            probs,
            argmax_class: row[k + 1].to_string(),
            source_model: row[k + 2].to_string(),
            source_modality,
        };
        p.validate(classes).map_err(|e| row_err(path, line, e))?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum RunLogLine {
    Epoch { epoch: usize, train_loss: f64, val_loss: f64, val_auroc: Option<f64>, lr: f64 },
    Summary { seed: u64, best_epoch: Option<usize>, checkpoints: Vec<CheckpointLine> },
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    epoch: usize,
    path: String,
}

pub fn epoch_line(r: &EpochRecord) -> String {
    let line = RunLogLine::Epoch {
        epoch: r.epoch,
        train_loss: r.train_loss,
        val_loss: r.val_loss,
        val_auroc: r.val_auroc,
        lr: r.lr,
    };
    serde_json::to_string(&line).expect("run log serializes")
}

/// One line per epoch followed by a summary line.
pub fn write_runlog(path: &Path, log: &RunLog) -> Result<()> {
    let mut text = String::new();
    for r in &log.epochs {
        text.push_str(&epoch_line(r));
        text.push('\n');
    }
    let summary = RunLogLine::Summary {
        seed: log.seed,
        best_epoch: log.best_epoch,
        checkpoints: log.checkpoints.iter().map(|c| CheckpointLine { epoch: c.epoch, path: c.id.clone() }).collect(),
    };
    text.push_str(&serde_json::to_string(&summary).expect("run log serializes"));
    text.push('\n');
    fs::write(path, text).map_err(|e| ToolError::write(path, e))
}

pub fn read_runlog(path: &Path) -> Result<RunLog> {
    let text = fs::read_to_string(path).map_err(|e| ToolError::io(path, e))?;
    let mut log = RunLog::default();
    for (i, line) in text.lines().enumerate() {
        match serde_json::from_str(line).map_err(|e| row_err(path, i + 1, e))? {
            RunLogLine::Epoch { epoch, train_loss, val_loss, val_auroc, lr } => {
                log.epochs.push(EpochRecord { epoch, train_loss, val_loss, val_auroc, lr })
            }
            RunLogLine::Summary { seed, best_epoch, checkpoints } => {
                log.seed = seed;
                log.best_epoch = best_epoch;
                log.checkpoints = checkpoints
                    .into_iter()
                    .map(|c| lesionelev_core::train::Checkpoint { epoch: c.epoch, id: c.path })
                    .collect();
            }
        }
    }
    Ok(log)
}

/// Per-metric values in [`MetricKind::ALL`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerMetric<T> {
    pub accuracy: T,
    pub balanced_accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub auroc: T,
}

impl<T: Clone> PerMetric<T> {
    pub fn from_fn(mut f: impl FnMut(MetricKind) -> T) -> Self {
        Self {
            accuracy: f(MetricKind::Accuracy),
            balanced_accuracy: f(MetricKind::BalancedAccuracy),
            precision: f(MetricKind::Precision),
            recall: f(MetricKind::Recall),
            f1: f(MetricKind::F1),
            auroc: f(MetricKind::Auroc),
        }
    }
}

/// One report line: a model evaluated on one split for one run. `run` is
/// absent for the run-averaged predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub model: String,
    pub run: Option<usize>,
    pub split: String,
    pub n_test: usize,
    pub metrics: PerMetric<Option<f64>>,
    pub ci: PerMetric<Option<[f64; 2]>>,
    pub excluded_classes: Vec<String>,
}

impl ReportRecord {
    pub fn new(model: &str, run: Option<usize>, split: &str, report: &MetricReport, classes: &[String]) -> Self {
        Self {
            model: model.to_string(),
            run,
            split: split.to_string(),
            n_test: report.n_test,
            metrics: PerMetric::from_fn(|k| report.value(k)),
            ci: PerMetric::from_fn(|k| report.interval(k).map(|iv| [iv.low, iv.high])),
            excluded_classes: report.metrics.excluded_classes.iter().map(|&c| classes[c].clone()).collect(),
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| ToolError::write(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| ToolError::write(path, e))?;
        writeln!(f, "{line}").map_err(|e| ToolError::write(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| ToolError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| row_err(path, i + 1, e)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean ± std across runs for one model and split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub model: String,
    pub split: String,
    pub runs: usize,
    /// Set when a single run was aggregated and every std is 0.
    pub single_run: bool,
    pub metrics: PerMetric<Option<Aggregate>>,
}

impl SummaryRecord {
    pub fn new(model: &str, split: &str, s: &RunSummary) -> Self {
        Self {
            model: model.into(),
            split: split.into(),
            runs: s.runs,
            single_run: s.single_run,
            metrics: PerMetric::from_fn(|k| s.get(k).map(|m| Aggregate { mean: m.mean, std: m.std, n: m.n })),
        }
    }
}

/// Comparison of model A against model B on the same test items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub model_a: String,
    pub model_b: String,
    pub split: String,
    pub n: usize,
    /// Items only A classifies correctly.
    pub b: usize,
    /// Items only B classifies correctly.
    pub c: usize,
    pub midp: f64,
    /// Positive when B has the higher mean AUROC.
    pub d: f64,
    pub auroc_a: Vec<f64>,
    pub auroc_b: Vec<f64>,
}

impl ComparisonRecord {
    pub fn new(a: &str, b: &str, split: &str, n: usize, test: McNemar, d: f64, auroc_a: Vec<f64>, auroc_b: Vec<f64>) -> Self {
        Self { model_a: a.into(), model_b: b.into(), split: split.into(), n, b: test.b, c: test.c, midp: test.midp, d, auroc_a, auroc_b }
    }
}

/// Probability rows of one model: `image_id,target,run,p_<class>…`. `run`
/// is `avg` for the run-averaged rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionDump {
    pub classes: Vec<String>,
    pub ids: Vec<String>,
    pub targets: Vec<usize>,
    /// `runs[r][i]` is the probability vector of item `i` in run `r`.
    pub runs: Vec<Vec<Vec<f64>>>,
    pub average: Vec<Vec<f64>>,
}

pub fn average_runs(runs: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let n = runs.len() as f64;
    (0..runs[0].len())
        .map(|i| {
            let k = runs[0][i].len();
            (0..k).map(|c| runs.iter().map(|r| r[i][c]).sum::<f64>() / n).collect()
        })
        .collect()
}

pub fn write_predictions(path: &Path, dump: &PredictionDump) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ToolError::write(path, e))?;
    let mut header = vec!["image_id".to_string(), "target".into(), "run".into()];
    header.extend(dump.classes.iter().map(|c| format!("p_{c}")));
    w.write_record(&header).map_err(|e| ToolError::write(path, e))?;
    let tagged = dump.runs.iter().enumerate().map(|(r, p)| (r.to_string(), p)).chain([("avg".to_string(), &dump.average)]);
    for (tag, probs) in tagged {
        for ((id, t), p) in dump.ids.iter().zip(&dump.targets).zip(probs) {
            let mut row = vec![id.clone(), dump.classes[*t].clone(), tag.clone()];
            row.extend(p.iter().map(|v| format!("{v:.9}")));
            w.write_record(&row).map_err(|e| ToolError::write(path, e))?;
        }
    }
    w.flush().map_err(|e| ToolError::write(path, e))
}

pub fn read_predictions(path: &Path) -> Result<PredictionDump> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r.headers().map_err(|e| row_err(path, 1, e))?.iter().map(String::from).collect();
    if header.len() < 5 || header[..3] != ["image_id", "target", "run"] {
        return Err(row_err(path, 1, "expected image_id,target,run,p_<class>..."));
    }
    let classes: Vec<String> =
        header[3..].iter().map(|h| h.strip_prefix("p_").unwrap_or(h).to_string()).collect();
    let mut dump = PredictionDump { classes, ..Default::default() };
    let mut runs: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (i, row) in r.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| row_err(path, line, e))?;
        let probs =
            row.iter().skip(3).map(|v| v.parse::<f64>().map_err(|e| row_err(path, line, e))).collect::<Result<Vec<_>>>()?;
        match &row[2] {
            "avg" => {
                let t = dump
                    .classes
                    .iter()
                    .position(|c| c == &row[1])
                    .ok_or_else(|| row_err(path, line, format!("unknown target {:?}", &row[1])))?;
                dump.ids.push(row[0].to_string());
                dump.targets.push(t);
                dump.average.push(probs);
            }
            run => {
                let run: usize = run.parse().map_err(|e| row_err(path, line, e))?;
                runs.entry(run).or_default().push(probs);
            }
        }
    }
    dump.runs = runs.into_values().collect();
    if dump.runs.iter().any(|r| r.len() != dump.ids.len()) {
        return Err(ToolError::Data(format!("{}: runs cover different item counts", path.display())));
    }
    Ok(dump)
}

/// Ids of `manifest` with no row in `preds`, in manifest order.
pub fn missing_ids<'a>(manifest: &'a DatasetManifest, preds: &[ElevationPrediction]) -> Vec<&'a str> {
    let have: std::collections::BTreeSet<&str> = preds.iter().map(|p| p.image_id.as_str()).collect();
    manifest.records().iter().map(|r| r.image_id.as_str()).filter(|id| !have.contains(id)).collect()
}
