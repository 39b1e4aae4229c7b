//! Subcommands. Every artifact is written under the `--out` directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use lesionelev_core::data::{DatasetManifest, LabelKind};
use lesionelev_core::gradcam::gradcam;
use lesionelev_core::labels::{attach_labels, check_modality, ground_truth_aux, infer_elevations, AuxMode};
use lesionelev_core::metrics::{evaluate, MetricKind, MetricReport};
use lesionelev_core::model::{build_model, softmax, FusionHead, FusionMode, ModelBundle, Role};
use lesionelev_core::preprocess::PreprocessConfig;
use lesionelev_core::split::{stratified_split, Split};
use lesionelev_core::stats::{aggregate_runs, cohens_d, mcnemar_midp};
use lesionelev_core::train::{predict, select_best, train, CheckpointSink, EpochRecord, RunLog, Samples};
use lesionelev_core::weights::compute_class_weights;
use lesionelev_core::Tensor;
use log::{info, warn};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::Experiment;
use crate::dataset::{load_manifest, load_schema, split_for, write_class_weights, write_split};
use crate::error::{Result, ToolError};
use crate::formats::{
    average_runs, epoch_line, read_jsonl, read_labels, read_predictions, read_runlog, write_jsonl, write_labels,
    write_predictions, write_runlog, ComparisonRecord, PredictionDump, ReportRecord, SummaryRecord,
};
use crate::imageio::{load_rgb, overlay, save_rgb};
use crate::synth::{generate, write_dataset, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "lesionelev", version, about = "Lesion elevation prediction, elevation-fused diagnosis and model comparison")]
pub struct Cli {
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; every artifact lands here.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces every seed of the experiment.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
    /// Label images of another modality than the elevation model's.
    #[arg(long, global = true)]
    pub allow_modality_mismatch: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the stratified split file and class weights.
    Prepare,
    /// Train the configured model once per repeat.
    Train,
    /// Write elevation pseudo-labels for a manifest.
    Label {
        /// Elevation checkpoint; defaults to the best checkpoint of run 0 of
        /// the configured model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Manifest to label; defaults to the configured manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Label file name inside the output directory.
        #[arg(long, default_value = "labels.csv")]
        output: PathBuf,
    },
    /// Evaluate every run of the configured model.
    Evaluate,
    /// Compare two evaluated models on the same test items.
    Compare {
        /// Output directory of model A (holding reports.jsonl and predictions.csv).
        #[arg(long)]
        a: PathBuf,
        /// Output directory of model B.
        #[arg(long)]
        b: PathBuf,
        /// Comparison file name inside the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// GradCAM overlays, one per (image, class).
    Cam {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Image ids; defaults to every image of the evaluation split.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
    },
    /// Generate a synthetic dataset with known elevation shapes.
    Synth {
        #[arg(long, default_value_t = 600)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Add diagnosis labels.
        #[arg(long)]
        diagnosis: bool,
        /// Draw no stripe textures.
        #[arg(long)]
        no_texture: bool,
        #[arg(long, default_value_t = 0.1)]
        label_noise: f64,
        /// Leave the elevation column empty.
        #[arg(long)]
        no_elevation: bool,
    },
}

struct Ctx {
    out: PathBuf,
    seed: Option<u64>,
    config: Option<PathBuf>,
    allow_mismatch: bool,
}

impl Ctx {
    fn experiment(&self) -> Result<Experiment> {
        let path = self.config.as_ref().ok_or_else(|| ToolError::Config("this subcommand needs --config".into()))?;
        let exp = Experiment::load(path, self.seed)?;
        info!("effective seed {}", exp.seed);
        Ok(exp)
    }

    fn out_path(&self, rel: &Path) -> Result<PathBuf> {
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(ToolError::Config(format!("{} must be a relative path inside the output directory", rel.display())));
        }
        Ok(self.out.join(rel))
    }

    fn model_dir(&self, exp: &Experiment) -> PathBuf {
        self.out.join(&exp.name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.device != "cpu" {
        return Err(ToolError::Config(format!("device {:?} is not available; only cpu is supported", cli.device)));
    }
    let out = cli.out.ok_or_else(|| ToolError::Config("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| ToolError::write(&out, e))?;
    let ctx = Ctx { out, seed: cli.seed, config: cli.config, allow_mismatch: cli.allow_modality_mismatch };
    match cli.command {
        Command::Prepare => prepare(&ctx),
        Command::Train => train_cmd(&ctx),
        Command::Label { checkpoint, manifest, output } => label(&ctx, checkpoint, manifest, &output),
        Command::Evaluate => evaluate_cmd(&ctx),
        Command::Compare { a, b, output } => compare(&ctx, &a, &b, output),
        Command::Cam { checkpoint, ids } => cam(&ctx, checkpoint, ids),
        Command::Synth { count, size, diagnosis, no_texture, label_noise, no_elevation } => {
            let seed = ctx.seed.unwrap_or(0);
            info!("effective seed {seed}");
            if count == 0 || size < 16 || !(0.0..=0.5).contains(&label_noise) {
                return Err(ToolError::Config("synth needs count > 0, size >= 16 and label_noise in [0, 0.5]".into()));
            }
            let images = generate(&SynthConfig { count, size, seed, textures: !no_texture, diagnosis, label_noise });
            write_dataset(&ctx.out, &images, !no_elevation)?;
            info!("wrote {count} images to {}", ctx.out.display());
            Ok(())
        }
    }
}

/// The configured manifest, restricted to the configured modality and to
/// records that carry the role's target label and the stratification label.
fn load_dataset(exp: &Experiment) -> Result<DatasetManifest> {
    let schema = load_schema(&exp.schema)?;
    let mut manifest = load_manifest(&exp.manifest, &schema)?;
    if let Some(m) = exp.modality {
        manifest = manifest.filter(|r| r.modality == m);
    }
    let mut kinds = vec![exp.role.target()];
    kinds.extend(exp.stratify_on.kind());
    for kind in kinds {
        let dropped = manifest.drop_unlabeled(kind);
        if dropped > 0 {
            warn!("dropped {dropped} records without a {} label", kind.column());
        }
    }
    if manifest.is_empty() {
        return Err(ToolError::Data(format!("{}: no usable records", exp.manifest.display())));
    }
    Ok(manifest)
}

fn prepare(ctx: &Ctx) -> Result<()> {
    let exp = ctx.experiment()?;
    let manifest = load_dataset(&exp)?;
    let split = stratified_split(&manifest, exp.ratios, exp.stratify_on, exp.seed)?;
    let path = ctx.out_path(&exp.split_file)?;
    write_split(&path, &manifest, &split)?;
    let [tr, va, te] = split.counts();
    info!("split {tr}/{va}/{te} written to {}", path.display());
    let kind = exp.role.target();
    let counts = split.subset(&manifest, Split::Train).class_counts(kind);
    let weights = compute_class_weights(&counts)?;
    write_class_weights(&ctx.out.join("class_weights.csv"), manifest.schema.classes(kind), &counts, weights.as_slice())
}

/// Samples decoded from disk on every access.
struct DiskSamples {
    paths: Vec<PathBuf>,
    targets: Vec<usize>,
    aux: Option<Vec<Vec<f32>>>,
    preprocess: PreprocessConfig,
}

impl DiskSamples {
    fn new(manifest: &DatasetManifest, kind: LabelKind, aux: Option<&BTreeMap<String, Vec<f32>>>, preprocess: &PreprocessConfig) -> Result<Self> {
        let mut paths = Vec::new();
        let mut targets = Vec::new();
        for r in manifest.records() {
            let p = PathBuf::from(&r.image_path);
            if !p.is_file() {
                return Err(ToolError::Data(format!("image {} of {:?} not found", p.display(), r.image_id)));
            }
            paths.push(p);
            targets.push(r.require_label(kind)?);
        }
        let aux = aux.map(|a| manifest.records().iter().map(|r| a[&r.image_id].clone()).collect());
        Ok(Self { paths, targets, aux, preprocess: preprocess.clone() })
    }
}

impl Samples for DiskSamples {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn image(&self, index: usize, augment: Option<u64>) -> lesionelev_core::Result<Tensor> {
        let img = load_rgb(&self.paths[index]).map_err(|e| lesionelev_core::Error::External(e.to_string()))?;
        self.preprocess.apply(&img, augment)
    }

    fn target(&self, index: usize) -> usize {
        self.targets[index]
    }

    fn aux(&self, index: usize) -> Option<&[f32]> {
        self.aux.as_ref().map(|a| a[index].as_slice())
    }
}

/// Aux vectors for every record of `manifest` under the configured fusion.
fn aux_vectors(ctx: &Ctx, exp: &Experiment, manifest: &DatasetManifest) -> Result<Option<BTreeMap<String, Vec<f32>>>> {
    let mode = match exp.fusion {
        FusionMode::None => return Ok(None),
        FusionMode::GtOnehot => return Ok(Some(ground_truth_aux(manifest)?)),
        FusionMode::Soft => AuxMode::Soft,
        FusionMode::DiscreteOnehot => AuxMode::Discrete,
    };
    let rel = exp.labels.as_ref().expect("checked at config load");
    let path = if rel.is_absolute() { rel.clone() } else { ctx.out.join(rel) };
    let preds = read_labels(&path, &manifest.schema.elevation_classes)?;
    let aux = attach_labels(manifest, &preds, mode).map_err(|e| ToolError::Data(format!("{}: {e}", path.display())))?;
    Ok(Some(aux))
}

struct FileSink<'a> {
    out: &'a Path,
    run_dir: String,
    meta: CheckpointMeta,
    log: fs::File,
}

impl CheckpointSink for FileSink<'_> {
    fn save(&mut self, epoch: usize, model: &ModelBundle) -> lesionelev_core::Result<String> {
        let id = format!("{}/epoch-{epoch}.lew", self.run_dir);
        let meta = CheckpointMeta { id: id.clone(), epoch, ..self.meta.clone() };
        checkpoint::save(&self.out.join(&id), model, &meta).map_err(|e| lesionelev_core::Error::External(e.to_string()))?;
        Ok(id)
    }

    fn remove(&mut self, id: &str) -> lesionelev_core::Result<()> {
        checkpoint::remove(&self.out.join(id)).map_err(|e| lesionelev_core::Error::External(e.to_string()))
    }

    fn epoch_done(&mut self, r: &EpochRecord) {
        use std::io::Write;
        let auroc = r.val_auroc.map_or("undefined".to_string(), |a| format!("{a:.4}"));
        info!("epoch {} lr {:.0e} train loss {:.4} val loss {:.4} val auroc {auroc}", r.epoch, r.lr, r.train_loss, r.val_loss);
        let _ = writeln!(self.log, "{}", epoch_line(r));
    }
}

fn new_model(exp: &Experiment, manifest: &DatasetManifest, seed: u64) -> Result<ModelBundle> {
    let kind = exp.role.target();
    let classes = manifest.schema.classes(kind).len();
    let spec = exp.spec(classes);
    let aux_dim = if exp.fusion.uses_aux() { manifest.schema.num_elevation() } else { 0 };
    let fusion = FusionHead::new(spec.feature_dim, aux_dim, classes, exp.fusion)?;
    let mut model = build_model(&spec, fusion, exp.role, seed)?;
    match &exp.init_checkpoint {
        Some(p) => checkpoint::load_backbone(p, &mut model)?,
        None if exp.pretrained => warn!("no pretrained weights are bundled; set init_checkpoint to start from trained weights"),
        None => {}
    }
    model.set_modality(manifest.modality());
    Ok(model)
}

fn train_cmd(ctx: &Ctx) -> Result<()> {
    let exp = ctx.experiment()?;
    let manifest = load_dataset(&exp)?;
    let split_path = ctx.out_path(&exp.split_file)?;
    if !split_path.exists() {
        return Err(ToolError::Config(format!("{} not found; run prepare first", split_path.display())));
    }
    let split = split_for(&manifest, &split_path)?;
    let aux = aux_vectors(ctx, &exp, &manifest)?;
    let kind = exp.role.target();
    let train_set = DiskSamples::new(&split.subset(&manifest, Split::Train), kind, aux.as_ref(), &exp.preprocess)?;
    let val_set = DiskSamples::new(&split.subset(&manifest, Split::Val), kind, aux.as_ref(), &exp.preprocess)?;
    let model_dir = ctx.model_dir(&exp);
    for (run, seed) in exp.train.repeat_seeds().into_iter().enumerate() {
        info!("{} run {run} seed {seed}", exp.name);
        let run_dir = format!("{}/run{run}", exp.name);
        let dir = ctx.out.join(&run_dir);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| ToolError::write(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| ToolError::write(&dir, e))?;
        let mut model = new_model(&exp, &manifest, seed)?;
        let meta = CheckpointMeta {
            id: String::new(),
            role: exp.role,
            modality: model.modality(),
            epoch: 0,
            seed,
            config_hash: exp.config_hash.clone(),
            spec: model.spec().expect("built from a spec").clone(),
            fusion: *model.fusion(),
            preprocess: exp.preprocess.clone(),
            schema: manifest.schema.clone(),
        };
        let progress = dir.join("progress.jsonl");
        let log = fs::File::create(&progress).map_err(|e| ToolError::write(&progress, e))?;
        let mut sink = FileSink { out: &ctx.out, run_dir, meta, log };
        let config = lesionelev_core::train::TrainConfig { seed, ..exp.train.clone() };
        let runlog = train(&mut model, &train_set, &val_set, &config, &mut sink)?;
        drop(sink);
        fs::remove_file(&progress).map_err(|e| ToolError::write(&progress, e))?;
        write_runlog(&dir.join("runlog.jsonl"), &runlog)?;
        info!("run {run}: best epoch {:?}, checkpoint {}", runlog.best_epoch, select_best(&runlog)?);
    }
    info!("model written to {}", model_dir.display());
    Ok(())
}

fn best_checkpoint(ctx: &Ctx, exp: &Experiment, run: usize) -> Result<PathBuf> {
    let path = ctx.model_dir(exp).join(format!("run{run}")).join("runlog.jsonl");
    if !path.exists() {
        return Err(ToolError::Config(format!("{} not found; run train first", path.display())));
    }
    let log: RunLog = read_runlog(&path)?;
    Ok(ctx.out.join(select_best(&log)?))
}

fn label(ctx: &Ctx, checkpoint_path: Option<PathBuf>, manifest_path: Option<PathBuf>, output: &Path) -> Result<()> {
    let exp = match (&checkpoint_path, &manifest_path) {
        (Some(_), Some(_)) => None,
        _ => Some(ctx.experiment()?),
    };
    if exp.is_none() {
        info!("effective seed {} (labeling draws no random numbers)", ctx.seed.unwrap_or(0));
    }
    let ckpt = match checkpoint_path {
        Some(p) => p,
        None => best_checkpoint(ctx, exp.as_ref().unwrap(), 0)?,
    };
    let (model, meta) = checkpoint::load(&ckpt)?;
    if meta.role != Role::Elevation {
        return Err(ToolError::Config(format!("{} is a {} model, not an elevation model", ckpt.display(), meta.role.name())));
    }
    let manifest_path = manifest_path.unwrap_or_else(|| exp.as_ref().unwrap().manifest.clone());
    let manifest = load_manifest(&manifest_path, &meta.schema)?;
    check_modality(&model, &manifest, ctx.allow_mismatch)?;
    if ctx.allow_mismatch && model.modality().is_some_and(|m| manifest.records().iter().any(|r| r.modality != m)) {
        warn!("labeling across modalities");
    }
    let pre = meta.preprocess.clone();
    let preds = infer_elevations(&model, &manifest, &meta.id, ctx.allow_mismatch, 32, |r| {
        let img = load_rgb(Path::new(&r.image_path)).map_err(|e| lesionelev_core::Error::External(e.to_string()))?;
        pre.eval(&img)
    })
    .map_err(|e| match e {
        lesionelev_core::Error::External(m) => ToolError::Data(m),
        other => other.into(),
    })?;
    let out = ctx.out_path(output)?;
    write_labels(&out, &meta.schema.elevation_classes, &preds)?;
    info!("{} labels from {} written to {}", preds.len(), meta.id, out.display());
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx) -> Result<()> {
    let exp = ctx.experiment()?;
    let manifest = load_dataset(&exp)?;
    let split = split_for(&manifest, &ctx.out_path(&exp.split_file)?)?;
    let subset = split.subset(&manifest, exp.eval_split);
    let aux = aux_vectors(ctx, &exp, &subset)?;
    let kind = exp.role.target();
    let samples = DiskSamples::new(&subset, kind, aux.as_ref(), &exp.preprocess)?;
    let classes = manifest.schema.classes(kind).to_vec();
    let targets: Vec<usize> = (0..samples.len()).map(|i| samples.target(i)).collect();
    let split_name = exp.eval_split.name();

    let mut runs = Vec::new();
    let mut reports: Vec<MetricReport> = Vec::new();
    let mut records = Vec::new();
    for run in 0..exp.train.repeats {
        let (model, _) = checkpoint::load(&best_checkpoint(ctx, &exp, run)?)?;
        let probs: Vec<Vec<f64>> =
            predict(&model, &samples, exp.train.batch_size)?.iter().map(|p| p.iter().map(|v| *v as f64).collect()).collect();
        let report = evaluate(&probs, &targets, classes.len(), run, exp.bootstrap)?;
        for &c in &report.metrics.excluded_classes {
            warn!("run {run}: class {} absent from the {split_name} targets, excluded from macro averages", classes[c]);
        }
        records.push(ReportRecord::new(&exp.name, Some(run), split_name, &report, &classes));
        reports.push(report);
        runs.push(probs);
    }
    let average = average_runs(&runs);
    let avg_report = evaluate(&average, &targets, classes.len(), runs.len(), exp.bootstrap)?;
    records.push(ReportRecord::new(&exp.name, None, split_name, &avg_report, &classes));

    let summary = aggregate_runs(&reports)?;
    if summary.single_run {
        warn!("single run: standard deviations are 0");
    }
    for kind in MetricKind::ALL {
        if let Some(m) = summary.get(kind) {
            info!("{} {:.4} ± {:.4}", kind.name(), m.mean, m.std);
        }
    }
    let dir = ctx.model_dir(&exp);
    write_jsonl(&dir.join("reports.jsonl"), &records)?;
    write_jsonl(&dir.join("summary.jsonl"), &[SummaryRecord::new(&exp.name, split_name, &summary)])?;
    let ids = subset.records().iter().map(|r| r.image_id.clone()).collect();
    write_predictions(&dir.join("predictions.csv"), &PredictionDump { classes, ids, targets, runs, average })?;
    info!("reports written to {}", dir.display());
    Ok(())
}

fn compare(ctx: &Ctx, a: &Path, b: &Path, output: Option<PathBuf>) -> Result<()> {
    info!("effective seed {} (comparison draws no random numbers)", ctx.seed.unwrap_or(0));
    let load = |dir: &Path| -> Result<(Vec<ReportRecord>, PredictionDump)> {
        Ok((read_jsonl(&dir.join("reports.jsonl"))?, read_predictions(&dir.join("predictions.csv"))?))
    };
    let (ra, pa) = load(a)?;
    let (rb, pb) = load(b)?;
    if pa.ids != pb.ids || pa.targets != pb.targets {
        return Err(ToolError::Data("the two prediction dumps do not cover the same test items".into()));
    }
    let split = ra.first().map(|r| r.split.clone()).unwrap_or_default();
    let aurocs = |r: &[ReportRecord]| -> Vec<f64> { r.iter().filter(|x| x.run.is_some()).filter_map(|x| x.metrics.auroc).collect() };
    let (auroc_a, auroc_b) = (aurocs(&ra), aurocs(&rb));
    let correct = |p: &PredictionDump| -> Vec<bool> {
        p.average.iter().zip(&p.targets).map(|(v, &t)| lesionelev_core::labels::argmax_index(v) == t).collect()
    };
    let test = mcnemar_midp(&correct(&pa), &correct(&pb))?;
    let d = cohens_d(&auroc_a, &auroc_b)?;
    let name = |dir: &Path, r: &[ReportRecord]| {
        r.first().map(|x| x.model.clone()).unwrap_or_else(|| dir.display().to_string())
    };
    let (na, nb) = (name(a, &ra), name(b, &rb));
    info!("{na} vs {nb}: b={} c={} mid-p={:.6} d={d:.4}", test.b, test.c, test.midp);
    let record = ComparisonRecord::new(&na, &nb, &split, pa.ids.len(), test, d, auroc_a, auroc_b);
    let output = output.unwrap_or_else(|| PathBuf::from(format!("compare-{na}-vs-{nb}.jsonl")));
    write_jsonl(&ctx.out_path(&output)?, &[record])
}

fn cam(ctx: &Ctx, checkpoint_path: Option<PathBuf>, ids: Vec<String>) -> Result<()> {
    let exp = ctx.experiment()?;
    let ckpt = match checkpoint_path {
        Some(p) => p,
        None => best_checkpoint(ctx, &exp, 0)?,
    };
    let (mut model, meta) = checkpoint::load(&ckpt)?;
    let manifest = load_dataset(&exp)?;
    let chosen = if ids.is_empty() {
        let split = split_for(&manifest, &ctx.out_path(&exp.split_file)?)?;
        split.subset(&manifest, exp.eval_split)
    } else {
        let missing: Vec<&String> = ids.iter().filter(|id| manifest.get(id).is_none()).collect();
        if !missing.is_empty() {
            return Err(ToolError::Data(format!("unknown image ids {missing:?}")));
        }
        manifest.filter(|r| ids.contains(&r.image_id))
    };
    let aux = aux_vectors(ctx, &exp, &chosen)?;
    let classes = meta.schema.classes(meta.role.target()).to_vec();
    let dir = ctx.out.join("cam");
    fs::create_dir_all(&dir).map_err(|e| ToolError::write(&dir, e))?;
    for r in chosen.records() {
        let img = load_rgb(Path::new(&r.image_path))?;
        let x = meta.preprocess.eval(&img)?;
        let a = aux.as_ref().map(|m| m[&r.image_id].as_slice());
        let aux_row = a.map(|v| Tensor::from_vec(&[1, v.len()], v.to_vec())).transpose()?;
        let probs = softmax(model.logits(&Tensor::stack(&[x.clone()])?, aux_row.as_ref())?.data());
        for (c, name) in classes.iter().enumerate() {
            let map = gradcam(&mut model, &x, a, c)?;
            let path = dir.join(format!("{}_{name}.png", r.image_id));
            save_rgb(&path, &overlay(&img, &map, 0.45))?;
        }
        let top = lesionelev_core::model::argmax(&probs);
        info!("{}: predicted {} ({:.3})", r.image_id, classes[top], probs[top]);
    }
    Ok(())
}
