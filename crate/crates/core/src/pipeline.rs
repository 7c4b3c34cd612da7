//! Audit stages over an output directory.
//!
//! ```text
//! <out>/manifest.jsonl
//! <out>/model.ckpt
//! <out>/loss_trace.csv
//! <out>/images/<sample_id>.png
//! <out>/predictions/<classifier>.jsonl
//! <out>/reports/<classifier>.audit.csv | .audit.md | .plotdata.csv
//! <out>/reports/comparison.csv | comparison.md
//! <out>/run_summary.json
//! ```
//!
//! Each stage reads what earlier stages wrote, so stages can be run one at
//! a time from the command line.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::adapters::{
    classify_batch, read_predictions, write_png, write_predictions, PredictionRecord,
};
use crate::cohort::{build_manifest_with_cap, validate_manifest, Manifest};
use crate::config::{hex, AuditConfig};
use crate::fairmetrics::{
    build_report, canonicalize, emit_comparison, emit_report, AuditReport, ReportFormat,
};
use crate::flowgen::{
    decode_checkpoint, encode_checkpoint, sample_batch, train, ConditionEmbedding,
    ConditionEncoder, TrainOutcome, VelocityModel,
};
use crate::lesionworld::{build_dataset, to_training_set, World};
use crate::{Error, Result, HARNESS_VERSION};

/// Rows sampled together; any value gives the same images.
pub const GENERATION_CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        OutputLayout { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn loss_trace(&self) -> PathBuf {
        self.root.join("loss_trace.csv")
    }
    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }
    pub fn image(&self, sample_id: &str) -> PathBuf {
        self.images().join(format!("{sample_id}.png"))
    }
    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions")
    }
    pub fn prediction_file(&self, classifier: &str) -> PathBuf {
        self.predictions().join(format!("{classifier}.jsonl"))
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("run_summary.json")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Rayon threads for training and generation; 0 uses the rayon default.
    pub workers: usize,
    /// Keep images that already exist instead of regenerating them.
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: 0,
            resume: false,
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Builds the manifest, embeds the config echo and writes it.
pub fn run_manifest(cfg: &AuditConfig) -> Result<Manifest> {
    stage(
        "manifest",
        (|| {
            let mut manifest = build_manifest_with_cap(&cfg.cohort, cfg.max_rows)?;
            manifest.config_echo = Some(cfg.canonical_echo());
            write_file(
                &OutputLayout::new(&cfg.output).manifest(),
                &manifest.to_bytes(),
            )?;
            Ok(manifest)
        })(),
    )
}

pub fn load_manifest(cfg: &AuditConfig) -> Result<Manifest> {
    let path = OutputLayout::new(&cfg.output).manifest();
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::read_from(BufReader::new(file))?;
    let violations = validate_manifest(&manifest);
    if let Some(v) = violations.first() {
        return Err(Error::Validation(format!(
            "{}: {v} ({} violations)",
            path.display(),
            violations.len()
        )));
    }
    if manifest.spec.vocabulary != cfg.cohort.vocabulary {
        return Err(Error::Compatibility(format!(
            "{} was built with a different vocabulary than the active config",
            path.display()
        )));
    }
    Ok(manifest)
}

/// Renders the ground-truth training set, trains the generator and writes
/// the checkpoint and loss trace.
pub fn run_train(cfg: &AuditConfig, opts: &RunOptions) -> Result<TrainOutcome> {
    stage(
        "train",
        (|| {
            let world = World::new(cfg.world.clone(), &cfg.cohort.vocabulary)?;
            let encoder = ConditionEncoder::new(&cfg.cohort.vocabulary)?;
            let started = Instant::now();
            let outcome = with_pool(opts.workers, || -> Result<TrainOutcome> {
                let data = to_training_set(&build_dataset(&world, &cfg.training_cohort())?);
                let model = VelocityModel::new(
                    world.pixel_count(),
                    encoder.dim(),
                    &cfg.hidden,
                    cfg.init_seed(),
                )?;
                train(model, &data, &encoder, &cfg.train)
            })??;
            log::info!(
                "trained {} steps in {:.1}s",
                cfg.train.train_steps,
                started.elapsed().as_secs_f64()
            );
            let layout = OutputLayout::new(&cfg.output);
            let bytes = encode_checkpoint(
                &outcome.model,
                &cfg.cohort.vocabulary,
                &cfg.canonical_echo(),
            );
            write_file(&layout.checkpoint(), &bytes)?;
            let mut trace = String::from("step,loss\n");
            for (i, l) in outcome.loss_trace.iter().enumerate() {
                trace.push_str(&format!("{i},{l}\n"));
            }
            write_file(&layout.loss_trace(), trace.as_bytes())?;
            Ok(outcome)
        })(),
    )
}

pub fn load_model(cfg: &AuditConfig) -> Result<VelocityModel> {
    let path = OutputLayout::new(&cfg.output).checkpoint();
    let (model, header) = decode_checkpoint(&read_file(&path)?, &cfg.cohort.vocabulary)?;
    let side = cfg.world.image_side;
    if header.sample_dim != side * side {
        return Err(Error::Compatibility(format!(
            "checkpoint generates {} pixels, world images have {}",
            header.sample_dim,
            side * side
        )));
    }
    Ok(model)
}

/// Samples one image per manifest row and writes it as PNG. Returns the
/// number of images written.
pub fn run_generate(cfg: &AuditConfig, opts: &RunOptions) -> Result<usize> {
    stage(
        "generate",
        (|| {
            let manifest = load_manifest(cfg)?;
            let model = load_model(cfg)?;
            let encoder = ConditionEncoder::new(manifest.vocabulary())?;
            let layout = OutputLayout::new(&cfg.output);
            let dir = layout.images();
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let todo: Vec<_> = manifest
                .rows
                .iter()
                .filter(|r| !(opts.resume && layout.image(&r.sample_id).is_file()))
                .collect();
            let null = encoder.null();
            let side = cfg.world.image_side;
            let sampler = cfg.sampler;
            let started = Instant::now();
            with_pool(opts.workers, || {
                todo.par_chunks(GENERATION_CHUNK)
                    .try_for_each(|chunk| -> Result<()> {
                        let conds = chunk
                            .iter()
                            .map(|r| encoder.embed(Some(&r.profile)))
                            .collect::<Result<Vec<ConditionEmbedding>>>()?;
                        let refs: Vec<&ConditionEmbedding> = conds.iter().collect();
                        let seeds: Vec<u64> = chunk.iter().map(|r| r.derived_seed).collect();
                        let x = sample_batch(&model, &refs, &seeds, &null, &sampler)?;
                        for (i, row) in chunk.iter().enumerate() {
                            write_png(&layout.image(&row.sample_id), x.row(i), side)?;
                        }
                        Ok(())
                    })
            })??;
            log::info!(
                "generated {} images in {:.1}s ({} kept)",
                todo.len(),
                started.elapsed().as_secs_f64(),
                manifest.rows.len() - todo.len()
            );
            Ok(todo.len())
        })(),
    )
}

/// Runs every configured classifier over the generated images.
pub fn run_evaluate(cfg: &AuditConfig) -> Result<Vec<(String, Vec<PredictionRecord>)>> {
    stage(
        "evaluate",
        (|| {
            let manifest = load_manifest(cfg)?;
            let layout = OutputLayout::new(&cfg.output);
            let root = std::path::absolute(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
            let abs = OutputLayout::new(root);
            let images: Vec<PathBuf> = manifest
                .rows
                .iter()
                .map(|r| abs.image(&r.sample_id))
                .collect();
            let mut out = Vec::new();
            for handle in cfg.classifier_handles()? {
                let records =
                    classify_batch(&handle, manifest.vocabulary(), &manifest.rows, &images)
                        .map_err(|source| Error::Adapter {
                            classifier: handle.name.clone(),
                            source,
                        })?;
                let mut buf = Vec::new();
                write_predictions(
                    &mut buf,
                    &handle.name,
                    &manifest.vocabulary().hash_hex(),
                    &records,
                )
                .map_err(|e| Error::io(layout.prediction_file(&handle.name), e))?;
                write_file(&layout.prediction_file(&handle.name), &buf)?;
                log::info!("{}: {} predictions", handle.name, records.len());
                out.push((handle.name, records));
            }
            Ok(out)
        })(),
    )
}

/// Builds and writes the per-classifier reports and the comparison table.
pub fn run_report(cfg: &AuditConfig) -> Result<Vec<AuditReport>> {
    stage(
        "report",
        (|| {
            let manifest = load_manifest(cfg)?;
            let layout = OutputLayout::new(&cfg.output);
            let mut reports = Vec::new();
            for name in cfg.classifiers.keys() {
                let path = layout.prediction_file(name);
                let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                let (recorded, hash, records) = read_predictions(BufReader::new(file))?;
                if recorded != *name || hash != manifest.vocabulary().hash_hex() {
                    return Err(Error::Compatibility(format!(
                        "{} belongs to classifier `{recorded}` with vocabulary {hash}",
                        path.display()
                    )));
                }
                let report = build_report(name, &manifest, &records)?;
                let dir = layout.reports();
                for (suffix, format) in [
                    ("audit.csv", ReportFormat::Csv),
                    ("audit.md", ReportFormat::Markdown),
                    ("plotdata.csv", ReportFormat::PlotData),
                ] {
                    write_file(
                        &dir.join(format!("{name}.{suffix}")),
                        &emit_report(&report, format)?,
                    )?;
                }
                reports.push(report);
            }
            if !reports.is_empty() {
                let dir = layout.reports();
                write_file(
                    &dir.join("comparison.csv"),
                    &emit_comparison(&reports, ReportFormat::Csv)?,
                )?;
                write_file(
                    &dir.join("comparison.md"),
                    &emit_comparison(&reports, ReportFormat::Markdown)?,
                )?;
            }
            Ok(reports)
        })(),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub harness_version: String,
    pub config_hash: String,
    pub rows: usize,
    /// (relative path, sha256) in path order; reports are hashed after
    /// [`canonicalize`].
    pub artifacts: Vec<(String, String)>,
}

/// train, manifest, generate, evaluate, report; then writes `run_summary.json`.
pub fn run_audit(cfg: &AuditConfig, opts: &RunOptions) -> Result<(Vec<AuditReport>, RunSummary)> {
    run_train(cfg, opts)?;
    let manifest = run_manifest(cfg)?;
    run_generate(cfg, opts)?;
    run_evaluate(cfg)?;
    let reports = run_report(cfg)?;
    let summary = summarize(cfg, manifest.rows.len())?;
    let mut json = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Input(e.to_string()))?;
    json.push(b'\n');
    write_file(&OutputLayout::new(&cfg.output).summary(), &json)?;
    Ok((reports, summary))
}

/// Hashes every artifact under the output directory except the summary itself.
pub fn summarize(cfg: &AuditConfig, rows: usize) -> Result<RunSummary> {
    let layout = OutputLayout::new(&cfg.output);
    let mut files = Vec::new();
    collect_files(&layout.root, &mut files)?;
    files.sort();
    let mut artifacts = Vec::new();
    for path in files {
        if path == layout.summary() {
            continue;
        }
        let rel = path
            .strip_prefix(&layout.root)
            .expect("collected under root")
            .to_string_lossy()
            .replace('\\', "/");
        let mut bytes = read_file(&path)?;
        if rel.starts_with("reports/") {
            bytes = canonicalize(&bytes);
        }
        artifacts.push((rel, hex(&Sha256::digest(&bytes))));
    }
    Ok(RunSummary {
        harness_version: HARNESS_VERSION.to_string(),
        config_hash: cfg.config_hash(),
        rows,
        artifacts,
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
