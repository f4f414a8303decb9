//! Training and evaluation loops with seeded determinism and checkpoint
//! persistence.
//!
//! All stochastic draws (shuffling, augmentation, dropout) derive from
//! (seed, epoch, item) streams, so a resumed run consumes exactly the same
//! randomness as an uninterrupted one.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{config_digest, resolve, DataSource, ExperimentConfig};
use crate::data::{augment, generate_phantom, read_manifest, Volume};
use crate::metrics::{accuracy, psnr, roc_auc, ssim, MetricsReport, SsimParams};
use crate::models::{build_model, train_step, Adam, Model};
use crate::seed;
use crate::{Error, Result};

const STREAM_SHUFFLE: u64 = 0x51;
const STREAM_AUGMENT: u64 = 0xA6;
const STREAM_DROPOUT: u64 = 0xD0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub report: MetricsReport,
}

/// One training run's recipe and outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub digest: String,
    /// Mean training loss per epoch (monotone epoch indices).
    pub train_loss: Vec<f32>,
    pub evals: Vec<EpochEval>,
    /// Wall time; the only field exempt from byte-for-byte determinism.
    pub wall_seconds: f64,
}

impl RunRecord {
    /// Best validation score: AUC for classifiers, PSNR for pure
    /// reconstruction.
    pub fn best_score(&self) -> Option<f64> {
        self.evals
            .iter()
            .filter_map(|e| {
                if self.config.model.architecture == crate::models::Architecture::Unet {
                    e.report.psnr_db
                } else {
                    e.report.auc
                }
            })
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Materialize the configured dataset. Phantom volumes are generated in
/// index order; manifest paths resolve relative to the manifest file.
pub fn load_dataset(source: &DataSource, base_dir: Option<&Path>) -> Result<Vec<Volume>> {
    match source {
        DataSource::Phantom { params, count } => {
            crate::par::map_indexed(*count, |i| generate_phantom(params, i as u64))
                .into_iter()
                .collect()
        }
        DataSource::Manifest { path } => {
            let manifest_path = resolve(base_dir, path);
            let entries = read_manifest(&manifest_path)?;
            let dir = manifest_path.parent().map(Path::to_path_buf);
            entries
                .iter()
                .map(|e| {
                    let p = resolve(dir.as_deref(), &e.path);
                    let mut v = Volume::from_npy(&p, e.label)?;
                    v.patient_id = e.patient_id.clone();
                    Ok(v)
                })
                .collect()
        }
    }
}

/// Run (or resume) a training experiment. Emits `checkpoint_final.ckpt`,
/// `checkpoint_best.ckpt` and `run.json` under the config's output dir.
pub fn train(config: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    train_until(config, resume, None)
}

/// As [`train`], optionally stopping after `stop_after` epochs (an interrupt
/// point, not a config change: the checkpoint digest stays that of the full
/// config, so the run can be resumed to completion).
pub fn train_until(
    config: &ExperimentConfig,
    resume: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<TrainOutcome> {
    config.validate(None)?;
    let started = Instant::now();
    let digest = config_digest(config);
    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir)?;

    let volumes = load_dataset(&config.data, None)?;
    let labels: Option<Vec<u8>> = volumes.iter().map(|v| v.label).collect();
    let (train_ids, val_ids) =
        crate::data::make_split(volumes.len(), config.train_fraction, config.seed, labels.as_deref())?;

    let (mut model, mut opt, start_epoch) = match resume {
        None => {
            let model = build_model(&config.model, config.seed)?;
            let opt = Adam::from_spec(&config.model, &model.params);
            (model, opt, 0)
        }
        Some(path) => {
            let loaded = load_checkpoint(path, Some(config))?;
            (loaded.model, loaded.optimizer, loaded.header.epoch)
        }
    };

    let epochs = config.resolved_epochs();
    let end_epoch = stop_after.map_or(epochs, |s| s.min(epochs));
    let aug_params = config.resolved_augment();
    let final_path = out_dir.join("checkpoint_final.ckpt");
    let best_path = out_dir.join("checkpoint_best.ckpt");

    let mut record = RunRecord {
        config: config.clone(),
        digest: digest.clone(),
        train_loss: Vec::new(),
        evals: Vec::new(),
        wall_seconds: 0.0,
    };
    let mut best_score = f64::NEG_INFINITY;

    if end_epoch <= start_epoch {
        // nothing to train: checkpoint equals the loaded/initial state
        save_checkpoint(&final_path, config, &model, &opt, start_epoch)?;
        save_checkpoint(&best_path, config, &model, &opt, start_epoch)?;
        record.wall_seconds = started.elapsed().as_secs_f64();
        write_record(&out_dir, &record)?;
        return Ok(TrainOutcome { record, final_checkpoint: final_path, best_checkpoint: best_path });
    }

    for epoch in start_epoch..end_epoch {
        let mut order = train_ids.clone();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(seed::mix2(config.seed, epoch as u64, STREAM_SHUFFLE));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        for (i, &vol_id) in order.iter().enumerate() {
            let aug_seed = seed::mix2(config.seed, epoch as u64, STREAM_AUGMENT ^ (vol_id as u64) << 8);
            let volume = augment(&volumes[vol_id], &aug_params, aug_seed)?;
            let mut step_rng = ChaCha8Rng::seed_from_u64(seed::mix2(
                config.seed,
                epoch as u64,
                STREAM_DROPOUT ^ (i as u64) << 8,
            ));
            let step_index = epoch * order.len() + i;
            let loss =
                train_step(&mut model, &volume, &mut opt, &config.loss, &mut step_rng, step_index)?;
            loss_sum += loss as f64;
        }
        record.train_loss.push((loss_sum / order.len() as f64) as f32);

        if (epoch + 1) % config.eval_every == 0 || epoch + 1 == end_epoch {
            let val: Vec<&Volume> = val_ids.iter().map(|&i| &volumes[i]).collect();
            let report = evaluate_volumes(&model, &val)?;
            let score = if model.spec.architecture == crate::models::Architecture::Unet {
                report.psnr_db
            } else {
                report.auc
            };
            record.evals.push(EpochEval { epoch: epoch + 1, report });
            if let Some(s) = score {
                if s > best_score {
                    best_score = s;
                    save_checkpoint(&best_path, config, &model, &opt, epoch + 1)?;
                }
            }
        }
    }

    save_checkpoint(&final_path, config, &model, &opt, end_epoch)?;
    if !best_path.exists() {
        save_checkpoint(&best_path, config, &model, &opt, end_epoch)?;
    }
    record.wall_seconds = started.elapsed().as_secs_f64();
    write_record(&out_dir, &record)?;
    Ok(TrainOutcome { record, final_checkpoint: final_path, best_checkpoint: best_path })
}

fn write_record(out_dir: &Path, record: &RunRecord) -> Result<()> {
    let json = serde_json::to_string_pretty(record)?;
    std::fs::write(out_dir.join("run.json"), json)?;
    Ok(())
}

/// Evaluate a model on a set of volumes, mirroring the Table-2 row shape:
/// classification columns for classifiers, PSNR/SSIM for reconstruction,
/// all four for the hybrid.
pub fn evaluate_volumes(model: &Model, volumes: &[&Volume]) -> Result<MetricsReport> {
    if volumes.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one volume".into()));
    }
    let mut report = MetricsReport::empty();
    report.n_samples = volumes.len();

    if model.is_classifier() {
        let mut scores = Vec::with_capacity(volumes.len());
        let mut labels = Vec::with_capacity(volumes.len());
        for v in volumes {
            let label = v.label.ok_or_else(|| {
                Error::InvalidArgument(format!("volume {} has no label", v.patient_id))
            })?;
            scores.push(model.classify_volume(v)? as f64);
            labels.push(label);
        }
        report.accuracy = Some(accuracy(&scores, &labels, 0.5));
        match roc_auc(&scores, &labels) {
            Ok(auc) => report.auc = Some(auc),
            Err(Error::SingleClass) => {
                eprintln!("warning: single-class validation set, AUC omitted");
            }
            Err(e) => return Err(e),
        }
    }

    if model.has_reconstruction() {
        // volume loop stays sequential (the model is a single-worker
        // instance); the kernels underneath parallelize per slice
        let ssim_params = SsimParams::default();
        let mut db_total = 0.0f64;
        let mut ssim_total = 0.0f64;
        for v in volumes {
            let mut db_acc = 0.0f64;
            let mut ssim_acc = 0.0f64;
            for k in 0..v.slices() {
                let slice = v.slice_tensor(k);
                let recon = model.reconstruct(&slice)?;
                db_acc += psnr(&slice, &recon, 1.0)?;
                ssim_acc += ssim(&slice, &recon, &ssim_params)?;
            }
            db_total += db_acc / v.slices() as f64;
            ssim_total += ssim_acc / v.slices() as f64;
        }
        report.psnr_db = Some(db_total / volumes.len() as f64);
        report.ssim = Some(ssim_total / volumes.len() as f64);
    }
    Ok(report)
}
