//! Single-file checkpoints: a JSON header line followed by raw little-endian
//! f32 blobs in header order (parameters, Adam first moments, Adam second
//! moments, then batch-norm running mean/var pairs).

use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::config::{config_digest, ExperimentConfig};
use crate::models::{build_model, Adam, Model};
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema: u32,
    pub config: ExperimentConfig,
    pub config_digest: String,
    /// Epochs completed when this checkpoint was written.
    pub epoch: usize,
    pub seed: u64,
    pub params: Vec<BlobInfo>,
    pub adam_step: u64,
    pub norms: Vec<NormInfo>,
}

pub struct LoadedCheckpoint {
    pub header: CheckpointHeader,
    pub model: Model,
    pub optimizer: Adam,
}

pub fn save_checkpoint(
    path: &Path,
    config: &ExperimentConfig,
    model: &Model,
    optimizer: &Adam,
    epoch: usize,
) -> Result<()> {
    let params: Vec<BlobInfo> = model
        .params
        .iter()
        .map(|(name, t)| BlobInfo { name: name.to_string(), shape: t.shape().to_vec() })
        .collect();
    let norm_states = model.norm_states();
    let header = CheckpointHeader {
        schema: CHECKPOINT_SCHEMA,
        config: config.clone(),
        config_digest: config_digest(config),
        epoch,
        seed: config.seed,
        params,
        adam_step: optimizer.step_count(),
        norms: norm_states
            .iter()
            .map(|(name, mean, _)| NormInfo { name: name.clone(), len: mean.len() })
            .collect(),
    };

    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;

    let write_blob = |w: &mut BufWriter<std::fs::File>, data: &[f32]| -> Result<()> {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };

    for i in 0..model.params.len() {
        write_blob(&mut w, model.params.get(i).data())?;
    }
    let (_, m, v) = optimizer.state();
    for blob in m {
        write_blob(&mut w, blob)?;
    }
    for blob in v {
        write_blob(&mut w, blob)?;
    }
    for (_, mean, var) in &norm_states {
        write_blob(&mut w, mean)?;
        write_blob(&mut w, var)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint, rebuilding the model from the embedded config.
///
/// When `expected_config` is given, its digest must match the stored one.
pub fn load_checkpoint(path: &Path, expected_config: Option<&ExperimentConfig>) -> Result<LoadedCheckpoint> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadCheckpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::BadCheckpoint(format!("header: {e}")))?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(Error::BadCheckpoint(format!("schema {}", header.schema)));
    }
    if let Some(cfg) = expected_config {
        let expected = config_digest(cfg);
        if expected != header.config_digest {
            return Err(Error::DigestMismatch {
                found: header.config_digest.clone(),
                expected,
            });
        }
    }

    let mut model = build_model(&header.config.model, header.seed)?;
    let mut offset = newline + 1;
    let mut read_blob = |len: usize| -> Result<Vec<f32>> {
        let bytes_needed = len * 4;
        if offset + bytes_needed > bytes.len() {
            return Err(Error::BadCheckpoint("truncated blob section".into()));
        }
        let out = bytes[offset..offset + bytes_needed]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += bytes_needed;
        Ok(out)
    };

    if header.params.len() != model.params.len() {
        return Err(Error::BadCheckpoint("parameter layout mismatch".into()));
    }
    for (i, info) in header.params.iter().enumerate() {
        if model.params.name(i) != info.name || model.params.get(i).shape() != &info.shape[..] {
            return Err(Error::BadCheckpoint(format!(
                "parameter {} ({:?}) vs stored {} ({:?})",
                model.params.name(i),
                model.params.get(i).shape(),
                info.name,
                info.shape
            )));
        }
        let blob = read_blob(model.params.get(i).numel())?;
        model.params.get_mut(i).data_mut().copy_from_slice(&blob);
    }

    let mut optimizer = Adam::from_spec(&header.config.model, &model.params);
    let mut m = Vec::with_capacity(model.params.len());
    for i in 0..model.params.len() {
        m.push(read_blob(model.params.get(i).numel())?);
    }
    let mut v = Vec::with_capacity(model.params.len());
    for i in 0..model.params.len() {
        v.push(read_blob(model.params.get(i).numel())?);
    }
    optimizer.restore(header.adam_step, m, v);

    let mut norm_states = Vec::with_capacity(header.norms.len());
    for info in &header.norms {
        let mean = read_blob(info.len)?;
        let var = read_blob(info.len)?;
        norm_states.push((info.name.clone(), mean, var));
    }
    model.set_norm_states(&norm_states)?;

    if offset != bytes.len() {
        return Err(Error::BadCheckpoint(format!(
            "{} trailing bytes after blobs",
            bytes.len() - offset
        )));
    }
    Ok(LoadedCheckpoint { header, model, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PhantomParams;
    use crate::exp::DataSource;
    use crate::models::{Architecture, LossConfig, ModelSpec};

    fn config() -> ExperimentConfig {
        ExperimentConfig {
            schema: 1,
            model: ModelSpec::default_for(Architecture::ResnetTiny),
            loss: LossConfig::default(),
            data: DataSource::Phantom { params: PhantomParams::default(), count: 4 },
            augment: None,
            train_fraction: 0.8,
            epochs: Some(1),
            seed: 3,
            eval_every: 1,
            output_dir: "out".into(),
        }
    }

    #[test]
    fn checkpoint_roundtrip_restores_everything_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = config();
        let model = build_model(&cfg.model, cfg.seed).unwrap();
        let opt = Adam::from_spec(&cfg.model, &model.params);
        save_checkpoint(&path, &cfg, &model, &opt, 0).unwrap();

        let loaded = load_checkpoint(&path, Some(&cfg)).unwrap();
        assert_eq!(loaded.header.epoch, 0);
        for i in 0..model.params.len() {
            assert_eq!(model.params.get(i).data(), loaded.model.params.get(i).data());
        }
        assert_eq!(model.norm_states(), loaded.model.norm_states());

        // identical save bytes
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &cfg, &loaded.model, &loaded.optimizer, 0).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn digest_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = config();
        let model = build_model(&cfg.model, cfg.seed).unwrap();
        let opt = Adam::from_spec(&cfg.model, &model.params);
        save_checkpoint(&path, &cfg, &model, &opt, 0).unwrap();

        let mut other = config();
        other.seed = 99;
        assert!(matches!(
            load_checkpoint(&path, Some(&other)),
            Err(Error::DigestMismatch { .. })
        ));
    }
}
