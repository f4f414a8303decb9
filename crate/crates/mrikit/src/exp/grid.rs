//! Deterministic grid search over hyperparameter axes.
//!
//! The Cartesian product is enumerated with the first axis slowest. Each
//! cell runs with a private seed derived from (base seed, cell index), so
//! results do not depend on scheduling. Individual run failures are
//! recorded and the search continues.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::config::{config_digest, ExperimentConfig};
use super::train::{train, RunRecord};
use crate::models::{Activation, SlicePool, Upsampling};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchAxis {
    pub param: String,
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub axes: Vec<SearchAxis>,
}

impl SearchSpace {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let space: SearchSpace = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if space.axes.is_empty() || space.axes.iter().any(|a| a.values.is_empty()) {
            return Err(Error::Config("search space axes must be nonempty".into()));
        }
        Ok(space)
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }
}

fn apply_axis(config: &mut ExperimentConfig, param: &str, value: &serde_json::Value) -> Result<()> {
    let bad = || Error::Config(format!("bad value {value} for axis {param}"));
    let as_f64 = || value.as_f64().ok_or_else(bad);
    let as_usize = || value.as_u64().map(|v| v as usize).ok_or_else(bad);
    match param {
        "learning_rate" => config.model.learning_rate = as_f64()?,
        "dropout_ratio" => config.model.dropout_ratio = as_f64()? as f32,
        "reg_coeff" => config.model.reg_coeff = as_f64()?,
        "epochs" => {
            config.model.epochs = as_usize()?;
            config.epochs = None;
        }
        "transformer_depth" => config.model.transformer_depth = as_usize()?,
        "transformer_heads" => config.model.transformer_heads = as_usize()?,
        "upsampling" => {
            config.model.upsampling =
                serde_json::from_value::<Upsampling>(value.clone()).map_err(|_| bad())?
        }
        "activation" => {
            config.model.activation =
                serde_json::from_value::<Activation>(value.clone()).map_err(|_| bad())?
        }
        "slice_pool" => {
            config.model.slice_pool =
                serde_json::from_value::<SlicePool>(value.clone()).map_err(|_| bad())?
        }
        "base_channels" => {
            config.model.base_channels =
                serde_json::from_value::<Vec<usize>>(value.clone()).map_err(|_| bad())?
        }
        "lambda_recon" => config.loss.lambda_recon = as_f64()? as f32,
        other => return Err(Error::Config(format!("unknown search axis {other:?}"))),
    }
    Ok(())
}

/// Enumerate the Cartesian product as concrete configs (first axis slowest),
/// truncated to `budget` cells when given. Each cell gets a derived seed and
/// its own output subdirectory.
pub fn enumerate_cells(
    base: &ExperimentConfig,
    space: &SearchSpace,
    budget: Option<usize>,
) -> Result<Vec<ExperimentConfig>> {
    let total = space.cell_count();
    if total == 0 {
        return Err(Error::Config("empty search space".into()));
    }
    let limit = budget.unwrap_or(total).min(total);
    if limit == 0 {
        return Err(Error::Config("budget must allow at least one run".into()));
    }
    let mut cells = Vec::with_capacity(limit);
    for cell in 0..limit {
        let mut cfg = base.clone();
        let mut rest = cell;
        for axis in space.axes.iter().rev() {
            let idx = rest % axis.values.len();
            rest /= axis.values.len();
            apply_axis(&mut cfg, &axis.param, &axis.values[idx])?;
        }
        cfg.seed = seed::mix(base.seed, cell as u64);
        cfg.output_dir = format!("{}/cell_{:03}", base.output_dir, cell);
        cfg.model.validate()?;
        cells.push(cfg);
    }
    Ok(cells)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub cell: usize,
    pub digest: String,
    /// Best validation AUC (classification) or PSNR (reconstruction).
    pub score: Option<f64>,
    pub record: RunRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub leaderboard: Vec<LeaderboardEntry>,
    /// (cell index, error message) for runs that failed.
    pub failures: Vec<(usize, String)>,
}

/// Run every cell (in parallel with the `parallel` feature) and sort the
/// leaderboard by score, ties broken by lower config digest.
pub fn run_grid(
    base: &ExperimentConfig,
    space: &SearchSpace,
    budget: Option<usize>,
) -> Result<GridOutcome> {
    let cells = enumerate_cells(base, space, budget)?;
    let results: Vec<(usize, std::result::Result<RunRecord, String>)> =
        crate::par::map_indexed(cells.len(), |i| {
            let outcome = train(&cells[i], None);
            (i, outcome.map(|o| o.record).map_err(|e| e.to_string()))
        });

    let mut leaderboard = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in results {
        match result {
            Ok(record) => leaderboard.push(LeaderboardEntry {
                cell,
                digest: config_digest(&record.config),
                score: record.best_score(),
                record,
            }),
            Err(message) => failures.push((cell, message)),
        }
    }
    leaderboard.sort_by(|a, b| {
        let sa = a.score.unwrap_or(f64::NEG_INFINITY);
        let sb = b.score.unwrap_or(f64::NEG_INFINITY);
        sb.partial_cmp(&sa).unwrap().then_with(|| a.digest.cmp(&b.digest))
    });
    Ok(GridOutcome { leaderboard, failures })
}
