//! `mrikit` CLI: train, evaluate, gridsearch, attribute, report, phantoms.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.
//! `MRIKIT_OUT_ROOT` prefixes relative output directories.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mrikit::attribution::{attribute, render_overlay, Method, Target};
use mrikit::data::{
    generate_phantom, write_manifest, write_npy, ManifestEntry, NpyArray, NpyData, PhantomParams,
    Volume,
};
use mrikit::exp::{
    load_checkpoint, load_dataset, run_grid, write_overlay_grid, write_report, DataSource,
    ExperimentConfig, SearchSpace,
};

#[derive(Parser)]
#[command(name = "mrikit", version, about = "Volume classification, reconstruction and attribution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Resume from a checkpoint written by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset (manifest CSV or data-source JSON).
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a hyperparameter grid search.
    Gridsearch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        space: PathBuf,
        /// Maximum concurrent cells (defaults to the core count).
        #[arg(long)]
        jobs: Option<usize>,
        /// Cap on the number of cells to run.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Render attribution overlays and raw maps for one volume.
    Attribute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// class_logit, recon_loss or latent_energy (defaults per model).
        #[arg(long)]
        target: Option<String>,
        /// Tap layer (defaults per architecture).
        #[arg(long)]
        tap: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Consolidate run records into a markdown table (and, with --volume
    /// and --checkpoint, an overlay comparison grid).
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        volume: Option<PathBuf>,
        /// Checkpoints for the overlay grid, repeatable.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Generate phantom volumes with masks and a manifest.
    Phantoms {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_root() -> Option<PathBuf> {
    std::env::var_os("MRIKIT_OUT_ROOT").map(PathBuf::from)
}

/// Prefix relative paths with MRIKIT_OUT_ROOT when set.
fn rooted(path: &Path) -> PathBuf {
    match out_root() {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.output_dir = rooted(Path::new(&cfg.output_dir)).to_string_lossy().into_owned();
            let outcome = mrikit::exp::train(&cfg, resume.as_deref())?;
            let last = outcome.record.evals.last();
            println!(
                "trained {} epochs; final checkpoint {}",
                outcome.record.train_loss.len(),
                outcome.final_checkpoint.display()
            );
            if let Some(eval) = last {
                println!("last eval: {}", serde_json::to_string(&eval.report)?);
            }
        }
        Command::Evaluate { checkpoint, data } => {
            let loaded = load_checkpoint(&checkpoint, None)?;
            let volumes = load_volumes_arg(&data)?;
            let refs: Vec<&Volume> = volumes.iter().collect();
            let report = mrikit::exp::evaluate_volumes(&loaded.model, &refs)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Gridsearch { config, space, jobs, budget } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.output_dir = rooted(Path::new(&cfg.output_dir)).to_string_lossy().into_owned();
            let space = SearchSpace::load(&space)?;
            let outcome = with_jobs(jobs, || run_grid(&cfg, &space, budget))?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let path = Path::new(&cfg.output_dir).join("leaderboard.json");
            std::fs::write(&path, serde_json::to_string_pretty(&outcome)?)?;
            println!("ran {} cells ({} failed); leaderboard at {}",
                outcome.leaderboard.len() + outcome.failures.len(),
                outcome.failures.len(),
                path.display());
            for entry in outcome.leaderboard.iter().take(5) {
                println!(
                    "cell {:03} score {} ({})",
                    entry.cell,
                    entry.score.map_or("--".into(), |s| format!("{s:.4}")),
                    entry.record.config.model.architecture.name()
                );
            }
        }
        Command::Attribute { checkpoint, volume, method, out, target, tap, seed } => {
            let loaded = load_checkpoint(&checkpoint, None)?;
            let vol = Volume::from_npy(&volume, None)?;
            let method = Method::parse(&method)?;
            let target = match target {
                Some(t) => Target::parse(&t)?,
                None => Target::default_for(&loaded.model),
            };
            let out = rooted(&out);
            std::fs::create_dir_all(&out)?;
            let map = attribute(&loaded.model, &vol, method, target, seed, tap.as_deref())?;
            let mut index = Vec::new();
            for (k, slice_map) in map.per_slice.iter().enumerate() {
                let overlay = render_overlay(slice_map, &vol.slice_tensor(k))?;
                let overlay_name = format!("slice_{k:03}.png");
                overlay.save(out.join(&overlay_name))?;
                let map_name = format!("map_{k:03}.npy");
                write_npy(
                    &out.join(&map_name),
                    &NpyArray {
                        shape: slice_map.shape().to_vec(),
                        data: NpyData::F32(slice_map.data().to_vec()),
                    },
                )?;
                index.push(serde_json::json!({
                    "slice": k,
                    "overlay": overlay_name,
                    "map": map_name,
                }));
            }
            let index_doc = serde_json::json!({
                "method": method.name(),
                "value_range": [map.value_range.0, map.value_range.1],
                "slices": index,
            });
            std::fs::write(out.join("index.json"), serde_json::to_string_pretty(&index_doc)?)?;
            println!("wrote {} slices to {}", map.per_slice.len(), out.display());
        }
        Command::Report { runs, out, volume, checkpoints } => {
            let out = rooted(&out);
            let path = write_report(&runs, &out)?;
            println!("wrote {}", path.display());
            if let Some(vol_path) = volume {
                if checkpoints.is_empty() {
                    bail!("--volume needs at least one --checkpoint for the overlay grid");
                }
                let vol = Volume::from_npy(&vol_path, None)?;
                let grid_path = out.join("comparison.png");
                write_overlay_grid(&checkpoints, &vol, &grid_path)?;
                println!("wrote {}", grid_path.display());
            }
        }
        Command::Phantoms { params, count, out } => {
            let text = std::fs::read_to_string(&params)
                .with_context(|| format!("reading {}", params.display()))?;
            let params: PhantomParams = serde_json::from_str(&text)?;
            params.validate()?;
            let out = rooted(&out);
            std::fs::create_dir_all(&out)?;
            let mut entries = Vec::with_capacity(count);
            for i in 0..count {
                let vol = generate_phantom(&params, i as u64)?;
                let name = format!("{}.npy", vol.patient_id);
                vol.to_npy(&out.join(&name))?;
                entries.push(ManifestEntry {
                    patient_id: vol.patient_id.clone(),
                    path: name,
                    label: vol.label,
                });
            }
            write_manifest(&out.join("manifest.csv"), &entries)?;
            println!("wrote {count} phantoms to {}", out.display());
        }
    }
    Ok(())
}

/// `--data` accepts a manifest CSV or a data-source JSON.
fn load_volumes_arg(path: &Path) -> Result<Vec<Volume>> {
    let source = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<DataSource>(&text)?
        }
        _ => DataSource::Manifest { path: path.to_string_lossy().into_owned() },
    };
    Ok(load_dataset(&source, path.parent())?)
}

#[cfg(feature = "parallel")]
fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    match jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_jobs<T>(_jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    f()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version are not usage errors
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
