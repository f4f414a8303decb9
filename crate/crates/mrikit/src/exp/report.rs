//! Report generation: a consolidated results table and a side-by-side
//! attribution overlay grid.

use std::path::{Path, PathBuf};

use super::checkpoint::load_checkpoint;
use super::train::RunRecord;
use crate::attribution::{gradcam, render_overlay, Target};
use crate::data::Volume;
use crate::models::Architecture;
use crate::{Error, Result};

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        None => "--".into(),
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.decimals$}"),
    }
}

fn arch_order(a: Architecture) -> usize {
    match a {
        Architecture::ResnetTiny => 0,
        Architecture::InceptionTiny => 1,
        Architecture::VitTwoStage => 2,
        Architecture::Unet => 3,
        Architecture::UnetMlp => 4,
    }
}

/// Markdown table with columns Model | AUC | Accuracy | PSNR | SSIM;
/// inapplicable cells render as "--". Rows sort by architecture, then by
/// config digest.
pub fn render_table(records: &[RunRecord]) -> String {
    let mut rows: Vec<&RunRecord> = records.iter().collect();
    rows.sort_by(|a, b| {
        arch_order(a.config.model.architecture)
            .cmp(&arch_order(b.config.model.architecture))
            .then_with(|| a.digest.cmp(&b.digest))
    });

    let mut out = String::from("| Model | AUC | Accuracy | PSNR | SSIM |\n");
    out.push_str("|---|---|---|---|---|\n");
    for r in rows {
        let last = r.evals.last();
        let (auc, acc, psnr, ssim) = match last {
            None => (None, None, None, None),
            Some(e) => (e.report.auc, e.report.accuracy, e.report.psnr_db, e.report.ssim),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.config.model.architecture.name(),
            fmt_opt(auc, 4),
            fmt_opt(acc, 4),
            fmt_opt(psnr, 1),
            fmt_opt(ssim, 5),
        ));
    }
    out
}

/// Collect `run.json` records under a directory (recursively).
pub fn collect_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    collect_into(dir, &mut records)?;
    Ok(records)
}

fn collect_into(dir: &Path, records: &mut Vec<RunRecord>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_into(&path, records)?;
        } else if path.file_name().is_some_and(|n| n == "run.json") {
            let text = std::fs::read_to_string(&path)?;
            records.push(serde_json::from_str(&text)?);
        }
    }
    Ok(())
}

/// Write `report.md` from the records found under `runs_dir`.
pub fn write_report(runs_dir: &Path, out_dir: &Path) -> Result<PathBuf> {
    let records = collect_records(runs_dir)?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no run.json records under {}",
            runs_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("report.md");
    std::fs::write(&path, render_table(&records))?;
    Ok(path)
}

/// Side-by-side comparison: one row per checkpointed model, one column per
/// slice, each cell the model's default-tap Grad-CAM overlay.
pub fn write_overlay_grid(
    checkpoints: &[PathBuf],
    volume: &Volume,
    out_path: &Path,
) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints for the overlay grid".into()));
    }
    let (h, w) = volume.hw();
    let s = volume.slices();
    let pad = 2u32;
    let grid_w = s as u32 * (w as u32 + pad) - pad;
    let grid_h = checkpoints.len() as u32 * (h as u32 + pad) - pad;
    let mut grid = image::RgbImage::from_pixel(grid_w, grid_h, image::Rgb([0, 0, 0]));

    for (row, ckpt) in checkpoints.iter().enumerate() {
        let loaded = load_checkpoint(ckpt, None)?;
        let target = Target::default_for(&loaded.model);
        let map = gradcam(&loaded.model, volume, target, None)?;
        for (col, slice_map) in map.per_slice.iter().enumerate() {
            let slice_img = volume.slice_tensor(col);
            let overlay = render_overlay(slice_map, &slice_img)?;
            let ox = col as u32 * (w as u32 + pad);
            let oy = row as u32 * (h as u32 + pad);
            for (x, y, px) in overlay.enumerate_pixels() {
                grid.put_pixel(ox + x, oy + y, *px);
            }
        }
    }
    grid.save(out_path)?;
    Ok(())
}
