use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use super::{Evaluation, MetricReport, ProbabilityMap};
use crate::network::FilterKind;
use crate::{Error, Result};

fn save_gray8(path: &Path, w: usize, h: usize, bytes: Vec<u8>) -> Result<()> {
    GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer size")
        .save(path)
        .map_err(|e| Error::image(path, e))
}

/// 16-bit grayscale PNG with value `round(p * 65535)`.
pub fn write_probability_png(path: &Path, map: &ProbabilityMap) -> Result<()> {
    let data: Vec<u16> = map
        .probs
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, data).expect("buffer size");
    img.save(path).map_err(|e| Error::image(path, e))
}

/// Reads a probability PNG written by [`write_probability_png`].
pub fn read_probability_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma16();
    let probs = img.pixels().map(|p| p[0] as f32 / 65535.0).collect();
    Ok((img.height() as usize, img.width() as usize, probs))
}

/// 8-bit PNG, 255 for vessel and 0 elsewhere.
pub fn write_binary_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    save_gray8(path, width, height, mask.iter().map(|&m| if m { 255 } else { 0 }).collect())
}

/// Min-max normalized 8-bit PNG; returns the `(min, max)` used.
pub fn write_activation_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<(f32, f32)> {
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if max > min { max - min } else { 1.0 };
    let bytes = values
        .iter()
        .map(|&v| (((v - min) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    save_gray8(path, width, height, bytes)?;
    Ok((min, max))
}

/// Writes `{id}_branch_{kind}.png` for each branch plus a
/// `{id}_branch_bounds.txt` sidecar listing `kind min max` per line.
/// Returns the written paths, PNGs first.
pub fn write_branch_maps(
    dir: &Path,
    id: &str,
    width: usize,
    height: usize,
    branches: &[Vec<f32>; 3],
) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    let mut sidecar = String::from("# branch min max (pre-normalization)\n");
    for (kind, values) in FilterKind::ALL.iter().zip(branches) {
        let path = dir.join(format!("{id}_branch_{}.png", kind.tag()));
        let (min, max) = write_activation_png(&path, width, height, values)?;
        writeln!(sidecar, "{} {min:e} {max:e}", kind.tag()).expect("string write");
        paths.push(path);
    }
    let bounds = dir.join(format!("{id}_branch_bounds.txt"));
    fs::write(&bounds, sidecar).map_err(|e| Error::io(&bounds, e))?;
    paths.push(bounds);
    Ok(paths)
}

/// Parses a bounds sidecar into `(kind, min, max)` rows.
pub fn read_branch_bounds(path: &Path) -> Result<Vec<(String, f32, f32)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let bad = || Error::Dataset(format!("{}: malformed line {l:?}", path.display()));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok((f[0].to_string(), f[1].parse().map_err(|_| bad())?, f[2].parse().map_err(|_| bad())?))
        })
        .collect()
}

pub const METRICS_HEADER: &str = "id,auc,acc,sens,spec,gmean";

fn csv_row(id: &str, r: Option<&MetricReport>) -> String {
    match r {
        Some(r) => {
            let auc = r.auc.map_or_else(|| "NA".to_string(), |a| a.to_string());
            format!("{id},{auc},{},{},{},{}", r.accuracy, r.sensitivity, r.specificity, r.g_mean)
        }
        None => format!("{id},NA,NA,NA,NA,NA"),
    }
}

/// Per-image rows followed by a `pooled` row, full precision.
pub fn metrics_csv(eval: &Evaluation) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for img in &eval.per_image {
        out.push_str(&csv_row(&img.id, img.report.as_ref()));
        out.push('\n');
    }
    out.push_str(&csv_row("pooled", Some(&eval.pooled)));
    out.push('\n');
    out
}

/// Aligned summary table at two decimals.
pub fn metrics_table(label: &str, r: &MetricReport) -> String {
    let cols = ["AUC", "Accuracy", "Sensitivity", "Specificity", "G-mean"];
    let vals = [r.auc.unwrap_or(f64::NAN), r.accuracy, r.sensitivity, r.specificity, r.g_mean];
    let lw = label.len().max("Method".len());
    let mut head = format!("{:<lw$}", "Method");
    let mut row = format!("{label:<lw$}");
    for (c, v) in cols.iter().zip(vals) {
        let w = c.len().max(4);
        write!(head, "  {c:>w$}").expect("string write");
        write!(row, "  {:>w$}", format!("{v:.2}")).expect("string write");
    }
    format!("{head}\n{row}\n")
}
