//! Comparison tables and PGM figures regenerated from a finished run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2, Axis};
use serde_json::Value;

use super::config::{PipelineConfig, ReconMethod};
use super::run::{max_r, r_label, read_reference};
use super::store::{read_cine, read_json};
use crate::error::{Error, Result};
use crate::metrics::{xt_profile, LineAxis};

/// Summary numbers of one (method, R) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub r: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub ssim_volume: f64,
    pub sar_mean: f64,
    pub sar_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// `(compression method, R, mean streak ratio of the gridding recon)`.
    pub compression: Vec<(String, f64, f64)>,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn row(&self, method: ReconMethod, r: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|row| row.method == method.name() && row.r == r)
    }

    pub fn compression_sar(&self, method: &str) -> Option<f64> {
        self.compression.iter().find(|c| c.0 == method).map(|c| c.2)
    }
}

fn num(v: &Value) -> f64 {
    match v {
        Value::Number(n) => n.as_f64().unwrap_or(f64::NAN),
        Value::String(s) if s == "inf" => f64::INFINITY,
        _ => f64::NAN,
    }
}

fn pct(v: &[f64], q: f64) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return 0.0;
    }
    s.sort_by(f64::total_cmp);
    s[((q * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)]
}

/// 8-bit image with values windowed to `[0, 99th percentile]`.
pub fn window_u8(img: ArrayView2<'_, f64>) -> Array2<u8> {
    let hi = pct(&img.iter().copied().collect::<Vec<_>>(), 0.99);
    img.mapv(|v| if hi > 0.0 { (255.0 * (v / hi).clamp(0.0, 1.0)).round() as u8 } else { 0 })
}

/// Binary (P5) PGM.
pub fn write_pgm(path: &Path, img: &Array2<u8>) -> Result<()> {
    let (h, w) = img.dim();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(img.iter());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Panels laid out left to right with a one-pixel gap.
fn hstack(panels: &[Array2<u8>]) -> Array2<u8> {
    let h = panels.iter().map(|p| p.nrows()).max().unwrap_or(0);
    let w: usize = panels.iter().map(|p| p.ncols() + 1).sum::<usize>().saturating_sub(1);
    let mut out = Array2::zeros((h, w));
    let mut x = 0;
    for p in panels {
        out.slice_mut(s![..p.nrows(), x..x + p.ncols()]).assign(p);
        x += p.ncols() + 1;
    }
    out
}

fn vstack(rows: &[Array2<u8>]) -> Array2<u8> {
    let w = rows.iter().map(|p| p.ncols()).max().unwrap_or(0);
    let h: usize = rows.iter().map(|p| p.nrows() + 1).sum::<usize>().saturating_sub(1);
    let mut out = Array2::zeros((h, w));
    let mut y = 0;
    for p in rows {
        out.slice_mut(s![y..y + p.nrows(), ..p.ncols()]).assign(p);
        y += p.nrows() + 1;
    }
    out
}

fn methods_in(run: &Path, label: &str) -> Vec<ReconMethod> {
    [ReconMethod::Gridding, ReconMethod::Igrasp, ReconMethod::Unrolled]
        .into_iter()
        .filter(|m| run.join(format!("{label}/evaluate/metrics_{}.json", m.name())).is_file())
        .collect()
}

/// Writes `report/` (CSV, text table, image grids and x-t strips) from the
/// artifacts of a run without recomputing any stage.
pub fn report(run: &Path) -> Result<Report> {
    let cfg: PipelineConfig = read_json(&run.join("config.json"))?;
    let out_dir = run.join("report");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let n = cfg.phantom.matrix_size;
    let heart_row = ((n / 2) as f64 + cfg.phantom.heart_center[0]).round().clamp(0.0, (n - 1) as f64) as usize;

    for &r in &cfg.r_values {
        let label = r_label(r);
        let methods = methods_in(run, &label);
        if methods.is_empty() {
            return Err(Error::Config(format!("no metrics under {}/{label}/evaluate", run.display())));
        }
        for &m in &methods {
            let v: Value = read_json(&run.join(format!("{label}/evaluate/metrics_{}.json", m.name())))?;
            rows.push(ReportRow {
                method: m.name().into(),
                r,
                psnr_mean: num(&v["psnr_summary"]["mean"]),
                psnr_std: num(&v["psnr_summary"]["std"]),
                ssim_mean: num(&v["ssim_summary"]["mean"]),
                ssim_std: num(&v["ssim_summary"]["std"]),
                ssim_volume: num(&v["ssim_volume"]),
                sar_mean: num(&v["sar_summary"]["mean"]),
                sar_std: num(&v["sar_summary"]["std"]),
            });
        }

        // grid: one row per shown phase, reference then each method
        let reference = read_reference(run, r)?;
        let images = methods
            .iter()
            .map(|m| read_cine(&run.join(format!("{label}/{}/image.npy", m.name()))))
            .collect::<Result<Vec<_>>>()?;
        let nt = reference.len_of(Axis(0));
        let mut shown: Vec<usize> = vec![0, nt / 4, nt / 2, 3 * nt / 4];
        shown.dedup();
        let grid_rows: Vec<Array2<u8>> = shown
            .iter()
            .map(|&t| {
                let mut panels = vec![window_u8(reference.index_axis(Axis(0), t))];
                panels.extend(images.iter().map(|x| window_u8(x.magnitude().index_axis(Axis(0), t))));
                hstack(&panels)
            })
            .collect();
        let path = out_dir.join(format!("grid_{label}.pgm"));
        write_pgm(&path, &vstack(&grid_rows))?;
        files.push(path);

        let mut strips = vec![window_u8(
            reference.slice(s![.., heart_row, ..]).view(),
        )];
        for x in &images {
            strips.push(window_u8(xt_profile(x, LineAxis::Horizontal, heart_row)?.view()));
        }
        let path = out_dir.join(format!("xt_{label}.pgm"));
        write_pgm(&path, &hstack(&strips))?;
        files.push(path);
    }

    let mut compression = Vec::new();
    let comp_path = run.join("compare/compression.json");
    if comp_path.is_file() {
        let v: Vec<Value> = read_json(&comp_path)?;
        for c in v {
            compression.push((c["method"].as_str().unwrap_or("?").to_string(), num(&c["r"]), num(&c["sar_mean"])));
        }
    }

    let mut csv = String::from("method,r,psnr_mean,psnr_std,ssim_mean,ssim_std,ssim_volume,sar_mean,sar_std\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.4},{:.4},{:.5},{:.5},{:.5},{:.5},{:.5}",
            row.method, row.r, row.psnr_mean, row.psnr_std, row.ssim_mean, row.ssim_std, row.ssim_volume, row.sar_mean, row.sar_std
        );
    }
    let path = out_dir.join("metrics.csv");
    fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    files.push(path);

    let text = format_tables(&cfg, &rows, &compression);
    let path = out_dir.join("table.txt");
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(Report { rows, compression, files })
}

fn format_tables(cfg: &PipelineConfig, rows: &[ReportRow], compression: &[(String, f64, f64)]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for row in rows {
        if !methods.contains(&row.method.as_str()) {
            methods.push(&row.method);
        }
    }
    let cell = |m: &str, r: f64, f: &dyn Fn(&ReportRow) -> String| rows.iter().find(|x| x.method == m && x.r == r).map_or("-".to_string(), f);
    let mut t = String::new();
    let header: String = cfg.r_values.iter().map(|r| format!(" | {:>24}", format!("R={r}"))).collect();
    let _ = writeln!(t, "PSNR (dB) / SSIM, mean ± std over phases");
    let _ = writeln!(t, "{:<10}{header}", "method");
    for m in &methods {
        let cells: String = cfg
            .r_values
            .iter()
            .map(|&r| format!(" | {:>24}", cell(m, r, &|x| format!("{:.2}±{:.2} / {:.3}±{:.3}", x.psnr_mean, x.psnr_std, x.ssim_mean, x.ssim_std))))
            .collect();
        let _ = writeln!(t, "{m:<10}{cells}");
    }
    let _ = writeln!(t, "\nstreak ratio, mean over phases");
    let header: String = cfg.r_values.iter().map(|r| format!(" | {:>10}", format!("R={r}"))).collect();
    let _ = writeln!(t, "{:<10}{header}", "method");
    for m in &methods {
        let cells: String = cfg.r_values.iter().map(|&r| format!(" | {:>10}", cell(m, r, &|x| format!("{:.4}", x.sar_mean)))).collect();
        let _ = writeln!(t, "{m:<10}{cells}");
    }
    if !compression.is_empty() {
        let _ = writeln!(t, "\ncompression at R={}, gridding streak ratio", max_r(cfg));
        for (m, _, sar) in compression {
            let _ = writeln!(t, "{m:<10} | {sar:.4}");
        }
    }
    t
}
