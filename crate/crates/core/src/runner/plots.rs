//! Offline plot data: PCA scatter CSV, metric curves CSV and a static SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::report::write_metrics_csv;
use super::train::EpochRecord;
use crate::error::Result;
use crate::numerics::Matrix;

const PALETTE: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

pub fn write_pca3_csv(path: &Path, variants: &[(String, Matrix)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "pc1", "pc2", "pc3", "variant"])?;
    for (name, coords) in variants {
        for r in 0..coords.rows() {
            let row = coords.row(r);
            w.write_record([
                r.to_string(),
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
                name.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `pca3.csv`, `curves.csv` and `plots.svg` into `dir` and returns
/// their paths. With no records nothing is written.
pub fn emit_plots(dir: &Path, records: &[EpochRecord], variants: &[(String, Matrix)]) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        log::warn!("no epoch records; skipping plots");
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir)?;
    let pca = dir.join("pca3.csv");
    let curves = dir.join("curves.csv");
    let svg = dir.join("plots.svg");
    write_pca3_csv(&pca, variants)?;
    write_metrics_csv(&curves, records)?;
    fs::write(&svg, render_svg(records, variants))?;
    Ok(vec![pca, curves, svg])
}

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Panel {
    fn map(&self, (x, y): (f64, f64), (xmin, xmax): (f64, f64), (ymin, ymax): (f64, f64)) -> (f64, f64) {
        let sx = if xmax > xmin { (x - xmin) / (xmax - xmin) } else { 0.5 };
        let sy = if ymax > ymin { (y - ymin) / (ymax - ymin) } else { 0.5 };
        (self.x0 + sx * self.w, self.y0 + (1.0 - sy) * self.h)
    }

    fn frame(&self, svg: &mut String, title: &str) {
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="gray"/>"#,
            self.x0, self.y0, self.w, self.h
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{title}</text>"#,
            self.x0 + self.w / 2.0,
            self.y0 - 8.0
        );
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Left: PC1/PC2 scatter per variant. Right: log10 train and eval total loss.
pub fn render_svg(records: &[EpochRecord], variants: &[(String, Matrix)]) -> String {
    let mut svg = String::new();
    svg.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"420\" font-family=\"sans-serif\">\n",
    );
    svg.push_str("<rect width=\"900\" height=\"420\" fill=\"white\"/>\n");

    let scatter = Panel {
        x0: 40.0,
        y0: 40.0,
        w: 380.0,
        h: 340.0,
    };
    scatter.frame(&mut svg, "PC1 vs PC2");
    let xr = range(variants.iter().flat_map(|(_, m)| (0..m.rows()).map(move |r| m.get(r, 0))));
    let yr = range(variants.iter().flat_map(|(_, m)| (0..m.rows()).map(move |r| m.get(r, 1))));
    for (i, (name, m)) in variants.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for r in 0..m.rows() {
            let (x, y) = scatter.map((m.get(r, 0), m.get(r, 1)), xr, yr);
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{color}" fill-opacity="0.6"/>"#);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{name}</text>"#,
            scatter.x0 + 6.0,
            scatter.y0 + 14.0 + 13.0 * i as f64
        );
    }

    let curves = Panel {
        x0: 490.0,
        y0: 40.0,
        w: 380.0,
        h: 340.0,
    };
    curves.frame(&mut svg, "log10 total loss");
    let log = |v: f64| v.max(1e-12).log10();
    let er = range(records.iter().map(|r| r.epoch as f64));
    let lr = range(records.iter().flat_map(|r| [log(r.train_total), log(r.eval_total)]));
    for (label, color, pick) in [
        ("train", PALETTE[0], (|r: &EpochRecord| r.train_total) as fn(&EpochRecord) -> f64),
        ("eval", PALETTE[1], |r: &EpochRecord| r.eval_total),
    ] {
        let points: Vec<String> = records
            .iter()
            .map(|r| {
                let (x, y) = curves.map((r.epoch as f64, log(pick(r))), er, lr);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let offset = if label == "train" { 0.0 } else { 13.0 };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{label}</text>"#,
            curves.x0 + curves.w - 40.0,
            curves.y0 + 14.0 + offset
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{pretrain, RunConfig};

    fn tiny_run() -> (Vec<EpochRecord>, Matrix) {
        let mut cfg = RunConfig::default();
        cfg.epochs = 2;
        cfg.eval_every = 1;
        cfg.synth.n_samples = 400;
        cfg.eval_size = 64;
        let out = pretrain(&cfg).unwrap();
        (out.records, out.geometry.pca3)
    }

    #[test]
    fn scatter_rows_and_byte_identical_reruns() {
        let (records, pca) = tiny_run();
        let variants = vec![("a".to_string(), pca.clone()), ("b".to_string(), pca)];
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let files = emit_plots(d1.path(), &records, &variants).unwrap();
        emit_plots(d2.path(), &records, &variants).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text.lines().count(), 1 + 128);
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(d2.path().join(name)).unwrap());
        }
    }

    #[test]
    fn empty_records_are_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("never");
        assert!(emit_plots(&target, &[], &[]).unwrap().is_empty());
        assert!(!target.exists());
    }
}
