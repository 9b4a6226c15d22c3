//! CSV tables and plain SVG line charts.
//!
//! CDF files `cdf_{ul,dl}_{scheme}.csv` have header `se,cdf` and one row per
//! record: the record's mean per-UE SE and its cumulative fraction i/n.
//! Sweep files `sweep_{k,l}.csv` have header
//! `k,l,se_opt_ul,se_pred_ul,ratio_ul,se_opt_dl,se_pred_dl,ratio_dl`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cellfree_core::se_engine::Direction;

use crate::evaluate::EvalRecord;
use crate::sweep::SweepTable;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

/// Sorted values with fractions i/n, one point per value.
fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

fn dir_name(d: Direction) -> &'static str {
    match d {
        Direction::Uplink => "ul",
        Direction::Downlink => "dl",
    }
}

pub fn cdf_series(records: &[EvalRecord], d: Direction) -> Vec<(&'static str, Vec<(f64, f64)>)> {
    let means: Vec<_> = records.iter().map(|r| r.direction(d).mean_se()).collect();
    ["predicted", "optimal", "epa", "fpa"]
        .into_iter()
        .map(|name| {
            let vals: Vec<f64> = means
                .iter()
                .map(|m| *m.named().iter().find(|(n, _)| *n == name).expect("scheme").1)
                .collect();
            (name, cdf_points(&vals))
        })
        .collect()
}

/// Writes CDF CSVs (and SVGs when `svg`) for both directions.
pub fn export_plots(records: &[EvalRecord], out_dir: &Path, svg: bool) -> anyhow::Result<Vec<PathBuf>> {
    anyhow::ensure!(!records.is_empty(), "no records to plot");
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for d in [Direction::Uplink, Direction::Downlink] {
        let series = cdf_series(records, d);
        for (name, pts) in &series {
            let mut text = String::from("se,cdf\n");
            for (x, f) in pts {
                writeln!(text, "{x},{f}")?;
            }
            let path = out_dir.join(format!("cdf_{}_{name}.csv", dir_name(d)));
            fs::write(&path, text)?;
            written.push(path);
        }
        if svg {
            let path = out_dir.join(format!("cdf_{}.svg", dir_name(d)));
            let title = format!("CDF of mean per-UE SE ({})", dir_name(d).to_uppercase());
            fs::write(&path, line_chart(&title, "SE [bit/s/Hz]", "CDF", &series))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn export_sweep(table: &SweepTable, out_dir: &Path, svg: bool) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut text = String::from("k,l,se_opt_ul,se_pred_ul,ratio_ul,se_opt_dl,se_pred_dl,ratio_dl\n");
    for r in &table.rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.k, r.l, r.se_opt_ul, r.se_pred_ul, r.ratio_ul, r.se_opt_dl, r.se_pred_dl, r.ratio_dl
        )?;
    }
    let path = out_dir.join(format!("sweep_{}.csv", table.axis));
    fs::write(&path, text)?;
    let mut written = vec![path];
    if svg {
        let x = |r: &crate::sweep::SweepRow| if table.axis == "k" { r.k as f64 } else { r.l as f64 };
        let pick = |f: fn(&crate::sweep::SweepRow) -> f64| table.rows.iter().map(|r| (x(r), f(r))).collect::<Vec<_>>();
        let series = vec![
            ("optimal UL", pick(|r| r.se_opt_ul)),
            ("predicted UL", pick(|r| r.se_pred_ul)),
            ("optimal DL", pick(|r| r.se_opt_dl)),
            ("predicted DL", pick(|r| r.se_pred_dl)),
        ];
        let path = out_dir.join(format!("sweep_{}.svg", table.axis));
        let title = format!("Mean per-UE SE versus {}", table.axis.to_uppercase());
        fs::write(&path, line_chart(&title, &table.axis.to_uppercase(), "SE [bit/s/Hz]", &series))?;
        written.push(path);
    }
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A minimal standalone SVG with axes, one polyline per series and a legend.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="11">{fx:.3}</text>"#, sx(fx), h - m + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">{fy:.3}</text>"#, m - 6.0, sy(fy) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, h - 14.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(ylabel)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - m - 120.0, w - m - 100.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, w - m - 95.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
