//! Static SVG charts. Each chart is written next to the tidy CSV it was
//! drawn from (`name.svg` + `name.csv`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{domain, Result};
use crate::metrics::EvalSummary;

use super::persist::{read_curve, EvalRecord, Status};

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// One line of a chart: `(x, mean, std)` points in increasing `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Mean lines with a shaded +-1 std band.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let pts: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).filter(|p| p.1.is_finite()).collect();
    if pts.is_empty() {
        return Err(domain("nothing to plot"));
    }
    let (x0, x1) = span(
        pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = span(
        pts.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max),
    );
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            TOP + ph + 18.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0,
            fmt_tick(yv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            LEFT + pw,
            sy(yv),
            sy(yv)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(y_label)
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let p: Vec<_> = ser.points.iter().filter(|p| p.1.is_finite()).collect();
        if p.is_empty() {
            continue;
        }
        let upper = p.iter().map(|q| format!("{:.2},{:.2}", sx(q.0), sy(q.1 + q.2)));
        let lower = p.iter().rev().map(|q| format!("{:.2},{:.2}", sx(q.0), sy(q.1 - q.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = p.iter().map(|q| format!("{:.2},{:.2}", sx(q.0), sy(q.1))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            esc(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Value-annotated grid; `values[row][col]`, row 0 drawn at the top.
pub fn heatmap_chart(title: &str, x_label: &str, y_label: &str, cols: &[f64], rows: &[f64], values: &[Vec<f64>]) -> Result<String> {
    if cols.is_empty() || rows.is_empty() {
        return Err(domain("nothing to plot"));
    }
    let finite: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = span(
        finite.iter().copied().fold(f64::INFINITY, f64::min),
        finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let pw = W - LEFT - 40.0;
    let ph = H - TOP - BOTTOM;
    let (cw, ch) = (pw / cols.len() as f64, ph / rows.len() as f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(title));
    for (r, rv) in rows.iter().enumerate() {
        let y = TOP + r as f64 * ch;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + ch / 2.0 + 4.0,
            fmt_tick(*rv)
        );
        for (c, _) in cols.iter().enumerate() {
            let x = LEFT + c as f64 * cw;
            let v = values.get(r).and_then(|row| row.get(c)).copied().unwrap_or(f64::NAN);
            let (fill, text) = if v.is_finite() {
                let t = (v - lo) / (hi - lo);
                let g = (255.0 * (1.0 - 0.75 * t)).round() as u8;
                (format!("rgb({g},{g},255)"), format!("{v:.2}"))
            } else {
                ("#bbbbbb".to_string(), "failed".to_string())
            };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{fill}" stroke="white"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{text}</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    for (c, cv) in cols.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + (c as f64 + 0.5) * cw,
            TOP + ph + 16.0,
            fmt_tick(*cv)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(y_label)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn write_pair(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>], svg: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    let svg_path = dir.join(format!("{name}.svg"));
    fs::write(&svg_path, svg)?;
    Ok(vec![svg_path, csv_path])
}

fn pooled(records: &[&EvalRecord]) -> (f64, f64, usize) {
    let ok: Vec<&&EvalRecord> = records.iter().filter(|r| r.status == Status::Ok).collect();
    let eps = ok.iter().flat_map(|r| r.episodes.iter().copied()).collect();
    match EvalSummary::new(eps) {
        Ok(s) => (s.mean_return(), s.std_return(), ok.len()),
        Err(_) => (f64::NAN, f64::NAN, 0),
    }
}

fn file_part(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '-' }).collect()
}

/// Learning curves from every `curve_<agent>.csv` in `input`.
pub fn plot_curves(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            n.starts_with("curve_") && n.ends_with(".csv")
        })
        .collect();
    files.sort();
    let mut series = Vec::new();
    let mut rows = Vec::new();
    for f in &files {
        let name = f.file_stem().and_then(|n| n.to_str()).unwrap_or("").trim_start_matches("curve_").to_string();
        let pts = read_curve(f)?;
        for p in &pts {
            rows.push(vec![name.clone(), p.step.to_string(), p.mean.to_string(), p.std.to_string(), p.n_seeds.to_string()]);
        }
        series.push(Series {
            name,
            points: pts.iter().map(|p| (p.step as f64, p.mean, p.std)).collect(),
        });
    }
    if rows.is_empty() {
        return Err(domain(format!("no learning curves found in {}", input.display())));
    }
    let svg = line_chart("Training curves", "environment steps", "metric", &series)?;
    write_pair(out, "plot_curve", &["agent", "step", "mean_metric", "std_metric", "n_seeds"], &rows, &svg)
}

/// Mean return versus level, one chart per site / kind / parameter group,
/// pooled over seeds.
pub fn plot_sweep(records: &[EvalRecord], out: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(domain("no records to plot"));
    }
    let mut groups: BTreeMap<(String, String, String), BTreeMap<String, BTreeMap<u64, Vec<&EvalRecord>>>> = BTreeMap::new();
    for r in records {
        let Some(level) = r.test_level_value() else { continue };
        let param = r.param_overrides.split('=').next().unwrap_or("").to_string();
        groups
            .entry((r.site.clone(), r.kind.clone(), param))
            .or_default()
            .entry(r.agent.clone())
            .or_default()
            .entry(level.to_bits())
            .or_default()
            .push(r);
    }
    if groups.is_empty() {
        return Err(domain("no single-level records to plot"));
    }
    let mut written = Vec::new();
    for ((site, kind, param), agents) in groups {
        let mut series = Vec::new();
        let mut rows = Vec::new();
        for (agent, levels) in agents {
            let mut pts: Vec<(f64, f64, f64)> = Vec::new();
            for (bits, recs) in levels {
                let level = f64::from_bits(bits);
                let (m, sd, n) = pooled(&recs);
                rows.push(vec![agent.clone(), level.to_string(), m.to_string(), sd.to_string(), n.to_string()]);
                pts.push((level, m, sd));
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            series.push(Series { name: agent, points: pts });
        }
        let (name, x_label) = if param.is_empty() {
            (format!("plot_sweep_{}_{}", file_part(&site), file_part(&kind)), format!("{kind} level on {site}"))
        } else {
            (format!("plot_sweep_{}", file_part(&param)), param.clone())
        };
        let svg = line_chart("Average normalized return", &x_label, "avg normalized return", &series)?;
        written.extend(write_pair(out, &name, &["agent", "level", "mean_return", "std_return", "n_seeds"], &rows, &svg)?);
    }
    Ok(written)
}

/// Train level (rows) x test level (columns) grid per agent and site.
pub fn plot_heatmap(records: &[EvalRecord], out: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(domain("no records to plot"));
    }
    type Cells<'a> = BTreeMap<(u64, u64), Vec<&'a EvalRecord>>;
    let mut groups: BTreeMap<(String, String, String), Cells> = BTreeMap::new();
    for r in records {
        let Some(t) = r.test_level_value() else { continue };
        groups
            .entry((r.agent.clone(), r.site.clone(), r.kind.clone()))
            .or_default()
            .entry((r.train_level.to_bits(), t.to_bits()))
            .or_default()
            .push(r);
    }
    if groups.is_empty() {
        return Err(domain("no single-level records to plot"));
    }
    let mut written = Vec::new();
    for ((agent, site, kind), cells) in groups {
        let mut rows_l: Vec<f64> = cells.keys().map(|k| f64::from_bits(k.0)).collect();
        let mut cols_l: Vec<f64> = cells.keys().map(|k| f64::from_bits(k.1)).collect();
        rows_l.sort_by(f64::total_cmp);
        rows_l.dedup();
        cols_l.sort_by(f64::total_cmp);
        cols_l.dedup();
        let mut grid = vec![vec![f64::NAN; cols_l.len()]; rows_l.len()];
        let mut rows = Vec::new();
        for ((tr, te), recs) in &cells {
            let (m, _, n) = pooled(recs);
            let (tr, te) = (f64::from_bits(*tr), f64::from_bits(*te));
            let i = rows_l.iter().position(|v| *v == tr).expect("row level");
            let j = cols_l.iter().position(|v| *v == te).expect("column level");
            grid[i][j] = m;
            rows.push(vec![tr.to_string(), te.to_string(), m.to_string(), n.to_string()]);
        }
        let title = format!("{agent}: {kind} on {site}");
        let svg = heatmap_chart(&title, "test level", "train level", &cols_l, &rows_l, &grid)?;
        let name = format!("plot_heatmap_{}_{}_{}", file_part(&agent), file_part(&site), file_part(&kind));
        written.extend(write_pair(out, &name, &["train_level", "test_level", "mean_return", "n_seeds"], &rows, &svg)?);
    }
    Ok(written)
}
