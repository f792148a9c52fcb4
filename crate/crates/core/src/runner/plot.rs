use super::log::MetricRecord;
use crate::error::{EtherError, Result};
use std::collections::BTreeMap;
use std::fmt::Write;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 44.0;
const COLUMNS: usize = 3;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One panel per metric, one line per seed. `names` restricts and orders
/// the panels; empty means every metric in the log.
pub fn render_svg(records: &[MetricRecord], names: &[String]) -> Result<String> {
    let mut series: BTreeMap<&str, BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in records {
        if names.is_empty() || names.contains(&r.name) {
            series.entry(&r.name).or_default().entry(r.seed).or_default().push((r.step as f64, r.value));
        }
    }
    let order: Vec<&str> = if names.is_empty() {
        series.keys().copied().collect()
    } else {
        names.iter().map(String::as_str).filter(|n| series.contains_key(n)).collect()
    };
    if order.is_empty() {
        return Err(EtherError::Usage("nothing to plot: the log has no matching rows".into()));
    }
    let cols = COLUMNS.min(order.len());
    let rows = order.len().div_ceil(cols);
    let (w, h) = (cols as f64 * PANEL_W, rows as f64 * PANEL_H);
    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#).ok();
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).ok();
    for (i, name) in order.iter().enumerate() {
        let (ox, oy) = ((i % cols) as f64 * PANEL_W, (i / cols) as f64 * PANEL_H);
        let by_seed = &series[name];
        let points = by_seed.values().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        // degenerate ranges get a unit span so a single point stays visible
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let (pw, ph) = (PANEL_W - 1.5 * MARGIN, PANEL_H - 1.5 * MARGIN);
        let (left, top) = (ox + MARGIN, oy + MARGIN / 2.0);
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
        writeln!(svg, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##).ok();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#, left + pw / 2.0, oy + 14.0, escape(name)).ok();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 4.0, top + 4.0, fmt_num(y1)).ok();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 4.0, top + ph, fmt_num(y0)).ok();
        writeln!(svg, r#"<text x="{left}" y="{}">{}</text>"#, top + ph + 14.0, fmt_num(x0)).ok();
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left + pw, top + ph + 14.0, fmt_num(x1)).ok();
        for (k, (seed, pts)) in by_seed.iter().enumerate() {
            let colour = PALETTE[k % PALETTE.len()];
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            if coords.len() == 1 {
                writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, sx(pts[0].0), sy(pts[0].1)).ok();
            } else {
                writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, coords.join(" ")).ok();
            }
            writeln!(svg, r#"<text x="{}" y="{}" fill="{colour}" text-anchor="end">seed {seed}</text>"#, left + pw - 4.0, top + 12.0 + 12.0 * k as f64).ok();
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}
