//! Self-contained SVG line charts of sweep tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::pipeline::CsvRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Snr,
    Cbr,
    Hops,
}

impl PlotKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snr" => Some(Self::Snr),
            "cbr" => Some(Self::Cbr),
            "hops" => Some(Self::Hops),
            _ => None,
        }
    }

    fn x_label(self) -> &'static str {
        match self {
            Self::Snr => "SNR (dB)",
            Self::Cbr => "CBR",
            Self::Hops => "hop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Psnr,
    MsSsim,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Self::Psnr => "PSNR (dB)",
            Self::MsSsim => "MS-SSIM",
        }
    }

    fn value(self, row: &CsvRow) -> Option<f64> {
        match self {
            Self::Psnr => Some(row.psnr_comp_db),
            Self::MsSsim => row.msssim_comp,
        }
        .filter(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One series per experiment id. For `snr` and `cbr`, and for `hops` tables
/// with several grid values, the x value is the grid value and y is the mean
/// final-hop metric over trials. A `hops` table with a single grid value
/// plots the mean metric at every hop of the chain.
pub fn series_from_rows(rows: &[CsvRow], kind: PlotKind, metric: Metric) -> Result<Vec<Series>> {
    if rows.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "table has no rows".into(),
        });
    }
    let mut by_exp: BTreeMap<&str, Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        by_exp.entry(&r.experiment_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (name, rows) in by_exp {
        let grid: Vec<u64> = dedup(rows.iter().map(|r| r.grid_value.to_bits()));
        let per_hop = kind == PlotKind::Hops && grid.len() == 1;
        let mut acc: BTreeMap<OrderedF64, (f64, usize)> = BTreeMap::new();
        let mut final_hop: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        for r in &rows {
            let e = final_hop
                .entry((r.grid_value.to_bits(), r.trial_seed))
                .or_insert(0);
            *e = (*e).max(r.hop);
        }
        for r in &rows {
            let include = per_hop || final_hop[&(r.grid_value.to_bits(), r.trial_seed)] == r.hop;
            let Some(y) = metric.value(r).filter(|_| include) else {
                continue;
            };
            let x = if per_hop { r.hop as f64 } else { r.grid_value };
            let e = acc.entry(OrderedF64(x)).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
        out.push(Series {
            name: name.to_owned(),
            points: acc
                .into_iter()
                .map(|(x, (s, n))| (x.0, s / n as f64))
                .collect(),
        });
    }
    Ok(out)
}

fn dedup(it: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut v: Vec<u64> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedF64(f64);

impl Eq for OrderedF64 {}

impl PartialOrd for OrderedF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];
const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_svg(series: &[Series], x_label: &str, y_label: &str) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| {
        if b - a < 1e-12 {
            (a - 0.5, b + 0.5)
        } else {
            (a, b)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0 - 0.05 * (y1 - y0), y1 + 0.05 * (y1 - y0));
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
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{TOP}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 16.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn plot_rows(rows: &[CsvRow], kind: PlotKind, metric: Metric) -> Result<String> {
    let series = series_from_rows(rows, kind, metric)?;
    Ok(render_svg(&series, kind.x_label(), metric.label()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_positions() {
        assert_eq!(ticks(0.0, 10.0), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(ticks(5.0, 30.0), vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert!(ticks(0.061, 0.072).len() >= 3);
    }

    #[test]
    fn escapes_names() {
        let svg = render_svg(
            &[Series {
                name: "a<b".into(),
                points: vec![(0.0, 1.0)],
            }],
            "x",
            "y",
        );
        assert!(svg.contains("a&lt;b"));
    }
}
