//! Standalone SVG line and log-log plots.
//!
//! The source table is embedded verbatim as CSV inside an XML comment, so a
//! plot can be turned back into the exact table it was drawn from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::table::Table;

const DATA_OPEN: &str = "<!-- eit-cs-data\n";
const DATA_CLOSE: &str = "-->";
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Line,
    LogLog,
}

impl std::str::FromStr for PlotKind {
    type Err = EitError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(PlotKind::Line),
            "loglog" => Ok(PlotKind::LogLog),
            other => Err(EitError::InvalidInput(format!("unknown plot kind `{other}` (expected line or loglog)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub title: String,
    pub x: String,
    pub y: String,
    /// Column whose distinct values split the rows into series.
    pub group: Option<String>,
    pub annotation: Option<String>,
}

impl PlotSpec {
    pub fn new(kind: PlotKind, title: &str, x: &str, y: &str) -> Self {
        PlotSpec {
            kind,
            title: title.into(),
            x: x.into(),
            y: y.into(),
            group: None,
            annotation: None,
        }
    }

    pub fn grouped_by(mut self, column: &str) -> Self {
        self.group = Some(column.into());
        self
    }

    pub fn annotated(mut self, text: impl Into<String>) -> Self {
        self.annotation = Some(text.into());
        self
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: &[f64], log: bool) -> Axis {
        if values.is_empty() {
            return Axis { lo: 0.0, hi: 1.0, log };
        }
        let t: Vec<f64> = values.iter().map(|&v| if log { v.log10() } else { v }).collect();
        let mut lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if log {
            lo = lo.floor();
            hi = hi.ceil();
            if hi <= lo {
                hi = lo + 1.0;
            }
        } else {
            if hi <= lo {
                let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
                lo -= pad;
                hi += pad;
            }
            let step = nice_step((hi - lo) / 5.0);
            lo = (lo / step).floor() * step;
            hi = (hi / step).ceil() * step;
        }
        Axis { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo as i32, self.hi as i32);
            let stride = ((b - a) / 8 + 1).max(1);
            (a..=b)
                .step_by(stride as usize)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            let step = nice_step((self.hi - self.lo) / 5.0);
            let mut out = Vec::new();
            let mut k = (self.lo / step).round() as i64;
            loop {
                let v = k as f64 * step;
                if v > self.hi + 1e-9 * step {
                    break;
                }
                out.push((v, format_tick(v, step)));
                k += 1;
            }
            out
        }
    }
}

fn nice_step(raw: f64) -> f64 {
    if !(raw > 0.0) || !raw.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn format_tick(v: f64, step: f64) -> String {
    if v.abs() < 1e-12 * step {
        return "0".into();
    }
    if step >= 1e-3 && v.abs() < 1e5 {
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.1e}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Splits the table into named `(x, y)` series, dropping unplottable points.
fn series(table: &Table, spec: &PlotSpec) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let xs = table.column_f64(&spec.x)?;
    let ys = table.column_f64(&spec.y)?;
    let groups: Vec<String> = match &spec.group {
        Some(g) => table.column(g)?.into_iter().map(String::from).collect(),
        None => vec![spec.y.clone(); table.len()],
    };
    let mut order: Vec<String> = Vec::new();
    let mut by_name: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((x, y), g) in xs.into_iter().zip(ys).zip(groups) {
        let ok = x.is_finite() && y.is_finite() && (spec.kind == PlotKind::Line || (x > 0.0 && y > 0.0));
        if !by_name.contains_key(&g) {
            order.push(g.clone());
            by_name.insert(g.clone(), Vec::new());
        }
        if ok {
            by_name.get_mut(&g).unwrap().push((x, y));
        }
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let mut pts = by_name.remove(&name).unwrap();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (name, pts)
        })
        .collect())
}

pub fn render_svg(table: &Table, spec: &PlotSpec) -> Result<String> {
    let data = table.to_csv_string()?;
    if data.contains("--") {
        return Err(EitError::InvalidInput("table text contains `--` and cannot be embedded in an XML comment".into()));
    }
    let series = series(table, spec)?;
    let log = spec.kind == PlotKind::LogLog;
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let xa = Axis::fit(&all.iter().map(|p| p.0).collect::<Vec<_>>(), log);
    let ya = Axis::fit(&all.iter().map(|p| p.1).collect::<Vec<_>>(), log);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.unit(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.unit(y)) * ph;

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(w, "{DATA_OPEN}{data}{DATA_CLOSE}\n");
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        w,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (v, label) in xa.ticks() {
        let x = px(v);
        let _ = writeln!(
            w,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ccc"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + ph,
            TOP + ph + 16.0,
            escape(&label)
        );
    }
    for (v, label) in ya.ticks() {
        let y = py(v);
        let _ = writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ccc"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            escape(&label)
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        w,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y)
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if pts.len() > 1 {
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                w,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        for &(x, y) in pts {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = TOP + 12.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    if let Some(note) = &spec.annotation {
        let _ = writeln!(
            w,
            r#"<text x="{}" y="{}" font-style="italic">{}</text>"#,
            LEFT + 8.0,
            TOP + 16.0,
            escape(note)
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

pub fn emit_plot(table: &Table, spec: &PlotSpec, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_svg(table, spec)?)?;
    Ok(())
}

/// Recovers the table embedded by [`render_svg`].
pub fn embedded_table(svg: &str) -> Result<Table> {
    let start = svg
        .find(DATA_OPEN)
        .ok_or_else(|| EitError::InvalidInput("no embedded data block".into()))?
        + DATA_OPEN.len();
    let len = svg[start..]
        .find(DATA_CLOSE)
        .ok_or_else(|| EitError::InvalidInput("unterminated data block".into()))?;
    Table::from_csv_str(&svg[start..start + len])
}

pub fn read_plot_table(path: impl AsRef<Path>) -> Result<Table> {
    embedded_table(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        let mut t = Table::new(&["x", "y", "g"]);
        for (x, y, g) in [(1.0, 2.0, "a"), (10.0, 20.0, "a"), (1.0, 3.0, "b"), (100.0, -1.0, "b")] {
            t.push(vec![format!("{x:?}"), format!("{y:?}"), g.into()]).unwrap();
        }
        t
    }

    #[test]
    fn empty_table_gives_axes_only() {
        let t = Table::new(&["x", "y"]);
        let svg = render_svg(&t, &PlotSpec::new(PlotKind::LogLog, "empty", "x", "y")).unwrap();
        assert!(svg.contains("<svg") && svg.contains("</svg>"));
        assert!(!svg.contains("<polyline") && !svg.contains("<circle"));
    }

    #[test]
    fn embedded_data_round_trips() {
        let t = table();
        let svg = render_svg(&t, &PlotSpec::new(PlotKind::Line, "t", "x", "y").grouped_by("g")).unwrap();
        assert_eq!(embedded_table(&svg).unwrap(), t);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn loglog_drops_nonpositive_points() {
        let svg = render_svg(&table(), &PlotSpec::new(PlotKind::LogLog, "t", "x", "y").grouped_by("g")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn labels_are_escaped() {
        let t = Table::new(&["x", "y"]);
        let svg = render_svg(&t, &PlotSpec::new(PlotKind::Line, "a<b & c", "x", "y")).unwrap();
        assert!(svg.contains("a&lt;b &amp; c"));
    }
}
