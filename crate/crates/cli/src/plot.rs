//! Standalone SVG line plots from the CSV files the pipeline writes.

use anyhow::{anyhow, bail, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// `x,y` paths, optionally grouped by a `series` column; a series named
    /// `label` is drawn in white.
    Trajectory,
    /// `latency_ms,success_rate`, optionally grouped by `series`.
    LatencyCurve,
    /// `epoch,train_loss,val_loss[,val_ADE]` on a log axis.
    TrainingCurve,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 5] = ["#ff7f0e", "#1f77b4", "#2ca02c", "#d62728", "#9467bd"];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

struct Table {
    headers: Vec<String>,
    /// `(line number, fields)`
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| anyhow!("line 1: {e}"))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = vec![];
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                anyhow!("line {line}: {e}")
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| anyhow!("line 1: missing column `{name}`"))
    }

    fn number(&self, line: u64, fields: &[String], col: usize) -> Result<f64> {
        let raw = fields.get(col).map(String::as_str).unwrap_or("");
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| anyhow!("line {line}: column `{}`: `{raw}` is not a finite number", self.headers[col]))
    }

    /// Points grouped by the optional `series` column, in first-seen order.
    fn grouped(&self, xcol: &str, ycol: &str, default_name: &str) -> Result<Vec<Series>> {
        let (xi, yi) = (self.require(xcol)?, self.require(ycol)?);
        let si = self.column("series");
        let mut order: Vec<String> = vec![];
        let mut by_name: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for (line, fields) in &self.rows {
            let name = si
                .and_then(|i| fields.get(i))
                .cloned()
                .unwrap_or_else(|| default_name.to_string());
            let p = (self.number(*line, fields, xi)?, self.number(*line, fields, yi)?);
            if !by_name.contains_key(&name) {
                order.push(name.clone());
            }
            by_name.entry(name).or_default().push(p);
        }
        Ok(order
            .into_iter()
            .map(|name| {
                let points = by_name.remove(&name).unwrap_or_default();
                Series { name, points }
            })
            .collect())
    }
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = vec![];
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.log10() } else { y };
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-9 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

struct Style {
    title: String,
    x_label: &'static str,
    y_label: &'static str,
    dark: bool,
    markers: bool,
    /// Legend in the lower-left corner instead of the upper-right.
    legend_low: bool,
}

fn render(series: &[Series], frame: Option<Frame>, style: &Style) -> String {
    let mut s = String::new();
    let (bg, fg) = if style.dark { ("#1e1e1e", "#dddddd") } else { ("#ffffff", "#222222") };
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="{bg}"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15" fill="{fg}">{}</text>"#,
        WIDTH / 2.0,
        escape(&style.title)
    );
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{:.1}" height="{:.1}" fill="none" stroke="{fg}"/>"#,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{fg}">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0,
        style.x_label
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})" fill="{fg}">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        style.y_label
    );
    let Some(frame) = frame else {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="16" fill="{fg}">no data</text>"#,
            (x0 + x1) / 2.0,
            (y0 + y1) / 2.0
        );
        s.push_str("</svg>\n");
        return s;
    };
    for t in ticks(frame.x.0, frame.x.1) {
        let px = frame.px(t);
        let _ = writeln!(s, r#"<line x1="{px:.1}" y1="{y1:.1}" x2="{px:.1}" y2="{:.1}" stroke="{fg}"/>"#, y1 + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle" fill="{fg}">{}</text>"#,
            y1 + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(frame.y.0, frame.y.1) {
        let (label, value) = if frame.log_y {
            if (t - t.round()).abs() > 1e-9 {
                continue;
            }
            (format!("1e{}", t.round() as i64), 10f64.powf(t))
        } else {
            (fmt_tick(t), t)
        };
        let py = frame.py(value);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="{fg}"/>"#, x0 - 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" fill="{fg}">{label}</text>"#,
            x0 - 8.0,
            py + 4.0
        );
    }
    let mut colour = PALETTE.iter().cycle();
    let mut legend = vec![];
    for ser in series {
        let c = if style.dark && ser.name == "label" {
            "#ffffff"
        } else {
            colour.next().expect("cycle")
        };
        legend.push((ser.name.as_str(), c));
        if ser.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        if style.markers {
            for &(x, y) in &ser.points {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                    frame.px(x),
                    frame.py(y)
                );
            }
        }
    }
    for (i, (name, c)) in legend.iter().enumerate() {
        let (lx, ly) = if style.legend_low {
            (x0 + 12.0, y1 - 12.0 - 18.0 * (legend.len() - 1 - i) as f64)
        } else {
            (x1 - 130.0, y0 + 16.0 + 18.0 * i as f64)
        };
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{c}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{fg}">{}</text>"#, lx + 26.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn bounds(series: &[Series], log_y: bool) -> Option<((f64, f64), (f64, f64))> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(_, y)| !log_y || y > 0.0)
        .map(|(x, y)| (x, if log_y { y.log10() } else { y }))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        pts.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    Some((fold(|p| p.0), fold(|p| p.1)))
}

/// Renders `csv_text` as an SVG document.
pub fn plot_csv(csv_text: &str, kind: PlotKind, title: Option<&str>) -> Result<String> {
    let table = Table::parse(csv_text)?;
    match kind {
        PlotKind::Trajectory => {
            let series = table.grouped("x", "y", "trace")?;
            let frame = bounds(&series, false).map(|(bx, by)| {
                // Equal scale on both axes.
                let (bx, by) = (padded(bx.0, bx.1), padded(by.0, by.1));
                let sx = (bx.1 - bx.0) / (WIDTH - LEFT - RIGHT);
                let sy = (by.1 - by.0) / (HEIGHT - TOP - BOTTOM);
                let scale = sx.max(sy);
                let cx = (bx.0 + bx.1) / 2.0;
                let cy = (by.0 + by.1) / 2.0;
                let hw = scale * (WIDTH - LEFT - RIGHT) / 2.0;
                let hh = scale * (HEIGHT - TOP - BOTTOM) / 2.0;
                Frame {
                    x: (cx - hw, cx + hw),
                    y: (cy - hh, cy + hh),
                    log_y: false,
                }
            });
            let style = Style {
                title: title.unwrap_or("Trajectories").to_string(),
                x_label: "x (m)",
                y_label: "y (m)",
                dark: true,
                markers: false,
                legend_low: false,
            };
            Ok(render(&series, frame, &style))
        }
        PlotKind::LatencyCurve => {
            let mut series = table.grouped("latency_ms", "success_rate", "success rate")?;
            for s in &mut series {
                s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            let frame = bounds(&series, false).map(|(bx, _)| Frame {
                x: padded(bx.0, bx.1),
                y: (0.0, 1.05),
                log_y: false,
            });
            let style = Style {
                title: title.unwrap_or("Success rate vs. planning latency").to_string(),
                x_label: "latency (ms)",
                y_label: "success rate",
                dark: false,
                markers: true,
                legend_low: true,
            };
            Ok(render(&series, frame, &style))
        }
        PlotKind::TrainingCurve => {
            let mut series = vec![];
            for (col, name) in [("train_loss", "train loss"), ("val_loss", "val loss"), ("val_ADE", "val ADE (m)")] {
                if col == "val_ADE" && table.column(col).is_none() {
                    continue;
                }
                let s = table.grouped("epoch", col, name)?;
                if let Some(mut first) = s.into_iter().next() {
                    first.name = name.to_string();
                    first.points.retain(|p| p.1 > 0.0);
                    series.push(first);
                }
            }
            if series.iter().all(|s| s.points.is_empty()) {
                series.clear();
            }
            let frame = bounds(&series, true).map(|(bx, by)| Frame {
                x: padded(bx.0, bx.1),
                y: (by.0.floor(), by.1.ceil().max(by.0.floor() + 1.0)),
                log_y: true,
            });
            let style = Style {
                title: title.unwrap_or("Training").to_string(),
                x_label: "epoch",
                y_label: "loss (log scale)",
                dark: false,
                markers: false,
                legend_low: false,
            };
            Ok(render(&series, frame, &style))
        }
    }
}

/// Keeps the header and the rows whose `column` equals `value`.
pub fn select_rows(csv_text: &str, column: &str, value: &str) -> Result<String> {
    let table = Table::parse(csv_text)?;
    let col = table.require(column)?;
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(&table.headers)?;
    for (_, fields) in &table.rows {
        if fields.get(col).map(String::as_str) == Some(value) {
            w.write_record(fields)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| anyhow!("{e}"))?;
    Ok(String::from_utf8(bytes)?)
}

/// Fails with a descriptive error if `svg` lacks the basic structure.
pub fn check_svg(svg: &str) -> Result<()> {
    if !svg.starts_with("<svg") || !svg.trim_end().ends_with("</svg>") {
        bail!("not a standalone SVG document");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_series_says_no_data() {
        for (kind, csv) in [
            (PlotKind::Trajectory, "series,x,y\n"),
            (PlotKind::LatencyCurve, "latency_ms,success_rate\n"),
            (PlotKind::TrainingCurve, "epoch,train_loss,val_loss,val_ADE\n"),
        ] {
            let svg = plot_csv(csv, kind, None).unwrap();
            check_svg(&svg).unwrap();
            assert!(svg.contains("no data"), "{kind:?}");
        }
    }

    #[test]
    fn malformed_csv_names_the_line() {
        let err = plot_csv("latency_ms,success_rate\n0,1\n100,abc\n", PlotKind::LatencyCurve, None).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = plot_csv("latency_ms,success_rate\n0,1\n100\n", PlotKind::LatencyCurve, None).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = plot_csv("a,b\n1,2\n", PlotKind::Trajectory, None).unwrap_err();
        assert!(err.to_string().contains("missing column `x`"), "{err}");
    }

    #[test]
    fn latency_axis_is_sorted() {
        let svg = plot_csv("latency_ms,success_rate\n500,0.9\n0,1\n200,0.95\n", PlotKind::LatencyCurve, None).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let xs: Vec<f64> = line
            .split('"')
            .nth(1)
            .unwrap()
            .split(' ')
            .map(|p| p.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "{xs:?}");
    }

    #[test]
    fn label_series_is_white() {
        let svg = plot_csv("series,x,y\nlabel,0,0\nlabel,1,0\nprediction,0,0\nprediction,1,0.1\n", PlotKind::Trajectory, None)
            .unwrap();
        assert!(svg.contains(r##"stroke="#ffffff" stroke-width="2"/>"##));
    }

    #[test]
    fn row_selection_filters_by_column() {
        let text = "episode,series,x,y\na,label,0,0\nb,label,1,1\na,prediction,0,0.5\n";
        assert_eq!(select_rows(text, "episode", "a").unwrap(), "episode,series,x,y\na,label,0,0\na,prediction,0,0.5\n");
        assert!(select_rows(text, "run", "a").is_err());
    }

    #[test]
    fn tick_values_are_round() {
        assert_eq!(ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
        assert_eq!(ticks(-40.0, 800.0), vec![0.0, 200.0, 400.0, 600.0, 800.0]);
    }
}
