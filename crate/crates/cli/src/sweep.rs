//! Sweep results and their CSV / SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use styledyn::table::{fmt_real, Table};

use crate::error::CliError;

/// Rows of `(swept value, metric columns)` plus the config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub swept: String,
    pub columns: Vec<String>,
    pub rows: Vec<(f64, Vec<f64>)>,
    /// Resolved config snapshot, including the seed.
    pub provenance: Vec<(String, String)>,
}

impl SweepResult {
    pub fn new(swept: &str, columns: &[&str], provenance: Vec<(String, String)>) -> Self {
        Self {
            swept: swept.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            provenance,
        }
    }

    pub fn push(&mut self, x: f64, values: Vec<f64>) {
        self.rows.push((x, values));
    }

    /// Orders rows by swept value.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.1[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut table = Table::new(std::iter::once(self.swept.clone()).chain(self.columns.iter().cloned()));
        for (k, v) in &self.provenance {
            table.comment(format!("{k} = {v}"));
        }
        for (x, values) in &self.rows {
            table.push(std::iter::once(*x).chain(values.iter().copied()).map(fmt_real).collect());
        }
        table.render()
    }

    pub fn provenance_map(&self) -> BTreeMap<String, String> {
        self.provenance.iter().cloned().collect()
    }
}

/// Which column to plot and how to scale the axes.
#[derive(Debug, Clone, PartialEq)]
pub struct AxesSpec {
    pub y_column: String,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn transform(v: f64, log: bool, axis: &str) -> Result<f64, CliError> {
    if !v.is_finite() {
        return Err(CliError::Plot(format!("non-finite value {v} on the {axis} axis")));
    }
    if log {
        if v <= 0.0 {
            return Err(CliError::Plot(format!("value {v} on the logarithmic {axis} axis")));
        }
        Ok(v.log10())
    } else {
        Ok(v)
    }
}

fn range(vals: &[f64], axis: &str) -> Result<(f64, f64), CliError> {
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(CliError::Plot(format!("degenerate {axis} range [{lo}, {hi}]")))
    }
}

/// A self-contained SVG with one polyline through the selected column.
pub fn emit_svg(sweep: &SweepResult, axes: &AxesSpec) -> Result<String, CliError> {
    if sweep.rows.len() < 2 {
        return Err(CliError::Plot(format!("need at least 2 rows, got {}", sweep.rows.len())));
    }
    let ys = sweep
        .column(&axes.y_column)
        .ok_or_else(|| CliError::Plot(format!("no column {:?}", axes.y_column)))?;
    let xs: Vec<f64> = sweep.rows.iter().map(|r| r.0).collect();
    let tx = xs.iter().map(|&x| transform(x, axes.log_x, "x")).collect::<Result<Vec<_>, _>>()?;
    let ty = ys.iter().map(|&y| transform(y, axes.log_y, "y")).collect::<Result<Vec<_>, _>>()?;
    let (x0, x1) = range(&tx, "x")?;
    let (y0, y1) = range(&ty, "y")?;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(&axes.title)
    );
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
    );
    let scale_note = |log: bool| if log { " (log)" } else { "" };
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        xml_escape(&sweep.swept),
        scale_note(axes.log_x)
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 15 {})">{}{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        xml_escape(&axes.y_column),
        scale_note(axes.log_y)
    );
    let xmin = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ymin = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (x, anchor, label) in [(left, "start", xmin), (right, "end", xmax)] {
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="10">{label:.4e}</text>"#,
            bottom + 14.0
        );
    }
    for (y, label) in [(bottom, ymin), (top, ymax)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end" font-family="sans-serif" font-size="10">{label:.4e}</text>"#,
            left - 4.0
        );
    }
    let points: Vec<String> = tx
        .iter()
        .zip(&ty)
        .map(|(&x, &y)| format!("{:.3},{:.3}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    out.push_str("</svg>\n");
    Ok(out)
}
