//! Text exports: CSV matrices, DOT graphs, SVG heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::ConnectivityGraph;
use crate::error::{Error, Result};
use crate::io::bundle::{read_file, write_file};
use crate::matcore::DenseMatrix;

/// 17 significant digits, enough to round-trip any f64.
pub fn format_sig17(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

/// One row per line, comma separated, optional header line.
pub fn csv_string(m: &DenseMatrix, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for r in 0..m.rows() {
        let cells: Vec<String> = m.row(r).iter().map(|&v| format_sig17(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Rectangular table of optional values; `None` becomes an empty cell.
pub fn csv_table(header: &[String], rows: &[Vec<Option<f64>>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .map(|v| match v {
                Some(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{x:.0}"),
                Some(x) => format_sig17(*x),
                None => String::new(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parses numeric CSV; a first line with any non-numeric field is a header.
pub fn parse_csv(text: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if rows.is_empty() && n == 0 => continue,
            Err(_) => return Err(Error::Malformed(format!("CSV line {}: non-numeric field", n + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::Malformed(format!(
            "CSV row {} has {} fields, expected {cols}",
            bad + 1,
            rows[bad].len()
        )));
    }
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    let r = if cols == 0 { 0 } else { data.len() / cols };
    DenseMatrix::new(r, cols, data)
}

pub fn write_csv(path: impl AsRef<Path>, m: &DenseMatrix, header: Option<&[String]>) -> Result<()> {
    write_file(path.as_ref(), csv_string(m, header).as_bytes())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Malformed(format!("{}: not UTF-8", path.display())))?;
    parse_csv(&text)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];
const NO_COMMUNITY: &str = "#cccccc";

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Directed graph text. Edges with `|w| >= threshold` are listed in
/// row-major order; pen width scales linearly from 1 to 5 with `|w|`.
pub fn export_dot(graph: &ConnectivityGraph, threshold: f64) -> String {
    let n = graph.n_nodes();
    let mut out = String::from("digraph rica {\n");
    for i in 0..n {
        let color = match &graph.communities {
            Some(c) => PALETTE[c[i] % PALETTE.len()],
            None => NO_COMMUNITY,
        };
        let label = graph.labels.get(i).map_or_else(|| i.to_string(), |l| escape(l));
        let _ = writeln!(
            out,
            "  {i} [label=\"{label}\", style=filled, fillcolor=\"{color}\"];"
        );
    }
    let w = &graph.weights;
    let max = w.max_abs();
    for i in 0..n {
        for j in 0..n {
            let v = w[(i, j)];
            if v.abs() >= threshold {
                let pen = if max > 0.0 { 1.0 + 4.0 * v.abs() / max } else { 1.0 };
                let _ = writeln!(out, "  {i} -> {j} [weight={v:?}, penwidth={pen:.3}];");
            }
        }
    }
    out.push_str("}\n");
    out
}

const CELL: usize = 20;
const MARGIN: usize = 10;

/// Blue (negative) through white to red (positive), `t` in [-1, 1].
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (1.0, 1.0 - t, 1.0 - t)
    } else {
        (1.0 + t, 1.0 + t, 1.0)
    };
    let c = |x: f64| (x * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(r), c(g), c(b))
}

/// Fixed-geometry heatmap, colour scale symmetric about zero with limit
/// `vmax` (defaults to the largest magnitude).
pub fn svg_heatmap(m: &DenseMatrix, vmax: Option<f64>) -> String {
    let (rows, cols) = m.shape();
    let limit = vmax.unwrap_or_else(|| m.max_abs());
    let width = cols * CELL + 2 * MARGIN;
    let height = rows * CELL + 2 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">"
    );
    for r in 0..rows {
        for c in 0..cols {
            let v = m[(r, c)];
            let t = if limit > 0.0 { v / limit } else { 0.0 };
            let _ = writeln!(
                out,
                "  <rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"><title>{r},{c}: {}</title></rect>",
                MARGIN + c * CELL,
                MARGIN + r * CELL,
                diverging(t),
                format_sig17(v)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg_heatmap(path: impl AsRef<Path>, m: &DenseMatrix, vmax: Option<f64>) -> Result<()> {
    write_file(path.as_ref(), svg_heatmap(m, vmax).as_bytes())
}
