//! Self-contained SVG heatmaps for matrices (kernel slices, similarity,
//! confusion).
//!
//! Output is a plain string of `<rect>` cells with a five-stop color ramp,
//! deliberately free of timestamps or random ids so that rerunning a
//! command yields byte-identical files. The log option colors cells by
//! `log10` of their magnitude — useful when a few kernel entries dominate —
//! while sign information stays in the CSV twin of the same matrix.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HeatmapOptions {
    pub title: String,
    /// Color by `log10(|v|)` instead of linearly by `v`.
    pub log_scale: bool,
    /// Cell edge in pixels.
    pub cell: usize,
    pub row_labels: Option<Vec<String>>,
    pub col_labels: Option<Vec<String>>,
}

impl Default for HeatmapOptions {
    fn default() -> HeatmapOptions {
        HeatmapOptions {
            title: String::new(),
            log_scale: false,
            cell: 12,
            row_labels: None,
            col_labels: None,
        }
    }
}

/// Five-stop ramp from dark blue through teal/green to bright yellow,
/// interpolated linearly; `t` is clamped to [0, 1].
fn ramp(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let lerp = |a: f64, b: f64| a + f * (b - a);
    (
        lerp(STOPS[i].0, STOPS[i + 1].0).round() as u8,
        lerp(STOPS[i].1, STOPS[i + 1].1).round() as u8,
        lerp(STOPS[i].2, STOPS[i + 1].2).round() as u8,
    )
}

const MISSING_COLOR: &str = "#b0b0b0";
const MAX_CELLS: usize = 500_000;

/// Render a row-major matrix as an SVG heatmap. `NaN` entries are painted
/// gray (used for missing similarity cells).
pub fn heatmap(values: &[f64], n_rows: usize, n_cols: usize, opts: &HeatmapOptions) -> Result<String> {
    if values.len() != n_rows * n_cols {
        return Err(Error::shape(
            "heatmap",
            format!("{} values for {n_rows}×{n_cols}", values.len()),
        ));
    }
    if n_rows * n_cols > MAX_CELLS {
        return Err(Error::Data(format!(
            "matrix too large to render ({} cells > {MAX_CELLS}); write CSV instead",
            n_rows * n_cols
        )));
    }
    if let Some(labels) = &opts.row_labels {
        if labels.len() != n_rows {
            return Err(Error::shape(
                "heatmap",
                format!("{} row labels for {n_rows} rows", labels.len()),
            ));
        }
    }
    if let Some(labels) = &opts.col_labels {
        if labels.len() != n_cols {
            return Err(Error::shape(
                "heatmap",
                format!("{} col labels for {n_cols} cols", labels.len()),
            ));
        }
    }

    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi, legend) = if opts.log_scale {
        let mags: Vec<f64> = finite.iter().map(|v| v.abs()).filter(|&m| m > 0.0).collect();
        let hi = mags.iter().cloned().fold(f64::MIN, f64::max);
        let lo = mags.iter().cloned().fold(f64::MAX, f64::min);
        if mags.is_empty() {
            (0.0, 1.0, "log10 |value|: all zero".to_string())
        } else {
            let lo = lo.max(hi * 1e-12); // compress absurd dynamic ranges
            (
                lo.log10(),
                hi.log10(),
                format!("log10 |value|: {:.3} to {:.3}", lo.log10(), hi.log10()),
            )
        }
    } else {
        let hi = finite.iter().cloned().fold(f64::MIN, f64::max);
        let lo = finite.iter().cloned().fold(f64::MAX, f64::min);
        if finite.is_empty() {
            (0.0, 1.0, "empty".to_string())
        } else {
            (lo, hi, format!("value: {lo:.6} to {hi:.6}"))
        }
    };
    let span = if hi > lo { hi - lo } else { 1.0 };

    let cell = opts.cell.max(1);
    let label_w = if opts.row_labels.is_some() { 90 } else { 4 };
    let label_h = if opts.col_labels.is_some() { 70 } else { 4 };
    let title_h = 36;
    let width = label_w + n_cols * cell + 4;
    let height = title_h + label_h + n_rows * cell + 24;

    let mut s = String::with_capacity(values.len() * 60 + 1024);
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    ));
    if !opts.title.is_empty() {
        s.push_str(&format!(
            "<text x=\"6\" y=\"16\" font-size=\"13\">{}</text>\n",
            xml_escape(&opts.title)
        ));
    }
    s.push_str(&format!(
        "<text x=\"6\" y=\"{}\" font-size=\"10\" fill=\"#555\">{}</text>\n",
        height - 8,
        xml_escape(&legend)
    ));

    if let Some(labels) = &opts.col_labels {
        for (j, label) in labels.iter().enumerate() {
            let x = label_w + j * cell + cell / 2;
            let y = title_h + label_h - 6;
            s.push_str(&format!(
                "<text x=\"{x}\" y=\"{y}\" font-size=\"8\" text-anchor=\"start\" \
                 transform=\"rotate(-60 {x} {y})\">{}</text>\n",
                xml_escape(label)
            ));
        }
    }
    if let Some(labels) = &opts.row_labels {
        for (i, label) in labels.iter().enumerate() {
            let y = title_h + label_h + i * cell + cell / 2 + 3;
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{y}\" font-size=\"8\" text-anchor=\"end\">{}</text>\n",
                label_w - 4,
                xml_escape(label)
            ));
        }
    }

    for i in 0..n_rows {
        for j in 0..n_cols {
            let v = values[i * n_cols + j];
            let x = label_w + j * cell;
            let y = title_h + label_h + i * cell;
            let fill = if !v.is_finite() {
                MISSING_COLOR.to_string()
            } else {
                let t = if opts.log_scale {
                    if v == 0.0 {
                        0.0
                    } else {
                        (v.abs().log10() - lo) / span
                    }
                } else {
                    (v - lo) / span
                };
                let (r, g, b) = ramp(t);
                format!("#{r:02x}{g:02x}{b:02x}")
            };
            s.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\"/>\n"
            ));
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
