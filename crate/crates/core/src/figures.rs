//! Static SVG histograms for statement analytics.

use std::fmt::Write as _;

use crate::consensus::ConsensusReport;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; the last
/// bin is closed on the right.
pub fn bin_counts(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        if !(lo..=hi).contains(&v) {
            continue;
        }
        let b = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[b.min(bins - 1)] += 1;
    }
    counts
}

/// Horizontal position of `value` on a panel's x axis.
pub fn x_position(value: f64, lo: f64, hi: f64, x0: f64) -> f64 {
    x0 + MARGIN + (value - lo) / (hi - lo) * (WIDTH - 2.0 * MARGIN)
}

fn panel(out: &mut String, x0: f64, title: &str, values: &[f64], bins: usize, marker: Option<(f64, &str)>) {
    let (lo, hi) = (0.0, 1.0);
    let counts = bin_counts(values, bins, lo, hi);
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bar_w = plot_w / bins as f64;
    let base = HEIGHT - MARGIN;
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#,
        x0 + WIDTH / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    for (i, &c) in counts.iter().enumerate() {
        let h = c as f64 / max * plot_h;
        let _ = writeln!(
            out,
            r##"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0" stroke="white" data-count="{c}"/>"##,
            x0 + MARGIN + i as f64 * bar_w,
            base - h,
            bar_w,
            h
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="black"/>"#,
        x0 + MARGIN,
        x0 + WIDTH - MARGIN
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{v:.2}</text>"#,
            x_position(v, lo, hi, x0),
            base + 14.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
        x0 + MARGIN - 4.0,
        MARGIN + 4.0,
        max as usize
    );
    if let Some((value, label)) = marker {
        let x = x_position(value, lo, hi, x0);
        let _ = writeln!(
            out,
            r#"<line class="threshold" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{base:.2}" stroke="crimson" stroke-dasharray="4 3" data-value="{value}"/>"#,
            MARGIN
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" fill="crimson">{}</text>"#,
            x + 3.0,
            MARGIN + 10.0,
            escape(label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn document(panels: usize, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{HEIGHT}\" viewBox=\"0 0 {w} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
        w = WIDTH * panels as f64
    )
}

pub const DEFAULT_BINS: usize = 20;

/// GAC histogram with a dashed rule at the effective threshold.
pub fn gac_histogram(report: &ConsensusReport, threshold: Option<f64>) -> String {
    let values: Vec<f64> = report.statements.iter().map(|s| s.gac).collect();
    let label = threshold.map(|t| format!("threshold {t:.3}"));
    let mut body = String::new();
    panel(
        &mut body,
        0.0,
        "Group-aware consensus",
        &values,
        DEFAULT_BINS,
        threshold.zip(label.as_deref()),
    );
    document(1, &body)
}

/// Side-by-side histograms of the polarization index and its adjusted form.
pub fn polarization_histograms(report: &ConsensusReport) -> String {
    let pi: Vec<f64> = report.statements.iter().filter_map(|s| s.pi).collect();
    let adj: Vec<f64> = report.statements.iter().filter_map(|s| s.adjusted_pi).collect();
    let mut body = String::new();
    panel(&mut body, 0.0, "Polarization index", &pi, DEFAULT_BINS, None);
    panel(&mut body, WIDTH, "Adjusted polarization index", &adj, DEFAULT_BINS, None);
    document(2, &body)
}
