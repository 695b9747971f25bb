use super::evaluate::MetricsRow;
use super::metrics::Metrics;
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// `%g`-style formatting with six significant digits.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_sig)
}

pub const SUMMARY_CSV: &str = "summary.csv";
pub const LOCATIONS_CSV: &str = "locations.csv";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Argument(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `summary.csv` (year, month, crop, rmse, mae, r, n) and
/// `locations.csv` (per-location error percentage) into `dir`, sorted by
/// year, month, crop and location. Returns both paths.
pub fn export_report(rows: &[MetricsRow], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return Err(Error::Argument("no metrics rows to export".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.year, r.cutoff, r.crop.code()));

    let summary = dir.join(SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&summary).map_err(|e| csv_err(&summary, e))?;
    w.write_record(["year", "month", "crop", "rmse", "mae", "r", "n"])
        .map_err(|e| csv_err(&summary, e))?;
    for r in &sorted {
        let m = r.metrics;
        w.write_record([
            r.year.to_string(),
            r.cutoff.month().to_string(),
            r.crop.name().to_string(),
            fmt_opt(m.map(|m| m.rmse)),
            fmt_opt(m.map(|m| m.mae)),
            fmt_opt(m.and_then(|m| m.r)),
            m.map_or(0, |m| m.n).to_string(),
        ])
        .map_err(|e| csv_err(&summary, e))?;
    }
    w.flush().map_err(|e| Error::io(&summary, e))?;

    let locations = dir.join(LOCATIONS_CSV);
    let mut w = csv::Writer::from_path(&locations).map_err(|e| csv_err(&locations, e))?;
    w.write_record(["year", "month", "crop", "location", "yield", "predicted", "error_pct"])
        .map_err(|e| csv_err(&locations, e))?;
    for r in &sorted {
        for l in &r.locations {
            w.write_record([
                r.year.to_string(),
                r.cutoff.month().to_string(),
                r.crop.name().to_string(),
                l.location_id.clone(),
                fmt_sig(l.y),
                fmt_sig(l.y_hat),
                fmt_sig(l.error_pct),
            ])
            .map_err(|e| csv_err(&locations, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&locations, e))?;
    Ok((summary, locations))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Square plot of observed (x) against predicted (y) yield: one circle of
/// class `point` per pair, an identity diagonal, and MAE / r in a legend.
pub fn render_scatter_svg(pairs: &[(f64, f64)], metrics: &Metrics, title: &str) -> String {
    let finite = pairs.iter().flat_map(|&(a, b)| [a, b]).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = if hi > lo { (hi - lo) * 0.05 } else { lo.abs().max(1.0) * 0.05 };
    lo -= pad;
    hi += pad;
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + (v - lo) / (hi - lo) * span;
    let py = |v: f64| SIZE - MARGIN - (v - lo) / (hi - lo) * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line class="identity" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="gray" stroke-dasharray="4 3"/>"#,
        px(lo),
        py(lo),
        px(hi),
        py(hi)
    );
    for (i, &(y, y_hat)) in pairs.iter().enumerate() {
        if !(y.is_finite() && y_hat.is_finite()) {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<circle class="point" data-index="{i}" cx="{:.3}" cy="{:.3}" r="3" fill="steelblue" fill-opacity="0.7"/>"#,
            px(y),
            py(y_hat)
        );
    }
    for (v, anchor) in [(lo + pad, "start"), (hi - pad, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{}</text>"#,
            px(v),
            SIZE - MARGIN + 16.0,
            fmt_sig(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">observed</text>"#,
        SIZE / 2.0,
        SIZE - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 18 {})">predicted</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text class="legend" x="{}" y="{}" font-family="sans-serif" font-size="12">MAE = {}, r = {}, n = {}</text>"#,
        MARGIN + 8.0,
        MARGIN + 18.0,
        fmt_sig(metrics.mae),
        fmt_opt(metrics.r),
        metrics.n
    );
    s.push_str("</svg>\n");
    s
}

/// File name used for a cell's scatter plot.
pub fn scatter_file_name(row: &MetricsRow) -> String {
    format!("scatter_{}_{}_{}.svg", row.year, row.cutoff, row.crop)
}
