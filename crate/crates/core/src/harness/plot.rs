use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::metrics::{load_metrics, MetricsRow};
use super::stats::moving_average;

pub const VIEW_WIDTH: u32 = 800;
pub const VIEW_HEIGHT: u32 = 500;

const LEFT: f64 = 70.0;
const RIGHT: f64 = 610.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 440.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Curve {
    run_id: String,
    mean: Vec<f64>,
    band: Option<(Vec<f64>, Vec<f64>)>,
}

fn curves(rows: &[MetricsRow], window: usize) -> Result<Vec<Curve>> {
    let mut runs: BTreeMap<&str, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in rows {
        runs.entry(&r.run_id).or_default().entry(r.seed).or_default().push(r.return_total);
    }
    if runs.is_empty() {
        return Err(Error::contract("no metrics rows to plot"));
    }
    let mut out = Vec::new();
    for (run_id, seeds) in runs {
        let smoothed = seeds.values().map(|s| moving_average(s, window)).collect::<Result<Vec<_>>>()?;
        let len = smoothed.iter().map(Vec::len).min().unwrap_or(0);
        let at = |i: usize| smoothed.iter().map(move |s| s[i]);
        let mean = (0..len).map(|i| at(i).sum::<f64>() / smoothed.len() as f64).collect();
        let band = (smoothed.len() > 1).then(|| {
            (
                (0..len).map(|i| at(i).fold(f64::INFINITY, f64::min)).collect(),
                (0..len).map(|i| at(i).fold(f64::NEG_INFINITY, f64::max)).collect(),
            )
        });
        out.push(Curve {
            run_id: run_id.to_string(),
            mean,
            band,
        });
    }
    Ok(out)
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Learning curves as a standalone SVG: per run, the mean over seeds of the
/// smoothed returns plus a min–max band when there is more than one seed.
pub fn render_plot(rows: &[MetricsRow], window: usize) -> Result<String> {
    let curves = curves(rows, window)?;
    let len = curves.iter().map(|c| c.mean.len()).max().unwrap_or(1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in &curves {
        let (mins, maxs) = c.band.as_ref().map_or((&c.mean, &c.mean), |(a, b)| (a, b));
        lo = mins.iter().copied().fold(lo, f64::min);
        hi = maxs.iter().copied().fold(hi, f64::max);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let x_max = (len.max(2) - 1) as f64;
    let sx = |i: usize| LEFT + (RIGHT - LEFT) * i as f64 / x_max;
    let sy = |v: f64| BOTTOM - (BOTTOM - TOP) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{VIEW_WIDTH}" height="{VIEW_HEIGHT}" viewBox="0 0 {VIEW_WIDTH} {VIEW_HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r##"<rect x="0" y="0" width="{VIEW_WIDTH}" height="{VIEW_HEIGHT}" fill="#ffffff"/>"##);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            w,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{RIGHT}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 6.0,
            y + 4.0,
            fmt_num(v)
        );
        let e = (x_max * k as f64 / 4.0).round() as usize;
        let x = sx(e);
        let _ = writeln!(
            w,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#,
            BOTTOM + 18.0
        );
    }
    let _ = writeln!(
        w,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#333333"/>"##,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Episode</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 42.0
    );
    let _ = writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">Return (moving average, window {window})</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0
    );

    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if let Some((mins, maxs)) = &c.band {
            let mut pts: Vec<String> = maxs.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", sx(i), sy(v))).collect();
            pts.extend(mins.iter().enumerate().rev().map(|(i, &v)| format!("{:.2},{:.2}", sx(i), sy(v))));
            let _ = writeln!(
                w,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = c.mean.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", sx(i), sy(v))).collect();
        let _ = writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let _ = writeln!(
            w,
            r#"<line x1="630" y1="{ly:.2}" x2="655" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="662" y="{:.2}">{}</text>"#,
            ly + 4.0,
            escape(&c.run_id)
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}

/// Reads every metrics file, renders the curves and writes the SVG.
pub fn emit_plot(inputs: &[PathBuf], window: usize, output: &Path) -> Result<()> {
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for path in inputs {
        let file_rows = load_metrics(path)?;
        let keys: std::collections::BTreeSet<(String, u64)> =
            file_rows.iter().map(|r| (r.run_id.clone(), r.seed)).collect();
        for key in keys {
            if !seen.insert(key.clone()) {
                return Err(Error::contract(format!(
                    "run {} seed {} appears in more than one input",
                    key.0, key.1
                )));
            }
        }
        rows.extend(file_rows);
    }
    let svg = render_plot(&rows, window)?;
    std::fs::write(output, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(run: &str, seed: u64, returns: &[f64]) -> Vec<MetricsRow> {
        returns
            .iter()
            .enumerate()
            .map(|(episode, &r)| MetricsRow {
                run_id: run.into(),
                seed,
                episode,
                return_total: r,
                collisions: 0,
                steps: 1,
                epsilon: 0.0,
            })
            .collect()
    }

    #[test]
    fn single_seed_has_no_band() {
        let svg = render_plot(&rows("a", 1, &[1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(!svg.contains("<polygon"));
        assert!(svg.contains(r#"viewBox="0 0 800 500""#));
        assert!(svg.contains("Episode") && svg.contains("window 2"));
    }

    #[test]
    fn runs_are_sorted_and_banded() {
        let mut all = rows("zeta", 1, &[0.0, 1.0]);
        all.extend(rows("alpha", 1, &[2.0, 2.0]));
        all.extend(rows("alpha", 2, &[0.0, 4.0]));
        let svg = render_plot(&all, 1).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 1);
        let a = svg.find(">alpha</text>").unwrap();
        let z = svg.find(">zeta</text>").unwrap();
        assert!(a < z);
        assert_eq!(svg, render_plot(&all, 1).unwrap());
    }

    #[test]
    fn escapes_and_errors() {
        assert!(render_plot(&[], 5).is_err());
        assert!(render_plot(&rows("a", 1, &[1.0]), 0).is_err());
        let svg = render_plot(&rows("a<b", 1, &[1.0]), 5).unwrap();
        assert!(svg.contains("a&lt;b"));
    }
}
