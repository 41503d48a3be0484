//! JSON, CSV and SVG renderings of evaluation results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{ComparisonReport, ConfusionMatrix5, MetricReport};
use crate::error::{Error, Result};
use crate::geometry::HelmetRegion;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidState(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidState(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per target and metric with the mean and spread over seeds.
pub fn summary_csv(report: &MetricReport) -> Result<String> {
    let mut rows = Vec::new();
    for (target, metrics) in &report.summary {
        for (name, s) in metrics {
            rows.push(vec![
                target.name().to_string(),
                target.unit().to_string(),
                name.clone(),
                format!("{}", s.mean),
                format!("{}", s.std),
                s.n.to_string(),
            ]);
        }
    }
    csv_string(&["target", "unit", "metric", "mean", "std", "n_seeds"], rows)
}

/// Long-format table of every per-seed metric.
pub fn seeds_csv(report: &MetricReport) -> Result<String> {
    let mut rows = Vec::new();
    for seed in &report.seeds {
        for (split, map) in [("val", &seed.val), ("test", &seed.test)] {
            for (target, m) in map {
                for (name, v) in m.named() {
                    rows.push(vec![
                        seed.seed.to_string(),
                        split.to_string(),
                        target.name().to_string(),
                        name.to_string(),
                        format!("{v}"),
                    ]);
                }
            }
        }
    }
    csv_string(&["seed", "split", "target", "metric", "value"], rows)
}

pub fn comparison_csv(report: &ComparisonReport) -> Result<String> {
    let rows = report
        .methods
        .iter()
        .map(|m| {
            vec![
                m.method.clone(),
                m.accuracy.map(|a| format!("{a}")).unwrap_or_default(),
                m.matrix.correct().to_string(),
                m.matrix.total().to_string(),
                m.failed.to_string(),
                m.flagged.to_string(),
            ]
        })
        .collect();
    csv_string(&["method", "accuracy", "correct", "classified", "failed", "flagged"], rows)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Confusion matrix as a shaded grid; cell shade is the row-normalized count.
pub fn confusion_svg(matrix: &ConfusionMatrix5, title: &str) -> String {
    let cell = 60.0;
    let (left, top) = (110.0, 60.0);
    let size = left + 5.0 * cell + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{h}" font-family="sans-serif" font-size="12">"#,
        h = top + 5.0 * cell + 40.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, size / 2.0, escape(title));
    for (i, r) in HelmetRegion::ALL.iter().enumerate() {
        let y = top + (i as f64 + 0.5) * cell;
        let x = left + (i as f64 + 0.5) * cell;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end" dominant-baseline="middle">{}</text>"#, left - 6.0, r.name());
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, top - 8.0, r.name());
    }
    for (i, row) in matrix.counts.iter().enumerate() {
        let row_total: u64 = row.iter().sum();
        for (j, &c) in row.iter().enumerate() {
            let frac = if row_total > 0 { c as f64 / row_total as f64 } else { 0.0 };
            let shade = (255.0 * (1.0 - 0.8 * frac)).round() as u8;
            let (x, y) = (left + j as f64 * cell, top + i as f64 * cell);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="black"/>"#
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle">{c}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">predicted (columns) vs reference (rows)</text>"#,
        left + 2.5 * cell,
        top + 5.0 * cell + 25.0
    );
    s.push_str("</svg>\n");
    s
}

/// Reference and predicted force profiles on shared axes, sampled at 1 ms.
pub fn force_overlay_svg(reference: &[f64], predicted: &[f64], title: &str) -> String {
    let (w, h) = (480.0, 300.0);
    let (left, right, top, bottom) = (50.0, 20.0, 30.0, 40.0);
    let n = reference.len().max(predicted.len()).max(2);
    let y_max = reference
        .iter()
        .chain(predicted)
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let px = |i: usize| left + (w - left - right) * i as f64 / (n - 1) as f64;
    let py = |v: f64| top + (h - top - bottom) * (1.0 - v.clamp(0.0, y_max) / y_max);
    let line = |v: &[f64]| {
        v.iter()
            .enumerate()
            .map(|(i, y)| format!("{:.2},{:.2}", px(i), py(*y)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<polyline points="{left},{top} {left},{b} {r},{b}" fill="none" stroke="black"/>"#,
        b = h - bottom,
        r = w - right
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">time (ms)</text>"#, w / 2.0, h - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y_max:.2} kN</text>"#, left - 4.0, top + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, left - 4.0, h - bottom);
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, line(reference));
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="red" stroke-width="1.5" stroke-dasharray="4 3"/>"#,
        line(predicted)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" fill="black">reference</text>"#, w - 140.0, top + 12.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" fill="red">predicted</text>"#, w - 140.0, top + 28.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{confusion, MethodResult};

    #[test]
    fn confusion_svg_lists_every_count() {
        let pred = [HelmetRegion::Top, HelmetRegion::Left, HelmetRegion::Left];
        let refs = [HelmetRegion::Top, HelmetRegion::Left, HelmetRegion::Right];
        let m = confusion(&pred, &refs).unwrap();
        let svg = confusion_svg(&m, "a < b");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 25);
        assert!(svg.contains("a &lt; b"));
    }

    #[test]
    fn overlay_has_two_curves() {
        let r: Vec<f64> = (0..145).map(|i| (i as f64 * 0.1).sin().max(0.0)).collect();
        let svg = force_overlay_svg(&r, &r, "force");
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(force_overlay_svg(&[0.0; 3], &[0.0; 3], "zero").matches("NaN").count(), 0);
    }

    #[test]
    fn comparison_table_has_one_row_per_method() {
        let report = ComparisonReport {
            n_impacts: 2,
            methods: vec![MethodResult {
                method: "x".into(),
                matrix: ConfusionMatrix5::default(),
                failed: 2,
                flagged: 0,
                accuracy: None,
            }],
            ranking: vec!["x".into()],
        };
        let text = comparison_csv(&report).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1).unwrap(), "x,,0,0,2,0");
    }
}
