//! Report artifacts: per-run metric CSV, per-sample score CSV, aggregate
//! JSON, a plain-text summary table and ROC curves as SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{roc_curve, ScoredSample};
use super::protocol::{ConfigSummary, ExperimentReport, PositionSummary, RunRow, RunScores};
use crate::error::{Error, Result};

pub const METRICS_CSV: &str = "metrics.csv";
pub const SCORES_CSV: &str = "scores.csv";
pub const SUMMARY_JSON: &str = "summary.json";

const METRICS_HEADER: &str = "position,fold,config,accuracy,tpr,auroc,tau";
const SCORES_HEADER: &str = "position,fold,config,truth,predicted,score";

pub fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.position, r.fold, r.config, r.accuracy, r.tpr, r.auroc, r.tau
        );
    }
    out
}

pub fn scores_csv(scores: &[RunScores]) -> String {
    let mut out = String::from(SCORES_HEADER);
    out.push('\n');
    for run in scores {
        for s in &run.samples {
            let truth = s.truth.map_or("unknown".to_string(), |t| t.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                run.position, run.fold, run.config, truth, s.predicted, s.score
            );
        }
    }
    out
}

/// Parses a score CSV back into per-run groups, in file order.
pub fn parse_scores_csv(text: &str) -> std::result::Result<Vec<RunScores>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCORES_HEADER => {}
        other => return Err(format!("expected header {SCORES_HEADER:?}, found {:?}", other.map(|x| x.1))),
    }
    let mut runs: Vec<RunScores> = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(format!("line {}: expected 6 columns, got {}", ln + 1, cols.len()));
        }
        let num = |i: usize| -> std::result::Result<usize, String> {
            cols[i].parse().map_err(|e| format!("line {}: column {}: {e}", ln + 1, i + 1))
        };
        let (position, fold, predicted) = (num(0)?, num(1)?, num(4)?);
        let truth = if cols[3] == "unknown" { None } else { Some(num(3)?) };
        let score: f64 = cols[5]
            .parse()
            .map_err(|e| format!("line {}: score: {e}", ln + 1))?;
        let sample = ScoredSample {
            score,
            predicted,
            truth,
            position,
        };
        match runs.last_mut() {
            Some(r) if r.position == position && r.fold == fold && r.config == cols[2] => r.samples.push(sample),
            _ => runs.push(RunScores {
                position,
                fold,
                config: cols[2].to_string(),
                samples: vec![sample],
            }),
        }
    }
    Ok(runs)
}

/// Parses a metric CSV back into rows, in file order.
pub fn parse_metrics_csv(text: &str) -> std::result::Result<Vec<RunRow>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        other => return Err(format!("expected header {METRICS_HEADER:?}, found {:?}", other.map(|x| x.1))),
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(format!("line {}: expected 7 columns, got {}", ln + 1, cols.len()));
        }
        let err = |i: usize| move |e: &dyn std::fmt::Display| format!("line {}: column {}: {e}", ln + 1, i + 1);
        let int = |i: usize| cols[i].parse::<usize>().map_err(|e| err(i)(&e));
        let float = |i: usize| cols[i].parse::<f64>().map_err(|e| err(i)(&e));
        rows.push(RunRow {
            position: int(0)?,
            fold: int(1)?,
            config: cols[2].to_string(),
            accuracy: float(3)?,
            tpr: float(4)?,
            auroc: float(5)?,
            tau: float(6)?,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct Summary<'a> {
    fpr: f64,
    positions: &'a [String],
    per_config: &'a [ConfigSummary],
    per_position: &'a [PositionSummary],
}

pub fn summary_json(report: &ExperimentReport, positions: &[String], fpr: f64) -> String {
    let s = Summary {
        fpr,
        positions,
        per_config: &report.per_config,
        per_position: &report.per_position,
    };
    serde_json::to_string_pretty(&s).expect("summary serializes")
}

/// Aligned text table of the per-config aggregates (mean ± std).
pub fn summary_table(report: &ExperimentReport, label: impl Fn(&str) -> String) -> String {
    let header = ["config", "runs", "accuracy", "TPR@FPR", "AUROC", "AUROC std over positions"];
    let rows: Vec<[String; 6]> = report
        .per_config
        .iter()
        .map(|c| {
            [
                label(&c.config),
                c.runs.to_string(),
                format!("{:.4} ± {:.4}", c.accuracy.mean, c.accuracy.std),
                format!("{:.4} ± {:.4}", c.tpr.mean, c.tpr.std),
                format!("{:.4} ± {:.4}", c.auroc.mean, c.auroc.std),
                format!("{:.4}", c.position_auroc.std),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = fmt_row(header.to_vec());
    out.push_str(&format!(
        "|{}|\n",
        widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
    ));
    for r in &rows {
        out.push_str(&fmt_row(r.iter().map(String::as_str).collect()));
    }
    out
}

/// Minimal SVG line plot of one or more ROC curves on the unit square.
pub fn roc_svg(title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let x = |v: f64| PAD + v * SIZE;
    let y = |v: f64| PAD + (1.0 - v) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, total / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{t}</text>"#, x(t), y(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#, x(0.0) - 6.0, y(t) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#, total / 2.0, total - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">true positive rate</text>"#,
        total / 2.0,
        total / 2.0
    );
    for (i, (name, pts)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(k, &(fx, ty))| format!("{}{:.2},{:.2}", if k == 0 { "M" } else { "L" }, x(fx), y(ty)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        let ly = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" text-anchor="end" fill="{color}">{}</text>"#,
            x(1.0) - 8.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// ROC curves pooled over all runs of each config, in first-seen order.
pub fn pooled_rocs(scores: &[RunScores]) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let mut order: Vec<String> = Vec::new();
    let mut pooled: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for run in scores {
        if !pooled.contains_key(&run.config) {
            order.push(run.config.clone());
        }
        let entry = pooled.entry(run.config.clone()).or_default();
        for s in &run.samples {
            match s.truth {
                Some(_) => entry.0.push(s.score),
                None => entry.1.push(s.score),
            }
        }
    }
    order
        .into_iter()
        .map(|name| {
            let (k, u) = &pooled[&name];
            Ok((name, roc_curve(k, u)?))
        })
        .collect()
}

/// Writes one `roc_<config>.svg` per config; returns the written paths.
pub fn write_roc_svgs(scores: &[RunScores], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, pts) in pooled_rocs(scores)? {
        let path = dir.join(format!("roc_{name}.svg"));
        let svg = roc_svg(&format!("ROC: {name}"), &[(name.clone(), pts)]);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the metric CSV, score CSV, summary JSON and ROC plots into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path, positions: &[String], fpr: f64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    put(METRICS_CSV, metrics_csv(report))?;
    put(SCORES_CSV, scores_csv(&report.scores))?;
    put(SUMMARY_JSON, summary_json(report, positions, fpr))?;
    write_roc_svgs(&report.scores, dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores() -> Vec<RunScores> {
        let s = |score, truth| ScoredSample {
            score,
            predicted: 1,
            truth,
            position: 0,
        };
        vec![
            RunScores {
                position: 0,
                fold: 0,
                config: "full".into(),
                samples: vec![s(0.1, Some(0)), s(2.5, None), s(0.30000000000000004, Some(1))],
            },
            RunScores {
                position: 0,
                fold: 1,
                config: "full".into(),
                samples: vec![s(1e-17, Some(2)), s(3.0, None)],
            },
        ]
    }

    #[test]
    fn score_csv_round_trips_exactly() {
        let s = scores();
        assert_eq!(parse_scores_csv(&scores_csv(&s)).unwrap(), s);
        assert!(parse_scores_csv("nope\n").is_err());
        assert!(parse_scores_csv(&format!("{SCORES_HEADER}\n0,0,x,1,2\n")).is_err());
    }

    #[test]
    fn metrics_csv_rows() {
        let report = ExperimentReport {
            rows: vec![RunRow {
                position: 2,
                fold: 1,
                config: "base".into(),
                accuracy: 1.0,
                tpr: 0.5,
                auroc: 0.875,
                tau: 0.25,
            }],
            per_config: vec![],
            per_position: vec![],
            scores: vec![],
        };
        let text = metrics_csv(&report);
        assert_eq!(text, format!("{METRICS_HEADER}\n2,1,base,1,0.5,0.875,0.25\n"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), report.rows);
        assert!(parse_metrics_csv(&format!("{METRICS_HEADER}\n2,1,base,1,x,0.875,0.25\n")).is_err());
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let rocs = pooled_rocs(&scores()).unwrap();
        assert_eq!(rocs.len(), 1);
        let svg = roc_svg("t <1>", &rocs);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<path").count(), 1);
    }
}
