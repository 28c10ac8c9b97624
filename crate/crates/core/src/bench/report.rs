use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{protocol_rows, BenchError, ExperimentResult, REAL_BACKBONES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub train: String,
    pub test: String,
    pub backbone: String,
    pub seed: u64,
    pub n_test: usize,
    pub top1: f64,
}

/// Flat accuracy table in the results CSV layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

const PUBLISHED_CSV: &str = include_str!("../../data/published_cross_eval.csv");

/// The published cross-evaluation accuracies (3 datasets x 4 backbones x 4
/// train/test pairings) as a results table.
pub fn published_cross_eval() -> ResultTable {
    ResultTable::from_csv(PUBLISHED_CSV).expect("bundled table parses")
}

impl ResultTable {
    pub fn from_results(results: &[ExperimentResult]) -> Self {
        Self {
            rows: results
                .iter()
                .map(|r| ResultRow {
                    train: r.spec.train.clone(),
                    test: r.spec.test.clone(),
                    backbone: r.spec.backbone.clone(),
                    seed: r.spec.seed,
                    n_test: r.n_test,
                    top1: r.top1,
                })
                .collect(),
        }
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<Result<Vec<ResultRow>, _>>()
            .map_err(|e| BenchError::Validation(format!("results csv: {e}")))?;
        Ok(Self { rows })
    }

    /// Mean accuracy over seeds for one cell.
    pub fn cell(&self, train: &str, test: &str, backbone: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.train == train && r.test == test && r.backbone == backbone)
            .map(|r| r.top1)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Backbones in first-appearance order.
    pub fn backbones(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.backbone) {
                out.push(r.backbone.clone());
            }
        }
        out
    }

    pub fn manifest_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            for n in [&r.train, &r.test] {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        }
        out
    }

    /// Cross table: one row per train/test pairing, one column per backbone.
    pub fn render_text(&self, pairs: &[(String, String)], backbones: &[String]) -> String {
        let mut header = vec!["Train".to_string(), "Test".to_string()];
        header.extend(backbones.iter().map(|b| backbone_label(b)));
        let mut body: Vec<Option<Vec<String>>> = Vec::new();
        for (i, (s, f)) in pairs.iter().enumerate() {
            if i > 0 {
                body.push(None);
            }
            for (train, test) in protocol_rows(s, f) {
                let mut row = vec![train.to_string(), test.to_string()];
                row.extend(
                    backbones
                        .iter()
                        .map(|b| self.cell(train, test, b).map_or("-".into(), |v| format!("{v:.1}"))),
                );
                body.push(Some(row));
            }
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                body.iter()
                    .flatten()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let rule = widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-");
        let mut out = String::new();
        writeln!(out, "{}", line(&header)).unwrap();
        writeln!(out, "{rule}").unwrap();
        for row in &body {
            match row {
                Some(r) => writeln!(out, "{}", line(r)).unwrap(),
                None => writeln!(out, "{rule}").unwrap(),
            }
        }
        out
    }

    /// Same layout as [`render_text`](Self::render_text), as CSV.
    pub fn render_csv(&self, pairs: &[(String, String)], backbones: &[String]) -> String {
        let mut out = format!("train,test,{}\n", backbones.join(","));
        for (s, f) in pairs {
            for (train, test) in protocol_rows(s, f) {
                let cells: Vec<String> = backbones
                    .iter()
                    .map(|b| self.cell(train, test, b).map_or(String::new(), |v| format!("{v:.1}")))
                    .collect();
                writeln!(out, "{train},{test},{}", cells.join(",")).unwrap();
            }
        }
        out
    }
}

pub fn backbone_label(id: &str) -> String {
    match id {
        "vit-b16" => "ViT-B/16".into(),
        "resnet50" => "ResNet-50".into(),
        "swinv2-b" => "Swinv2-B".into(),
        "convnext-b" => "ConvNeXt-B".into(),
        other => other.into(),
    }
}

/// Pairs `X` with `X_FG` for every name where both are present, in
/// first-appearance order.
pub fn infer_pairs(names: &[String]) -> Vec<(String, String)> {
    names
        .iter()
        .filter(|n| !n.ends_with("_FG"))
        .filter_map(|n| {
            let fg = format!("{n}_FG");
            names.contains(&fg).then(|| (n.clone(), fg))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub dataset: String,
    pub backbone: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSummary {
    /// Mean of acc(S→S) − acc(S→FG) over (dataset, backbone) cells.
    pub avg_source_to_fg_drop: f64,
    /// Mean of acc(FG→FG) − acc(FG→S).
    pub avg_fg_to_source_drop: f64,
    /// acc(FG→FG) − acc(S→S) per cell.
    pub fg_training_improvements: Vec<Improvement>,
    pub all_improvements_positive: bool,
}

/// Aggregate statements to check a summary against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceClaims {
    /// Stated lower bound on the average source→FG drop.
    pub source_to_fg_drop_over: f64,
    /// Stated upper bound on the average FG→source drop.
    pub fg_to_source_drop_within: f64,
}

impl Default for ReferenceClaims {
    fn default() -> Self {
        Self {
            source_to_fg_drop_over: 6.0,
            fg_to_source_drop_within: 2.5,
        }
    }
}

pub fn summarize_claims(table: &ResultTable, pairs: &[(String, String)]) -> Result<ClaimSummary, BenchError> {
    let mut missing = Vec::new();
    let mut s2f = Vec::new();
    let mut f2s = Vec::new();
    let mut improvements = Vec::new();
    for (src, fg) in pairs {
        let rows = protocol_rows(src, fg);
        let backbones: Vec<String> = table
            .backbones()
            .into_iter()
            .filter(|b| rows.iter().any(|(tr, te)| table.cell(tr, te, b).is_some()))
            .collect();
        if backbones.is_empty() {
            missing.push(format!("{src}/{fg}: no results"));
        }
        for b in backbones {
            let cells: Vec<Option<f64>> = rows.iter().map(|(tr, te)| table.cell(tr, te, &b)).collect();
            for ((tr, te), c) in rows.iter().zip(&cells) {
                if c.is_none() {
                    missing.push(format!("{tr}→{te} [{b}]"));
                }
            }
            if let [Some(ss), Some(sf), Some(ff), Some(fs)] = cells[..] {
                s2f.push(ss - sf);
                f2s.push(ff - fs);
                improvements.push(Improvement {
                    dataset: src.clone(),
                    backbone: b.clone(),
                    delta: ff - ss,
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(BenchError::Incomplete(missing));
    }
    if pairs.is_empty() {
        return Err(BenchError::Validation("no dataset pairs".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ClaimSummary {
        avg_source_to_fg_drop: mean(&s2f),
        avg_fg_to_source_drop: mean(&f2s),
        all_improvements_positive: !improvements.is_empty() && improvements.iter().all(|i| i.delta > 0.0),
        fg_training_improvements: improvements,
    })
}

impl ClaimSummary {
    /// Human-readable block, including whether each reference statement
    /// holds for the computed means.
    pub fn render(&self, reference: &ReferenceClaims) -> String {
        let mut out = String::new();
        let n = self.fg_training_improvements.len();
        writeln!(out, "cells: {n}").unwrap();
        writeln!(out, "avg source->FG drop: {:.2} points", self.avg_source_to_fg_drop).unwrap();
        writeln!(out, "avg FG->source drop: {:.2} points", self.avg_fg_to_source_drop).unwrap();
        let positive = self.fg_training_improvements.iter().filter(|i| i.delta > 0.0).count();
        writeln!(out, "FG-training improvements positive: {positive}/{n}").unwrap();
        for i in &self.fg_training_improvements {
            writeln!(out, "  {:<10} {:<12} {:+.1}", i.dataset, backbone_label(&i.backbone), i.delta).unwrap();
        }
        for check in self.check(reference) {
            writeln!(out, "{check}").unwrap();
        }
        out
    }

    pub fn check(&self, reference: &ReferenceClaims) -> Vec<String> {
        let over = self.avg_source_to_fg_drop > reference.source_to_fg_drop_over;
        let within = self.avg_fg_to_source_drop <= reference.fg_to_source_drop_within;
        vec![
            format!(
                "reference: source->FG drop over {:.1} on average: {} (mean {:.2}{})",
                reference.source_to_fg_drop_over,
                if over { "holds" } else { "DIVERGES" },
                self.avg_source_to_fg_drop,
                if over { "" } else { ", below the stated figure" }
            ),
            format!(
                "reference: FG->source drop within {:.1} on average: {} (mean {:.2})",
                reference.fg_to_source_drop_within,
                if within { "holds" } else { "DIVERGES" },
                self.avg_fg_to_source_drop
            ),
            format!(
                "reference: FG training consistently better: {}",
                if self.all_improvements_positive { "holds" } else { "DIVERGES" }
            ),
        ]
    }
}

const PALETTE: [&str; 4] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759"];

/// Grouped bar chart for one dataset pair: one group per backbone, one bar
/// per train/test pairing.
pub fn render_bar_chart_svg(table: &ResultTable, pair: &(String, String), backbones: &[String]) -> String {
    let rows = protocol_rows(&pair.0, &pair.1);
    let values: Vec<Vec<Option<f64>>> = backbones
        .iter()
        .map(|b| rows.iter().map(|(tr, te)| table.cell(tr, te, b)).collect())
        .collect();
    let present: Vec<f64> = values.iter().flatten().flatten().copied().collect();
    let hi = present.iter().copied().fold(0.0, f64::max).ceil();
    let lo = (present.iter().copied().fold(hi, f64::min) - 5.0).floor().max(0.0);
    let span = (hi - lo).max(1.0);

    let (bar, gap, left, top, plot_h) = (18.0, 24.0, 50.0, 30.0, 220.0);
    let group_w = bar * 4.0 + gap;
    let width = left + group_w * backbones.len().max(1) as f64 + 170.0;
    let height = top + plot_h + 50.0;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<text x="{left}" y="18" font-size="13">{} / {}</text>"#, pair.0, pair.1).unwrap();
    for t in 0..=4 {
        let v = lo + span * t as f64 / 4.0;
        let y = top + plot_h - plot_h * t as f64 / 4.0;
        writeln!(
            svg,
            r##"<line x1="{left}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            width - 170.0,
            left - 4.0,
            y + 4.0
        )
        .unwrap();
    }
    for (g, (b, vals)) in backbones.iter().zip(&values).enumerate() {
        let gx = left + gap / 2.0 + g as f64 * group_w;
        for (k, v) in vals.iter().enumerate() {
            if let Some(v) = v {
                let h = plot_h * (v - lo) / span;
                writeln!(
                    svg,
                    r#"<rect x="{}" y="{}" width="{bar}" height="{h}" fill="{}"><title>{v:.1}</title></rect>"#,
                    gx + k as f64 * bar,
                    top + plot_h - h,
                    PALETTE[k]
                )
                .unwrap();
            }
        }
        writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            gx + bar * 2.0,
            top + plot_h + 16.0,
            backbone_label(b)
        )
        .unwrap();
    }
    for (k, (tr, te)) in rows.iter().enumerate() {
        let y = top + 10.0 + k as f64 * 18.0;
        let x = width - 160.0;
        writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{tr} → {te}</text>"#,
            y - 10.0,
            PALETTE[k],
            x + 16.0,
            y
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// Default column set: the real backbones in table order, then any others.
pub fn default_backbones(table: &ResultTable) -> Vec<String> {
    let present = table.backbones();
    let mut out: Vec<String> = REAL_BACKBONES
        .iter()
        .filter(|b| present.iter().any(|p| p == *b))
        .map(|b| b.to_string())
        .collect();
    out.extend(present.into_iter().filter(|p| !REAL_BACKBONES.contains(&p.as_str())));
    out
}

/// Per-dataset mean of each protocol row, for quick inspection.
pub fn row_means(table: &ResultTable, pair: &(String, String)) -> BTreeMap<String, f64> {
    protocol_rows(&pair.0, &pair.1)
        .iter()
        .filter_map(|(tr, te)| {
            let v: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| &r.train == tr && &r.test == te)
                .map(|r| r.top1)
                .collect();
            (!v.is_empty()).then(|| (format!("{tr}->{te}"), v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}
