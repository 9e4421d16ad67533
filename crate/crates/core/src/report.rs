//! Evaluation report and its text rendering.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighlightSection {
    #[serde(rename = "HD mAP")]
    pub map: f64,
    #[serde(rename = "HIT@1")]
    pub hit_at_1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QaSection {
    pub accuracy: f64,
    #[serde(rename = "WUPS@0.9")]
    pub wups: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub queries: usize,
    pub seed: Option<u64>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "R1@0.5")]
    pub r1_05: f64,
    #[serde(rename = "R1@0.7")]
    pub r1_07: f64,
    #[serde(rename = "mAP@0.5")]
    pub map_05: f64,
    #[serde(rename = "mAP@0.75")]
    pub map_075: f64,
    #[serde(rename = "mAP Avg.")]
    pub map_avg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highlight: Option<HighlightSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa: Option<QaSection>,
    #[serde(default)]
    pub meta: RunMeta,
}

pub const COLUMNS: [&str; 7] = ["R1@0.5", "R1@0.7", "mAP@0.5", "mAP@0.75", "Avg.", "HD mAP", "HIT@1"];
const WIDTH: usize = 9;

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:>WIDTH$.2}", 100.0 * v),
        None => format!("{:>WIDTH$}", "-"),
    }
}

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            Some(self.r1_05),
            Some(self.r1_07),
            Some(self.map_05),
            Some(self.map_075),
            Some(self.map_avg),
            self.highlight.map(|h| h.map),
            self.highlight.map(|h| h.hit_at_1),
        ]
    }
}

/// Fixed-width table of the retrieval columns in percent.
pub fn render(report: &MetricsReport) -> String {
    render_rows(&[(String::new(), report)])
}

/// Table with one labelled row per report.
pub fn render_rows(rows: &[(String, &MetricsReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
    let mut out = String::new();
    let prefix = |l: &str| {
        if label_w == 0 {
            String::new()
        } else {
            format!("{l:<label_w$} ")
        }
    };
    out.push_str(&prefix(""));
    let header: Vec<String> = COLUMNS.iter().map(|c| format!("{c:>WIDTH$}")).collect();
    out.push_str(&header.join(" "));
    out.push('\n');
    for (label, report) in rows {
        out.push_str(&prefix(label));
        let cells: Vec<String> = report.values().into_iter().map(cell).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// Reads the numeric cells back from a table produced by [`render`].
pub fn parse_rendered(table: &str) -> Vec<[Option<f64>; 7]> {
    table
        .lines()
        .skip(1)
        .map(|line| {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let tail = &fields[fields.len().saturating_sub(7)..];
            let mut row = [None; 7];
            for (slot, f) in row.iter_mut().zip(tail) {
                *slot = f.parse::<f64>().ok().map(|v| v / 100.0);
            }
            row
        })
        .collect()
}
