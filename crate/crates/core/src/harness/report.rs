use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::runner::{blend_strategies, AggregateResult, GroupPreset, LrMode, DEFAULT_EPOCHS};
use crate::label::LabelSet;
use crate::metrics::Score;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Columns B, C, A, D, E.
    Phase2,
    /// Columns simple mix, ALL, sigmoids, powers, cosine.
    Phase3,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "phase2" => Ok(Layout::Phase2),
            "phase3" => Ok(Layout::Phase3),
            _ => Err(format!("unknown layout `{s}`")),
        }
    }
}

impl Layout {
    fn column_rank(self, label: &str) -> Option<usize> {
        match self {
            Layout::Phase2 => [GroupPreset::B, GroupPreset::C, GroupPreset::A, GroupPreset::D, GroupPreset::E]
                .iter()
                .position(|g| g.to_string() == label),
            Layout::Phase3 => blend_strategies(DEFAULT_EPOCHS).iter().position(|s| s.kind.to_string() == label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `micro`, `macro`, `weighted` or a label.
    pub row: String,
    /// `f1`, `precision` or `recall`.
    pub metric: String,
    pub support: u64,
    pub values: Vec<f64>,
    /// Indexes of the columns holding the row maximum.
    pub best: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub layout: Layout,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

fn pick(s: Score, metric: &str) -> f64 {
    match metric {
        "precision" => s.precision,
        "recall" => s.recall,
        _ => s.f1,
    }
}

/// Arranges aggregates as metric rows by strategy columns and flags the best
/// value in each row. Columns unknown to the layout follow in input order.
pub fn emit_report(aggregates: &[AggregateResult], layout: Layout) -> ComparisonReport {
    let mut order: Vec<&AggregateResult> = aggregates.iter().collect();
    order.sort_by_key(|a| {
        let mode = match LrMode::of(&a.lr) {
            LrMode::NoDecay => 0,
            LrMode::Decay => 1,
        };
        (layout.column_rank(&a.label).unwrap_or(usize::MAX), mode)
    });
    let columns = order.iter().map(|a| format!("{} ({})", a.label, LrMode::of(&a.lr))).collect();

    let mut labels: Vec<String> = LabelSet::default().iter().map(|l| l.to_string()).collect();
    for a in &order {
        for l in a.mean.per_type.keys() {
            if !labels.iter().any(|x| x == l.as_str()) {
                labels.push(l.to_string());
            }
        }
    }
    let mut row_names = vec!["micro".to_string(), "macro".to_string(), "weighted".to_string()];
    row_names.extend(labels.into_iter().filter(|l| order.iter().any(|a| a.mean.per_type.contains_key(l.as_str()))));

    let mut rows = Vec::new();
    for row in &row_names {
        for metric in ["f1", "precision", "recall"] {
            let mut support = 0;
            let values: Vec<f64> = order
                .iter()
                .map(|a| {
                    let r = &a.mean;
                    let score = match row.as_str() {
                        "micro" => Some(r.micro),
                        "macro" => Some(r.macro_avg),
                        "weighted" => Some(r.weighted),
                        l => r.per_type.get(l).map(|t| t.score()),
                    };
                    support = support.max(match row.as_str() {
                        "micro" | "macro" | "weighted" => r.total_support,
                        l => r.per_type.get(l).map_or(0, |t| t.support),
                    });
                    score.map_or(0.0, |s| pick(s, metric))
                })
                .collect();
            let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let best = values.iter().enumerate().filter(|(_, v)| **v == top).map(|(i, _)| i).collect();
            rows.push(ReportRow { row: row.clone(), metric: metric.to_string(), support, values, best });
        }
    }
    ComparisonReport { layout, columns, rows }
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per row: `row,metric,support,<columns...>,best`; values at full
    /// precision, `best` lists column names joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string(), "metric".into(), "support".into()];
        header.extend(self.columns.iter().cloned());
        header.push("best".into());
        w.write_record(&header).unwrap();
        for r in &self.rows {
            let mut rec = vec![r.row.clone(), r.metric.clone(), r.support.to_string()];
            rec.extend(r.values.iter().map(f64::to_string));
            rec.push(r.best.iter().map(|&i| self.columns[i].as_str()).collect::<Vec<_>>().join(";"));
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    /// Parses [`ComparisonReport::to_csv`] output back into rows.
    pub fn rows_from_csv(text: &str) -> Result<(Vec<String>, Vec<ReportRow>), csv::Error> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers()?.clone();
        let columns: Vec<String> = header.iter().skip(3).take(header.len() - 4).map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let values: Vec<f64> = (3..3 + columns.len()).map(|i| rec[i].parse().unwrap_or(f64::NAN)).collect();
            let best_names: Vec<&str> = rec[rec.len() - 1].split(';').filter(|s| !s.is_empty()).collect();
            rows.push(ReportRow {
                row: rec[0].to_string(),
                metric: rec[1].to_string(),
                support: rec[2].parse().unwrap_or(0),
                values,
                best: columns.iter().enumerate().filter(|(_, c)| best_names.contains(&c.as_str())).map(|(i, _)| i).collect(),
            });
        }
        Ok((columns, rows))
    }

    /// Markdown table with best values in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| metric |");
        for c in &self.columns {
            write!(out, " {c} |").unwrap();
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for r in &self.rows {
            let name = match r.row.as_str() {
                "micro" | "macro" | "weighted" => format!("{} avg {} (support: {})", r.row, r.metric, r.support),
                l => format!("{l} {} (support: {})", r.metric, r.support),
            };
            write!(out, "| {name} |").unwrap();
            for (i, v) in r.values.iter().enumerate() {
                if r.best.contains(&i) {
                    write!(out, " **{v:.3}** |").unwrap();
                } else {
                    write!(out, " {v:.3} |").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}
