use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::triplets::Variant;

use super::{EvalError, EvalRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessReport {
    pub activity: String,
    pub scheme: String,
    pub variant: Variant,
    pub n: u64,
    /// Percentage of counted triplets predicted correctly.
    pub success_rate: f64,
    pub tie_count: u64,
    pub empty_strata: u64,
    /// Triplets left out of `n` because evaluation failed.
    pub excluded: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(format!("unknown report format {s:?} (expected text, csv or json)")),
        }
    }
}

#[derive(Default)]
struct Tally {
    n: u64,
    correct: u64,
    ties: u64,
    empty: u64,
    excluded: u64,
}

/// One report per (scheme, activity, variant), sorted by that key. Groups
/// in which every triplet failed are omitted.
pub fn summarize(records: &[EvalRecord]) -> Result<Vec<SuccessReport>, EvalError> {
    let mut groups: BTreeMap<(&str, &str, Variant), Tally> = BTreeMap::new();
    for r in records {
        let t = groups.entry((&r.scheme, &r.activity, r.variant)).or_default();
        if r.error.is_some() {
            t.excluded += 1;
            continue;
        }
        t.n += 1;
        t.correct += u64::from(r.correct);
        t.ties += u64::from(r.tie);
        t.empty += r.empty_strata as u64;
    }
    let reports: Vec<SuccessReport> = groups
        .into_iter()
        .filter(|(_, t)| t.n > 0)
        .map(|((scheme, activity, variant), t)| SuccessReport {
            activity: activity.into(),
            scheme: scheme.into(),
            variant,
            n: t.n,
            success_rate: 100.0 * t.correct as f64 / t.n as f64,
            tie_count: t.ties,
            empty_strata: t.empty,
            excluded: t.excluded,
        })
        .collect();
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(reports)
}

fn row_name(r: &SuccessReport) -> String {
    match r.variant {
        Variant::Causal => r.scheme.clone(),
        v => format!("{} ({})", r.scheme, v.as_str()),
    }
}

fn render_text(reports: &[SuccessReport]) -> String {
    let activities: BTreeSet<&str> = reports.iter().map(|r| r.activity.as_str()).collect();
    let mut rows: BTreeMap<String, BTreeMap<&str, &SuccessReport>> = BTreeMap::new();
    for r in reports {
        rows.entry(row_name(r)).or_default().insert(&r.activity, r);
    }
    let mut header = vec!["scheme".to_string()];
    header.extend(activities.iter().map(|a| a.to_string()));
    let mut table = vec![header];
    for (name, cells) in &rows {
        let mut line = vec![name.clone()];
        line.extend(activities.iter().map(|a| {
            cells
                .get(a)
                .map_or("-".to_string(), |r| format!("{:.2}", r.success_rate))
        }));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let fmt_row = |row: &[String]| {
        row.iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                if i == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = String::new();
    let _ = writeln!(out, "{}", fmt_row(&table[0]));
    let _ = writeln!(
        out,
        "{}",
        widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
    );
    for row in &table[1..] {
        let _ = writeln!(out, "{}", fmt_row(row));
    }
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{} / {}: n={} ties={} excluded={} empty_strata={}",
            row_name(r),
            r.activity,
            r.n,
            r.tie_count,
            r.excluded,
            r.empty_strata
        );
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonReport {
    reports: Vec<SuccessReport>,
}

pub fn render_report(reports: &[SuccessReport], format: ReportFormat) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    match format {
        ReportFormat::Text => Ok(render_text(reports)),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&JsonReport {
                reports: reports.to_vec(),
            })
            .map_err(|e| EvalError::Format(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in reports {
                w.serialize(r).map_err(|e| EvalError::Format(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| EvalError::Format(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| EvalError::Format(e.to_string()))
        }
    }
}

/// Reads back a CSV or JSON report.
pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<SuccessReport>, EvalError> {
    match format {
        ReportFormat::Text => Err(EvalError::Format("text reports cannot be parsed back".into())),
        ReportFormat::Json => serde_json::from_str::<JsonReport>(text)
            .map(|r| r.reports)
            .map_err(|e| EvalError::Format(e.to_string())),
        ReportFormat::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| EvalError::Format(e.to_string())),
    }
}
