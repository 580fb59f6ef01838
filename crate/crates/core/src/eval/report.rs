//! CSV and markdown tables. Accuracy and sensitivity are printed as
//! percentages, FPR per hour as is, all with 3 decimals.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::experiment::{AblationTable, ExperimentResult, Scheme, Summary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Parameter(format!("unknown report format {other:?} (csv, markdown)"))),
        }
    }
}

pub const CSV_HEADER: [&str; 5] = ["subject", "scheme", "accuracy", "sensitivity", "fpr_per_hour"];

/// One CSV line, values already on the printed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub subject: String,
    pub scheme: String,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub fpr_per_hour: f64,
}

fn pct(v: f64) -> String {
    format!("{:.3}", 100.0 * v)
}

fn num(v: f64) -> String {
    format!("{v:.3}")
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map_or_else(String::new, f)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

pub fn report_rows(result: &ExperimentResult) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let mut push = |subject: String, scheme: Scheme, s: Summary| {
        rows.push(ReportRow {
            subject,
            scheme: scheme.name().into(),
            accuracy: 100.0 * s.accuracy,
            sensitivity: s.sensitivity.map(|v| 100.0 * v),
            fpr_per_hour: s.fpr_per_hour,
        });
    };
    for r in &result.rows {
        for scheme in [Scheme::Baseline, Scheme::Distilled] {
            let m = r.get(scheme);
            let s = Summary { accuracy: m.accuracy, sensitivity: m.sensitivity, fpr_per_hour: m.fpr_per_hour };
            push(r.subject.to_string(), scheme, s);
        }
    }
    if !result.rows.is_empty() {
        for scheme in [Scheme::Baseline, Scheme::Distilled] {
            push("average".into(), scheme, result.summary(scheme));
        }
    }
    rows
}

pub fn write_rows_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.subject.clone(), r.scheme.clone(), num(r.accuracy), opt(r.sensitivity, num), num(r.fpr_per_hour)])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    let field = |s: &str, name: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Format(format!("bad {name} value {s:?}")))
    };
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(ReportRow {
                subject: rec[0].to_string(),
                scheme: rec[1].to_string(),
                accuracy: field(&rec[2], "accuracy")?,
                sensitivity: if rec[3].is_empty() { None } else { Some(field(&rec[3], "sensitivity")?) },
                fpr_per_hour: field(&rec[4], "fpr_per_hour")?,
            })
        })
        .collect()
}

pub fn result_csv(result: &ExperimentResult) -> Result<String> {
    write_rows_csv(&report_rows(result))
}

/// Subject rows with both schemes side by side, then the Average row.
pub fn result_markdown(result: &ExperimentResult) -> String {
    rows_markdown(&report_rows(result))
}

/// Pivots CSV rows into one line per subject with both schemes side by side.
pub fn rows_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    s.push_str("| Subject | Baseline Acc (%) | Baseline Sens (%) | Baseline FPR (/h) | Distilled Acc (%) | Distilled Sens (%) | Distilled FPR (/h) |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    let mut subjects: Vec<&str> = Vec::new();
    for r in rows {
        if !subjects.contains(&r.subject.as_str()) {
            subjects.push(&r.subject);
        }
    }
    let cells = |r: Option<&ReportRow>| match r {
        Some(r) => [num(r.accuracy), r.sensitivity.map_or_else(|| "n/a".into(), num), num(r.fpr_per_hour)],
        None => ["-".into(), "-".into(), "-".into()],
    };
    for subject in subjects {
        let find = |scheme: Scheme| rows.iter().find(|r| r.subject == subject && r.scheme == scheme.name());
        let [ba, bs, bf] = cells(find(Scheme::Baseline));
        let [da, ds, df] = cells(find(Scheme::Distilled));
        let name = if subject == "average" { "Average" } else { subject };
        let _ = writeln!(s, "| {name} | {ba} | {bs} | {bf} | {da} | {ds} | {df} |");
    }
    s
}

pub fn emit_report(result: &ExperimentResult, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => result_csv(result),
        ReportFormat::Markdown => Ok(result_markdown(result)),
    }
}

pub fn write_report(result: &ExperimentResult, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, emit_report(result, format)?)?;
    Ok(())
}

fn signed(delta: f64, higher_is_better: bool) -> String {
    let shown = format!("{delta:+.3}");
    let rounded: f64 = shown.parse().unwrap_or(0.0);
    let tag = if rounded == 0.0 {
        "same"
    } else if (rounded > 0.0) == higher_is_better {
        "better"
    } else {
        "worse"
    };
    format!("{shown} ({tag})")
}

pub const ABLATION_CSV_HEADER: [&str; 8] = [
    "axis",
    "cell",
    "accuracy",
    "sensitivity",
    "fpr_per_hour",
    "delta_accuracy",
    "delta_sensitivity",
    "delta_fpr_per_hour",
];

pub fn ablation_csv(table: &AblationTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ABLATION_CSV_HEADER).map_err(csv_err)?;
    let b = table.baseline;
    for r in &table.rows {
        let s = r.summary;
        let ds = s.sensitivity.zip(b.sensitivity).map(|(x, y)| x - y);
        w.write_record([
            table.axis.name().to_string(),
            r.label.clone(),
            pct(s.accuracy),
            opt(s.sensitivity, pct),
            num(s.fpr_per_hour),
            format!("{:+.3}", 100.0 * (s.accuracy - b.accuracy)),
            ds.map_or_else(String::new, |d| format!("{:+.3}", 100.0 * d)),
            format!("{:+.3}", s.fpr_per_hour - b.fpr_per_hour),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Mean metrics per cell with deltas against the patient-specific baseline.
pub fn ablation_markdown(table: &AblationTable) -> String {
    let b = table.baseline;
    let mut s = format!("Ablation over {}; deltas are against the patient-specific baseline.\n\n", table.axis);
    s.push_str("| Cell | Acc (%) | Sens (%) | FPR (/h) | Δ Acc | Δ Sens | Δ FPR |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for r in &table.rows {
        let x = r.summary;
        let ds = x.sensitivity.zip(b.sensitivity).map(|(p, q)| p - q);
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.label,
            pct(x.accuracy),
            x.sensitivity.map_or_else(|| "n/a".into(), pct),
            num(x.fpr_per_hour),
            signed(100.0 * (x.accuracy - b.accuracy), true),
            ds.map_or_else(|| "n/a".into(), |d| signed(100.0 * d, true)),
            signed(x.fpr_per_hour - b.fpr_per_hour, false),
        );
    }
    s
}

pub fn emit_ablation(table: &AblationTable, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => ablation_csv(table),
        ReportFormat::Markdown => Ok(ablation_markdown(table)),
    }
}
