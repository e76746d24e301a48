//! Dataset CSV ingestion/export and report writers.
//!
//! Dataset files are visit-level long format with header
//! `id,time,y,treatment,censor_time,k_<name>...,z_<name>...`: one row per
//! visit, a time-0 row for every subject, treatment coded 0/1. Baseline
//! (`k_`) and time-varying (`z_`) columns keep their order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::estimator::{BootstrapResult, EstimatorResult};
use crate::experiment::ReplicationSummary;
use crate::panel::{GridSpec, PanelDataset, PanelError, SubjectPath};
use crate::weights::WeightSeries;

const FIXED_COLUMNS: [&str; 5] = ["id", "time", "y", "treatment", "censor_time"];

pub const SUMMARY_CSV_HEADER: &str =
    "gamma1,gamma2,estimator,mean_abs_bias,empirical_var,mean_bootstrap_var,mean_visits_arm0,mean_visits_arm1";
pub const RESULT_CSV_HEADER: &str = "estimator,estimate,robust_var,bootstrap_var,n_rows";
pub const WEIGHTS_CSV_HEADER: &str = "id,time,usw,sw1,sw2,point_intensity,ipt";

fn schema(source: &str, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::SchemaMismatch {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

struct Pending {
    subject: SubjectPath,
    first_line: u64,
}

/// Read a dataset from CSV text. `source` names the input in error messages.
pub fn read_panel_csv<R: Read>(reader: R, grid: GridSpec, source: &str) -> Result<PanelDataset, Error> {
    grid.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| schema(source, Some(1), e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < FIXED_COLUMNS.len() || names[..5] != FIXED_COLUMNS {
        return Err(schema(
            source,
            Some(1),
            format!("header must start with {}", FIXED_COLUMNS.join(",")),
        ));
    }
    let mut k_cols = Vec::new();
    let mut z_cols = Vec::new();
    for (j, name) in names.iter().enumerate().skip(5) {
        if let Some(n) = name.strip_prefix("k_") {
            k_cols.push((j, n.to_string()));
        } else if let Some(n) = name.strip_prefix("z_") {
            z_cols.push((j, n.to_string()));
        } else {
            return Err(schema(source, Some(1), format!("unexpected column `{name}`")));
        }
    }

    let mut order: Vec<Pending> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line());
            schema(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |j: usize| -> Result<f64, Error> {
            let raw = rec[j].trim();
            raw.parse::<f64>().map_err(|_| {
                schema(
                    source,
                    Some(line),
                    format!("column `{}`: `{raw}` is not a number", names[j]),
                )
            })
        };
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(schema(source, Some(line), "empty id"));
        }
        let time = num(1)?;
        let y = num(2)?;
        let treatment = match rec[3].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(schema(
                    source,
                    Some(line),
                    format!("treatment must be 0 or 1, found `{other}`"),
                ))
            }
        };
        let censor = num(4)?;
        let k = k_cols.iter().map(|(j, _)| num(*j)).collect::<Result<Vec<_>, _>>()?;
        let z = z_cols.iter().map(|(j, _)| num(*j)).collect::<Result<Vec<_>, _>>()?;
        if time.is_finite() && grid.cell_of(time).is_none() {
            return Err(PanelError::OffGridTime {
                id,
                time,
                dt: grid.dt,
                row: Some(line as usize),
            }
            .into());
        }
        let slot = match index.get(&id) {
            Some(&i) => {
                let p = &order[i];
                let s = &p.subject;
                if s.treatment != treatment || s.censor_time.to_bits() != censor.to_bits() || s.baseline != k {
                    return Err(schema(
                        source,
                        Some(line),
                        format!(
                            "subject `{id}`: treatment, censor_time and k_ columns must match its first row (line {})",
                            p.first_line
                        ),
                    ));
                }
                i
            }
            None => {
                index.insert(id.clone(), order.len());
                order.push(Pending {
                    subject: SubjectPath::new(id, treatment, k, censor),
                    first_line: line,
                });
                order.len() - 1
            }
        };
        let s = &mut order[slot].subject;
        *s = std::mem::replace(s, SubjectPath::new("", false, vec![], 0.0)).with_visit(time, y, z);
    }
    if order.is_empty() {
        return Err(PanelError::EmptyRecords.into());
    }
    let subjects = order.into_iter().map(|p| p.subject).collect();
    let ds = PanelDataset::build(subjects, grid)?;
    Ok(ds.with_names(
        z_cols.into_iter().map(|(_, n)| n).collect(),
        k_cols.into_iter().map(|(_, n)| n).collect(),
    )?)
}

pub fn ingest_csv(path: impl AsRef<Path>, grid: GridSpec) -> Result<PanelDataset, Error> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel_csv(file, grid, &path.display().to_string())
}

/// Write a dataset in the ingest format. Numbers use the shortest
/// representation that parses back to the same value.
pub fn write_panel_csv<W: Write>(ds: &PanelDataset, w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(ds.baseline_names().iter().map(|n| format!("k_{n}")));
    header.extend(ds.covariate_names().iter().map(|n| format!("z_{n}")));
    out.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in ds.subjects() {
        for v in &s.visits {
            row.clear();
            row.push(s.id.clone());
            row.push(v.time.to_string());
            row.push(v.outcome.to_string());
            row.push(if s.treatment { "1" } else { "0" }.to_string());
            row.push(s.censor_time.to_string());
            row.extend(s.baseline.iter().map(f64::to_string));
            row.extend(v.covariates.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
    }
    out.flush()
}

pub fn export_csv(ds: &PanelDataset, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel_csv(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn write_weights_csv<W: Write>(series: &[WeightSeries], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{WEIGHTS_CSV_HEADER}")?;
    for s in series {
        for r in &s.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                csv_field(&s.id),
                r.time,
                r.usw,
                r.sw1,
                r.sw2,
                r.point_intensity,
                r.ipt
            )?;
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_summary_csv<W: Write>(summary: &ReplicationSummary, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for s in &summary.scenarios {
        for e in &s.estimators {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.gamma1,
                s.gamma2,
                e.estimator,
                e.mean_abs_bias,
                e.empirical_var,
                opt(e.mean_bootstrap_var),
                s.mean_visits_arm0,
                s.mean_visits_arm1
            )?;
        }
    }
    Ok(())
}

fn fixed(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"))
}

/// Aligned table: one row per gamma pair, six bias columns then six
/// variance columns (bootstrap when available).
pub fn write_summary_text<W: Write>(summary: &ReplicationSummary, mut w: W) -> std::io::Result<()> {
    let names = crate::estimator::EstimatorKind::ALL;
    let group = 7 * names.len();
    writeln!(
        w,
        "{:<12}{:<group$} | bootstrap variance",
        "gamma", "mean absolute bias"
    )?;
    let cols: String = names.iter().map(|k| format!("{:>7}", k.name())).collect();
    writeln!(w, "{:12}{cols} | {cols}", " ")?;
    for s in &summary.scenarios {
        let bias: String = s
            .estimators
            .iter()
            .map(|e| format!("{:>7}", fixed(Some(e.mean_abs_bias))))
            .collect();
        let var: String = s
            .estimators
            .iter()
            .map(|e| format!("{:>7}", fixed(e.mean_bootstrap_var)))
            .collect();
        writeln!(w, "{:<12}{bias} | {var}", format!("{}; {}", s.gamma1, s.gamma2))?;
    }
    Ok(())
}

pub fn write_result_csv<W: Write>(result: &EstimatorResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{RESULT_CSV_HEADER}")?;
    for e in &result.estimates {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.estimator,
            e.estimate,
            e.robust_var,
            opt(e.bootstrap_var),
            result.n_visit_rows
        )?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ResultLine {
    estimator: String,
    estimate: f64,
    robust_var: f64,
    bootstrap_var: Option<f64>,
    n_rows: usize,
}

pub fn write_result_jsonl<W: Write>(result: &EstimatorResult, mut w: W) -> std::io::Result<()> {
    for e in &result.estimates {
        let line = ResultLine {
            estimator: e.estimator.to_string(),
            estimate: e.estimate,
            robust_var: e.robust_var,
            bootstrap_var: e.bootstrap_var,
            n_rows: result.n_visit_rows,
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_result_text<W: Write>(result: &EstimatorResult, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<10}{:>12}{:>14}{:>14}",
        "estimator", "estimate", "robust var", "bootstrap var"
    )?;
    for e in &result.estimates {
        writeln!(
            w,
            "{:<10}{:>12.4}{:>14.5}{:>14}",
            e.estimator.name(),
            e.estimate,
            e.robust_var,
            e.bootstrap_var.map_or_else(|| "NA".to_string(), |v| format!("{v:.5}"))
        )?;
    }
    writeln!(
        w,
        "visit rows: {}, subjects: {}",
        result.n_visit_rows, result.n_subjects
    )
}

pub fn write_bootstrap_csv<W: Write>(boot: &BootstrapResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "estimator,bootstrap_var,n_boot,n_failed")?;
    for (k, v) in &boot.variances {
        writeln!(w, "{k},{v},{},{}", boot.n_boot, boot.n_failed)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Text,
    Jsonl,
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Summary(&'a ReplicationSummary),
    Result(&'a EstimatorResult),
}

pub fn write_report<W: Write>(report: Report<'_>, format: ReportFormat, w: W) -> std::io::Result<()> {
    match (report, format) {
        (Report::Summary(s), ReportFormat::Text) => write_summary_text(s, w),
        (Report::Summary(s), ReportFormat::Jsonl) => {
            let mut w = w;
            serde_json::to_writer(&mut w, s)?;
            writeln!(w)
        }
        (Report::Summary(s), ReportFormat::Csv) => write_summary_csv(s, w),
        (Report::Result(r), ReportFormat::Text) => write_result_text(r, w),
        (Report::Result(r), ReportFormat::Jsonl) => write_result_jsonl(r, w),
        (Report::Result(r), ReportFormat::Csv) => write_result_csv(r, w),
    }
}

pub fn emit_report(report: Report<'_>, format: ReportFormat, path: impl AsRef<Path>) -> Result<(), Error> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_report(report, format, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
