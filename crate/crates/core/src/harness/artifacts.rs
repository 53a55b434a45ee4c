use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::counts::COUNT_COLUMNS;
use super::run::{RunOutput, SystemRun};
use crate::error::{Error, Result};
use crate::io::{write_json, write_predictions, write_text, Splits, FORMAT_VERSION};
use crate::metrics::{MetricReport, CSV_COLUMNS};
use crate::training::TrainingLog;

pub const BOUNDARY_COLUMNS: [&str; 6] = ["system", "lower", "upper", "count", "detected", "accuracy"];
pub const CONFUSION_COLUMNS: [&str; 5] = ["system", "truth", "predicted", "count", "rate"];

#[derive(Serialize)]
struct MetricsFile<'a> {
    format_version: u32,
    classes: &'a [String],
    systems: BTreeMap<&'a str, &'a MetricReport>,
}

#[derive(Serialize)]
struct SplitsFile<'a> {
    format_version: u32,
    splits: &'a Splits,
    groups: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct SystemLog<'a> {
    format_version: u32,
    system: &'a str,
    checkpoints: Vec<&'a str>,
    selected: &'a BTreeMap<String, f64>,
    training: &'a [TrainingLog],
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn confusion_rows<'a>(s: &'a SystemRun, classes: &'a [String]) -> impl Iterator<Item = Vec<String>> + 'a {
    s.confusion.iter().enumerate().flat_map(move |(t, row)| {
        let total = s.report.ground_truth_counts.get(t).copied().unwrap_or(0);
        row.iter().enumerate().map(move |(p, &n)| {
            let rate = if total > 0 { (n as f64 / total as f64).to_string() } else { String::new() };
            vec![s.system.name().into(), classes[t].clone(), classes[p].clone(), n.to_string(), rate]
        })
    })
}

/// Writes the run directory: resolved `plan.json`, `splits.json`,
/// `metrics.json`/`metrics.csv`, `counts.csv`, `boundary_report.csv`,
/// `confusion.csv` (rates are counts over ground-truth class totals) and
/// per system a directory with its checkpoints, `log.json` and the test
/// `predictions.jsonl`.
pub fn write_run(dir: impl AsRef<Path>, out: &RunOutput) -> Result<()> {
    let dir = dir.as_ref();
    write_json(dir.join("plan.json"), &out.plan)?;
    write_json(
        dir.join("splits.json"),
        &SplitsFile {
            format_version: FORMAT_VERSION,
            splits: &out.splits,
            groups: &out.groups,
        },
    )?;
    write_json(
        dir.join("metrics.json"),
        &MetricsFile {
            format_version: FORMAT_VERSION,
            classes: &out.classes,
            systems: out.systems.iter().map(|s| (s.system.name(), &s.report)).collect(),
        },
    )?;

    let mut header = vec!["system"];
    header.extend_from_slice(CSV_COLUMNS);
    let rows = out.systems.iter().map(|s| {
        let mut row = vec![s.system.name().to_string()];
        row.extend(s.report.csv_row());
        row
    });
    write_text(dir.join("metrics.csv"), &csv_text(&header, rows)?)?;

    let mut header = vec!["system"];
    header.extend_from_slice(&COUNT_COLUMNS);
    let rows = out.systems.iter().flat_map(|s| {
        s.counts.csv_records().map(move |r| {
            let mut row = vec![s.system.name().to_string()];
            row.extend(r);
            row
        })
    });
    write_text(dir.join("counts.csv"), &csv_text(&header, rows)?)?;

    let rows = out.systems.iter().flat_map(|s| {
        s.boundary.iter().flat_map(|b| &b.buckets).map(move |b| {
            vec![
                s.system.name().to_string(),
                b.lower.to_string(),
                b.upper.map(|u| u.to_string()).unwrap_or_default(),
                b.count.to_string(),
                b.detected.to_string(),
                b.accuracy().map(|a| a.to_string()).unwrap_or_default(),
            ]
        })
    });
    write_text(dir.join("boundary_report.csv"), &csv_text(&BOUNDARY_COLUMNS, rows)?)?;

    let rows = out.systems.iter().flat_map(|s| confusion_rows(s, &out.classes));
    write_text(dir.join("confusion.csv"), &csv_text(&CONFUSION_COLUMNS, rows)?)?;

    for s in &out.systems {
        let sys_dir = dir.join(s.system.name());
        for (name, ck) in &s.checkpoints {
            write_text(sys_dir.join(name), &ck.to_json()?)?;
        }
        write_json(
            sys_dir.join("log.json"),
            &SystemLog {
                format_version: FORMAT_VERSION,
                system: s.system.name(),
                checkpoints: s.checkpoints.iter().map(|(n, _)| n.as_str()).collect(),
                selected: &s.selected,
                training: &s.training,
            },
        )?;
        write_predictions(sys_dir.join("predictions.jsonl"), &s.predictions)?;
    }
    Ok(())
}
