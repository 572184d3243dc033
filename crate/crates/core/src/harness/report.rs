use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::scenario::{DirectResult, ScenarioResult};
use crate::error::{Error, Result};
use crate::measures::ShiftMeasures;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `intervals.csv` and `summary.json` under `dir`.
pub fn emit_direct(result: &DirectResult, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let rows = dir.join("intervals.csv");
    write_csv(&rows, &result.rows)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        overall: &'a [super::MethodSummary],
        per_hypothesis: &'a [super::MethodSummary],
    }
    let summary = dir.join("summary.json");
    write_json(
        &summary,
        &Summary {
            overall: &result.overall,
            per_hypothesis: &result.per_hypothesis,
        },
    )?;
    Ok(vec![rows, summary])
}

/// Writes `<scenario>.csv` and `<scenario>.json` under `dir`.
pub fn emit_scenario(result: &ScenarioResult, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let stem = serde_json::to_value(result.scenario)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| "scenario".into());
    let table = dir.join(format!("{stem}.csv"));
    write_csv(&table, &result.rows)?;
    let json = dir.join(format!("{stem}.json"));
    write_json(&json, result)?;
    Ok(vec![table, json])
}

pub fn emit_measures(rows: &[ShiftMeasures], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_csv(path, rows)
}
