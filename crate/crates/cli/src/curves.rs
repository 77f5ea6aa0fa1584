//! Flattening of result files into plot-ready CSV.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bvcast::decomp::RunRecord;
use bvcast::ensemble::EnsembleForecast;
use bvcast::forecast::{EvaluationRow, Forecast, ModelRegistry};
use serde_json::Value;

pub const RECORD_HEADER: [&str; 10] = [
    "dataset", "learner", "n", "final", "folds", "repeats", "seed", "bias2", "variance", "error",
];
pub const REGISTRY_HEADER: [&str; 8] =
    ["variable", "n", "slope", "intercept", "r2", "slope_se", "intercept_se", "point_count"];
pub const FORECAST_HEADER: [&str; 12] = [
    "dataset",
    "learner",
    "n",
    "n_used",
    "p_b",
    "p_v",
    "p_e1",
    "p_e2",
    "clamped",
    "observed_bias2",
    "observed_variance",
    "observed_error",
];
pub const EVALUATION_HEADER: [&str; 7] =
    ["dataset", "learner", "n", "variable", "predicted", "observed", "rel_dev_pct"];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Detect what `text` holds and write it to `out` as CSV. Empty input
/// gives a header-only record CSV.
pub fn flatten(text: &str, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let trimmed = text.trim();
    if trimmed.is_empty() {
        w.write_record(RECORD_HEADER)?;
        w.flush()?;
        return Ok(());
    }
    match serde_json::from_str::<Value>(trimmed) {
        Ok(Value::Object(obj)) if obj.contains_key("or_curve") => {
            let fc: EnsembleForecast = serde_json::from_str(trimmed)?;
            ensemble_rows(&mut w, &fc)?;
        }
        Ok(Value::Object(obj)) if obj.contains_key("entries") => {
            let reg: ModelRegistry = serde_json::from_str(trimmed)?;
            w.write_record(REGISTRY_HEADER)?;
            for e in &reg.entries {
                let m = &e.model;
                w.write_record([
                    e.variable.name().to_owned(),
                    e.n.to_string(),
                    m.slope.to_string(),
                    m.intercept.to_string(),
                    m.r2.to_string(),
                    m.slope_se.to_string(),
                    m.intercept_se.to_string(),
                    m.point_count.to_string(),
                ])?;
            }
        }
        Ok(Value::Array(items)) => {
            let first = items.first();
            if first.is_some_and(|v| v.get("report").is_some()) {
                w.write_record(EVALUATION_HEADER)?;
                for item in &items {
                    let rows: Vec<EvaluationRow> = serde_json::from_value(item["report"]["rows"].clone())?;
                    evaluation_rows(&mut w, &rows)?;
                }
            } else if first.is_some_and(|v| v.get("p_e1").is_some()) {
                let forecasts: Vec<Forecast> = serde_json::from_value(Value::Array(items))?;
                forecast_rows(&mut w, &forecasts)?;
            } else if first.is_none_or(|v| v.get("bias2").is_some()) {
                let records: Vec<RunRecord> = serde_json::from_value(Value::Array(items))?;
                record_rows(&mut w, &records)?;
            } else {
                bail!("unrecognised JSON array");
            }
        }
        _ => {
            let records = trimmed
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
                .collect::<Result<Vec<RunRecord>>>()
                .context("input is neither a known result file nor a record file")?;
            record_rows(&mut w, &records)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn record_rows<W: Write>(w: &mut csv::Writer<W>, records: &[RunRecord]) -> Result<()> {
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.dataset.clone(),
            r.learner.clone(),
            r.n.to_string(),
            r.is_final.to_string(),
            r.folds.to_string(),
            r.repeats.to_string(),
            r.seed.to_string(),
            r.bias2.to_string(),
            r.variance.to_string(),
            r.error.to_string(),
        ])?;
    }
    Ok(())
}

fn forecast_rows<W: Write>(w: &mut csv::Writer<W>, forecasts: &[Forecast]) -> Result<()> {
    w.write_record(FORECAST_HEADER)?;
    for f in forecasts {
        let o = f.observed_final.as_ref();
        w.write_record([
            f.dataset.clone(),
            f.learner.clone(),
            f.n.to_string(),
            f.n_used.to_string(),
            f.p_b.to_string(),
            f.p_v.to_string(),
            f.p_e1.to_string(),
            f.p_e2.to_string(),
            f.clamped.to_string(),
            opt(o.map(|d| d.bias2)),
            opt(o.map(|d| d.variance)),
            opt(o.map(|d| d.error)),
        ])?;
    }
    Ok(())
}

fn evaluation_rows<W: Write>(w: &mut csv::Writer<W>, rows: &[EvaluationRow]) -> Result<()> {
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.learner.clone(),
            r.n.to_string(),
            r.variable.name().to_owned(),
            r.predicted.to_string(),
            r.observed.to_string(),
            opt(r.rel_dev_pct),
        ])?;
    }
    Ok(())
}

fn ensemble_rows<W: Write>(w: &mut csv::Writer<W>, fc: &EnsembleForecast) -> Result<()> {
    w.write_record(EnsembleForecast::CURVE_HEADER)?;
    for row in fc.curve_rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    Ok(())
}

pub fn write_evaluation_rows(path: &Path, rows: &[EvaluationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(EVALUATION_HEADER)?;
    evaluation_rows(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

pub fn write_ensemble_curve(path: &Path, fc: &EnsembleForecast) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    ensemble_rows(&mut w, fc)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_string(text: &str) -> String {
        let mut buf = Vec::new();
        flatten(text, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_input_is_header_only() {
        assert_eq!(to_string("").lines().count(), 1);
        assert_eq!(to_string("  \n").lines().count(), 1);
        assert_eq!(to_string("[]").lines().count(), 1);
    }

    #[test]
    fn record_rows_preserved() {
        let line = r#"{"dataset":"d","learner":"gnb","n":100,"folds":10,"repeats":10,"seed":1,"bias2":0.1,"variance":0.05,"error":0.15,"final":false}"#;
        let text = format!("{line}\n{line}\n{line}\n");
        let csv = to_string(&text);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("dataset,learner,n,final"));
        assert_eq!(to_string(line).lines().count(), 2);
    }

    #[test]
    fn junk_is_rejected() {
        let mut buf = Vec::new();
        assert!(flatten("not json", &mut buf).is_err());
        assert!(flatten(r#"[{"x":1}]"#, &mut buf).is_err());
    }
}
