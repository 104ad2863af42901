//! CSV and JSON-lines writers for run, trial and slice results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::IterationTiming;

use super::{CellSummary, EventRecord, RunMetrics, RunOutput, SliceRow, TrialOutput};

/// Quantiles reported in `timing_cdf.csv`.
pub const CDF_QUANTILES: [f64; 15] = [
    0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999, 1.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub routine: String,
    pub quantile: f64,
    pub seconds: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Nearest-rank quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

pub fn timing_cdf<'a>(timings: impl IntoIterator<Item = &'a IterationTiming>) -> Vec<CdfRow> {
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); IterationTiming::ROUTINES.len()];
    for t in timings {
        for (c, v) in cols.iter_mut().zip(t.values()) {
            c.push(v);
        }
    }
    let mut rows = Vec::new();
    for (name, mut col) in IterationTiming::ROUTINES.iter().zip(cols) {
        col.sort_by(f64::total_cmp);
        for &q in &CDF_QUANTILES {
            rows.push(CdfRow {
                routine: name.to_string(),
                quantile: q,
                seconds: quantile(&col, q),
            });
        }
    }
    rows
}

fn write_events<'a>(path: &Path, runs: impl IntoIterator<Item = &'a RunOutput>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in runs {
        for e in &r.events {
            serde_json::to_writer(&mut w, e).map_err(|e| Error::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `runs.csv`, `events.jsonl` and `timing_cdf.csv` for a single run.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("runs.csv"), [&out.metrics])?;
    write_events(&dir.join("events.jsonl"), [out])?;
    write_csv(&dir.join("timing_cdf.csv"), timing_cdf(&out.timings))
}

/// `trial.csv`, `runs.csv`, `events.jsonl` and `timing_cdf.csv`.
pub fn write_trial(dir: &Path, out: &TrialOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("trial.csv"), &out.cells)?;
    write_csv(&dir.join("runs.csv"), out.runs.iter().map(|r| &r.metrics))?;
    write_events(&dir.join("events.jsonl"), &out.runs)?;
    write_csv(&dir.join("timing_cdf.csv"), timing_cdf(out.runs.iter().flat_map(|r| &r.timings)))
}

pub fn write_slice(dir: &Path, samples: &[SliceRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("slice.csv"), samples)
}

fn check_csv<T: Serialize + DeserializeOwned>(path: &Path) -> Result<usize> {
    let bad = |m: String| Error::Io(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let mut n = 0;
    for rec in r.deserialize::<T>() {
        let row = rec.map_err(|e| bad(e.to_string()))?;
        if n == 0 {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.serialize(&row).map_err(|e| bad(e.to_string()))?;
            let bytes = w.into_inner().map_err(|e| bad(e.to_string()))?;
            let mut back = csv::Reader::from_reader(bytes.as_slice());
            let expected = back.headers().map_err(|e| bad(e.to_string()))?.clone();
            if expected != header {
                return Err(bad(format!("unexpected header {header:?}")));
            }
        }
        n += 1;
    }
    Ok(n)
}

fn check_jsonl<T: DeserializeOwned>(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path)?;
    let mut n = 0;
    for (k, line) in text.lines().enumerate() {
        serde_json::from_str::<T>(line).map_err(|e| Error::Io(format!("{}:{}: {e}", path.display(), k + 1)))?;
        n += 1;
    }
    Ok(n)
}

/// Re-parses every known output file present in `dir`; returns the file
/// names with their record counts.
pub fn validate_outputs(dir: &Path) -> Result<Vec<(String, usize)>> {
    type Check = fn(&Path) -> Result<usize>;
    let files: [(&str, Check); 5] = [
        ("runs.csv", check_csv::<RunMetrics>),
        ("trial.csv", check_csv::<CellSummary>),
        ("timing_cdf.csv", check_csv::<CdfRow>),
        ("slice.csv", check_csv::<SliceRow>),
        ("events.jsonl", check_jsonl::<EventRecord>),
    ];
    let mut out = Vec::new();
    for (name, check) in files {
        let p = dir.join(name);
        if p.exists() {
            out.push((name.to_string(), check(&p)?));
        }
    }
    if out.is_empty() {
        return Err(Error::Io(format!("{}: no output files found", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.51), 3.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn cdf_is_monotone() {
        let ts: Vec<IterationTiming> = (0..50)
            .map(|k| IterationTiming {
                t1: (k * 7 % 50) as f64,
                ..Default::default()
            })
            .collect();
        let rows = timing_cdf(&ts);
        let t1: Vec<f64> = rows.iter().filter(|r| r.routine == "t1").map(|r| r.seconds).collect();
        assert!(t1.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(t1.last(), Some(&49.0));
    }
}
