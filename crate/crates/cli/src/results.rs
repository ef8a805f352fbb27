//! The results CSV: one row per recorded step of every run.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ottd_core::learners::RunResult;

use crate::error::{invalid, CliResult};

pub const COLUMNS: [&str; 7] = [
    "experiment_id",
    "algorithm",
    "seed",
    "step",
    "max_value_error",
    "emsbe",
    "status",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub step: usize,
    pub max_value_error: Option<f64>,
    pub emsbe: f64,
    pub status: String,
}

/// Text form with 12 significant digits.
pub fn format_value(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        x.to_string()
    }
}

/// Rounds to exactly what [`format_value`] prints.
pub fn round12(x: f64) -> f64 {
    format_value(x).parse().unwrap_or(x)
}

/// Rows for one run; the final status is stamped on every row of the run.
pub fn rows_from_run(experiment_id: &str, algorithm: &str, seed: u64, run: &RunResult) -> Vec<ResultRow> {
    run.trace
        .iter()
        .map(|p| ResultRow {
            experiment_id: experiment_id.to_string(),
            algorithm: algorithm.to_string(),
            seed,
            step: p.step,
            max_value_error: p.max_value_error.map(round12),
            emsbe: round12(p.emsbe),
            status: run.status.name().to_string(),
        })
        .collect()
}

pub fn write_rows<W: Write>(writer: W, rows: &[ResultRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record([
            r.experiment_id.clone(),
            r.algorithm.clone(),
            r.seed.to_string(),
            r.step.to_string(),
            r.max_value_error.map(format_value).unwrap_or_default(),
            format_value(r.emsbe),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back; missing columns or unparsable fields are schema errors.
pub fn read_rows<R: Read>(reader: R) -> CliResult<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(reader);
    let headers = rd.headers()?.clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("results schema: missing column {name:?}")))?;
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let bad = |what: &str| invalid(format!("results schema: row {}: bad {what}", line + 1));
        rows.push(ResultRow {
            experiment_id: field(0).to_string(),
            algorithm: field(1).to_string(),
            seed: field(2).parse().map_err(|_| bad("seed"))?,
            step: field(3).parse().map_err(|_| bad("step"))?,
            max_value_error: match field(4) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("max_value_error"))?),
            },
            emsbe: field(5).parse().map_err(|_| bad("emsbe"))?,
            status: field(6).to_string(),
        });
    }
    Ok(rows)
}

/// Mean over seeds at each recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPoint {
    pub step: usize,
    pub max_value_error: Option<f64>,
    pub emsbe: f64,
}

/// Mean curve per `(experiment_id, algorithm)`. Runs that stopped early keep
/// contributing their last recorded values.
pub fn mean_curves(rows: &[ResultRow]) -> BTreeMap<(String, String), Vec<MeanPoint>> {
    let mut runs: BTreeMap<(String, String), BTreeMap<u64, Vec<&ResultRow>>> = BTreeMap::new();
    for r in rows {
        runs.entry((r.experiment_id.clone(), r.algorithm.clone()))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push(r);
    }
    runs.into_iter()
        .map(|(key, seeds)| {
            let mut steps: Vec<usize> = seeds.values().flatten().map(|r| r.step).collect();
            steps.sort_unstable();
            steps.dedup();
            let mut cursor = vec![0usize; seeds.len()];
            let curve = steps
                .iter()
                .map(|&step| {
                    let (mut err, mut err_n, mut emsbe) = (0.0, 0usize, 0.0);
                    for (c, run) in cursor.iter_mut().zip(seeds.values()) {
                        while *c + 1 < run.len() && run[*c + 1].step <= step {
                            *c += 1;
                        }
                        let r = run[*c];
                        emsbe += r.emsbe;
                        if let Some(e) = r.max_value_error {
                            err += e;
                            err_n += 1;
                        }
                    }
                    MeanPoint {
                        step,
                        max_value_error: (err_n > 0).then(|| err / err_n as f64),
                        emsbe: emsbe / seeds.len() as f64,
                    }
                })
                .collect();
            (key, curve)
        })
        .collect()
}

pub fn write_means<W: Write>(writer: W, curves: &BTreeMap<(String, String), Vec<MeanPoint>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["experiment_id", "algorithm", "step", "max_value_error", "emsbe"])?;
    for ((exp, alg), curve) in curves {
        for p in curve {
            w.write_record([
                exp.clone(),
                alg.clone(),
                p.step.to_string(),
                p.max_value_error.map(format_value).unwrap_or_default(),
                format_value(p.emsbe),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
