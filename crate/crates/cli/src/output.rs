use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use treeloops_core::estimators::{CriticalEstimate, Estimate};
use treeloops_core::ModelParams;

#[derive(Debug, Clone, Serialize)]
pub struct RecordParams {
    pub d: u32,
    pub u: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl From<&ModelParams> for RecordParams {
    fn from(p: &ModelParams) -> Self {
        RecordParams {
            d: p.d,
            u: p.u,
            beta: p.beta,
            alpha: p.alpha(),
        }
    }
}

/// One estimate as persisted in results.jsonl and results.csv.
#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub op: String,
    pub params: RecordParams,
    pub m: usize,
    pub n: u64,
    pub mean: f64,
    pub half_width: f64,
    pub seed: u64,
    pub wall_ms: u64,
}

pub const RESULTS_CSV_HEADER: &str = "op,d,u,beta,alpha,m,n,mean,half_width,seed,wall_ms";
pub const CURVE_CSV_HEADER: &str = "u,d,alpha_hat_lo,alpha_hat_hi,beta_hat,beta_formula";

impl Record {
    fn csv_row(&self) -> String {
        let p = &self.params;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.op, p.d, p.u, p.beta, p.alpha, self.m, self.n, self.mean, self.half_width, self.seed, self.wall_ms
        )
    }
}

/// Collects records of a run and appends them to the output directory.
pub struct Sink {
    dir: Option<PathBuf>,
    seed: u64,
    records: Vec<Record>,
    started: Instant,
}

impl Sink {
    /// Records carry the run seed, not the seeds of derived streams.
    pub fn new(dir: Option<PathBuf>, seed: u64) -> Self {
        Sink {
            dir,
            seed,
            records: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Restarts the wall clock of the next record.
    pub fn start(&mut self) {
        self.started = Instant::now();
    }

    pub fn push(&mut self, op: impl Into<String>, params: &ModelParams, m: usize, e: &Estimate) {
        self.records.push(Record {
            op: op.into(),
            params: params.into(),
            m,
            n: e.n,
            mean: e.mean,
            half_width: e.half_width,
            seed: self.seed,
            wall_ms: self.started.elapsed().as_millis() as u64,
        });
    }

    /// Appends the records to results.jsonl and results.csv.
    pub fn flush(&mut self) -> io::Result<()> {
        let Some(dir) = &self.dir else {
            self.records.clear();
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        let mut jsonl = OpenOptions::new().create(true).append(true).open(dir.join("results.jsonl"))?;
        for r in &self.records {
            writeln!(jsonl, "{}", serde_json::to_string(r).map_err(io::Error::other)?)?;
        }
        let csv_path = dir.join("results.csv");
        let fresh = !csv_path.exists();
        let mut csv = OpenOptions::new().create(true).append(true).open(csv_path)?;
        if fresh {
            writeln!(csv, "{RESULTS_CSV_HEADER}")?;
        }
        for r in &self.records {
            writeln!(csv, "{}", r.csv_row())?;
        }
        self.records.clear();
        Ok(())
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }
}

/// One row of the critical curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub u: f64,
    pub d: u32,
    pub alpha_hat_lo: f64,
    pub alpha_hat_hi: f64,
    pub beta_hat: f64,
    pub beta_formula: f64,
}

impl CurveRow {
    pub fn new(e: &CriticalEstimate, beta_formula: f64) -> Self {
        CurveRow {
            u: e.u,
            d: e.d,
            alpha_hat_lo: e.bracket.0,
            alpha_hat_hi: e.bracket.1,
            beta_hat: e.beta_hat(),
            beta_formula,
        }
    }
}

/// Curve CSV sorted by u; header only for an empty grid.
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.u.total_cmp(&b.u));
    let mut out = format!("{CURVE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.u, r.d, r.alpha_hat_lo, r.alpha_hat_hi, r.beta_hat, r.beta_formula
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_curve_is_header_only() {
        assert_eq!(curve_csv(&[]), format!("{CURVE_CSV_HEADER}\n"));
    }

    #[test]
    fn curve_rows_are_sorted() {
        let row = |u| CurveRow {
            u,
            d: 5,
            alpha_hat_lo: 0.0,
            alpha_hat_hi: 1.0,
            beta_hat: 0.2,
            beta_formula: 0.2,
        };
        let csv = curve_csv(&[row(1.0), row(0.0), row(0.5)]);
        let us: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(us, ["0", "0.5", "1"]);
    }

    #[test]
    fn sink_appends() {
        let dir = tempfile::tempdir().unwrap();
        let params = ModelParams::new(3, 0.5, 0.2).unwrap();
        let mut sink = Sink::new(Some(dir.path().to_path_buf()), 9);
        for _ in 0..2 {
            sink.push("sigma", &params, 1, &Estimate::proportion(3, 10, 7));
            sink.flush().unwrap();
        }
        let jsonl = fs::read_to_string(dir.path().join("results.jsonl")).unwrap();
        assert_eq!(jsonl.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        assert_eq!(v["op"], "sigma");
        assert_eq!(v["params"]["d"], 3);
        assert_eq!(v["n"], 10);
        assert_eq!(v["seed"], 9);
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), RESULTS_CSV_HEADER);
    }
}
