//! Run artifacts: `log.csv`, `metrics.json` and `sweep.csv`, each written
//! to a temporary file and renamed into place.
//!
//! `log.csv` columns, in order: `k`, `r_<i>`, `u_<j>`, `y_<i>`,
//! `y_noisy_<i>` (noisy runs only), `yhat_prior_<i>`, `pred_err_norm`,
//! `cost`, `chol_diag_ratio`, then the flattened coefficients
//! (`A1_11`, …, `B0_11`, …, `C_1`, …). Channel indices are 1-based; cells
//! without a value (no solve during warm-up) are empty.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::harness::{Metrics, RunLog, SweepPoint};
use crate::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub log: PathBuf,
    pub metrics: PathBuf,
    pub sweep: Option<PathBuf>,
}

fn atomic_write(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), Error>) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn log_headers(log: &RunLog) -> Vec<String> {
    fn chan(prefix: &'static str, n: usize) -> impl Iterator<Item = String> {
        (1..=n).map(move |i| format!("{prefix}_{i}"))
    }
    let mut h = vec!["k".to_string()];
    h.extend(chan("r", log.outputs));
    h.extend(chan("u", log.inputs));
    h.extend(chan("y", log.outputs));
    if log.noisy {
        h.extend(chan("y_noisy", log.outputs));
    }
    h.extend(chan("yhat_prior", log.outputs));
    h.extend(["pred_err_norm", "cost", "chol_diag_ratio"].map(String::from));
    h.extend(log.coeff_headers());
    h
}

fn num(v: f64) -> String {
    // Shortest round-trip representation.
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_log_csv(log: &RunLog, path: &Path) -> Result<(), Error> {
    atomic_write(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(log_headers(log))?;
        for rec in &log.records {
            let mut row = vec![rec.k.to_string()];
            row.extend(rec.r.iter().copied().map(num));
            row.extend(rec.u.iter().copied().map(num));
            row.extend(rec.y.iter().copied().map(num));
            if log.noisy {
                let noisy = rec.y_noisy.as_deref().unwrap_or(&rec.y);
                row.extend(noisy.iter().copied().map(num));
            }
            row.extend(rec.yhat_prior.iter().copied().map(num));
            row.push(num(rec.pred_err_norm));
            row.push(opt(rec.cost));
            row.push(opt(rec.chol_diag_ratio));
            row.extend(rec.coeffs.iter().copied().map(num));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsFile<'a> {
    pub name: &'a str,
    pub rmse: f64,
    pub iae: f64,
    pub tv_u: f64,
    pub peak_u: f64,
    pub window: (usize, usize),
    pub completed: bool,
    pub failure_step: Option<usize>,
    pub failure: Option<&'a str>,
}

pub fn write_metrics_json(log: &RunLog, metrics: &Metrics, path: &Path) -> Result<(), Error> {
    let file = MetricsFile {
        name: &log.name,
        rmse: metrics.rmse,
        iae: metrics.iae,
        tv_u: metrics.tv_u,
        peak_u: metrics.peak_u,
        window: metrics.window,
        completed: log.completed(),
        failure_step: log.failure.as_ref().map(|f| f.step),
        failure: log.failure.as_ref().map(|f| f.message.as_str()),
    };
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &file)?;
        writeln!(w)?;
        Ok(())
    })
}

/// `omega,rmse,bounded_flag`; unbounded points carry `inf`.
pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<(), Error> {
    atomic_write(path, |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["omega", "rmse", "bounded_flag"])?;
        for pt in points {
            wr.write_record([num(pt.omega), num(pt.rmse), u8::from(pt.bounded).to_string()])?;
        }
        wr.flush()?;
        Ok(())
    })
}

pub fn write_outputs(log: &RunLog, metrics: &Metrics, dir: &Path) -> Result<RunArtifacts, Error> {
    let art = RunArtifacts { log: dir.join("log.csv"), metrics: dir.join("metrics.json"), sweep: None };
    write_log_csv(log, &art.log)?;
    write_metrics_json(log, metrics, &art.metrics)?;
    Ok(art)
}

/// A CSV read back as headers plus numeric rows; empty cells become `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable, Error> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|e| {
                        std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad number '{cell}': {e}"))
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(CsvTable { headers, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::StepRecord;

    fn small_log(noisy: bool) -> RunLog {
        let records = (1..=3)
            .map(|k| StepRecord {
                k,
                r: vec![1.0],
                u: vec![0.1 * k as f64],
                y: vec![1.0 / 3.0 * k as f64],
                y_noisy: noisy.then(|| vec![0.5]),
                yhat_prior: vec![0.0],
                pred_err_norm: 0.25,
                cost: (k > 1).then_some(2.0),
                chol_diag_ratio: (k > 1).then_some(3.0),
                hold_cost: None,
                coeffs: vec![0.0; 4],
            })
            .collect();
        RunLog { name: "t".into(), outputs: 1, inputs: 1, lag: 1, noisy, records, failure: None, quaternion_norms: vec![] }
    }

    #[test]
    fn headers_stable() {
        let h = log_headers(&small_log(false));
        assert_eq!(
            h,
            ["k", "r_1", "u_1", "y_1", "yhat_prior_1", "pred_err_norm", "cost", "chol_diag_ratio", "A1_11", "B0_11", "B1_11", "C_1"]
        );
        assert!(log_headers(&small_log(true)).contains(&"y_noisy_1".to_string()));
    }

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let log = small_log(false);
        let path = dir.path().join("log.csv");
        write_log_csv(&log, &path).unwrap();
        let t = read_csv(&path).unwrap();
        let y: Vec<f64> = t.column("y_1").unwrap().into_iter().map(Option::unwrap).collect();
        assert_eq!(y, log.records.iter().map(|r| r.y[0]).collect::<Vec<_>>());
        assert_eq!(t.column("cost").unwrap(), vec![None, Some(2.0), Some(2.0)]);
    }

    #[test]
    fn sweep_file_rows() {
        let dir = tempfile::tempdir().unwrap();
        let pts = [
            SweepPoint { omega: 0.0, rmse: 0.1, bounded: true },
            SweepPoint { omega: 0.05, rmse: f64::INFINITY, bounded: false },
        ];
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&pts, &path).unwrap();
        let t = read_csv(&path).unwrap();
        assert_eq!(t.headers, ["omega", "rmse", "bounded_flag"]);
        assert_eq!(t.rows[1], vec![Some(0.05), Some(f64::INFINITY), Some(0.0)]);
    }
}
