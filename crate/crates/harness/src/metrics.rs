//! Per-iteration metrics CSV. The header is the same for every method and
//! environment; metrics that do not apply are left empty.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use teamregret::trainer::IterMetrics;

use crate::error::{HarnessError, Result};

pub const COLUMNS: [&str; 10] = [
    "iteration",
    "wall_seconds",
    "mean_return",
    "win_rate",
    "loss_q",
    "loss_v",
    "epsilon",
    "grad_norm",
    "eval_return",
    "eval_win_rate",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    /// Left empty in single-threaded runs so their files compare byte for byte.
    pub wall_seconds: Option<f64>,
    pub mean_return: f64,
    pub win_rate: Option<f64>,
    pub loss_q: f64,
    pub loss_v: Option<f64>,
    pub epsilon: f64,
    pub grad_norm: f64,
    pub eval_return: Option<f64>,
    pub eval_win_rate: Option<f64>,
}

impl MetricsRow {
    pub fn from_metrics(m: &IterMetrics) -> Self {
        Self {
            iteration: m.iteration,
            wall_seconds: None,
            mean_return: m.mean_return,
            win_rate: m.win_rate,
            loss_q: m.loss_q,
            loss_v: m.loss_v,
            epsilon: m.epsilon,
            grad_norm: m.grad_norm,
            eval_return: None,
            eval_win_rate: None,
        }
    }

    fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        vec![
            self.iteration.to_string(),
            opt(self.wall_seconds),
            self.mean_return.to_string(),
            opt(self.win_rate),
            self.loss_q.to_string(),
            opt(self.loss_v),
            self.epsilon.to_string(),
            self.grad_norm.to_string(),
            opt(self.eval_return),
            opt(self.eval_win_rate),
        ]
    }
}

/// Append-only writer; the header goes in when the file is new.
pub struct MetricsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = std::fs::File::create(path)?;
        let mut inner = csv::Writer::from_writer(f);
        inner.write_record(COLUMNS)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    /// Opens an existing file, drops rows past `iteration` and appends after them.
    pub fn resume(path: &Path, iteration: u64) -> Result<Self> {
        let table = read_table(path)?;
        let f = std::fs::File::create(path)?;
        let mut inner = csv::Writer::from_writer(f);
        inner.write_record(COLUMNS)?;
        for row in table.rows {
            let it: u64 = row[0]
                .parse()
                .map_err(|_| HarnessError::Metrics(format!("{}: bad iteration `{}`", path.display(), row[0])))?;
            if it <= iteration {
                inner.write_record(&row)?;
            }
        }
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields())?;
        self.inner.flush()?;
        Ok(())
    }
}

/// A metrics file as raw strings.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Metrics(format!("{}: {e}", path.display())))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { header, rows })
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Sidecar of wall-clock times, one line per iteration.
pub fn append_timing(path: &Path, iteration: u64, seconds: f64) -> Result<()> {
    let new = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if new {
        writeln!(f, "iteration,wall_seconds")?;
    }
    writeln!(f, "{iteration},{seconds}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_fields_keep_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&p).unwrap();
        w.write(&MetricsRow {
            iteration: 1,
            mean_return: 7.0,
            loss_q: 0.5,
            epsilon: 1.0,
            grad_norm: 2.0,
            ..Default::default()
        })
        .unwrap();
        drop(w);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "iteration,wall_seconds,mean_return,win_rate,loss_q,loss_v,epsilon,grad_norm,eval_return,eval_win_rate\n1,,7,,0.5,,1,2,,\n"
        );
    }

    #[test]
    fn resume_truncates_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&p).unwrap();
        for i in 1..=5 {
            w.write(&MetricsRow { iteration: i, ..Default::default() }).unwrap();
        }
        drop(w);
        let mut w = MetricsWriter::resume(&p, 3).unwrap();
        w.write(&MetricsRow { iteration: 4, mean_return: 1.0, ..Default::default() }).unwrap();
        drop(w);
        let t = read_table(&p).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[3][2], "1");
    }
}
