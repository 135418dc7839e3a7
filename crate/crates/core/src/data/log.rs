//! Per-epoch training records and their CSV form.
//!
//! Columns: `epoch,phase,wall_s,train_acc,test_acc,lr,wd`. Accuracies are
//! percentages. Floats are written like C's `%g`: six significant digits,
//! trailing zeros dropped.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,phase,wall_s,train_acc,test_acc,lr,wd";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Target,
    ResizedContinue,
    Extra,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Target => "target",
            Phase::ResizedContinue => "resized-continue",
            Phase::Extra => "extra",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Phase::Pretrain, Phase::Target, Phase::ResizedContinue, Phase::Extra]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown phase '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Cumulative seconds since the start of the run, across phases.
    pub wall_s: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub lr: f64,
    pub wd: f64,
}

impl TrainLogRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.phase,
            format_g(self.wall_s),
            format_g(self.train_acc),
            format_g(self.test_acc),
            format_g(self.lr),
            format_g(self.wd)
        )
    }
}

/// `%g` with six significant digits.
pub fn format_g(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Appends one record to a CSV log, writing the header when the file is new
/// or empty.
pub fn append_log(record: &TrainLogRecord, path: &Path) -> Result<()> {
    let ctx = |e| Error::io(format!("appending to log {}", path.display()), e);
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(ctx)?;
    let mut text = String::new();
    if fresh {
        text.push_str(CSV_HEADER);
        text.push('\n');
    }
    text.push_str(&record.to_csv_line());
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(ctx)
}

/// A CSV log file that is truncated on creation and flushed per record.
pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let ctx = |e| Error::io(format!("creating log {}", path.display()), e);
        let mut out = BufWriter::new(File::create(&path).map_err(ctx)?);
        writeln!(out, "{CSV_HEADER}").map_err(ctx)?;
        out.flush().map_err(ctx)?;
        Ok(CsvLog { path, out })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, record: &TrainLogRecord) -> Result<()> {
        let ctx = |e| Error::io(format!("writing log {}", self.path.display()), e);
        writeln!(self.out, "{}", record.to_csv_line()).map_err(ctx)?;
        self.out.flush().map_err(ctx)
    }
}

/// Parses a log written by [`append_log`] or [`CsvLog`].
pub fn parse_log(text: &str) -> Result<Vec<TrainLogRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "log header {other:?} is not {CSV_HEADER:?}"
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |what: &str| Error::Parse {
                line: i + 2,
                msg: format!("bad {what} in '{line}'"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("field count"));
            }
            let num = |j: usize, what: &str| f[j].parse::<f64>().map_err(|_| bad(what));
            Ok(TrainLogRecord {
                epoch: f[0].parse().map_err(|_| bad("epoch"))?,
                phase: f[1].parse().map_err(|_| bad("phase"))?,
                wall_s: num(2, "wall_s")?,
                train_acc: num(3, "train_acc")?,
                test_acc: num(4, "test_acc")?,
                lr: num(5, "lr")?,
                wd: num(6, "wd")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize) -> TrainLogRecord {
        TrainLogRecord {
            epoch,
            phase: Phase::ResizedContinue,
            wall_s: 12.3456789,
            train_acc: 55.5,
            test_acc: 50.0,
            lr: 5e-3,
            wd: 1e-4,
        }
    }

    #[test]
    fn g_formatting() {
        assert_eq!(format_g(5e-3), "0.005");
        assert_eq!(format_g(1e-4), "0.0001");
        assert_eq!(format_g(1e-5), "1e-05");
        assert_eq!(format_g(12.3456789), "12.3457");
        assert_eq!(format_g(1234567.0), "1.23457e+06");
        assert_eq!(format_g(100.0), "100");
        assert_eq!(format_g(999999.5), "1e+06");
        assert_eq!(format_g(-0.5), "-0.5");
        assert_eq!(format_g(0.0), "0");
    }

    #[test]
    fn header_once_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        append_log(&rec(1), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains(",0.005,"));
        append_log(&rec(2), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
    }

    #[test]
    fn csv_log_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = CsvLog::create(dir.path().join("a.csv")).unwrap();
        let r = TrainLogRecord { wall_s: 2.5, ..rec(3) };
        log.write(&r).unwrap();
        let back = parse_log(&std::fs::read_to_string(log.path()).unwrap()).unwrap();
        assert_eq!(back, vec![r]);
    }
}
