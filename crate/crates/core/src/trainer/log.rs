use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::text::{fmt_f64, parse_f64, parse_usize, read_to_string, write_string};
use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str = "iter,loss_d,loss_g,loss_cls,loss_sr,val_top1,val_h,test_top1,test_h";

/// Metrics of one evaluation target at one checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMetrics {
    pub top1: f64,
    pub h: Option<f64>,
    pub auc: Option<f64>,
}

/// One row per checkpoint. Losses are averages over the iterations since the
/// previous checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    /// Critic Wasserstein estimate `mean(fake) - mean(real)`.
    pub loss_d: f64,
    /// Generator adversarial term.
    pub loss_g: f64,
    /// Generator-side classification term.
    pub loss_cls: f64,
    /// SR objective; zero when the regressor is disabled.
    pub loss_sr: f64,
    pub val: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_opt(path: &Path, s: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(path, s).map(Some)
    }
}

impl TrainLog {
    /// Appends a row; iterations must increase strictly.
    pub fn push(&mut self, row: LogRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration {
                return Err(Error::invalid(format!(
                    "log iteration {} does not follow {}",
                    row.iteration, last.iteration
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.loss_d),
                fmt_f64(r.loss_g),
                fmt_f64(r.loss_cls),
                fmt_f64(r.loss_sr),
                opt(r.val.map(|m| m.top1)),
                opt(r.val.and_then(|m| m.h)),
                opt(r.test.map(|m| m.top1)),
                opt(r.test.and_then(|m| m.h)),
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_csv())
    }

    /// Reads the CSV form. AUC values are not part of it and come back `None`.
    pub fn read_csv(path: &Path) -> Result<TrainLog> {
        let text = read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(TRAIN_LOG_HEADER) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: "unexpected train log header".into(),
            });
        }
        let mut log = TrainLog::default();
        for line in lines {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 9 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    detail: format!("expected 9 columns, got {}", c.len()),
                });
            }
            let split = |top1: Option<f64>, h: Option<f64>| top1.map(|top1| SplitMetrics { top1, h, auc: None });
            let row = LogRow {
                iteration: parse_usize(path, c[0])?,
                loss_d: parse_f64(path, c[1])?,
                loss_g: parse_f64(path, c[2])?,
                loss_cls: parse_f64(path, c[3])?,
                loss_sr: parse_f64(path, c[4])?,
                val: split(parse_opt(path, c[5])?, parse_opt(path, c[6])?),
                test: split(parse_opt(path, c[7])?, parse_opt(path, c[8])?),
            };
            log.push(row).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        }
        Ok(log)
    }
}
