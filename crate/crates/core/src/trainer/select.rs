use std::fmt::Write as _;
use std::path::Path;

use super::log::TrainLog;
use crate::dataio::text::{fmt_f64, write_string};
use crate::error::{Error, Result};

/// Which split drives checkpoint selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SelectionMode {
    /// Held-out validation split, disjoint from training and test data.
    #[default]
    Validation,
    /// Best test-split score during training.
    Test,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Validation => "val",
            SelectionMode::Test => "test",
        }
    }
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" | "validation" => Ok(SelectionMode::Validation),
            "test" => Ok(SelectionMode::Test),
            other => Err(Error::invalid(format!("unknown selection mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelectionMetric {
    /// Per-class Top-1 on unseen classes (ZSL runs).
    Top1,
    /// Seen-unseen harmonic mean (GZSL runs).
    H,
}

impl SelectionMetric {
    fn column(self, split: Split) -> &'static str {
        match (split, self) {
            (Split::Validation, SelectionMetric::Top1) => "val_top1",
            (Split::Validation, SelectionMetric::H) => "val_h",
            (Split::Test, SelectionMetric::Top1) => "test_top1",
            (Split::Test, SelectionMetric::H) => "test_h",
        }
    }
}

/// Read access to per-checkpoint metrics.
pub trait MetricTable {
    fn len(&self) -> usize;
    fn metric(&self, row: usize, split: Split, metric: SelectionMetric) -> Option<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MetricTable for TrainLog {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn metric(&self, row: usize, split: Split, metric: SelectionMetric) -> Option<f64> {
        let m = match split {
            Split::Validation => self.rows[row].val?,
            Split::Test => self.rows[row].test?,
        };
        match metric {
            SelectionMetric::Top1 => Some(m.top1),
            SelectionMetric::H => m.h,
        }
    }
}

/// Index of the checkpoint maximizing `metric` on the split named by `mode`;
/// the earliest checkpoint wins ties. Only that split is read.
pub fn select_model(table: &dyn MetricTable, mode: SelectionMode, metric: SelectionMetric) -> Result<usize> {
    if table.is_empty() {
        return Err(Error::invalid("cannot select from an empty log"));
    }
    let split = match mode {
        SelectionMode::Validation => Split::Validation,
        SelectionMode::Test => Split::Test,
    };
    let mut best: Option<(usize, f64)> = None;
    for row in 0..table.len() {
        let v = table
            .metric(row, split, metric)
            .ok_or_else(|| Error::MissingMetric(format!("{} at checkpoint {row}", metric.column(split))))?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((row, v));
        }
    }
    Ok(best.expect("nonempty").0)
}

/// One reporting row: a selection protocol and the test metrics of the
/// checkpoint it picks.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolRow {
    pub mode: SelectionMode,
    pub checkpoint: usize,
    pub iteration: usize,
    pub top1: f64,
    pub h: Option<f64>,
    pub auc: Option<f64>,
}

/// Test-split results under both selection protocols.
#[derive(Clone, Debug, PartialEq)]
pub struct DualProtocolReport {
    pub rows: Vec<ProtocolRow>,
}

impl DualProtocolReport {
    pub fn from_log(log: &TrainLog, metric: SelectionMetric) -> Result<Self> {
        let mut rows = Vec::with_capacity(2);
        for mode in [SelectionMode::Validation, SelectionMode::Test] {
            let idx = select_model(log, mode, metric)?;
            let row = &log.rows[idx];
            let test = row
                .test
                .ok_or_else(|| Error::MissingMetric(format!("test metrics at checkpoint {idx}")))?;
            rows.push(ProtocolRow {
                mode,
                checkpoint: idx,
                iteration: row.iteration,
                top1: test.top1,
                h: test.h,
                auc: test.auc,
            });
        }
        Ok(DualProtocolReport { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("selection,checkpoint,iteration,top1,h,auc\n");
        for r in &self.rows {
            let name = match r.mode {
                SelectionMode::Validation => "validation",
                SelectionMode::Test => "test",
            };
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{}",
                r.checkpoint,
                r.iteration,
                fmt_f64(r.top1),
                r.h.map(fmt_f64).unwrap_or_default(),
                r.auc.map(fmt_f64).unwrap_or_default()
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_csv())
    }
}
