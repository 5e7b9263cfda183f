//! CSV artifacts of an evaluation run.

use std::fmt::Write as _;
use std::path::Path;

use super::metrics::CurvePoint;
use super::MetricsReport;
use crate::dataio::text::{fmt_f64, parse_f64, read_to_string, write_string};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub sample: usize,
    pub truth: usize,
    pub predicted: usize,
}

/// `metric,value` rows; absent metrics are omitted.
pub fn write_summary_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "top1,{}", fmt_f64(report.top1_unseen));
    for (name, v) in [
        ("auc", report.auc),
        ("h", report.h),
        ("acc_seen", report.acc_seen),
        ("acc_unseen", report.acc_unseen),
    ] {
        if let Some(v) = v {
            let _ = writeln!(s, "{name},{}", fmt_f64(v));
        }
    }
    write_string(path, &s)
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut s = String::from("gamma,acc_seen,acc_unseen\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", fmt_f64(p.gamma), fmt_f64(p.acc_seen), fmt_f64(p.acc_unseen));
    }
    write_string(path, &s)
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().unwrap_or("");
    if header.trim() != "gamma,acc_seen,acc_unseen" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            detail: format!("unexpected header '{header}'"),
        });
    }
    let mut out = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!("expected 3 columns, got '{line}'"),
            });
        }
        let p = CurvePoint {
            gamma: parse_f64(path, cols[0])?,
            acc_seen: parse_f64(path, cols[1])?,
            acc_unseen: parse_f64(path, cols[2])?,
        };
        if !(0.0..=1.0).contains(&p.acc_seen) || !(0.0..=1.0).contains(&p.acc_unseen) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!("accuracy outside [0, 1] in '{line}'"),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_predictions_csv(preds: &[Prediction], path: &Path) -> Result<()> {
    let mut s = String::from("sample,truth,predicted\n");
    for p in preds {
        let _ = writeln!(s, "{},{},{}", p.sample, p.truth, p.predicted);
    }
    write_string(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_round_trip_with_infinities() {
        let pts = vec![
            CurvePoint {
                gamma: f64::NEG_INFINITY,
                acc_seen: 0.9,
                acc_unseen: 0.0,
            },
            CurvePoint {
                gamma: 0.12345678901234568,
                acc_seen: 1.0 / 3.0,
                acc_unseen: 0.5,
            },
            CurvePoint {
                gamma: f64::INFINITY,
                acc_seen: 0.0,
                acc_unseen: 0.8,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        write_curve_csv(&pts, &p).unwrap();
        assert_eq!(read_curve_csv(&p).unwrap(), pts);
    }

    #[test]
    fn malformed_curve_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "gamma,acc_seen\n0,1\n").unwrap();
        assert!(read_curve_csv(&p).is_err());
        std::fs::write(&p, "gamma,acc_seen,acc_unseen\n0,1.5,0\n").unwrap();
        assert!(read_curve_csv(&p).is_err());
        std::fs::write(&p, "gamma,acc_seen,acc_unseen\n0,x,0\n").unwrap();
        assert!(read_curve_csv(&p).is_err());
    }
}
