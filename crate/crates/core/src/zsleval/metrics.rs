//! Per-class Top-1 accuracy, calibrated-stacking seen/unseen curves, AUC and
//! the harmonic mean.

use std::collections::BTreeMap;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Mean over `classes` of each class's accuracy.
pub fn top1_per_class_accuracy(predictions: &[usize], truth: &[usize], classes: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::shape(
            "top1_per_class_accuracy",
            format!("{} predictions vs {} labels", predictions.len(), truth.len()),
        ));
    }
    if classes.is_empty() {
        return Err(Error::invalid("empty class set"));
    }
    let mut tally: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &t) in predictions.iter().zip(truth) {
        let entry = tally
            .get_mut(&t)
            .ok_or_else(|| Error::invalid(format!("true label {t} is not in the class set")))?;
        entry.1 += 1;
        if p == t {
            entry.0 += 1;
        }
    }
    let mut sum = 0.0;
    for (c, (hit, total)) in &tally {
        if *total == 0 {
            return Err(Error::invalid(format!("class {c} has no test samples")));
        }
        sum += *hit as f64 / *total as f64;
    }
    Ok(sum / tally.len() as f64)
}

/// `2 a_s a_u / (a_s + a_u)`, defined as 0 when both are 0.
pub fn harmonic_mean(a_s: f64, a_u: f64) -> f64 {
    if a_s + a_u == 0.0 {
        0.0
    } else {
        2.0 * a_s * a_u / (a_s + a_u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub gamma: f64,
    pub acc_seen: f64,
    pub acc_unseen: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeenUnseenCurve {
    /// One point per grid value, in grid order.
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Scores of a GZSL test set with the label partition.
pub struct ScoredSet<'a> {
    /// `n x |label_space|`, column `j` scores `label_space[j]`.
    pub scores: &'a Tensor,
    pub label_space: &'a [usize],
    pub truth: &'a [usize],
    pub seen: &'a [usize],
    pub unseen: &'a [usize],
}

struct Prepared {
    /// `(best seen score, best seen label, best unseen score, best unseen label)` per sample.
    best: Vec<(f64, usize, f64, usize)>,
    seen_truth: Vec<usize>,
    unseen_truth: Vec<usize>,
}

impl ScoredSet<'_> {
    fn prepare(&self) -> Result<Prepared> {
        if self.seen.is_empty() || self.unseen.is_empty() {
            return Err(Error::invalid("seen-unseen curve needs both seen and unseen classes"));
        }
        if self.scores.rows() != self.truth.len() || self.scores.cols() != self.label_space.len() {
            return Err(Error::shape(
                "seen_unseen_curve",
                format!(
                    "scores {:?} for {} samples and {} labels",
                    self.scores.shape(),
                    self.truth.len(),
                    self.label_space.len()
                ),
            ));
        }
        let is_seen: Vec<bool> = self.label_space.iter().map(|c| self.seen.contains(c)).collect();
        for c in self.label_space {
            if !self.seen.contains(c) && !self.unseen.contains(c) {
                return Err(Error::invalid(format!("label {c} is neither seen nor unseen")));
            }
        }
        let mut best = Vec::with_capacity(self.truth.len());
        for i in 0..self.truth.len() {
            let row = self.scores.row(i);
            let mut bs = (f64::NEG_INFINITY, usize::MAX);
            let mut bu = (f64::NEG_INFINITY, usize::MAX);
            for (j, &s) in row.iter().enumerate() {
                let slot = if is_seen[j] { &mut bs } else { &mut bu };
                if s > slot.0 || slot.1 == usize::MAX {
                    *slot = (s, self.label_space[j]);
                }
            }
            best.push((bs.0, bs.1, bu.0, bu.1));
        }
        let seen_truth: Vec<usize> = self.truth.iter().copied().filter(|t| self.seen.contains(t)).collect();
        let unseen_truth: Vec<usize> = self.truth.iter().copied().filter(|t| self.unseen.contains(t)).collect();
        if seen_truth.is_empty() || unseen_truth.is_empty() {
            return Err(Error::invalid("test set needs samples of both seen and unseen classes"));
        }
        Ok(Prepared {
            best,
            seen_truth,
            unseen_truth,
        })
    }

    /// Predictions after subtracting `gamma` from every seen-class score.
    /// An unseen label wins only when it is strictly higher.
    pub fn predict_calibrated(&self, gamma: f64) -> Result<Vec<usize>> {
        let p = self.prepare()?;
        Ok(calibrated(&p, gamma))
    }

    fn point(&self, p: &Prepared, gamma: f64) -> Result<CurvePoint> {
        let pred = calibrated(p, gamma);
        let (mut ps, mut pu) = (Vec::new(), Vec::new());
        for (&y, &t) in pred.iter().zip(self.truth) {
            if self.seen.contains(&t) {
                ps.push(y);
            } else {
                pu.push(y);
            }
        }
        let seen_classes: Vec<usize> = dedup_sorted(&p.seen_truth);
        let unseen_classes: Vec<usize> = dedup_sorted(&p.unseen_truth);
        Ok(CurvePoint {
            gamma,
            acc_seen: top1_per_class_accuracy(&ps, &p.seen_truth, &seen_classes)?,
            acc_unseen: top1_per_class_accuracy(&pu, &p.unseen_truth, &unseen_classes)?,
        })
    }

    /// Per-sample gaps `best_seen - best_unseen`; the prediction of a sample
    /// flips from seen to unseen as `gamma` crosses its gap.
    pub fn gaps(&self) -> Result<Vec<f64>> {
        Ok(self.prepare()?.best.iter().map(|b| b.0 - b.2).collect())
    }
}

fn calibrated(p: &Prepared, gamma: f64) -> Vec<usize> {
    p.best
        .iter()
        .map(|&(s, ls, u, lu)| if u > s - gamma { lu } else { ls })
        .collect()
}

fn dedup_sorted(v: &[usize]) -> Vec<usize> {
    let mut c = v.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Sweeps `gamma_grid` and integrates the resulting curve. Points are
/// computed on up to `threads` workers; their order always follows the grid.
pub fn seen_unseen_curve(set: &ScoredSet<'_>, gamma_grid: &[f64], threads: usize) -> Result<SeenUnseenCurve> {
    if gamma_grid.is_empty() {
        return Err(Error::invalid("empty gamma grid"));
    }
    let prepared = set.prepare()?;
    let threads = threads.max(1).min(gamma_grid.len());
    let points: Vec<CurvePoint> = if threads == 1 {
        gamma_grid
            .iter()
            .map(|&g| set.point(&prepared, g))
            .collect::<Result<_>>()?
    } else {
        let chunk = gamma_grid.len().div_ceil(threads);
        let parts: Vec<Result<Vec<CurvePoint>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = gamma_grid
                .chunks(chunk)
                .map(|gs| {
                    let prepared = &prepared;
                    scope.spawn(move || gs.iter().map(|&g| set.point(prepared, g)).collect::<Result<Vec<_>>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("curve worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(gamma_grid.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let auc = curve_auc(&points);
    Ok(SeenUnseenCurve { points, auc })
}

/// The `(acc_seen, acc_unseen)` polyline sorted by seen accuracy (ties by
/// descending unseen accuracy) with consecutive duplicates removed.
pub fn sorted_polyline(points: &[CurvePoint]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.acc_seen, p.acc_unseen)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup();
    pts
}

/// Trapezoidal area under the sorted polyline, closed to the axes by a
/// horizontal segment from `(0, max A_U)` and a vertical drop to `(max A_S, 0)`.
pub fn curve_auc(points: &[CurvePoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let poly = sorted_polyline(points);
    let max_u = poly.iter().map(|p| p.1).fold(0.0, f64::max);
    let max_s = poly.iter().map(|p| p.0).fold(0.0, f64::max);
    let mut path = Vec::with_capacity(poly.len() + 2);
    path.push((0.0, max_u));
    path.extend(poly);
    path.push((max_s, 0.0));
    path.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Grid that realizes every distinct operating point: `-inf`, midpoints
/// between consecutive distinct gaps, `+inf`.
pub fn exact_gamma_grid(set: &ScoredSet<'_>) -> Result<Vec<f64>> {
    let mut gaps = set.gaps()?;
    gaps.sort_by(f64::total_cmp);
    gaps.dedup();
    let mut grid = vec![f64::NEG_INFINITY];
    grid.extend(gaps.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    if gaps.len() == 1 {
        grid.push(gaps[0]);
    }
    grid.push(f64::INFINITY);
    Ok(grid)
}

/// `n` evenly spaced values on `[-span, span]` plus both infinite sentinels.
pub fn uniform_gamma_grid(span: f64, n: usize) -> Vec<f64> {
    let mut grid = vec![f64::NEG_INFINITY];
    let span = span.abs();
    match n {
        0 => {}
        1 => grid.push(0.0),
        _ => grid.extend((0..n).map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64)),
    }
    grid.push(f64::INFINITY);
    grid
}
