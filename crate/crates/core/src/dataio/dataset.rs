use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Class partition and sample partition of a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    /// Seen classes held out as stand-in unseen classes for model selection.
    pub val_pseudo_unseen: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Seen classes whose samples may be used for training.
    pub fn train_classes(&self) -> Vec<usize> {
        self.seen
            .iter()
            .copied()
            .filter(|c| !self.val_pseudo_unseen.contains(c))
            .collect()
    }

    /// Checks every partition invariant against `labels` and `n_classes`.
    pub fn validate(&self, labels: &[usize], n_classes: usize) -> Result<()> {
        let n = labels.len();
        let set = |name: &str, v: &[usize], bound: usize| -> Result<BTreeSet<usize>> {
            let s: BTreeSet<usize> = v.iter().copied().collect();
            if s.len() != v.len() {
                return Err(Error::Dataset(format!("duplicate entry in [{name}]")));
            }
            if let Some(&bad) = s.iter().find(|&&x| x >= bound) {
                return Err(Error::Dataset(format!("[{name}] entry {bad} out of range (< {bound})")));
            }
            Ok(s)
        };
        let seen = set("seen", &self.seen, n_classes)?;
        let unseen = set("unseen", &self.unseen, n_classes)?;
        let pseudo = set("val_pseudo_unseen", &self.val_pseudo_unseen, n_classes)?;
        let train = set("train", &self.train, n)?;
        let val = set("val", &self.val, n)?;
        let test = set("test", &self.test, n)?;

        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(Error::Dataset(format!("class {c} is both seen and unseen")));
        }
        if let Some(c) = pseudo.difference(&seen).next() {
            return Err(Error::Dataset(format!("pseudo-unseen class {c} is not a seen class")));
        }
        for (a, an, b, bn) in [
            (&train, "train", &val, "val"),
            (&train, "train", &test, "test"),
            (&val, "val", &test, "test"),
        ] {
            if let Some(i) = a.intersection(b).next() {
                return Err(Error::Dataset(format!("sample {i} is in both [{an}] and [{bn}]")));
            }
        }
        for &i in &train {
            let y = labels[i];
            if !seen.contains(&y) || pseudo.contains(&y) {
                return Err(Error::Dataset(format!(
                    "train sample {i} has class {y}, which is not a training class"
                )));
            }
        }
        for &i in &val {
            if !seen.contains(&labels[i]) {
                return Err(Error::Dataset(format!("val sample {i} is not from a seen class")));
            }
        }
        for &i in &test {
            let y = labels[i];
            if !seen.contains(&y) && !unseen.contains(&y) {
                return Err(Error::Dataset(format!("test sample {i} has unassigned class {y}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Phase {
    Idle = 0,
    Training = 1,
    Evaluation = 2,
}

/// Counts data reads that would break the zero-shot constraint: any unseen
/// class feature or representation read while the training phase is active.
#[derive(Debug, Default)]
pub struct AccessAudit {
    phase: AtomicU8,
    training_reads: AtomicUsize,
    unseen_violations: AtomicUsize,
    pseudo_unseen_reads: AtomicUsize,
}

impl AccessAudit {
    pub fn phase(&self) -> Phase {
        match self.phase.load(Ordering::SeqCst) {
            1 => Phase::Training,
            2 => Phase::Evaluation,
            _ => Phase::Idle,
        }
    }

    /// Total reads of any kind made during training.
    pub fn training_reads(&self) -> usize {
        self.training_reads.load(Ordering::SeqCst)
    }

    /// Reads of unseen-class data during training.
    pub fn unseen_violations(&self) -> usize {
        self.unseen_violations.load(Ordering::SeqCst)
    }

    /// Reads of validation pseudo-unseen data during training.
    pub fn pseudo_unseen_reads(&self) -> usize {
        self.pseudo_unseen_reads.load(Ordering::SeqCst)
    }
}

/// Restores the previous audit phase when dropped.
pub struct PhaseGuard {
    audit: Option<Arc<AccessAudit>>,
    previous: u8,
}

impl Drop for PhaseGuard {
    fn drop(&mut self) {
        if let Some(a) = &self.audit {
            a.phase.store(self.previous, Ordering::SeqCst);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Train,
    PseudoUnseen,
    Unseen,
    Unassigned,
}

/// Visual features, labels, class representations and splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_reps: Tensor,
    splits: Splits,
    roles: Vec<Role>,
    audit: Option<Arc<AccessAudit>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.labels == other.labels
            && self.class_reps == other.class_reps
            && self.splits == other.splits
    }
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_reps: Tensor, splits: Splits) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.is_finite() || !class_reps.is_finite() {
            return Err(Error::Dataset("non-finite feature or representation value".into()));
        }
        let k = class_reps.rows();
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= k) {
            return Err(Error::Dataset(format!("label {y} of sample {i} out of range for {k} classes")));
        }
        splits.validate(&labels, k)?;
        let roles = (0..k)
            .map(|c| {
                if splits.unseen.contains(&c) {
                    Role::Unseen
                } else if splits.val_pseudo_unseen.contains(&c) {
                    Role::PseudoUnseen
                } else if splits.seen.contains(&c) {
                    Role::Train
                } else {
                    Role::Unassigned
                }
            })
            .collect();
        Ok(Dataset {
            features,
            labels,
            class_reps,
            splits,
            roles,
            audit: None,
        })
    }

    /// Replaces the splits, re-checking all invariants.
    pub fn with_splits(&self, splits: Splits) -> Result<Self> {
        let mut d = Dataset::new(self.features.clone(), self.labels.clone(), self.class_reps.clone(), splits)?;
        d.audit = self.audit.clone();
        Ok(d)
    }

    /// Attaches a fresh access audit and returns a handle to it.
    pub fn instrument(&mut self) -> Arc<AccessAudit> {
        let a = Arc::new(AccessAudit::default());
        self.audit = Some(a.clone());
        a
    }

    pub fn enter_phase(&self, phase: Phase) -> PhaseGuard {
        match &self.audit {
            Some(a) => PhaseGuard {
                audit: Some(a.clone()),
                previous: a.phase.swap(phase as u8, Ordering::SeqCst),
            },
            None => PhaseGuard {
                audit: None,
                previous: 0,
            },
        }
    }

    fn record(&self, class: usize) {
        let Some(a) = &self.audit else { return };
        if a.phase.load(Ordering::SeqCst) != Phase::Training as u8 {
            return;
        }
        a.training_reads.fetch_add(1, Ordering::SeqCst);
        match self.roles[class] {
            Role::Unseen | Role::Unassigned => {
                a.unseen_violations.fetch_add(1, Ordering::SeqCst);
            }
            Role::PseudoUnseen => {
                a.pseudo_unseen_reads.fetch_add(1, Ordering::SeqCst);
            }
            Role::Train => {}
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_reps.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn rep_dim(&self) -> usize {
        self.class_reps.cols()
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.record(self.labels[i]);
        self.features.row(i)
    }

    pub fn class_rep(&self, class: usize) -> &[f64] {
        self.record(class);
        self.class_reps.row(class)
    }

    /// Feature rows for the given sample indices.
    pub fn features_of(&self, idx: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(idx.len(), self.feat_dim());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.feature(i));
        }
        out
    }

    /// Representation rows for the given classes.
    pub fn reps_of(&self, classes: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(classes.len(), self.rep_dim());
        for (r, &c) in classes.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.class_rep(c));
        }
        out
    }

    /// Indices in `pool` whose label is in `classes`.
    pub fn samples_of_classes(&self, pool: &[usize], classes: &[usize]) -> Vec<usize> {
        pool.iter().copied().filter(|&i| classes.contains(&self.labels[i])).collect()
    }

    pub(crate) fn raw_features(&self) -> &Tensor {
        &self.features
    }

    pub(crate) fn raw_class_reps(&self) -> &Tensor {
        &self.class_reps
    }
}
