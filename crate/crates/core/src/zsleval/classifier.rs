//! Final-stage classifiers trained on real and synthesized features.

use crate::diffcore::{log_sum_exp, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ClassifierKind {
    /// Multinomial logistic regression.
    #[default]
    Softmax,
    /// Negative squared distance to per-class feature centroids.
    NearestCentroid,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ClassifierKind::Softmax),
            "centroid" => Ok(ClassifierKind::NearestCentroid),
            other => Err(Error::invalid(format!("unknown classifier '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftmaxTraining {
    pub max_iters: usize,
    /// Stop once the largest gradient entry falls below this.
    pub tolerance: f64,
    pub weight_decay: f64,
}

impl Default for SoftmaxTraining {
    fn default() -> Self {
        SoftmaxTraining {
            max_iters: 300,
            tolerance: 1e-4,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    label_space: Vec<usize>,
    kind: ClassifierKind,
    /// Per-feature standardization applied before the linear map.
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `d x c`; for the centroid variant, the centroids transposed.
    weight: Tensor,
    bias: Vec<f64>,
}

impl Classifier {
    pub fn label_space(&self) -> &[usize] {
        &self.label_space
    }

    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    fn standardize(&self, x: &Tensor) -> Tensor {
        Tensor::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) - self.mean[j]) / self.scale[j])
    }

    /// `n x |label_space|` scores; column `j` scores `label_space()[j]`.
    pub fn scores(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(
                "classifier",
                format!("{} feature columns, classifier expects {}", x.cols(), self.mean.len()),
            ));
        }
        let z = self.standardize(x);
        match self.kind {
            ClassifierKind::Softmax => {
                let mut s = z.matmul(&self.weight)?;
                for i in 0..s.rows() {
                    for (v, b) in s.row_mut(i).iter_mut().zip(&self.bias) {
                        *v += b;
                    }
                }
                Ok(s)
            }
            ClassifierKind::NearestCentroid => Ok(Tensor::from_fn(z.rows(), self.label_space.len(), |i, c| {
                -z.row(i)
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (v - self.weight.get(j, c)).powi(2))
                    .sum::<f64>()
            })),
        }
    }

    /// Highest-scoring label per row; the first maximum wins ties.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let s = self.scores(x)?;
        Ok((0..s.rows()).map(|i| self.label_space[argmax(s.row(i))]).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Trains a classifier over `label_space`. Softmax regression uses full-batch
/// Nesterov-accelerated gradient descent on standardized features with a
/// step of `1 / L` for the smooth-loss Lipschitz bound `L`.
pub fn train_classifier(
    features: &Tensor,
    labels: &[usize],
    label_space: &[usize],
    kind: ClassifierKind,
    opts: &SoftmaxTraining,
) -> Result<Classifier> {
    if features.rows() != labels.len() {
        return Err(Error::shape(
            "train_classifier",
            format!("{} rows vs {} labels", features.rows(), labels.len()),
        ));
    }
    if label_space.is_empty() {
        return Err(Error::invalid("empty label space"));
    }
    let mut targets = Vec::with_capacity(labels.len());
    let mut counts = vec![0usize; label_space.len()];
    for &y in labels {
        let k = label_space
            .iter()
            .position(|&c| c == y)
            .ok_or_else(|| Error::invalid(format!("training label {y} is outside the label space")))?;
        counts[k] += 1;
        targets.push(k);
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {} has no training samples", label_space[k])));
    }

    let (n, d, c) = (features.rows(), features.cols(), label_space.len());
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let var = (0..n).map(|i| (features.get(i, j) - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if var.sqrt() > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut clf = Classifier {
        label_space: label_space.to_vec(),
        kind,
        mean,
        scale,
        weight: Tensor::zeros(d, c),
        bias: vec![0.0; c],
    };
    let z = clf.standardize(features);

    match kind {
        ClassifierKind::NearestCentroid => {
            for (i, &k) in targets.iter().enumerate() {
                for j in 0..d {
                    let w = clf.weight.get(j, k) + z.get(i, j) / counts[k] as f64;
                    clf.weight.set(j, k, w);
                }
            }
        }
        ClassifierKind::Softmax => fit_softmax(&mut clf, &z, &targets, opts)?,
    }
    Ok(clf)
}

fn softmax_gradient(z: &Tensor, targets: &[usize], w: &Tensor, b: &[f64], decay: f64) -> (Tensor, Vec<f64>) {
    let n = z.rows() as f64;
    let mut p = Tensor::matmul_raw(z, w);
    for (i, &t) in targets.iter().enumerate() {
        let row = p.row_mut(i);
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
        let lse = log_sum_exp(row);
        for v in row.iter_mut() {
            *v = (*v - lse).exp() / n;
        }
        row[t] -= 1.0 / n;
    }
    let mut gw = Tensor::matmul_raw(&z.transpose(), &p);
    for (g, &wv) in gw.data_mut().iter_mut().zip(w.data()) {
        *g += decay * wv;
    }
    let gb = (0..p.cols()).map(|k| (0..p.rows()).map(|i| p.get(i, k)).sum()).collect();
    (gw, gb)
}

fn fit_softmax(clf: &mut Classifier, z: &Tensor, targets: &[usize], opts: &SoftmaxTraining) -> Result<()> {
    let n = z.rows() as f64;
    // Hessian of mean cross-entropy is bounded by 0.5 * (||Z||_F^2 / n + 1) + decay.
    let frob: f64 = z.data().iter().map(|v| v * v).sum::<f64>() / n;
    let lipschitz = 0.5 * (frob + 1.0) + opts.weight_decay;
    let step = 1.0 / lipschitz;

    let (d, c) = (z.cols(), clf.label_space.len());
    let mut w = Tensor::zeros(d, c);
    let mut b = vec![0.0; c];
    let mut w_prev = w.clone();
    let mut b_prev = b.clone();
    for it in 0..opts.max_iters {
        let momentum = it as f64 / (it as f64 + 3.0);
        let yw = Tensor::from_fn(d, c, |i, j| w.get(i, j) + momentum * (w.get(i, j) - w_prev.get(i, j)));
        let yb: Vec<f64> = b.iter().zip(&b_prev).map(|(x, p)| x + momentum * (x - p)).collect();
        let (gw, gb) = softmax_gradient(z, targets, &yw, &yb, opts.weight_decay);
        let worst = gw.data().iter().chain(&gb).fold(0.0f64, |m, v| m.max(v.abs()));
        if !worst.is_finite() {
            return Err(Error::NonFinite("classifier gradient".into()));
        }
        w_prev = w;
        b_prev = b;
        w = Tensor::from_fn(d, c, |i, j| yw.get(i, j) - step * gw.get(i, j));
        b = yb.iter().zip(&gb).map(|(y, g)| y - step * g).collect();
        if worst < opts.tolerance {
            break;
        }
    }
    clf.weight = w;
    clf.bias = b;
    Ok(())
}
