//! Training objectives: the semantic-reconstruction (SR) loss, Wasserstein
//! critic/generator losses with gradient penalty, seen-class classification
//! and the optional visual-pivot centroid regularizer.

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::networks::{critic_input_gradient, sr_forward, BoundDiscriminator, BoundRegressor, Discriminator};

/// Default gradient-penalty coefficient.
pub const GP_COEFFICIENT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_sr: f64,
    pub lambda_cls: f64,
    pub lambda_pivot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_sr: 1.0,
            lambda_cls: 1.0,
            lambda_pivot: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("lambda_sr", self.lambda_sr),
            ("lambda_cls", self.lambda_cls),
            ("lambda_pivot", self.lambda_pivot),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SimilarityFn {
    #[default]
    Cosine,
    NegativeSquaredDistance,
}

impl SimilarityFn {
    /// Row-wise similarity, `n x d, n x d -> n x 1`.
    pub fn apply(self, tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
        match self {
            SimilarityFn::Cosine => tape.cosine_sim(a, b),
            SimilarityFn::NegativeSquaredDistance => {
                let d = tape.sub(a, b)?;
                let sq = tape.square(d)?;
                let s = tape.row_sum(sq)?;
                tape.scale(s, -1.0)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimilarityFn::Cosine => "cosine",
            SimilarityFn::NegativeSquaredDistance => "neg_sq_dist",
        }
    }
}

impl std::str::FromStr for SimilarityFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityFn::Cosine),
            "neg_sq_dist" => Ok(SimilarityFn::NegativeSquaredDistance),
            other => Err(Error::invalid(format!("unknown similarity '{other}'"))),
        }
    }
}

/// One `(features, target representations)` pair of the SR objective.
#[derive(Clone, Copy, Debug)]
pub struct SrTerm {
    pub features: Var,
    pub reps: Var,
}

/// The three SR terms: real seen features, generated seen features, and
/// generated hallucinated features, each paired with the representation it
/// should reconstruct. A term whose batch has zero rows (or is `None`) is
/// dropped.
#[derive(Clone, Copy, Debug, Default)]
pub struct SrBatch {
    pub real: Option<SrTerm>,
    pub generated_seen: Option<SrTerm>,
    pub generated_hallucinated: Option<SrTerm>,
}

/// `L_SR = - sum over active terms of mean_i sim(r_i, SR(x_i))`.
///
/// Returns a 1x1 node; with no active term the result is a zero constant.
pub fn sr_loss(tape: &mut Tape, batch: &SrBatch, regressor: &BoundRegressor, sim: SimilarityFn) -> Result<Var> {
    let mut total: Option<Var> = None;
    for term in [batch.real, batch.generated_seen, batch.generated_hallucinated]
        .into_iter()
        .flatten()
    {
        let (xv, rv) = (tape.value(term.features)?, tape.value(term.reps)?);
        if xv.rows() != rv.rows() {
            return Err(Error::shape(
                "sr_loss",
                format!("{} feature rows vs {} representation rows", xv.rows(), rv.rows()),
            ));
        }
        if xv.rows() == 0 {
            continue;
        }
        let pred = sr_forward(tape, regressor, term.features)?;
        if tape.value(pred)?.cols() != tape.value(term.reps)?.cols() {
            return Err(Error::shape("sr_loss", "regressor output width differs from representation width"));
        }
        let s = sim.apply(tape, term.reps, pred)?;
        let m = tape.mean(s)?;
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    match total {
        Some(t) => tape.scale(t, -1.0),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

/// Wasserstein critic loss `mean(fake) - mean(real)`.
pub fn adversarial_d_loss(tape: &mut Tape, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let f = tape.mean(fake_logits)?;
    let r = tape.mean(real_logits)?;
    tape.sub(f, r)
}

/// Wasserstein generator loss `-mean(fake)`.
pub fn adversarial_g_loss(tape: &mut Tape, fake_logits: Var) -> Result<Var> {
    let f = tape.mean(fake_logits)?;
    tape.scale(f, -1.0)
}

/// Mean softmax cross-entropy over the seen-class head.
pub fn classification_loss(tape: &mut Tape, class_logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_xent(class_logits, labels)
}

/// Mean over `classes` of the squared distance between the mean generated
/// feature of the class and its real centroid (row of `centroids`).
pub fn visual_pivot_loss(
    tape: &mut Tape,
    generated: Var,
    labels: &[usize],
    classes: &[usize],
    centroids: &Tensor,
) -> Result<Var> {
    let gv = tape.value(generated)?;
    if gv.rows() != labels.len() {
        return Err(Error::shape(
            "visual_pivot_loss",
            format!("{} generated rows, {} labels", gv.rows(), labels.len()),
        ));
    }
    if classes.is_empty() {
        return Err(Error::invalid("visual_pivot_loss needs at least one class"));
    }
    let mut averaging = Tensor::zeros(classes.len(), labels.len());
    let mut targets = Tensor::zeros(classes.len(), centroids.cols());
    for (ci, &c) in classes.iter().enumerate() {
        if c >= centroids.rows() {
            return Err(Error::invalid(format!("class {c} has no centroid")));
        }
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            return Err(Error::invalid(format!("class {c} has zero generated samples")));
        }
        let w = 1.0 / members.len() as f64;
        for i in members {
            averaging.set(ci, i, w);
        }
        targets.row_mut(ci).copy_from_slice(centroids.row(c));
    }
    let a = tape.constant(averaging);
    let t = tape.constant(targets);
    let means = tape.matmul(a, generated)?;
    let d = tape.sub(means, t)?;
    let sq = tape.square(d)?;
    let per_class = tape.row_sum(sq)?;
    tape.mean(per_class)
}

/// `coefficient * mean_i (||grad_x D_real(x_hat_i)|| - 1)^2`, differentiable
/// w.r.t. the bound critic weights.
pub fn gradient_penalty(
    tape: &mut Tape,
    bound: &BoundDiscriminator,
    critic: &Discriminator,
    interpolated: &Tensor,
    coefficient: f64,
) -> Result<Var> {
    let g = critic_input_gradient(tape, bound, critic, interpolated)?;
    let sq = tape.square(g)?;
    let ss = tape.row_sum(sq)?;
    // keeps sqrt differentiable when a row gradient vanishes
    let tiny = tape.constant(Tensor::scalar(1e-12));
    let ss = tape.add(ss, tiny)?;
    let norms = tape.sqrt(ss)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let dev = tape.sub(norms, one)?;
    let dev2 = tape.square(dev)?;
    let m = tape.mean(dev2)?;
    tape.scale(m, coefficient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{init_params, NetConfig};

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).unwrap().item().unwrap()
    }

    #[test]
    fn adversarial_losses() {
        let mut tape = Tape::new();
        let r = tape.leaf(Tensor::row_vector(&[1.0]));
        let f = tape.leaf(Tensor::row_vector(&[0.0]));
        let l = adversarial_d_loss(&mut tape, r, f).unwrap();
        assert_eq!(scalar(&tape, l), -1.0);
        let l = adversarial_d_loss(&mut tape, r, r).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);

        let r = tape.leaf(Tensor::new(2, 1, vec![0.0, 0.2]).unwrap());
        let f = tape.leaf(Tensor::new(2, 1, vec![0.5, 0.1]).unwrap());
        let l = adversarial_d_loss(&mut tape, r, f).unwrap();
        assert!((scalar(&tape, l) - 0.2).abs() < 1e-15);

        let f = tape.leaf(Tensor::new(2, 1, vec![0.0, 0.0]).unwrap());
        let l = adversarial_g_loss(&mut tape, f).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);
        let f = tape.leaf(Tensor::new(2, 1, vec![1.0, 3.0]).unwrap());
        let l = adversarial_g_loss(&mut tape, f).unwrap();
        assert_eq!(scalar(&tape, l), -2.0);
        let c = tape.constant(Tensor::scalar(0.75));
        let shifted = tape.add(f, c).unwrap();
        let l2 = adversarial_g_loss(&mut tape, shifted).unwrap();
        assert!((scalar(&tape, l2) - (-2.75)).abs() < 1e-15);
    }

    #[test]
    fn classification_cases() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(2, 4));
        let v = classification_loss(&mut tape, l, &[1, 3]).unwrap();
        assert!((scalar(&tape, v) - 4f64.ln()).abs() < 1e-15);

        let l = tape.leaf(Tensor::from_rows(&[[60.0, 0.0, 0.0]]).unwrap());
        let v = classification_loss(&mut tape, l, &[0]).unwrap();
        assert!(scalar(&tape, v) < 1e-20);

        assert!(classification_loss(&mut tape, l, &[3]).is_err());
    }

    #[test]
    fn classification_matches_hand_oracle() {
        let logits = [[0.3, -1.2, 2.0], [1.5, 0.5, -0.5], [-0.7, 0.1, 0.4]];
        let labels = [2usize, 0, 1];
        let mut expected = 0.0;
        for (row, &y) in logits.iter().zip(&labels) {
            let z: f64 = row.iter().map(|v: &f64| v.exp()).sum();
            expected += -(row[y].exp() / z).ln();
        }
        expected /= 3.0;
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::from_rows(&logits).unwrap());
        let v = classification_loss(&mut tape, l, &labels).unwrap();
        assert!((scalar(&tape, v) - expected).abs() < 1e-12);
    }

    #[test]
    fn pivot_cases() {
        let centroids = Tensor::from_rows(&[[1.0, 2.0], [0.0, -1.0]]).unwrap();
        let mut tape = Tape::new();
        let g = tape.leaf(Tensor::from_rows(&[[0.0, 2.0], [2.0, 2.0]]).unwrap());
        let v = visual_pivot_loss(&mut tape, g, &[0, 0], &[0], &centroids).unwrap();
        assert_eq!(scalar(&tape, v), 0.0);

        let g = tape.leaf(Tensor::from_rows(&[[1.5, 1.0]]).unwrap());
        let v = visual_pivot_loss(&mut tape, g, &[0], &[0], &centroids).unwrap();
        assert!((scalar(&tape, v) - (0.25 + 1.0)).abs() < 1e-15);

        // two classes: class 0 mean (1, 3) off by (0, 1); class 1 mean (1, -1) off by (1, 0)
        let g = tape
            .leaf(Tensor::from_rows(&[[0.0, 3.0], [2.0, 3.0], [1.0, -1.0]]).unwrap());
        let v = visual_pivot_loss(&mut tape, g, &[0, 0, 1], &[0, 1], &centroids).unwrap();
        assert!((scalar(&tape, v) - 1.0).abs() < 1e-12);

        assert!(visual_pivot_loss(&mut tape, g, &[0, 0, 0], &[0, 1], &centroids).is_err());
    }

    #[test]
    fn sr_loss_anchors() {
        // identity-like regressor: x in R^2 -> relu(x) -> relu -> linear identity
        let cfg = NetConfig::new(2, 1, 2, 2).with_hidden(vec![3], vec![3], vec![2, 2]);
        let mut p = init_params(&cfg, 0).unwrap();
        for l in &mut p.regressor.layers {
            l.weight = Tensor::eye(2);
            l.bias = Tensor::zeros(1, 2);
        }
        let reps = Tensor::from_rows(&[[1.0, 2.0], [0.5, 0.1]]).unwrap();
        let mut tape = Tape::new();
        let s = p.regressor.bind(&mut tape, true);
        let x = tape.leaf(reps.clone());
        let r = tape.constant(reps.clone());
        let term = SrTerm { features: x, reps: r };
        let batch = SrBatch {
            real: Some(term),
            generated_seen: Some(term),
            generated_hallucinated: Some(term),
        };
        let l = sr_loss(&mut tape, &batch, &s, SimilarityFn::Cosine).unwrap();
        assert!((scalar(&tape, l) + 3.0).abs() < 1e-15);

        let ortho = tape.constant(Tensor::from_rows(&[[2.0, -1.0], [-0.1, 0.5]]).unwrap());
        let term = SrTerm { features: x, reps: ortho };
        let batch = SrBatch {
            real: Some(term),
            generated_seen: Some(term),
            generated_hallucinated: Some(term),
        };
        let l = sr_loss(&mut tape, &batch, &s, SimilarityFn::Cosine).unwrap();
        assert!(scalar(&tape, l).abs() < 1e-15);

        let empty = tape.constant(Tensor::zeros(0, 2));
        let batch = SrBatch {
            real: Some(SrTerm { features: x, reps: r }),
            generated_seen: None,
            generated_hallucinated: Some(SrTerm { features: empty, reps: empty }),
        };
        let l = sr_loss(&mut tape, &batch, &s, SimilarityFn::Cosine).unwrap();
        assert!((scalar(&tape, l) + 1.0).abs() < 1e-15);

        let l = sr_loss(&mut tape, &SrBatch::default(), &s, SimilarityFn::Cosine).unwrap();
        assert_eq!(scalar(&tape, l), 0.0);

        let bad = tape.constant(Tensor::zeros(1, 2));
        let batch = SrBatch {
            real: Some(SrTerm { features: x, reps: bad }),
            ..SrBatch::default()
        };
        assert!(sr_loss(&mut tape, &batch, &s, SimilarityFn::Cosine).is_err());
    }

    #[test]
    fn gradient_penalty_is_nonnegative() {
        let cfg = NetConfig::new(2, 1, 4, 3).with_hidden(vec![3], vec![5], vec![2, 2]);
        for seed in 0..5 {
            let p = init_params(&cfg, seed).unwrap();
            let mut tape = Tape::new();
            let d = p.discriminator.bind(&mut tape, true);
            let x = Tensor::from_fn(6, 4, |i, j| ((i * 4 + j + seed as usize) as f64).sin());
            let gp = gradient_penalty(&mut tape, &d, &p.discriminator, &x, GP_COEFFICIENT).unwrap();
            assert!(scalar(&tape, gp) >= 0.0);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights {
            lambda_sr: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            lambda_cls: f64::NAN,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
