//! Deterministic synthetic zero-shot benchmark.
//!
//! Class representations are uniform on `[0, 1]^A`; a fixed random affine map
//! sends them to feature space and samples are `relu(W r_k + b + noise)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use super::dataset::{Dataset, Splits};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Fraction of each seen class's samples reserved for the GZSL test split.
pub const SEEN_TEST_FRACTION: f64 = 0.2;
/// Fraction of remaining training-class samples held out as validation-seen.
pub const VAL_HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub k_classes: usize,
    pub rep_dim: usize,
    pub feat_dim: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub n_unseen: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            k_classes: 15,
            rep_dim: 8,
            feat_dim: 16,
            samples_per_class: 30,
            noise_sigma: 0.1,
            n_unseen: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_unseen < 1 {
            return Err(Error::invalid("n_unseen must be at least 1"));
        }
        if self.k_classes < self.n_unseen + 2 {
            return Err(Error::invalid(format!(
                "{} classes leave fewer than 2 seen classes after {} unseen",
                self.k_classes, self.n_unseen
            )));
        }
        if self.rep_dim == 0 || self.feat_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::invalid("rep_dim, feat_dim and samples_per_class must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of pseudo-unseen validation classes carved from the seen set.
    pub fn n_pseudo_unseen(&self) -> usize {
        let seen = self.k_classes - self.n_unseen;
        (seen / 6).max(1).min(seen.saturating_sub(2))
    }
}

/// The noiseless class prototypes `relu(W r_k + b)` and the map itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthMap {
    pub class_reps: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl SynthMap {
    pub fn prototype(&self, class: usize) -> Vec<f64> {
        let r = self.class_reps.row(class);
        (0..self.weight.rows())
            .map(|d| {
                let pre: f64 = self.weight.row(d).iter().zip(r).map(|(w, x)| w * x).sum::<f64>() + self.bias.data()[d];
                pre.max(0.0)
            })
            .collect()
    }
}

fn draw_map(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> SynthMap {
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let class_reps = Tensor::from_fn(cfg.k_classes, cfg.rep_dim, |_, _| unit.sample(rng));
    let scale = 1.0 / (cfg.rep_dim as f64).sqrt();
    let weight = Tensor::from_fn(cfg.feat_dim, cfg.rep_dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    });
    let bias = Tensor::from_fn(1, cfg.feat_dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        0.1 * z
    });
    SynthMap {
        class_reps,
        weight,
        bias,
    }
}

/// The map used by [`generate_synthetic`] for the same config.
pub fn synthetic_map(cfg: &SynthConfig) -> Result<SynthMap> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(draw_map(cfg, &mut rng))
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let map = draw_map(cfg, &mut rng);

    let n = cfg.k_classes * cfg.samples_per_class;
    let mut features = Tensor::zeros(n, cfg.feat_dim);
    let mut labels = Vec::with_capacity(n);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    for c in 0..cfg.k_classes {
        let r = map.class_reps.row(c);
        for s in 0..cfg.samples_per_class {
            let row = features.row_mut(c * cfg.samples_per_class + s);
            for (d, out) in row.iter_mut().enumerate() {
                let pre: f64 = map.weight.row(d).iter().zip(r).map(|(w, x)| w * x).sum::<f64>()
                    + map.bias.data()[d];
                let eps = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                *out = (pre + eps).max(0.0);
            }
            labels.push(c);
        }
    }

    let mut classes: Vec<usize> = (0..cfg.k_classes).collect();
    classes.shuffle(&mut rng);
    let mut unseen = classes[..cfg.n_unseen].to_vec();
    let mut seen = classes[cfg.n_unseen..].to_vec();
    unseen.sort_unstable();
    seen.sort_unstable();

    let mut test = Vec::new();
    for c in 0..cfg.k_classes {
        let mut members: Vec<usize> = (c * cfg.samples_per_class..(c + 1) * cfg.samples_per_class).collect();
        if unseen.contains(&c) {
            test.extend(members);
        } else {
            members.shuffle(&mut rng);
            let k = (SEEN_TEST_FRACTION * members.len() as f64).round() as usize;
            test.extend(&members[..k]);
        }
    }
    test.sort_unstable();

    let base = Splits {
        seen,
        unseen,
        test,
        ..Splits::default()
    };
    let split_seed = cfg.seed.wrapping_add(0x5eed);
    let splits = build_validation_split(&labels, &base, cfg.n_pseudo_unseen(), VAL_HOLDOUT_FRACTION, split_seed)?;
    Dataset::new(features, labels, map.class_reps, splits)
}

fn build_validation_split(
    labels: &[usize],
    base: &Splits,
    n_pseudo_unseen: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = base.seen.clone();
    pool.shuffle(&mut rng);
    let mut pseudo = pool[..n_pseudo_unseen].to_vec();
    pseudo.sort_unstable();

    let in_test: std::collections::BTreeSet<usize> = base.test.iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for &c in &base.seen {
        let mut members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == c && !in_test.contains(&i))
            .collect();
        if pseudo.contains(&c) {
            val.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let k = (holdout_fraction * members.len() as f64).round() as usize;
        val.extend(&members[..k]);
        train.extend(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(Splits {
        seen: base.seen.clone(),
        unseen: base.unseen.clone(),
        val_pseudo_unseen: pseudo,
        train,
        val,
        test: base.test.clone(),
    })
}

/// Rebuilds the validation part of the splits: `n_pseudo_unseen` seen classes
/// become validation stand-ins for unseen classes and `holdout_fraction` of
/// every other seen class's non-test samples become validation-seen samples.
/// Seen/unseen classes and the test split are left untouched.
pub fn make_validation_split(
    dataset: &Dataset,
    n_pseudo_unseen: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<Splits> {
    let s = dataset.splits();
    if n_pseudo_unseen < 1 || n_pseudo_unseen >= s.seen.len() {
        return Err(Error::invalid(format!(
            "need 1 <= n_pseudo_unseen < |S| = {}, got {n_pseudo_unseen}",
            s.seen.len()
        )));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::invalid("holdout_fraction must lie in (0, 1)"));
    }
    let splits = build_validation_split(dataset.labels(), s, n_pseudo_unseen, holdout_fraction, seed)?;
    splits.validate(dataset.labels(), dataset.n_classes())?;
    Ok(splits)
}
