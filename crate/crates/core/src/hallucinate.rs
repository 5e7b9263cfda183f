//! Hallucinated class descriptions: random convex combinations of two
//! distinct seen-class representations.

use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HallucinationConfig {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub enabled: bool,
}

impl Default for HallucinationConfig {
    fn default() -> Self {
        HallucinationConfig {
            alpha_low: 0.2,
            alpha_high: 0.8,
            enabled: true,
        }
    }
}

impl HallucinationConfig {
    pub fn disabled() -> Self {
        HallucinationConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.alpha_low && self.alpha_low < self.alpha_high && self.alpha_high <= 1.0;
        if !ok {
            return Err(Error::invalid(format!(
                "alpha range [{}, {}] must satisfy 0 <= low < high <= 1",
                self.alpha_low, self.alpha_high
            )));
        }
        Ok(())
    }
}

/// `alpha * r_a + (1 - alpha) * r_b`.
pub fn hallucinate_pair(
    r_a: &[f64],
    r_b: &[f64],
    alpha: f64,
    config: &HallucinationConfig,
) -> Result<Vec<f64>> {
    if r_a.len() != r_b.len() {
        return Err(Error::shape(
            "hallucinate_pair",
            format!("{} vs {} dims", r_a.len(), r_b.len()),
        ));
    }
    if !(config.alpha_low..=config.alpha_high).contains(&alpha) {
        return Err(Error::invalid(format!(
            "alpha {alpha} outside [{}, {}]",
            config.alpha_low, config.alpha_high
        )));
    }
    Ok(r_a
        .iter()
        .zip(r_b)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect())
}

/// One hallucination draw: two distinct class rows and a mixing weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Draw {
    pub a: usize,
    pub b: usize,
    pub alpha: f64,
}

/// Draws `batch_size` independent `(a, b, alpha)` triples over `n_classes`
/// classes, with `a != b` uniform and `alpha ~ U[low, high)`.
pub fn sample_draws<R: Rng + ?Sized>(
    n_classes: usize,
    batch_size: usize,
    config: &HallucinationConfig,
    rng: &mut R,
) -> Result<Vec<Draw>> {
    config.validate()?;
    if n_classes < 2 {
        return Err(Error::invalid(format!(
            "hallucination needs at least 2 seen classes, have {n_classes}"
        )));
    }
    Ok((0..batch_size)
        .map(|_| {
            let a = rng.random_range(0..n_classes);
            let mut b = rng.random_range(0..n_classes - 1);
            if b >= a {
                b += 1;
            }
            let alpha = rng.random_range(config.alpha_low..config.alpha_high);
            Draw { a, b, alpha }
        })
        .collect())
}

/// A batch of hallucinated representations built from the rows of
/// `class_reps` (one row per seen class). Returns a `0 x rep_dim` tensor
/// without touching the rng when hallucination is disabled.
pub fn sample_hallucinated_batch<R: Rng + ?Sized>(
    class_reps: &Tensor,
    batch_size: usize,
    config: &HallucinationConfig,
    rng: &mut R,
) -> Result<Tensor> {
    if !config.enabled {
        return Ok(Tensor::zeros(0, class_reps.cols()));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let draws = sample_draws(class_reps.rows(), batch_size, config, rng)?;
    let mut out = Tensor::zeros(batch_size, class_reps.cols());
    for (i, d) in draws.iter().enumerate() {
        let row = hallucinate_pair(class_reps.row(d.a), class_reps.row(d.b), d.alpha, config)?;
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn midpoint_and_arithmetic() {
        let cfg = HallucinationConfig::default();
        assert_eq!(hallucinate_pair(&[1.0, 0.0], &[0.0, 1.0], 0.5, &cfg).unwrap(), vec![0.5, 0.5]);
        let v = hallucinate_pair(&[1.0, 2.0], &[3.0, 4.0], 0.2, &cfg).unwrap();
        assert!((v[0] - 2.6).abs() < 1e-15 && (v[1] - 3.6).abs() < 1e-15);
    }

    #[test]
    fn pair_errors() {
        let cfg = HallucinationConfig::default();
        assert!(hallucinate_pair(&[1.0], &[1.0, 2.0], 0.5, &cfg).is_err());
        assert!(hallucinate_pair(&[1.0], &[2.0], 0.9, &cfg).is_err());
        assert!(hallucinate_pair(&[1.0], &[2.0], 0.1, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = HallucinationConfig {
            alpha_low: 0.8,
            alpha_high: 0.2,
            enabled: true,
        };
        assert!(bad.validate().is_err());
        let bad = HallucinationConfig {
            alpha_low: 0.0,
            alpha_high: 1.2,
            enabled: true,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn two_classes_stay_on_segment() {
        let reps = Tensor::from_rows(&[[0.0, 1.0, -2.0], [4.0, 1.0, 3.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = sample_hallucinated_batch(&reps, 100, &HallucinationConfig::default(), &mut rng).unwrap();
        assert_eq!(b.shape(), (100, 3));
        for i in 0..100 {
            let t = b.get(i, 0) / 4.0;
            assert!((0.2..=0.8).contains(&t));
            assert_eq!(b.get(i, 1), 1.0);
            assert!((b.get(i, 2) - (-2.0 + 5.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let reps = Tensor::from_fn(5, 4, |i, j| (i * 4 + j) as f64);
        let cfg = HallucinationConfig::default();
        let a = sample_hallucinated_batch(&reps, 32, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_hallucinated_batch(&reps, 32, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn needs_two_classes() {
        let reps = Tensor::zeros(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_hallucinated_batch(&reps, 4, &HallucinationConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn disabled_is_empty_and_consumes_no_randomness() {
        let reps = Tensor::zeros(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = sample_hallucinated_batch(&reps, 8, &HallucinationConfig::disabled(), &mut rng).unwrap();
        assert_eq!(out.shape(), (0, 2));
        assert_eq!(rng, ChaCha8Rng::seed_from_u64(1));
    }

    #[test]
    fn alpha_histogram_is_roughly_uniform() {
        let cfg = HallucinationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = sample_draws(7, 10_000, &cfg, &mut rng).unwrap();
        let mut bins = [0usize; 10];
        for d in &draws {
            assert_ne!(d.a, d.b);
            let k = (((d.alpha - 0.2) / 0.6) * 10.0) as usize;
            bins[k.min(9)] += 1;
        }
        for &c in &bins {
            assert!((700..=1300).contains(&c), "bins = {bins:?}");
        }
    }

    proptest! {
        #[test]
        fn convex_hull_per_coordinate(
            seed in any::<u64>(),
            k in 2usize..6,
            vals in proptest::collection::vec(-10.0f64..10.0, 24),
        ) {
            let reps = Tensor::from_fn(k, 4, |i, j| vals[(i * 4 + j) % vals.len()]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = HallucinationConfig::default();
            let draws = sample_draws(k, 16, &cfg, &mut rng).unwrap();
            for d in draws {
                prop_assert!(d.a != d.b && d.a < k && d.b < k);
                let h = hallucinate_pair(reps.row(d.a), reps.row(d.b), d.alpha, &cfg).unwrap();
                for ((&v, &x), &y) in h.iter().zip(reps.row(d.a)).zip(reps.row(d.b)) {
                    prop_assert!(v >= x.min(y) - 1e-12 && v <= x.max(y) + 1e-12);
                }
            }
        }
    }
}
