use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols())))
            .unzip();
        AdamState { config, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One bias-corrected Adam update. Nothing is modified if any check fails.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[k].shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("slot {k}: param {:?}, grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("adam gradient slot {k}")));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.t as i32);
        let bias2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (((pi, &gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(cfg(0.1), [&p]);
        st.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn single_scalar_step() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new(cfg(0.1), [&p]);
        st.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = 1, v_hat = 1, so p = 1 - 0.1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.item().unwrap() - expected).abs() < 1e-15);
        assert!((p.item().unwrap() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn repeated_steps_decrease_monotonically() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new(cfg(0.1), [&p]);
        let mut prev = p.item().unwrap();
        for _ in 0..2 {
            st.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
            let now = p.item().unwrap();
            assert!(now < prev);
            prev = now;
        }
        assert_eq!(st.step_count(), 2);
        assert!(st.second_moments()[0].data()[0] >= 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new(cfg(0.1), [&p]);
        assert!(st.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).is_err());
        assert!(st.step(&mut [&mut p], &[Tensor::scalar(f64::NAN)]).is_err());
        assert_eq!(st.step_count(), 0);
    }
}
