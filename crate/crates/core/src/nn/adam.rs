use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a flat parameter slice.
///
/// Coordinates whose gradient is exactly zero keep their value; their
/// moments still decay. With a fresh state this is the same as plain Adam,
/// and it keeps unused output heads of a multi-head network from drifting
/// on stale momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update. A non-finite gradient rejects the whole update and leaves
    /// parameters and state untouched; a non-finite parameter afterwards is
    /// reported as an error as well.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], model: &str) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dims("AdamState::step (params)", self.m.len(), params.len()));
        }
        if grads.len() != self.m.len() {
            return Err(Error::dims("AdamState::step (grads)", self.m.len(), grads.len()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                model: format!("{model} (gradient)"),
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            if g == 0.0 {
                continue;
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                model: format!("{model} (parameters after update)"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    proptest::proptest! {
        #[test]
        fn zero_gradients_never_move_params(
            params in proptest::collection::vec(-5.0f64..5.0, 1..12),
            lr in 1e-5f64..1e-1,
            warm in 0usize..4,
        ) {
            let mut adam = AdamState::new(params.len(), AdamConfig::with_lr(lr));
            let mut p = params.clone();
            let grads: Vec<f64> = p.iter().map(|v| 0.3 * v - 0.1).collect();
            for _ in 0..warm {
                adam.step(&mut p, &grads, "test").unwrap();
            }
            let before = p.clone();
            let zeros = vec![0.0; p.len()];
            adam.step(&mut p, &zeros, "test").unwrap();
            proptest::prop_assert_eq!(p, before);
        }
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut adam = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, -2.0];
        adam.step(&mut p, &[0.5, -0.5], "test").unwrap();
        let after_first = p.clone();
        let m_before = adam.first_moment().to_vec();
        let v_before = adam.second_moment().to_vec();
        adam.step(&mut p, &[0.0, 0.0], "test").unwrap();
        assert_eq!(p, after_first);
        for i in 0..2 {
            assert_eq!(adam.first_moment()[i], 0.9 * m_before[i]);
            assert_eq!(adam.second_moment()[i], 0.999 * v_before[i]);
        }
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let lr = 0.01;
        let mut adam = AdamState::new(3, AdamConfig::with_lr(lr));
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        adam.step(&mut p, &g, "test").unwrap();
        for i in 0..3 {
            // m_hat = g, v_hat = g^2 at t = 1
            let expected = -lr * g[i] / (g[i].abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-15, "{} vs {}", p[i], expected);
        }
    }

    #[test]
    fn second_constant_step_matches_reference_recurrence() {
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let g = 0.7;
        let mut adam = AdamState::new(1, AdamConfig::with_lr(lr));
        let mut p = vec![0.0];
        adam.step(&mut p, &[g], "test").unwrap();
        let p1 = p[0];
        adam.step(&mut p, &[g], "test").unwrap();
        // reference recurrence
        let m2 = b1 * (1.0 - b1) * g + (1.0 - b1) * g;
        let v2 = b2 * (1.0 - b2) * g * g + (1.0 - b2) * g * g;
        let step2 = lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!(((p1 - p[0]) - step2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut adam = AdamState::new(2, AdamConfig::default());
        let mut p = vec![1.0, 2.0];
        let err = adam.step(&mut p, &[f64::NAN, 1.0], "critic-1").unwrap_err();
        assert!(err.to_string().contains("critic-1"));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut adam = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        for k in 1..=5 {
            adam.step(&mut p, &[1.0], "x").unwrap();
            assert_eq!(adam.step_count(), k);
        }
    }
}
