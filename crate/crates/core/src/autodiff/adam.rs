//! Adam optimizer over parameter tensors.

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment state per parameter, matched by position. The same
/// parameter list, in the same order, must be passed to every `step`.
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Adam {
        let moments = params
            .iter()
            .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
            .collect();
        Adam { cfg, t: 0, moments }
    }

    /// One bias-corrected update. A parameter with no gradient this step is
    /// treated as having gradient zero, so its momentum still decays.
    pub fn step(&mut self, params: &[Tensor]) {
        assert_eq!(params.len(), self.moments.len(), "parameter list changed");
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (p, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let grad = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
            let mut values = p.values();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            p.set_values(&values);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_almost_lr() {
        // theta 1.0, grad 0.5, lr 0.1: bias correction cancels, so the step
        // is lr * g / (|g| + eps), within eps of 0.1.
        let p = Tensor::param("p", 1, 1, vec![1.0]);
        let loss = p.scale(0.5).sum();
        loss.backward().unwrap();
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            std::slice::from_ref(&p),
        );
        adam.step(std::slice::from_ref(&p));
        assert!((p.values()[0] - 0.9).abs() < 1e-6, "{}", p.values()[0]);
    }

    #[test]
    fn descends_a_quadratic() {
        // minimize (x - 3)^2 from x = 0
        let p = Tensor::param("p", 1, 1, vec![0.0]);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            std::slice::from_ref(&p),
        );
        for _ in 0..2000 {
            p.zero_grad();
            let diff = p.add(&Tensor::scalar_const(-3.0)).unwrap();
            let loss = diff.mul(&diff).unwrap().sum();
            loss.backward().unwrap();
            adam.step(std::slice::from_ref(&p));
        }
        assert!((p.values()[0] - 3.0).abs() < 1e-2, "{}", p.values()[0]);
    }

    #[test]
    fn missing_grad_still_decays_momentum() {
        let p = Tensor::param("p", 1, 1, vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default(), std::slice::from_ref(&p));
        let loss = p.scale(2.0).sum();
        loss.backward().unwrap();
        adam.step(std::slice::from_ref(&p));
        let after_first = p.values()[0];
        p.zero_grad();
        // no backward: grad is None, treated as zero
        adam.step(std::slice::from_ref(&p));
        let after_second = p.values()[0];
        assert!(after_second < after_first, "momentum should keep moving");
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let p = Tensor::param("p", 1, 2, vec![0.3, -0.7]);
            let mut adam = Adam::new(AdamConfig::default(), std::slice::from_ref(&p));
            for _ in 0..50 {
                p.zero_grad();
                let loss = p.mul(&p).unwrap().sum();
                loss.backward().unwrap();
                adam.step(std::slice::from_ref(&p));
            }
            p.values()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
