//! Adam over a flat parameter vector.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

    /// Conventional defaults: decays 0.9 / 0.999 and `ε = 1e-7`.
    pub fn new(learning_rate: f64, len: usize) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-7, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// The update Adam would subtract from the parameters for `grad`,
    /// advancing its moment estimates.
    pub fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.m.len(), "gradient length does not match optimizer state");
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let mut out = Vec::with_capacity(grad.len());
        for ((m, v), &g) in self.m.iter_mut().zip(&mut self.v).zip(grad) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            out.push(self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon));
        }
        out
    }

    /// `params ← params − direction(grad)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let d = self.direction(grad);
        for (p, d) in params.iter_mut().zip(d) {
            *p -= d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        let mut adam = Adam::new(0.1, 2);
        let mut p = [1.0, -1.0];
        adam.step(&mut p, &[3.0, -0.02]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-4);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut adam = Adam::new(0.05, 2);
        let mut p = [3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 4.0 * (p[1] + 0.5)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut adam = Adam::new(0.1, 3);
        let mut p = [1.0, 2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]);
        assert_eq!(p, [1.0, 2.0, 3.0]);
    }
}
