//! Gradient-ascent update rules over flat parameter slices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Per-coordinate step sizes from running averages of squared gradients
    /// and squared updates.
    Adadelta { rho: f64, epsilon: f64, learning_rate: f64 },
    Sgd { learning_rate: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adadelta {
            rho: 0.95,
            epsilon: 1e-6,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    sq_grad: Vec<f64>,
    sq_update: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        Optimizer {
            config,
            sq_grad: vec![0.0; num_params],
            sq_update: vec![0.0; num_params],
        }
    }

    /// Moves `params` along `grads` (ascent). Both are walked slice by slice
    /// in the same order.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            debug_assert_eq!(p.len(), g.len());
            for (pi, gi) in p.iter_mut().zip(g.iter()) {
                match self.config {
                    OptimizerConfig::Adadelta {
                        rho,
                        epsilon,
                        learning_rate,
                    } => {
                        let eg = &mut self.sq_grad[k];
                        *eg = rho * *eg + (1.0 - rho) * gi * gi;
                        let ed = &mut self.sq_update[k];
                        let update = ((*ed + epsilon).sqrt() / (*eg + epsilon).sqrt()) * gi;
                        *ed = rho * *ed + (1.0 - rho) * update * update;
                        *pi += learning_rate * update;
                    }
                    OptimizerConfig::Sgd { learning_rate } => *pi += learning_rate * gi,
                }
                k += 1;
            }
        }
        debug_assert_eq!(k, self.sq_grad.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adadelta_first_step_size() {
        // first update is sqrt(eps) / sqrt((1 - rho) g^2 + eps) * g
        let mut opt = Optimizer::new(OptimizerConfig::default(), 1);
        let mut p = [0.0];
        opt.step(&mut [&mut p], &[&[2.0]]);
        let expected = (1e-6f64).sqrt() / (0.05 * 4.0 + 1e-6f64).sqrt() * 2.0;
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adadelta_climbs_a_concave_function() {
        // maximize -(x - 3)^2
        let mut opt = Optimizer::new(OptimizerConfig::default(), 1);
        let mut x = [0.0];
        for _ in 0..5000 {
            let g = [-2.0 * (x[0] - 3.0)];
            opt.step(&mut [&mut x], &[&g]);
        }
        assert!((x[0] - 3.0).abs() < 0.05, "{}", x[0]);
    }
}
