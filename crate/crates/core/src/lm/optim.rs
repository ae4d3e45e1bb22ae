use super::{Gradient, ModelParameters};

/// Linear warm-up over the first `warmup_steps` steps, constant afterwards.
#[derive(Debug, Clone, Copy)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
}

impl WarmupSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        Self {
            base_lr,
            warmup_steps: (total_steps as f64 * warmup_fraction).ceil() as usize,
        }
    }

    /// Learning rate of 1-based step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step >= self.warmup_steps {
            self.base_lr
        } else {
            self.base_lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grad: &Gradient, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grad.as_slice())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;

    #[test]
    fn warmup_ramps_linearly() {
        let s = WarmupSchedule::new(1.0, 100, 0.1);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.lr(1) - 0.1).abs() < 1e-15);
        assert_eq!(s.lr(10), 1.0);
        assert_eq!(s.lr(50), 1.0);
        let none = WarmupSchedule::new(0.5, 100, 0.0);
        assert_eq!(none.lr(1), 0.5);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let c = ModelConfig {
            vocab_size: 2,
            context_window: 1,
            embed_dim: 1,
            hidden_dim: 1,
        };
        let mut p = ModelParameters::zeros(c).unwrap();
        let mut g = p.zeros_like();
        g.as_mut_slice()[0] = 3.0;
        g.as_mut_slice()[1] = -0.5;
        let mut adam = Adam::new(p.len());
        adam.step(&mut p, &g, 0.01);
        assert!((p.as_slice()[0] + 0.01).abs() < 1e-9);
        assert!((p.as_slice()[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.as_slice()[2], 0.0);
    }
}
