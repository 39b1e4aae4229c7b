//! Stochastic gradient descent with momentum, L2 weight decay and a step
//! learning-rate schedule.

use alloc::vec::Vec;

use crate::model::ModelBundle;

/// `base × factor^⌊epoch / every⌋`.
pub fn lr_at_epoch(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    base * libm::pow(factor, (epoch / every.max(1)) as f64)
}

/// Momentum SGD with the update `v ← μv + (g + λw)`, `w ← w − ηv`; the
/// first step initializes `v` to the gradient.
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    /// Updates every trainable parameter of `model` from its accumulated
    /// gradient. Buffers are left alone.
    pub fn step(&mut self, model: &mut ModelBundle, lr: f64) {
        let (mu, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        let fresh = self.velocity.is_empty();
        let mut slot = 0;
        let velocity = &mut self.velocity;
        model.visit_params_mut(&mut |p| {
            if !p.is_trainable() {
                return;
            }
            if fresh {
                velocity.push(alloc::vec![0.0; p.value.len()]);
            }
            let v = &mut velocity[slot];
            for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                let d = *g + wd * *w;
                *v = if fresh { d } else { mu * *v + d };
                *w -= lr * *v;
            }
            slot += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_closed_form() {
        for epoch in 0..50 {
            let want = 1e-2 * [1.0, 1e-1, 1e-2, 1e-3, 1e-4][epoch / 10];
            let got = lr_at_epoch(1e-2, 0.1, 10, epoch);
            assert!((got - want).abs() <= 1e-15 * want.max(1e-300) + 1e-20, "epoch {epoch}");
        }
        assert_eq!(lr_at_epoch(0.5, 1.0, 3, 100), 0.5);
    }
}
