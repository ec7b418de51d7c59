use serde::{Deserialize, Serialize};

use super::{NetParams, Scalar};

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Piecewise-constant learning rate by generation: `(first_generation, rate)`
/// pairs in increasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub steps: Vec<(u32, f64)>,
}

impl LrSchedule {
    pub fn rate(&self, generation: u32) -> f64 {
        self.steps
            .iter()
            .take_while(|(from, _)| *from <= generation)
            .last()
            .or(self.steps.first())
            .map(|&(_, lr)| lr)
            .unwrap_or(0.0)
    }

    pub fn constant(lr: f64) -> Self {
        LrSchedule { steps: vec![(0, lr)] }
    }
}

impl Default for LrSchedule {
    /// 0.003, dropping to 0.001 at generation 4 and 0.0001 at generation 11.
    fn default() -> Self {
        LrSchedule { steps: vec![(0, 0.003), (4, 0.001), (11, 0.0001)] }
    }
}

pub fn learning_rate_for_generation(generation: u32) -> f64 {
    LrSchedule::default().rate(generation)
}

/// Heavy-ball SGD: `v = m * v + g; theta -= lr * v`.
///
/// Batch-norm running statistics are not touched by the step.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: T,
    velocity: NetParams<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &NetParams<T>, momentum: f64) -> Self {
        Sgd { momentum: T::lit(momentum), velocity: params.zeros_like() }
    }

    pub fn velocity(&self) -> &NetParams<T> {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut NetParams<T>, grads: &NetParams<T>, lr: f64) {
        let lr = T::lit(lr);
        let m = self.momentum;
        for ((p, g), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(self.velocity.tensors_mut()) {
            debug_assert_eq!(p.name, g.name);
            if !p.kind.trainable() {
                continue;
            }
            for ((w, &d), vel) in p.data.iter_mut().zip(g.data).zip(v.data.iter_mut()) {
                *vel = m * *vel + d;
                *w = *w - lr * *vel;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;

    fn cfg() -> NetConfig {
        NetConfig { residual_blocks: 1, filters: 2, value_hidden: 3, l2: 0.0 }
    }

    #[test]
    fn schedule_steps() {
        assert_eq!(learning_rate_for_generation(1), 0.003);
        assert_eq!(learning_rate_for_generation(3), 0.003);
        assert_eq!(learning_rate_for_generation(4), 0.001);
        assert_eq!(learning_rate_for_generation(10), 0.001);
        assert_eq!(learning_rate_for_generation(11), 0.0001);
        assert_eq!(learning_rate_for_generation(30), 0.0001);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = NetParams::<f64>::init(cfg(), 1).unwrap();
        let before = p.clone();
        let mut opt = Sgd::new(&p, DEFAULT_MOMENTUM);
        opt.step(&mut p, &before.zeros_like(), 0.1);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_plain_sgd_then_momentum() {
        let mut p = NetParams::<f64>::init(cfg(), 1).unwrap();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.stem.weight[0] = 2.0;
        g.stem.running_mean[0] = 5.0;
        let mut opt = Sgd::new(&p, 0.9);
        opt.step(&mut p, &g, 0.01);
        assert_eq!(p.stem.weight[0], before.stem.weight[0] - 0.01 * 2.0);
        assert_eq!(p.stem.running_mean, before.stem.running_mean);
        opt.step(&mut p, &g, 0.01);
        let expected = before.stem.weight[0] - 0.01 * 2.0 - 0.01 * (0.9 * 2.0 + 2.0);
        assert!((p.stem.weight[0] - expected).abs() < 1e-15);
    }
}
