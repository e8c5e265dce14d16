use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TimestepSampling;
use crate::rng::sample_categorical;
use crate::scalar::Scalar;

const ADAM_EPS: f64 = 1e-8;

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(n: usize) -> Self {
        AdamW {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [F], grad: &[F], lr: f64, betas: (f64, f64), weight_decay: f64) {
        self.t += 1;
        let (b1, b2) = betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (b1f, b2f) = (F::lit(b1), F::lit(b2));
        let (one_b1, one_b2) = (F::lit(1.0 - b1), F::lit(1.0 - b2));
        let step = F::lit(lr / c1);
        let c2_sqrt = F::lit(c2.sqrt());
        let eps = F::lit(ADAM_EPS);
        let decay = F::lit(lr * weight_decay);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1f * self.m[i] + one_b1 * g;
            self.v[i] = b2f * self.v[i] + one_b2 * g * g;
            let denom = self.v[i].sqrt() / c2_sqrt + eps;
            params[i] -= step * self.m[i] / denom + decay * params[i];
        }
    }
}

pub fn global_norm<F: Scalar>(grad: &[F]) -> f64 {
    grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt()
}

/// Scale `grad` down to norm `max_norm` if it is longer. Returns the norm
/// before clipping.
pub fn clip_grad<F: Scalar>(grad: &mut [F], max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if max_norm > 0.0 && norm > max_norm {
        let s = F::lit(max_norm / norm);
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Per-example losses kept for each timestep.
pub const HISTORY_LEN: usize = 10;
/// Uniform share mixed into the importance distribution.
const UNIFORM_SHARE: f64 = 1e-3;

/// Draws training timesteps, uniformly or proportionally to
/// `sqrt(E[L_t^2])` over a rolling loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepSampler {
    pub mode: TimestepSampling,
    pub total_steps: usize,
    history: Vec<VecDeque<f64>>,
}

impl TimestepSampler {
    pub fn new(mode: TimestepSampling, total_steps: usize) -> Self {
        TimestepSampler {
            mode,
            total_steps,
            history: vec![VecDeque::with_capacity(HISTORY_LEN); total_steps],
        }
    }

    /// True once every timestep has a full history.
    pub fn warmed_up(&self) -> bool {
        self.history.iter().all(|h| h.len() == HISTORY_LEN)
    }

    /// Probability of each `t` in `1..=T` (index `t - 1`).
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.total_steps as f64;
        if self.mode == TimestepSampling::Uniform || !self.warmed_up() {
            return vec![1.0 / n; self.total_steps];
        }
        let rms: Vec<f64> = self
            .history
            .iter()
            .map(|h| (h.iter().map(|l| l * l).sum::<f64>() / h.len() as f64).sqrt())
            .collect();
        let sum: f64 = rms.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return vec![1.0 / n; self.total_steps];
        }
        rms.iter()
            .map(|r| (1.0 - UNIFORM_SHARE) * r / sum + UNIFORM_SHARE / n)
            .collect()
    }

    /// `(t, weight)` with weight `1 / (T p_t)`, so weighted losses stay
    /// unbiased for the uniform-`t` objective.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let p = self.probabilities();
        let i = sample_categorical(&p, rng);
        (i + 1, 1.0 / (self.total_steps as f64 * p[i]))
    }

    pub fn record(&mut self, t: usize, loss: f64) {
        let h = &mut self.history[t - 1];
        if h.len() == HISTORY_LEN {
            h.pop_front();
        }
        h.push_back(loss);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0f64, -1.0];
        let mut opt = AdamW::new(2);
        opt.update(&mut p, &[0.5, -2.0], 0.1, (0.9, 0.999), 0.0);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = vec![2.0f64];
        let mut opt = AdamW::new(1);
        opt.update(&mut p, &[0.0], 0.1, (0.9, 0.999), 0.5);
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![0.3f64, 0.4];
        clip_grad(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn importance_sampler_is_uniform_until_warm() {
        let mut s = TimestepSampler::new(TimestepSampling::Importance, 4);
        assert_eq!(s.probabilities(), vec![0.25; 4]);
        for t in 1..=4 {
            for _ in 0..HISTORY_LEN {
                s.record(t, t as f64);
            }
        }
        assert!(s.warmed_up());
        let p = s.probabilities();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let expected = 0.999 * 4.0 / 10.0 + 0.001 / 4.0;
        assert!((p[3] - expected).abs() < 1e-12);
        let (t, w) = s.sample(&mut seeded(3));
        assert!((w - 1.0 / (4.0 * p[t - 1])).abs() < 1e-12);
    }

    #[test]
    fn history_is_rolling() {
        let mut s = TimestepSampler::new(TimestepSampling::Importance, 1);
        for i in 0..25 {
            s.record(1, i as f64);
        }
        assert_eq!(s.history[0].len(), HISTORY_LEN);
        assert_eq!(s.history[0].front(), Some(&15.0));
    }
}
