use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocabulary};
use crate::error::{Error, Result};

/// Architecture of the denoising transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub vocab: Vocabulary,
    pub n_max: usize,
    /// Number of diffusion steps `T`; sizes the timestep embedding.
    #[serde(rename = "T")]
    pub total_steps: usize,
}

impl DenoiserConfig {
    /// 12 layers, 12 heads, width 768.
    pub fn paper(vocab: Vocabulary, n_max: usize, total_steps: usize) -> Self {
        DenoiserConfig {
            layers: 12,
            heads: 12,
            model_dim: 768,
            ff_dim: 3072,
            dropout: 0.1,
            vocab,
            n_max,
            total_steps,
        }
    }

    /// 4 layers, 4 heads, width 128.
    pub fn desk(vocab: Vocabulary, n_max: usize, total_steps: usize) -> Self {
        DenoiserConfig {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ff_dim: 256,
            dropout: 0.0,
            vocab,
            n_max,
            total_steps,
        }
    }

    /// Sequence length `M`.
    pub fn seq_len(&self) -> usize {
        TokenSeq::seq_len(self.n_max)
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ff_dim == 0 {
            return bad("layers, heads, model_dim and ff_dim must be positive".into());
        }
        if self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.n_max == 0 || self.total_steps == 0 {
            return bad("n_max and T must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepSampling {
    Uniform,
    /// `t` drawn proportionally to the root mean square of recent losses.
    Importance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub ema_rate: f64,
    pub timestep_sampling: TimestepSampling,
    /// Weight of the auxiliary `-log p(x_0 | x_t)` term.
    pub lambda: f64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Linear learning-rate warmup length.
    #[serde(default)]
    pub warmup_steps: u64,
}

fn default_clip() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            lr: 4e-5,
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            batch_size: 64,
            total_steps: 350_000,
            ema_rate: 0.9999,
            timestep_sampling: TimestepSampling::Importance,
            lambda: 1e-4,
            seed: 0,
            grad_clip: 1.0,
            warmup_steps: 0,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            total_steps: 8000,
            ema_rate: 0.995,
            warmup_steps: 100,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.ema_rate) {
            return bad(format!("ema_rate {} outside [0, 1)", self.ema_rate));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("betas {:?} outside [0, 1)", self.betas));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.weight_decay < 0.0 || self.lambda < 0.0 || self.grad_clip < 0.0 {
            return bad("weight_decay, lambda and grad_clip must be non-negative".into());
        }
        Ok(())
    }
}

/// Loss terms averaged over a batch. Per example, each term is the mean over
/// the active slots (non-special, non-PAD).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `-log p(x_0 | x_1)`, nonzero only for examples drawn at `t = 1`.
    pub vlb_recon: f64,
    /// `KL(q(x_{t-1} | x_t, x_0) || p(x_{t-1} | x_t))` for examples at `t >= 2`.
    pub vlb_kl: f64,
    /// `KL(q(x_T | x_0) || p(x_T))`; does not depend on the parameters.
    pub vlb_prior: f64,
    /// `-log p(x_0 | x_t)`.
    pub aux: f64,
    pub lambda: f64,
    /// Optimized objective: timestep-weighted VLB term plus `lambda * aux`.
    pub total: f64,
}

impl LossBreakdown {
    /// Unweighted VLB term at the sampled timesteps.
    pub fn vlb(&self) -> f64 {
        self.vlb_recon + self.vlb_kl
    }

    pub fn is_finite(&self) -> bool {
        [self.vlb_recon, self.vlb_kl, self.vlb_prior, self.aux, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}
