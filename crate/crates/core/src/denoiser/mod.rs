//! The denoising network `p(x_0 | x_t)`, its training objective and the
//! training loop.
//!
//! The objective for one clean sequence at timestep `t` is the VLB term
//! `KL(q(x_{t-1} | x_t, x_0) || p(x_{t-1} | x_t))` (or `-log p(x_0 | x_1)` at
//! `t = 1`) plus `lambda * -log p(x_0 | x_t)`, averaged over the element
//! slots. The reverse distribution mixes exact posteriors under the
//! predicted clean token. Gradients are computed by hand.

mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod model;
mod optim;
mod params;
mod train;

pub use checkpoint::{Checkpoint, TrainState, FORMAT_VERSION, MAGIC};
pub use config::{DenoiserConfig, LossBreakdown, TimestepSampling, TrainConfig};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GroupError};
pub use loss::{reverse_probs, slot_kl, BatchObjective};
pub use model::{softmax_f64, Denoiser, ForwardCache, Logits, Weights};
pub use optim::{clip_grad, global_norm, AdamW, TimestepSampler, HISTORY_LEN};
pub use params::{ParamGroup, ParamLayout, Tensor, TensorSpec};
pub use train::{read_loss_csv, tokenize_all, StepRecord, Trainer, LOG_HEADER};
