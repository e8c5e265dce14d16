//! Discrete denoising diffusion for heterogeneous layout-token sequences.
//!
//! A layout is a set of typed, discretized boxes. It is serialized into a
//! fixed-length token sequence whose slots carry a fixed kind (type,
//! coordinate or special). The forward process corrupts coordinates with a
//! discretized Gaussian kernel and absorbs types into `MASK`, never crossing
//! kinds. A transformer denoiser predicts the clean sequence and the exact
//! posterior turns that prediction into a reverse step.
//!
//! The numerical core ([`Schedule`], [`TransitionSet`], [`Denoiser`]) is
//! generic over the scalar type; the aliases below fix the common choices.

pub mod corpus;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod profile;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod transition;

pub use corpus::{
    discretize, perturb, synth_corpus, tokenize, detokenize, Canvas, Corpus, Element, Layout,
    SynthSpec, TokenKind, TokenSeq, Vocabulary,
};
pub use denoiser::{Denoiser, DenoiserConfig, LossBreakdown, TrainConfig};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use schedule::{Schedule, ScheduleParams};
pub use transition::{Block, TransitionKinds, TransitionSet};

/// Single-precision denoiser used for training and sampling.
pub type Denoiser32 = Denoiser<f32>;
/// Double-precision denoiser used for gradient verification.
pub type Denoiser64 = Denoiser<f64>;
/// Transition matrices in double precision (posteriors and losses).
pub type TransitionSet64 = TransitionSet<f64>;
pub type Schedule64 = Schedule<f64>;
