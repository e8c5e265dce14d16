//! Named bundles of defaults: the full-scale configuration and a reduced one
//! that trains on a laptop CPU.

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::denoiser::{DenoiserConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::sampler::GenerationConfig;
use crate::schedule::ScheduleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Paper,
    Desk,
}

impl std::str::FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ProfileName::Paper),
            "desk" => Ok(ProfileName::Desk),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected paper or desk)"))),
        }
    }
}

/// Element types of the synthetic corpus.
pub const SYNTH_TYPES: [&str; 4] = ["button", "image", "text", "toolbar"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: ProfileName,
    pub k: usize,
    pub n_max: usize,
    pub type_names: Vec<String>,
    pub schedule: ScheduleParams,
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    /// Types left out of the Overlap metric.
    pub overlap_ignore: Vec<String>,
}

impl Profile {
    pub fn get(name: ProfileName) -> Self {
        match name {
            ProfileName::Paper => Self::paper(),
            ProfileName::Desk => Self::desk(),
        }
    }

    /// K=128, N_max=20, T=200, 12-layer width-768 denoiser.
    pub fn paper() -> Self {
        Profile {
            name: ProfileName::Paper,
            k: 128,
            n_max: 20,
            type_names: SYNTH_TYPES.iter().map(|s| s.to_string()).collect(),
            schedule: ScheduleParams::paper(),
            layers: 12,
            heads: 12,
            model_dim: 768,
            ff_dim: 3072,
            dropout: 0.1,
            train: TrainConfig::paper(),
            generation: GenerationConfig::paper(),
            overlap_ignore: Vec::new(),
        }
    }

    /// K=32, four types, N_max=8, T=50, 4-layer width-128 denoiser.
    pub fn desk() -> Self {
        let v = Vocabulary::new(32, &SYNTH_TYPES).expect("static vocabulary");
        let d = DenoiserConfig::desk(v, 8, 50);
        Profile {
            name: ProfileName::Desk,
            k: 32,
            n_max: 8,
            type_names: SYNTH_TYPES.iter().map(|s| s.to_string()).collect(),
            schedule: ScheduleParams::desk(),
            layers: d.layers,
            heads: d.heads,
            model_dim: d.model_dim,
            ff_dim: d.ff_dim,
            dropout: d.dropout,
            train: TrainConfig::desk(),
            generation: GenerationConfig::desk(),
            overlap_ignore: vec!["background".into(), "image".into()],
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.k, &self.type_names)
    }

    pub fn denoiser_config(&self, vocab: Vocabulary) -> DenoiserConfig {
        DenoiserConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.model_dim,
            ff_dim: self.ff_dim,
            dropout: self.dropout,
            vocab,
            n_max: self.n_max,
            total_steps: self.schedule.total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.denoiser_config(self.vocabulary()?).validate()?;
        self.train.validate()?;
        self.generation.validate(self.schedule.total_steps)
    }
}
