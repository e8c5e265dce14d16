//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes  "HDIFFCK\0"
//! version    u32 LE
//! scalar     u32 LE   bytes per stored float (4 or 8)
//! header_len u64 LE
//! header     JSON, header_len bytes
//! sections   little-endian floats, in header order:
//!            params, ema, and for training checkpoints adam_m, adam_v
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DenoiserConfig, TrainConfig};
use super::model::Denoiser;
use super::optim::{AdamW, TimestepSampler};
use super::params::TensorSpec;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::schedule::ScheduleParams;
use crate::transition::TransitionKinds;

pub const MAGIC: &[u8; 8] = b"HDIFFCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    denoiser: DenoiserConfig,
    schedule: ScheduleParams,
    transitions: TransitionKinds,
    step: u64,
    tensors: Vec<TensorSpec>,
    sections: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count_prior: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainHeader>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainHeader {
    config: TrainConfig,
    rng: RngState,
    sampler: TimestepSampler,
    adam_steps: u64,
}

/// Optimizer and data-order state needed to resume training exactly.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub config: TrainConfig,
    pub rng: RngState,
    pub sampler: TimestepSampler,
    pub adam: AdamW<F>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<F: Scalar> {
    pub model: Denoiser<F>,
    pub schedule: ScheduleParams,
    pub transitions: TransitionKinds,
    /// Element-count prior of the training split, for unconditional sampling.
    pub count_prior: Option<Vec<f64>>,
    pub train: Option<TrainState<F>>,
}

/// Serialize without taking ownership of the model.
pub fn encode<F: Scalar>(
    model: &Denoiser<F>,
    schedule: &ScheduleParams,
    transitions: TransitionKinds,
    count_prior: Option<&[f64]>,
    train: Option<&TrainState<F>>,
) -> Result<Vec<u8>> {
    let mut sections = vec!["params".to_string(), "ema".to_string()];
    if train.is_some() {
        sections.extend(["adam_m".to_string(), "adam_v".to_string()]);
    }
    let header = Header {
        denoiser: model.config().clone(),
        schedule: schedule.clone(),
        transitions,
        step: model.step(),
        tensors: model.layout().specs.clone(),
        sections,
        count_prior: count_prior.map(<[f64]>::to_vec),
        train: train.map(|s| TrainHeader {
            config: s.config.clone(),
            rng: s.rng,
            sampler: s.sampler.clone(),
            adam_steps: s.adam.t,
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let n = model.num_params();
    let mut out = Vec::with_capacity(24 + json.len() + 4 * n * F::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(F::BYTES as u32).to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut floats: Vec<&[F]> = vec![model.params(), model.ema()];
    if let Some(s) = train {
        floats.push(&s.adam.m);
        floats.push(&s.adam.v);
    }
    for section in floats {
        section.iter().for_each(|x| x.to_le(&mut out));
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
    let out = &bytes[*pos..end];
    *pos = end;
    Ok(out)
}

/// Floats stored at either width are converted to `F` on load.
fn read_section<F: Scalar>(bytes: &[u8], pos: &mut usize, n: usize, width: usize) -> Result<Vec<F>> {
    let raw = take(bytes, pos, n * width)?;
    Ok(raw
        .chunks_exact(width)
        .map(|c| match width {
            4 => F::lit(f32::from_le(c) as f64),
            _ => F::lit(f64::from_le(c)),
        })
        .collect())
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode(
            &self.model,
            &self.schedule,
            self.transitions,
            self.count_prior.as_deref(),
            self.train.as_ref(),
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        if take(bytes, &mut pos, 8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(bytes, &mut pos, 4)?);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let width = u32_at(take(bytes, &mut pos, 4)?) as usize;
        if width != 4 && width != 8 {
            return Err(Error::Checkpoint(format!("unsupported float width {width}")));
        }
        let header_len = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().expect("8 bytes"));
        let header: Header = serde_json::from_slice(take(bytes, &mut pos, header_len as usize)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let n: usize = header.tensors.iter().map(TensorSpec::len).sum();
        let params = read_section(bytes, &mut pos, n, width)?;
        let ema = read_section(bytes, &mut pos, n, width)?;
        let model = Denoiser::from_parts(header.denoiser, params, ema, header.step)?;
        if model.layout().specs != header.tensors {
            return Err(Error::Checkpoint("tensor manifest does not match the architecture".into()));
        }
        let train = match header.train {
            Some(th) => {
                let m = read_section(bytes, &mut pos, n, width)?;
                let v = read_section(bytes, &mut pos, n, width)?;
                Some(TrainState {
                    config: th.config,
                    rng: th.rng,
                    sampler: th.sampler,
                    adam: AdamW {
                        m,
                        v,
                        t: th.adam_steps,
                    },
                })
            }
            None => None,
        };
        if pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            model,
            schedule: header.schedule,
            transitions: header.transitions,
            count_prior: header.count_prior,
            train,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
