use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{encode, write_bytes, Checkpoint, TrainState};
use super::config::{LossBreakdown, TrainConfig};
use super::model::Denoiser;
use super::optim::{clip_grad, AdamW, TimestepSampler};
use crate::corpus::{tokenize, Layout, TokenSeq};
use crate::error::{Error, Result};
use crate::rng::{seeded, DiffRng, RngState};
use crate::scalar::Scalar;
use crate::schedule::ScheduleParams;
use crate::transition::{TransitionKinds, TransitionSet};

pub const LOG_HEADER: &str = "step,total,vlb,vlb_recon,vlb_kl,vlb_prior,aux,lr,grad_norm,t_mean";

/// One optimizer step as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub grad_norm: f64,
    pub t_mean: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            l.total,
            l.vlb(),
            l.vlb_recon,
            l.vlb_kl,
            l.vlb_prior,
            l.aux,
            self.lr,
            self.grad_norm,
            self.t_mean
        )
    }
}

/// Parse a training log back into `(step, total)` pairs.
pub fn read_loss_csv(text: &str) -> Result<Vec<(u64, f64)>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let cols: Vec<&str> = header.split(',').collect();
    let (Some(si), Some(ti)) = (
        cols.iter().position(|c| *c == "step"),
        cols.iter().position(|c| *c == "total"),
    ) else {
        return Err(Error::Config("loss log needs step and total columns".into()));
    };
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            let parse_err = || Error::Config(format!("loss log line {}: cannot parse {line:?}", i + 2));
            let step = cells.get(si).and_then(|c| c.parse().ok()).ok_or_else(parse_err)?;
            let total = cells.get(ti).and_then(|c| c.parse().ok()).ok_or_else(parse_err)?;
            Ok((step, total))
        })
        .collect()
}

/// Minibatch training loop. All randomness (batches, timesteps, forward
/// corruption, dropout) comes from one seeded stream, so a run is a pure
/// function of its seed and resumes exactly from a checkpoint.
pub struct Trainer<F: Scalar> {
    pub model: Denoiser<F>,
    pub config: TrainConfig,
    pub schedule: ScheduleParams,
    pub transitions: TransitionKinds,
    /// Stored in checkpoints for unconditional sampling.
    pub count_prior: Option<Vec<f64>>,
    adam: AdamW<F>,
    sampler: TimestepSampler,
    rng: DiffRng,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(
        model: Denoiser<F>,
        config: TrainConfig,
        schedule: ScheduleParams,
        transitions: TransitionKinds,
    ) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        if schedule.total_steps != model.config().total_steps {
            return Err(Error::Config(format!(
                "schedule has T = {} but the denoiser was built for T = {}",
                schedule.total_steps,
                model.config().total_steps
            )));
        }
        let n = model.num_params();
        Ok(Trainer {
            adam: AdamW::new(n),
            sampler: TimestepSampler::new(config.timestep_sampling, schedule.total_steps),
            rng: seeded(config.seed),
            model,
            config,
            schedule,
            transitions,
            count_prior: None,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<F>) -> Result<Self> {
        let state = ck
            .train
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        Ok(Trainer {
            model: ck.model,
            config: state.config,
            schedule: ck.schedule,
            transitions: ck.transitions,
            count_prior: ck.count_prior,
            adam: state.adam,
            sampler: state.sampler,
            rng: state.rng.restore(),
        })
    }

    pub fn sampler(&self) -> &TimestepSampler {
        &self.sampler
    }

    fn train_state(&self) -> TrainState<F> {
        TrainState {
            config: self.config.clone(),
            rng: RngState::capture(&self.rng),
            sampler: self.sampler.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let state = self.train_state();
        let bytes = encode(
            &self.model,
            &self.schedule,
            self.transitions,
            self.count_prior.as_deref(),
            Some(&state),
        )?;
        write_bytes(path, &bytes)
    }

    pub fn into_checkpoint(self) -> Checkpoint<F> {
        let train = Some(self.train_state());
        Checkpoint {
            model: self.model,
            schedule: self.schedule,
            transitions: self.transitions,
            count_prior: self.count_prior,
            train,
        }
    }

    fn learning_rate(&self) -> f64 {
        let step = self.model.step() + 1;
        if self.config.warmup_steps > 0 && step < self.config.warmup_steps {
            self.config.lr * step as f64 / self.config.warmup_steps as f64
        } else {
            self.config.lr
        }
    }

    /// One optimizer step on a batch drawn with replacement from `data`.
    pub fn step(&mut self, data: &[TokenSeq], ts: &TransitionSet<f64>) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vocab = self.model.config().vocab.clone();
        let batch = self.config.batch_size;
        let mut x0 = Vec::with_capacity(batch);
        let mut xt = Vec::with_capacity(batch);
        let mut steps = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let seq = &data[rand::Rng::random_range(&mut self.rng, 0..data.len())];
            let (t, w) = self.sampler.sample(&mut self.rng);
            xt.push(ts.corrupt_sequence(&vocab, seq, t, &mut self.rng));
            x0.push(seq.clone());
            steps.push(t);
            weights.push(w);
        }
        let step_no = self.model.step() + 1;
        let obj = self.model.objective(
            self.model.params(),
            &x0,
            &xt,
            &steps,
            &weights,
            self.config.lambda,
            ts,
            Some(&mut self.rng),
            true,
        )?;
        if !obj.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step_no,
                detail: format!("{:?}", obj.loss),
            });
        }
        let mut grad = obj.grad.expect("gradient requested");
        let grad_norm = clip_grad(&mut grad, self.config.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step_no,
                detail: format!("gradient norm {grad_norm}"),
            });
        }
        for (&t, &l) in steps.iter().zip(&obj.per_example_vlb) {
            self.sampler.record(t, l);
        }
        let lr = self.learning_rate();
        let (betas, wd) = (self.config.betas, self.config.weight_decay);
        self.adam.update(self.model.params_mut(), &grad, lr, betas, wd);
        self.model.update_ema(self.config.ema_rate);
        self.model.set_step(step_no);
        Ok(StepRecord {
            step: step_no,
            loss: obj.loss,
            lr,
            grad_norm,
            t_mean: steps.iter().sum::<usize>() as f64 / batch as f64,
        })
    }

    /// Run until the model has taken `config.total_steps` steps, writing one
    /// CSV row per step to `log` when given.
    pub fn run(
        &mut self,
        data: &[TokenSeq],
        ts: &TransitionSet<f64>,
        mut log: Option<&mut dyn Write>,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<Vec<StepRecord>> {
        let mut records = Vec::new();
        while self.model.step() < self.config.total_steps {
            let rec = self.step(data, ts)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", rec.csv_row()).map_err(|e| Error::io("<training log>", e))?;
            }
            on_step(&rec);
            records.push(rec);
        }
        Ok(records)
    }
}

/// Tokenize a layout set for training.
pub fn tokenize_all(layouts: &[Layout], vocab: &crate::corpus::Vocabulary, n_max: usize) -> Result<Vec<TokenSeq>> {
    layouts.iter().map(|l| tokenize(l, vocab, n_max)).collect()
}
