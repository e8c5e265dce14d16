//! Reverse-process generation: unconditional, type-conditioned and
//! refinement. Every sample owns a generator derived from the run seed and
//! its index, so outputs do not depend on batching.

use serde::{Deserialize, Serialize};

use crate::corpus::{count_prior_sample, detokenize, tokenize, Layout, TokenKind, TokenSeq, Vocabulary};
use crate::denoiser::{Denoiser, Weights};
use crate::error::{Error, Result};
use crate::rng::{derived, DiffRng};
use crate::scalar::Scalar;
use crate::transition::{Block, TransitionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    #[serde(rename = "T_ugen")]
    pub t_ugen: usize,
    #[serde(rename = "T_gentype")]
    pub t_gentype: usize,
    #[serde(rename = "T_refine")]
    pub t_refine: usize,
    pub seed: u64,
    pub samples: usize,
    /// Extra attempts per sample when MASK survives to `t = 0`.
    #[serde(default = "default_retries")]
    pub retries: usize,
    /// Take the most likely token at `t = 1` instead of sampling.
    #[serde(default)]
    pub greedy_final: bool,
    #[serde(default = "default_true")]
    pub use_ema: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_retries() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_batch() -> usize {
    64
}

impl GenerationConfig {
    pub fn paper() -> Self {
        GenerationConfig {
            t_ugen: 200,
            t_gentype: 160,
            t_refine: 50,
            seed: 0,
            samples: 1000,
            retries: default_retries(),
            greedy_final: false,
            use_ema: true,
            batch_size: default_batch(),
        }
    }

    /// Start steps scaled to `T = 50`.
    pub fn desk() -> Self {
        GenerationConfig {
            t_ugen: 50,
            t_gentype: 40,
            t_refine: 12,
            samples: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self, total_steps: usize) -> Result<()> {
        for (name, t) in [("T_ugen", self.t_ugen), ("T_gentype", self.t_gentype)] {
            if t == 0 || t > total_steps {
                return Err(Error::Config(format!("{name} = {t} outside [1, {total_steps}]")));
            }
        }
        if self.t_refine > total_steps {
            return Err(Error::Config(format!(
                "T_refine = {} outside [0, {total_steps}]",
                self.t_refine
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    fn weights(&self) -> Weights {
        if self.use_ema {
            Weights::Ema
        } else {
            Weights::Live
        }
    }
}

/// Generator for attempt `attempt` of sample `index`.
pub fn sample_rng(seed: u64, index: usize, attempt: usize) -> DiffRng {
    derived(seed, ((index as u64) << 8) | attempt as u64)
}

/// `x_T` with `n` elements: types and coordinates from the terminal prior
/// (MASK and uniform bins for the default transitions), remaining blocks PAD.
pub fn init_noise<R: rand::Rng + ?Sized>(
    n: usize,
    vocab: &Vocabulary,
    n_max: usize,
    ts: &TransitionSet<f64>,
    rng: &mut R,
) -> Result<TokenSeq> {
    if n == 0 || n > n_max {
        return Err(Error::TooManyElements { n, max: n_max });
    }
    let mut tokens = vec![vocab.pad(); TokenSeq::seq_len(n_max)];
    let last = tokens.len() - 1;
    tokens[0] = vocab.sos();
    tokens[last] = vocab.eos();
    for b in 0..n {
        let base = TokenSeq::type_slot(b);
        tokens[base] = ts.sample_prior(vocab, Block::Type, rng);
        for c in 1..5 {
            tokens[base + c] = ts.sample_prior(vocab, Block::Coord, rng);
        }
        tokens[base + 5] = vocab.sep();
    }
    TokenSeq::from_tokens(tokens, n_max)
}

/// One reverse step `x_t -> x_{t-1}` for a batch, in place. Structural and
/// PAD slots never change.
pub fn reverse_step<F: Scalar>(
    model: &Denoiser<F>,
    which: Weights,
    seqs: &mut [TokenSeq],
    t: usize,
    ts: &TransitionSet<f64>,
    rngs: &mut [DiffRng],
    greedy: bool,
) {
    let vocab = &model.config().vocab;
    let logits = model.logits(which, seqs, &vec![t; seqs.len()]);
    for (i, (seq, rng)) in seqs.iter_mut().zip(rngs.iter_mut()).enumerate() {
        let next: Vec<usize> = (0..seq.len())
            .map(|slot| {
                let tok = seq.tokens()[slot];
                if seq.slot_kind(slot) == TokenKind::Special || tok == vocab.pad() {
                    return tok;
                }
                let dist = model.slot_reverse(&logits, i, seq, slot, t, ts, vocab);
                if greedy {
                    let best = dist
                        .probs
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc })
                        .0;
                    dist.offset + best
                } else {
                    dist.sample(rng)
                }
            })
            .collect();
        seq.tokens_mut().copy_from_slice(&next);
    }
}

/// Per-sample bookkeeping of a reverse run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Largest `t` from which on every state has no MASK type slot.
    pub types_resolved_at: Option<usize>,
    /// `(t, x_t)` from the start step down to 0, when tracing.
    pub frames: Vec<(usize, TokenSeq)>,
}

fn has_mask(seq: &TokenSeq, vocab: &Vocabulary) -> bool {
    (0..seq.n_max()).any(|b| seq.tokens()[TokenSeq::type_slot(b)] == vocab.mask())
}

fn clamp_types(seq: &mut TokenSeq, types: &[usize]) {
    for (b, &tok) in types.iter().enumerate() {
        seq.tokens_mut()[TokenSeq::type_slot(b)] = tok;
    }
}

/// Run reverse steps `from..=1` over a batch. `clamp[i]`, when non-empty,
/// holds the type tokens re-imposed on sample `i` after every step.
#[allow(clippy::too_many_arguments)]
fn run_reverse<F: Scalar>(
    model: &Denoiser<F>,
    which: Weights,
    seqs: &mut [TokenSeq],
    from: usize,
    ts: &TransitionSet<f64>,
    rngs: &mut [DiffRng],
    clamp: &[Vec<usize>],
    greedy_final: bool,
    trace: bool,
) -> Vec<Trajectory> {
    let vocab = &model.config().vocab;
    let mut out: Vec<Trajectory> = seqs
        .iter()
        .map(|s| Trajectory {
            types_resolved_at: (!has_mask(s, vocab)).then_some(from),
            frames: if trace { vec![(from, s.clone())] } else { Vec::new() },
        })
        .collect();
    for t in (1..=from).rev() {
        reverse_step(model, which, seqs, t, ts, rngs, greedy_final && t == 1);
        for ((seq, tr), types) in seqs.iter_mut().zip(&mut out).zip(clamp.iter().chain(std::iter::repeat(&Vec::new()))) {
            clamp_types(seq, types);
            if has_mask(seq, vocab) {
                tr.types_resolved_at = None;
            } else if tr.types_resolved_at.is_none() {
                tr.types_resolved_at = Some(t - 1);
            }
            if trace {
                tr.frames.push((t - 1, seq.clone()));
            }
        }
    }
    out
}

/// Result of a generation call, in input order.
#[derive(Debug, Clone)]
pub struct Generated {
    pub layouts: Vec<Layout>,
    pub trajectories: Vec<Trajectory>,
    /// Attempts beyond the first, summed over samples.
    pub retries: usize,
}

struct Job {
    index: usize,
    attempt: usize,
}

/// Shared driver: build the start state of sample `i` with `start(i, rng)`,
/// run the reverse process in batches, detokenize, and retry samples whose
/// types stayed masked.
fn generate<F: Scalar>(
    model: &Denoiser<F>,
    ts: &TransitionSet<f64>,
    cfg: &GenerationConfig,
    count: usize,
    from: usize,
    trace: bool,
    start: impl Fn(usize, &mut DiffRng) -> Result<(TokenSeq, Vec<usize>)>,
) -> Result<Generated> {
    cfg.validate(ts.total_steps())?;
    let vocab = &model.config().vocab;
    let mut layouts: Vec<Option<Layout>> = vec![None; count];
    let mut trajectories: Vec<Option<Trajectory>> = vec![None; count];
    let mut pending: Vec<Job> = (0..count).map(|index| Job { index, attempt: 0 }).collect();
    let mut retries = 0;
    while !pending.is_empty() {
        let mut failed = Vec::new();
        for chunk in pending.chunks(cfg.batch_size) {
            let mut rngs: Vec<DiffRng> = chunk.iter().map(|j| sample_rng(cfg.seed, j.index, j.attempt)).collect();
            let mut seqs = Vec::with_capacity(chunk.len());
            let mut clamps = Vec::with_capacity(chunk.len());
            for (job, rng) in chunk.iter().zip(rngs.iter_mut()) {
                let (s, c) = start(job.index, rng)?;
                seqs.push(s);
                clamps.push(c);
            }
            let trs = run_reverse(model, cfg.weights(), &mut seqs, from, ts, &mut rngs, &clamps, cfg.greedy_final, trace);
            for ((job, seq), tr) in chunk.iter().zip(&seqs).zip(trs) {
                match detokenize(seq, vocab) {
                    Ok(layout) => {
                        layouts[job.index] = Some(layout);
                        trajectories[job.index] = Some(tr);
                    }
                    Err(Error::MaskedType { slot }) => {
                        if job.attempt >= cfg.retries {
                            return Err(Error::MaskedType { slot });
                        }
                        failed.push(Job {
                            index: job.index,
                            attempt: job.attempt + 1,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        retries += failed.len();
        pending = failed;
    }
    Ok(Generated {
        layouts: layouts.into_iter().map(|l| l.expect("every sample resolved")).collect(),
        trajectories: trajectories.into_iter().map(|t| t.expect("every sample resolved")).collect(),
        retries,
    })
}

/// Unconditional samples: `n` from the count prior, start from the terminal
/// prior at `T_ugen`.
pub fn generate_unconditional<F: Scalar>(
    model: &Denoiser<F>,
    count_prior: &[f64],
    ts: &TransitionSet<f64>,
    cfg: &GenerationConfig,
    trace: bool,
) -> Result<Generated> {
    let vocab = model.config().vocab.clone();
    let n_max = model.config().n_max;
    if count_prior.len() != n_max {
        return Err(Error::Config(format!(
            "count prior has {} entries, expected N_max = {n_max}",
            count_prior.len()
        )));
    }
    generate(model, ts, cfg, cfg.samples, cfg.t_ugen, trace, |_, rng| {
        let n = count_prior_sample(count_prior, rng);
        Ok((init_noise(n, &vocab, n_max, ts, rng)?, Vec::new()))
    })
}

/// Type tokens in canonical (alphabetical) order for a list of names.
pub fn resolve_types(vocab: &Vocabulary, names: &[String]) -> Result<Vec<usize>> {
    let mut ids = names
        .iter()
        .map(|n| vocab.type_id(n.trim()))
        .collect::<Result<Vec<_>>>()?;
    ids.sort_unstable();
    Ok(ids.into_iter().map(|id| vocab.type_token(id)).collect())
}

/// One sample per entry of `type_sets` (type ids, any order), starting at
/// `T_gentype` with type slots clamped throughout. Sample `i` uses index `i`
/// for seeding.
pub fn generate_conditioned_types<F: Scalar>(
    model: &Denoiser<F>,
    type_sets: &[Vec<usize>],
    ts: &TransitionSet<f64>,
    cfg: &GenerationConfig,
    trace: bool,
) -> Result<Generated> {
    let vocab = model.config().vocab.clone();
    let n_max = model.config().n_max;
    let mut clamps = Vec::with_capacity(type_sets.len());
    for set in type_sets {
        if set.is_empty() || set.len() > n_max {
            return Err(Error::TooManyElements { n: set.len(), max: n_max });
        }
        let mut ids = set.clone();
        ids.sort_unstable();
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab.num_types()) {
            return Err(Error::UnknownType(format!("type id {bad}")));
        }
        clamps.push(ids.into_iter().map(|id| vocab.type_token(id)).collect::<Vec<_>>());
    }
    generate(model, ts, cfg, clamps.len(), cfg.t_gentype, trace, |i, rng| {
        let types = &clamps[i];
        let mut seq = init_noise(types.len(), &vocab, n_max, ts, rng)?;
        clamp_types(&mut seq, types);
        Ok((seq, types.clone()))
    })
}

/// Denoise existing layouts from `T_refine` with their types clamped.
pub fn refine<F: Scalar>(
    model: &Denoiser<F>,
    layouts: &[Layout],
    ts: &TransitionSet<f64>,
    cfg: &GenerationConfig,
    trace: bool,
) -> Result<Generated> {
    let vocab = model.config().vocab.clone();
    let n_max = model.config().n_max;
    let seqs = layouts
        .iter()
        .map(|l| tokenize(l, &vocab, n_max))
        .collect::<Result<Vec<_>>>()?;
    if cfg.t_refine == 0 {
        return Ok(Generated {
            layouts: layouts.to_vec(),
            trajectories: seqs
                .into_iter()
                .map(|s| Trajectory {
                    types_resolved_at: Some(0),
                    frames: if trace { vec![(0, s)] } else { Vec::new() },
                })
                .collect(),
            retries: 0,
        });
    }
    generate(model, ts, cfg, seqs.len(), cfg.t_refine, trace, |i, _| {
        let seq = seqs[i].clone();
        let types = (0..seq.element_count(&vocab))
            .map(|b| seq.tokens()[TokenSeq::type_slot(b)])
            .collect();
        Ok((seq, types))
    })
}
