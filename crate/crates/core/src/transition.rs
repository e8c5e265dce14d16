//! Block-diagonal transition matrices over the token vocabulary.
//!
//! Row-stochastic convention: `Q[t][i][j] = q(x_t = j | x_{t-1} = i)`.
//! Coordinates and types each get their own block; special tokens (SOS,
//! EOS, SEP, PAD) never move, so a legal sequence stays legal.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenKind, TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::sample_categorical;
use crate::scalar::Scalar;
use crate::schedule::{Schedule, BETA_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Coord,
    Type,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordMatrixKind {
    /// Discretized Gaussian kernel: nearby bins are likelier targets.
    #[default]
    Gaussian,
    /// Uniform resampling with keep probability `(T - t) / T` cumulatively.
    Uniform,
    /// Absorption into bin 0 with the same cumulative keep probability.
    Absorbing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeMatrixKind {
    #[default]
    Absorbing,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransitionKinds {
    pub coord: CoordMatrixKind,
    #[serde(rename = "type")]
    pub type_: TypeMatrixKind,
}

/// The sink bin of the absorbing coordinate ablation.
pub const COORD_SINK: usize = 0;

/// Per-step rate `1 / (T - t + 1)`, whose survival product is `(T - t) / T`.
fn linear_rate(t: usize, total: usize) -> f64 {
    1.0 / (total - t + 1) as f64
}

pub fn build_coord_matrix<F: Scalar>(
    t: usize,
    schedule: &Schedule<F>,
    k: usize,
    kind: CoordMatrixKind,
) -> Array2<F> {
    let total = schedule.total_steps();
    let mut q = Array2::<f64>::zeros((k, k));
    match kind {
        CoordMatrixKind::Gaussian => {
            let beta = schedule.beta(t).as_f64();
            if beta >= BETA_CAP {
                q.fill(1.0 / k as f64);
            } else {
                let scale = 4.0 / (((k - 1) * (k - 1)) as f64 * beta);
                let kernel = |d: i64| (-scale * (d * d) as f64).exp();
                let span = k as i64 - 1;
                let norm: f64 = (-span..=span).map(kernel).sum();
                for i in 0..k {
                    let mut off = 0.0;
                    for j in 0..k {
                        if i != j {
                            let v = kernel(i as i64 - j as i64) / norm;
                            q[[i, j]] = v;
                            off += v;
                        }
                    }
                    q[[i, i]] = 1.0 - off;
                }
            }
        }
        CoordMatrixKind::Uniform => {
            let rate = linear_rate(t, total);
            q.fill(rate / k as f64);
            for i in 0..k {
                q[[i, i]] += 1.0 - rate;
            }
        }
        CoordMatrixKind::Absorbing => {
            let rate = linear_rate(t, total);
            for i in 0..k {
                q[[i, i]] = 1.0 - rate;
                q[[i, COORD_SINK]] += rate;
            }
        }
    }
    q.mapv(F::lit)
}

/// `(C + 1) x (C + 1)` type matrix; the last state is MASK.
pub fn build_type_matrix<F: Scalar>(
    t: usize,
    schedule: &Schedule<F>,
    c_real: usize,
    kind: TypeMatrixKind,
) -> Array2<F> {
    let gamma = schedule.gamma(t);
    let one = F::one();
    let mut q = Array2::<F>::zeros((c_real + 1, c_real + 1));
    q[[c_real, c_real]] = one;
    for i in 0..c_real {
        match kind {
            TypeMatrixKind::Absorbing => {
                q[[i, i]] = one - gamma;
                q[[i, c_real]] = gamma;
            }
            TypeMatrixKind::Uniform => {
                let spread = gamma / F::lit(c_real as f64);
                for j in 0..c_real {
                    q[[i, j]] = spread;
                }
                q[[i, i]] += one - gamma;
            }
        }
    }
    q
}

/// A distribution over one token's block; `offset` is the token id of
/// block-local index 0. Special tokens get a one-entry unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution<F> {
    pub block: Option<Block>,
    pub offset: TokenId,
    pub probs: Vec<F>,
}

impl<F: Scalar> TokenDistribution<F> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        self.offset + sample_categorical(&self.probs, rng)
    }
}

#[derive(Debug, Clone)]
pub struct TransitionSet<F: Scalar> {
    k: usize,
    c_real: usize,
    total: usize,
    kinds: TransitionKinds,
    step_coord: Vec<Array2<F>>,
    step_type: Vec<Array2<F>>,
    cum_coord: Vec<Array2<F>>,
    cum_type: Vec<Array2<F>>,
}

impl<F: Scalar> TransitionSet<F> {
    pub fn new(schedule: &Schedule<F>, vocab: &Vocabulary, kinds: TransitionKinds) -> Self {
        let (k, c) = (vocab.k(), vocab.num_types());
        let total = schedule.total_steps();
        let mut step_coord = vec![Array2::eye(k)];
        let mut step_type = vec![Array2::eye(c + 1)];
        let mut cum_coord = vec![Array2::eye(k)];
        let mut cum_type = vec![Array2::eye(c + 1)];
        for t in 1..=total {
            let qc = build_coord_matrix(t, schedule, k, kinds.coord);
            let qt = build_type_matrix(t, schedule, c, kinds.type_);
            cum_coord.push(cum_coord[t - 1].dot(&qc));
            cum_type.push(cum_type[t - 1].dot(&qt));
            step_coord.push(qc);
            step_type.push(qt);
        }
        TransitionSet {
            k,
            c_real: c,
            total,
            kinds,
            step_coord,
            step_type,
            cum_coord,
            cum_type,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    pub fn kinds(&self) -> TransitionKinds {
        self.kinds
    }

    pub fn block_len(&self, block: Block) -> usize {
        match block {
            Block::Coord => self.k,
            Block::Type => self.c_real + 1,
        }
    }

    /// Per-step matrix `Q_t`; `t = 0` is the identity.
    pub fn step(&self, block: Block, t: usize) -> &Array2<F> {
        match block {
            Block::Coord => &self.step_coord[t],
            Block::Type => &self.step_type[t],
        }
    }

    /// Cumulative matrix `Q_1 ... Q_t`; `t = 0` is the identity.
    pub fn cumulative(&self, block: Block, t: usize) -> &Array2<F> {
        match block {
            Block::Coord => &self.cum_coord[t],
            Block::Type => &self.cum_type[t],
        }
    }

    /// Block and block-local index of a token; `None` for special tokens.
    pub fn locate(vocab: &Vocabulary, token: TokenId) -> Option<(Block, usize)> {
        match vocab.kind(token)? {
            TokenKind::Coord => Some((Block::Coord, token)),
            TokenKind::Type => Some((Block::Type, token - vocab.k())),
            TokenKind::Special => None,
        }
    }

    fn block_offset(vocab: &Vocabulary, block: Block) -> TokenId {
        match block {
            Block::Coord => 0,
            Block::Type => vocab.k(),
        }
    }

    /// `q(x_t | x_0)` for one token.
    pub fn forward_marginal(&self, vocab: &Vocabulary, x0: TokenId, t: usize) -> TokenDistribution<F> {
        self.row_distribution(vocab, x0, |block| self.cumulative(block, t))
    }

    /// `q(x_t | x_{t-1})` for one token.
    pub fn step_distribution(&self, vocab: &Vocabulary, prev: TokenId, t: usize) -> TokenDistribution<F> {
        self.row_distribution(vocab, prev, |block| self.step(block, t))
    }

    fn row_distribution<'a>(
        &'a self,
        vocab: &Vocabulary,
        token: TokenId,
        matrix: impl Fn(Block) -> &'a Array2<F>,
    ) -> TokenDistribution<F> {
        match Self::locate(vocab, token) {
            Some((block, i)) => TokenDistribution {
                block: Some(block),
                offset: Self::block_offset(vocab, block),
                probs: matrix(block).row(i).to_vec(),
            },
            None => TokenDistribution {
                block: None,
                offset: token,
                probs: vec![F::one()],
            },
        }
    }

    /// Sample `x_t ~ q(x_t | x_0)` slot by slot. Special and PAD tokens are
    /// left as they are.
    pub fn corrupt_sequence<R: Rng + ?Sized>(
        &self,
        vocab: &Vocabulary,
        x0: &TokenSeq,
        t: usize,
        rng: &mut R,
    ) -> TokenSeq {
        let mut out = x0.clone();
        if t == 0 {
            return out;
        }
        for tok in out.tokens_mut() {
            if Self::locate(vocab, *tok).is_some() {
                *tok = self.forward_marginal(vocab, *tok, t).sample(rng);
            }
        }
        out
    }

    /// One forward step `x_{t-1} -> x_t`.
    pub fn step_sequence<R: Rng + ?Sized>(
        &self,
        vocab: &Vocabulary,
        prev: &TokenSeq,
        t: usize,
        rng: &mut R,
    ) -> TokenSeq {
        let mut out = prev.clone();
        for tok in out.tokens_mut() {
            if Self::locate(vocab, *tok).is_some() {
                *tok = self.step_distribution(vocab, *tok, t).sample(rng);
            }
        }
        out
    }

    /// Exact posterior `q(x_{t-1} | x_t, x_0)` over the block, written to
    /// `out`. Returns `false` when `x_t` is unreachable from `x_0`.
    pub fn posterior_into(&self, block: Block, xt: usize, x0: usize, t: usize, out: &mut [F]) -> bool {
        let step = self.step(block, t);
        let prev = self.cumulative(block, t - 1);
        let mut norm = F::zero();
        for (k, o) in out.iter_mut().enumerate() {
            *o = step[[k, xt]] * prev[[x0, k]];
            norm += *o;
        }
        if !(norm > F::zero()) || !norm.is_finite() {
            return false;
        }
        out.iter_mut().for_each(|o| *o /= norm);
        true
    }

    /// Posterior over block-local indices.
    pub fn posterior(&self, block: Block, xt: usize, x0: usize, t: usize) -> Result<Vec<F>> {
        if t == 0 || t > self.total {
            return Err(Error::TimestepOutOfRange {
                t,
                min: 1,
                max: self.total,
            });
        }
        let mut out = vec![F::zero(); self.block_len(block)];
        if self.posterior_into(block, xt, x0, t, &mut out) {
            Ok(out)
        } else {
            Err(Error::InfeasiblePair { xt, x0, t })
        }
    }

    /// Posterior for two tokens of the same kind.
    pub fn token_posterior(
        &self,
        vocab: &Vocabulary,
        xt: TokenId,
        x0: TokenId,
        t: usize,
    ) -> Result<TokenDistribution<F>> {
        match (Self::locate(vocab, xt), Self::locate(vocab, x0)) {
            (Some((bt, it)), Some((b0, i0))) if bt == b0 => Ok(TokenDistribution {
                block: Some(bt),
                offset: Self::block_offset(vocab, bt),
                probs: self.posterior(bt, it, i0, t)?,
            }),
            (None, None) if xt == x0 => Ok(TokenDistribution {
                block: None,
                offset: xt,
                probs: vec![F::one()],
            }),
            _ => Err(Error::InfeasiblePair { xt, x0, t }),
        }
    }

    /// Stationary distribution reached at `t = T`, the reverse-process prior.
    pub fn terminal_prior(&self, block: Block) -> Vec<F> {
        let n = self.block_len(block);
        let mut p = vec![F::zero(); n];
        match (block, self.kinds.coord, self.kinds.type_) {
            (Block::Coord, CoordMatrixKind::Absorbing, _) => p[COORD_SINK] = F::one(),
            (Block::Coord, _, _) => p.fill(F::one() / F::lit(n as f64)),
            (Block::Type, _, TypeMatrixKind::Absorbing) => p[n - 1] = F::one(),
            (Block::Type, _, TypeMatrixKind::Uniform) => {
                p[..n - 1].fill(F::one() / F::lit((n - 1) as f64));
            }
        }
        p
    }

    /// Sample a token from [`terminal_prior`](Self::terminal_prior).
    pub fn sample_prior<R: Rng + ?Sized>(&self, vocab: &Vocabulary, block: Block, rng: &mut R) -> TokenId {
        Self::block_offset(vocab, block) + sample_categorical(&self.terminal_prior(block), rng)
    }

    /// CSV dump of one matrix, rows = from-state.
    pub fn dump_csv(&self, block: Block, t: usize, cumulative: bool) -> String {
        let m = if cumulative {
            self.cumulative(block, t)
        } else {
            self.step(block, t)
        };
        let mut out = String::new();
        for row in m.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{:e}", v.as_f64())).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}
