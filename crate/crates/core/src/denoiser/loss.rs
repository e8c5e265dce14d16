use ndarray::Array2;
use rand::Rng;

use super::config::LossBreakdown;
use super::model::{softmax_f64, Denoiser, Logits, Weights};
use crate::corpus::{TokenSeq, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::DiffRng;
use crate::scalar::Scalar;
use crate::transition::{Block, TokenDistribution, TransitionSet};

/// `sum_j p(j) q(x_{t-1} | x_t, x_0 = j)` over the candidates `j` that can
/// reach `x_t`. Candidates that cannot are dropped and the rest renormalized.
struct Mixture {
    n: usize,
    posts: Vec<f64>,
    feasible: Vec<bool>,
    u: Vec<f64>,
    mass: f64,
}

impl Mixture {
    fn new(ts: &TransitionSet<f64>, block: Block, p: &[f64], xt: usize, t: usize) -> Self {
        let n = p.len();
        let mut posts = vec![0.0; n * n];
        let mut feasible = vec![false; n];
        let mut u = vec![0.0; n];
        let mut mass = 0.0;
        for (j, &pj) in p.iter().enumerate() {
            if pj <= 0.0 {
                continue;
            }
            let row = &mut posts[j * n..(j + 1) * n];
            if ts.posterior_into(block, xt, j, t, row) {
                feasible[j] = true;
                mass += pj;
                u.iter_mut().zip(row.iter()).for_each(|(a, &b)| *a += pj * b);
            }
        }
        Mixture {
            n,
            posts,
            feasible,
            u,
            mass,
        }
    }
}

/// Reverse transition `p(x_{t-1} | x_t)` for one slot, given the predicted
/// clean-token distribution `p` over the block. When no candidate can reach
/// `x_t` the slot stays where it is.
pub fn reverse_probs(ts: &TransitionSet<f64>, block: Block, p: &[f64], xt: usize, t: usize) -> Vec<f64> {
    let mix = Mixture::new(ts, block, p, xt, t);
    if mix.mass > 0.0 {
        mix.u.iter().map(|&v| v / mix.mass).collect()
    } else {
        let mut out = vec![0.0; p.len()];
        out[xt] = 1.0;
        out
    }
}

/// `KL(q(x_{t-1} | x_t, x_0) || p(x_{t-1} | x_t))` and its gradient with
/// respect to `p`. At `t = 1` the posterior is a point mass and the value is
/// `-log p(x_0 | x_1)`.
pub fn slot_kl(
    ts: &TransitionSet<f64>,
    block: Block,
    p: &[f64],
    x0: usize,
    xt: usize,
    t: usize,
) -> Result<(f64, Vec<f64>)> {
    let q = ts.posterior(block, xt, x0, t)?;
    let mix = Mixture::new(ts, block, p, xt, t);
    let mut kl = 0.0;
    let mut ratio = vec![0.0; mix.n];
    for k in 0..mix.n {
        if q[k] > 0.0 {
            let r = mix.u[k] / mix.mass;
            kl += q[k] * (q[k].ln() - r.ln());
            ratio[k] = q[k] / mix.u[k];
        }
    }
    let grad = (0..mix.n)
        .map(|j| {
            if !mix.feasible[j] {
                return 0.0;
            }
            let post = &mix.posts[j * mix.n..(j + 1) * mix.n];
            1.0 / mix.mass - post.iter().zip(&ratio).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok((kl.max(0.0), grad))
}

/// `KL(q(x_T | x_0) || p(x_T))` for one token.
fn prior_kl(ts: &TransitionSet<f64>, block: Block, x0: usize) -> f64 {
    let total = ts.total_steps();
    let q = ts.cumulative(block, total).row(x0);
    let prior = ts.terminal_prior(block);
    q.iter()
        .zip(&prior)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.ln() - b.ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Result of evaluating the objective on a batch.
pub struct BatchObjective<F> {
    pub loss: LossBreakdown,
    /// Unweighted VLB term per example.
    pub per_example_vlb: Vec<f64>,
    pub grad: Option<Vec<F>>,
}

impl<F: Scalar> Denoiser<F> {
    /// Logit row and block for a slot, `None` for structural slots.
    fn slot_row(&self, slot: usize) -> Option<(Block, usize)> {
        if let Ok(i) = self.coord_slots().binary_search(&slot) {
            return Some((Block::Coord, i));
        }
        self.type_slots().binary_search(&slot).ok().map(|i| (Block::Type, i))
    }

    /// Predicted `p(x_0 | x_t)` for slot `slot` of batch entry `index`, over
    /// block-local indices. Type blocks carry a trailing zero for MASK.
    pub fn slot_x0_probs(&self, logits: &Logits<F>, index: usize, slot: usize) -> Option<(Block, Vec<f64>)> {
        let (block, i) = self.slot_row(slot)?;
        Some(match block {
            Block::Coord => {
                let row = index * self.coord_slots().len() + i;
                (block, softmax_f64(logits.coord.row(row)))
            }
            Block::Type => {
                let row = index * self.type_slots().len() + i;
                let mut p = softmax_f64(logits.types.row(row));
                p.push(0.0);
                (block, p)
            }
        })
    }

    /// Per-slot `p(x_0 | x_t)`: one distribution over the slot's kind block
    /// for type and coordinate slots, a unit vector on the current token for
    /// structural and PAD slots.
    pub fn predict_x0(
        &self,
        which: Weights,
        seqs: &[TokenSeq],
        steps: &[usize],
    ) -> Vec<Vec<TokenDistribution<f64>>> {
        let vocab = &self.config().vocab;
        let logits = self.logits(which, seqs, steps);
        seqs.iter()
            .enumerate()
            .map(|(b, seq)| {
                seq.tokens()
                    .iter()
                    .enumerate()
                    .map(|(slot, &tok)| match self.slot_x0_probs(&logits, b, slot) {
                        Some((block, probs)) if tok != vocab.pad() => TokenDistribution {
                            block: Some(block),
                            offset: block_offset(vocab, block),
                            probs,
                        },
                        _ => TokenDistribution {
                            block: None,
                            offset: tok,
                            probs: vec![1.0],
                        },
                    })
                    .collect()
            })
            .collect()
    }

    /// Per-slot `p(x_{t-1} | x_t)` for one sequence.
    pub fn reverse_distribution(
        &self,
        which: Weights,
        seq: &TokenSeq,
        t: usize,
        ts: &TransitionSet<f64>,
    ) -> Vec<TokenDistribution<f64>> {
        let vocab = &self.config().vocab;
        let logits = self.logits(which, std::slice::from_ref(seq), &[t]);
        (0..seq.len())
            .map(|slot| self.slot_reverse(&logits, 0, seq, slot, t, ts, vocab))
            .collect()
    }

    /// Reverse distribution for one slot from precomputed logits.
    #[allow(clippy::too_many_arguments)]
    pub fn slot_reverse(
        &self,
        logits: &Logits<F>,
        index: usize,
        seq: &TokenSeq,
        slot: usize,
        t: usize,
        ts: &TransitionSet<f64>,
        vocab: &Vocabulary,
    ) -> TokenDistribution<f64> {
        let tok = seq.tokens()[slot];
        match (self.slot_x0_probs(logits, index, slot), TransitionSet::<f64>::locate(vocab, tok)) {
            (Some((block, p)), Some((b2, xt))) if block == b2 => TokenDistribution {
                block: Some(block),
                offset: block_offset(vocab, block),
                probs: reverse_probs(ts, block, &p, xt, t),
            },
            _ => TokenDistribution {
                block: None,
                offset: tok,
                probs: vec![1.0],
            },
        }
    }

    /// Loss of one clean sequence at timestep `t` with `x_t` drawn from the
    /// forward process. Live weights, no dropout.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        x0: &TokenSeq,
        t: usize,
        ts: &TransitionSet<f64>,
        rng: &mut R,
        lambda: f64,
    ) -> Result<LossBreakdown> {
        let xt = ts.corrupt_sequence(&self.config().vocab, x0, t, rng);
        let obj = self.objective(
            self.params(),
            std::slice::from_ref(x0),
            &[xt],
            &[t],
            &[1.0],
            lambda,
            ts,
            None,
            false,
        )?;
        Ok(obj.loss)
    }

    /// Batch objective `mean_i(w_i * vlb_i + lambda * aux_i)` and, on
    /// request, its gradient with respect to `params`.
    #[allow(clippy::too_many_arguments)]
    pub fn objective(
        &self,
        params: &[F],
        x0: &[TokenSeq],
        xt: &[TokenSeq],
        steps: &[usize],
        weights: &[f64],
        lambda: f64,
        ts: &TransitionSet<f64>,
        dropout_rng: Option<&mut DiffRng>,
        want_grad: bool,
    ) -> Result<BatchObjective<F>> {
        let vocab = &self.config().vocab;
        let batch = x0.len();
        let c_real = vocab.num_types();
        for &t in steps {
            if t == 0 || t > ts.total_steps() {
                return Err(Error::TimestepOutOfRange {
                    t,
                    min: 1,
                    max: ts.total_steps(),
                });
            }
        }
        let (logits, cache) = self.forward(params, xt, steps, dropout_rng);
        let mut dlogits = Logits {
            coord: Array2::<F>::zeros(logits.coord.raw_dim()),
            types: Array2::<F>::zeros(logits.types.raw_dim()),
        };
        let mut total = LossBreakdown {
            lambda,
            ..Default::default()
        };
        let mut per_example_vlb = Vec::with_capacity(batch);
        let inv_b = 1.0 / batch as f64;

        for b in 0..batch {
            let t = steps[b];
            let active: Vec<usize> = x0[b].active_slots(vocab).collect();
            let scale = inv_b / active.len().max(1) as f64;
            let (mut vlb, mut aux, mut prior) = (0.0, 0.0, 0.0);
            for &slot in &active {
                let (block, row) = self.slot_row(slot).expect("active slots carry tokens");
                let (Some((_, a)), Some((_, c))) = (
                    TransitionSet::<f64>::locate(vocab, x0[b].tokens()[slot]),
                    TransitionSet::<f64>::locate(vocab, xt[b].tokens()[slot]),
                ) else {
                    return Err(Error::Config(format!("slot {slot} holds a structural token")));
                };
                let (p, width) = match block {
                    Block::Coord => {
                        let r = b * self.coord_slots().len() + row;
                        (softmax_f64(logits.coord.row(r)), vocab.k())
                    }
                    Block::Type => {
                        let r = b * self.type_slots().len() + row;
                        let mut p = softmax_f64(logits.types.row(r));
                        p.push(0.0);
                        (p, c_real)
                    }
                };
                let (kl, gp) = slot_kl(ts, block, &p, a, c, t)?;
                vlb += kl;
                aux -= p[a].ln();
                prior += prior_kl(ts, block, a);

                if want_grad {
                    let mean_g: f64 = p.iter().zip(&gp).map(|(x, y)| x * y).sum();
                    let wv = weights[b] * scale;
                    let wa = lambda * scale;
                    let mut target = match block {
                        Block::Coord => dlogits.coord.row_mut(b * self.coord_slots().len() + row),
                        Block::Type => dlogits.types.row_mut(b * self.type_slots().len() + row),
                    };
                    for k in 0..width {
                        let onehot = if k == a { 1.0 } else { 0.0 };
                        let dz = wv * p[k] * (gp[k] - mean_g) + wa * (p[k] - onehot);
                        target[k] = F::lit(dz);
                    }
                }
            }
            let n = active.len().max(1) as f64;
            let (vlb, aux, prior) = (vlb / n, aux / n, prior / n);
            per_example_vlb.push(vlb);
            if t == 1 {
                total.vlb_recon += vlb * inv_b;
            } else {
                total.vlb_kl += vlb * inv_b;
            }
            total.aux += aux * inv_b;
            total.vlb_prior += prior * inv_b;
            total.total += (weights[b] * vlb + lambda * aux) * inv_b;
        }

        let grad = want_grad.then(|| self.backward(params, &cache, &dlogits));
        Ok(BatchObjective {
            loss: total,
            per_example_vlb,
            grad,
        })
    }
}

fn block_offset(vocab: &Vocabulary, block: Block) -> usize {
    match block {
        Block::Coord => 0,
        Block::Type => vocab.k(),
    }
}
