#![allow(dead_code)]

pub mod oracles;

use heterodiff::corpus::{tokenize, Element, Layout, TokenSeq, Vocabulary};
use heterodiff::denoiser::DenoiserConfig;
use heterodiff::schedule::{Schedule, ScheduleParams};
use heterodiff::transition::{TransitionKinds, TransitionSet};
use rand::Rng;

pub fn small_params(k_total: usize, absorb: usize) -> ScheduleParams {
    ScheduleParams {
        total_steps: k_total,
        absorb_start: absorb,
        g: 0.5,
        h: 2.0,
        ..ScheduleParams::desk()
    }
}

pub fn transitions(vocab: &Vocabulary, params: ScheduleParams) -> TransitionSet<f64> {
    let s = Schedule::<f64>::new(params).unwrap();
    TransitionSet::new(&s, vocab, TransitionKinds::default())
}

pub fn tiny_config(vocab: Vocabulary, n_max: usize, total_steps: usize) -> DenoiserConfig {
    DenoiserConfig {
        layers: 1,
        heads: 2,
        model_dim: 16,
        ff_dim: 32,
        dropout: 0.0,
        vocab,
        n_max,
        total_steps,
    }
}

/// A random valid layout with `n` elements.
pub fn random_layout<R: Rng>(vocab: &Vocabulary, n: usize, rng: &mut R) -> Layout {
    let k = vocab.k();
    let els = (0..n)
        .map(|_| {
            let (a, b) = (rng.random_range(0..k), rng.random_range(0..k));
            let (c, d) = (rng.random_range(0..k), rng.random_range(0..k));
            Element::new(
                rng.random_range(0..vocab.num_types()),
                a.min(b),
                c.min(d),
                a.max(b),
                c.max(d),
            )
        })
        .collect();
    Layout::new(els, Default::default())
}

pub fn random_seq<R: Rng>(vocab: &Vocabulary, n_max: usize, rng: &mut R) -> TokenSeq {
    let n = rng.random_range(1..=n_max);
    tokenize(&random_layout(vocab, n, rng), vocab, n_max).unwrap()
}
