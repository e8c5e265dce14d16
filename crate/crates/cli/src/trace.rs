//! Per-step dumps of token sequences, for forward and reverse strips.

use heterodiff::corpus::{JsonCanvas, JsonElement, TokenSeq, Vocabulary};
use serde::{Deserialize, Serialize};

/// Type name given to elements whose type slot still holds `MASK`.
pub const MASK_NAME: &str = "MASK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub canvas: JsonCanvas,
    pub samples: Vec<TraceSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types_resolved_at: Option<usize>,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub elements: Vec<JsonElement>,
}

/// Elements of a possibly noisy sequence. Boxes are written as bin centers
/// and may be inverted; renderers normalize them.
pub fn frame(t: usize, seq: &TokenSeq, vocab: &Vocabulary) -> Frame {
    let k = vocab.k() as f64;
    let center = |tok: usize| vocab.bin_of(tok).map_or(0.0, |b| (b as f64 + 0.5) / k);
    let tokens = seq.tokens();
    let elements = (0..seq.element_count(vocab))
        .map(|b| {
            let slot = TokenSeq::type_slot(b);
            let type_name = match vocab.type_of(tokens[slot]) {
                Some(id) => vocab.type_name(id).to_string(),
                None => MASK_NAME.to_string(),
            };
            JsonElement {
                type_name,
                l: center(tokens[slot + 1]),
                t: center(tokens[slot + 2]),
                r: center(tokens[slot + 3]),
                b: center(tokens[slot + 4]),
            }
        })
        .collect();
    Frame { t, elements }
}
