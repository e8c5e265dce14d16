//! Layout data model, the slot-structured token format, corpus ingestion
//! and synthetic corpora.

mod dataset;
mod layout;
mod synth;
mod tokens;
mod vocab;

pub use dataset::{
    count_prior_sample, load_corpus, parse_corpus, read_layouts_json, write_layouts_json, Corpus,
    CorpusFile, JsonCanvas, JsonElement, JsonLayout,
};
pub use layout::{discretize, perturb, BoxSpec, Canvas, Element, Layout};
pub use synth::{synth_corpus, SynthSpec, Template};
pub use tokens::{detokenize, legality_violations, slot_kind, tokenize, SlotViolation, TokenSeq, BLOCK};
pub use vocab::{TokenId, TokenKind, Vocabulary};
