use serde::{Deserialize, Serialize};

use super::layout::{Canvas, Element, Layout};
use super::vocab::{TokenId, TokenKind, Vocabulary};
use crate::error::{Error, Result};

/// Tokens per element block: type, l, t, r, b, SEP.
pub const BLOCK: usize = 6;

/// Fixed-length sequence `SOS [c l t r b SEP] x N_max EOS`.
///
/// Slot kinds are a function of position only; a PAD-filled block is the
/// single exception, and then all six of its slots hold PAD.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    tokens: Vec<TokenId>,
    n_max: usize,
}

impl TokenSeq {
    pub fn seq_len(n_max: usize) -> usize {
        BLOCK * n_max + 2
    }

    /// Wraps raw tokens; only the length is checked here.
    pub fn from_tokens(tokens: Vec<TokenId>, n_max: usize) -> Result<Self> {
        if tokens.len() != Self::seq_len(n_max) {
            return Err(Error::Config(format!(
                "sequence length {} does not match N_max = {n_max}",
                tokens.len()
            )));
        }
        Ok(TokenSeq { tokens, n_max })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut [TokenId] {
        &mut self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn slot_kind(&self, slot: usize) -> TokenKind {
        slot_kind(slot, self.n_max)
    }

    /// Slot index of the type token of element block `b`.
    pub fn type_slot(block: usize) -> usize {
        1 + BLOCK * block
    }

    /// Number of leading real (non-PAD) blocks.
    pub fn element_count(&self, vocab: &Vocabulary) -> usize {
        (0..self.n_max)
            .take_while(|&b| self.tokens[Self::type_slot(b)] != vocab.pad())
            .count()
    }

    /// Slots whose token is a real type or coordinate position (PAD blocks
    /// and structural tokens excluded).
    pub fn active_slots<'a>(&'a self, vocab: &'a Vocabulary) -> impl Iterator<Item = usize> + 'a {
        let pad = vocab.pad();
        (0..self.tokens.len())
            .filter(move |&i| self.slot_kind(i) != TokenKind::Special && self.tokens[i] != pad)
    }
}

pub fn slot_kind(slot: usize, n_max: usize) -> TokenKind {
    let m = TokenSeq::seq_len(n_max);
    if slot == 0 || slot + 1 >= m {
        return TokenKind::Special;
    }
    match (slot - 1) % BLOCK {
        0 => TokenKind::Type,
        5 => TokenKind::Special,
        _ => TokenKind::Coord,
    }
}

pub fn tokenize(layout: &Layout, vocab: &Vocabulary, n_max: usize) -> Result<TokenSeq> {
    let n = layout.len();
    if n > n_max {
        return Err(Error::TooManyElements { n, max: n_max });
    }
    layout.validate(vocab)?;
    let mut tokens = Vec::with_capacity(TokenSeq::seq_len(n_max));
    tokens.push(vocab.sos());
    for e in layout.elements() {
        tokens.push(vocab.type_token(e.type_id));
        tokens.extend(e.ltrb().iter().map(|&c| vocab.coord(c)));
        tokens.push(vocab.sep());
    }
    tokens.resize(1 + BLOCK * n_max, vocab.pad());
    tokens.push(vocab.eos());
    Ok(TokenSeq { tokens, n_max })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotViolation {
    pub slot: usize,
    pub expected: TokenKind,
    pub got: Option<TokenKind>,
}

/// Every slot-kind violation in `seq`. MASK in a type slot is legal here
/// (intermediate states carry it); detokenize rejects it separately.
pub fn legality_violations(seq: &TokenSeq, vocab: &Vocabulary) -> Vec<SlotViolation> {
    let mut out = Vec::new();
    let toks = seq.tokens();
    let pad = vocab.pad();
    let mut check = |slot: usize, ok: bool, expected: TokenKind| {
        if !ok {
            out.push(SlotViolation {
                slot,
                expected,
                got: vocab.kind(toks[slot]),
            });
        }
    };
    check(0, toks[0] == vocab.sos(), TokenKind::Special);
    let last = toks.len() - 1;
    check(last, toks[last] == vocab.eos(), TokenKind::Special);
    let mut seen_pad = false;
    for b in 0..seq.n_max() {
        let start = TokenSeq::type_slot(b);
        let block = &toks[start..start + BLOCK];
        if block[0] == pad {
            seen_pad = true;
            for (j, &tok) in block.iter().enumerate() {
                check(start + j, tok == pad, TokenKind::Special);
            }
            continue;
        }
        // a real block after a PAD block: report the type slot
        check(start, !seen_pad, TokenKind::Special);
        check(start, vocab.kind(block[0]) == Some(TokenKind::Type), TokenKind::Type);
        for j in 1..5 {
            check(start + j, vocab.kind(block[j]) == Some(TokenKind::Coord), TokenKind::Coord);
        }
        check(start + 5, block[5] == vocab.sep(), TokenKind::Special);
    }
    out
}

/// Inverse of [`tokenize`]. Boxes decoded with `l > r` or `t > b` are
/// normalized by swapping the pair.
pub fn detokenize(seq: &TokenSeq, vocab: &Vocabulary) -> Result<Layout> {
    if let Some(v) = legality_violations(seq, vocab).into_iter().next() {
        return Err(Error::IllegalSequence {
            slot: v.slot,
            expected: v.expected,
            got: v.got.unwrap_or(TokenKind::Special),
        });
    }
    let toks = seq.tokens();
    let n = seq.element_count(vocab);
    if n == 0 {
        return Err(Error::EmptyLayout);
    }
    let mut elements = Vec::with_capacity(n);
    for b in 0..n {
        let s = TokenSeq::type_slot(b);
        let type_id = vocab.type_of(toks[s]).ok_or(Error::MaskedType { slot: s })?;
        let bin = |j: usize| vocab.bin_of(toks[s + j]).expect("legality checked");
        let (l, r) = (bin(1).min(bin(3)), bin(1).max(bin(3)));
        let (t, bt) = (bin(2).min(bin(4)), bin(2).max(bin(4)));
        elements.push(Element::new(type_id, l, t, r, bt));
    }
    Ok(Layout::new(elements, Canvas::default()))
}
