use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Coord,
    Type,
    Special,
}

/// Token index layout:
///
/// ```text
/// [0, K)            coordinate bins
/// [K, K+C)          element types (alphabetical by name)
/// K+C               MASK (kind = type)
/// K+C+1 .. K+C+5    SOS, EOS, SEP, PAD
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    k: usize,
    type_names: Vec<String>,
}

impl Vocabulary {
    /// Type names are sorted and deduplicated so that type ids follow the
    /// canonical (alphabetical) element order.
    pub fn new<S: AsRef<str>>(k: usize, type_names: &[S]) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("K must be at least 2, got {k}")));
        }
        let mut names: Vec<String> = type_names.iter().map(|s| s.as_ref().to_string()).collect();
        names.sort();
        names.dedup();
        if names.is_empty() {
            return Err(Error::Config("vocabulary needs at least one type".into()));
        }
        if names.iter().any(|n| n.is_empty() || n == "MASK") {
            return Err(Error::Config("type names must be non-empty and not \"MASK\"".into()));
        }
        Ok(Vocabulary { k, type_names: names })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of real (non-MASK) types.
    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    /// Size of the type block including MASK.
    pub fn type_block_len(&self) -> usize {
        self.num_types() + 1
    }

    pub fn size(&self) -> usize {
        self.k + self.num_types() + 5
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn mask(&self) -> TokenId {
        self.k + self.num_types()
    }

    pub fn sos(&self) -> TokenId {
        self.mask() + 1
    }

    pub fn eos(&self) -> TokenId {
        self.mask() + 2
    }

    pub fn sep(&self) -> TokenId {
        self.mask() + 3
    }

    pub fn pad(&self) -> TokenId {
        self.mask() + 4
    }

    pub fn coord(&self, bin: usize) -> TokenId {
        debug_assert!(bin < self.k);
        bin
    }

    pub fn type_token(&self, type_id: usize) -> TokenId {
        debug_assert!(type_id < self.num_types());
        self.k + type_id
    }

    pub fn kind(&self, token: TokenId) -> Option<TokenKind> {
        if token < self.k {
            Some(TokenKind::Coord)
        } else if token <= self.mask() {
            Some(TokenKind::Type)
        } else if token < self.size() {
            Some(TokenKind::Special)
        } else {
            None
        }
    }

    /// Coordinate bin of a token, if it is one.
    pub fn bin_of(&self, token: TokenId) -> Option<usize> {
        (token < self.k).then_some(token)
    }

    /// Real type id of a token; `None` for MASK and non-type tokens.
    pub fn type_of(&self, token: TokenId) -> Option<usize> {
        (token >= self.k && token < self.mask()).then(|| token - self.k)
    }

    pub fn type_id(&self, name: &str) -> Result<usize> {
        self.type_names
            .binary_search_by(|n| n.as_str().cmp(name))
            .map_err(|_| Error::UnknownType(name.to_string()))
    }

    pub fn type_name(&self, type_id: usize) -> &str {
        &self.type_names[type_id]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_disjoint_and_exhaustive() {
        let v = Vocabulary::new(8, &["text", "image", "button"]).unwrap();
        assert_eq!(v.size(), 8 + 3 + 5);
        let mut counts = [0usize; 3];
        for tok in 0..v.size() {
            match v.kind(tok).unwrap() {
                TokenKind::Coord => counts[0] += 1,
                TokenKind::Type => counts[1] += 1,
                TokenKind::Special => counts[2] += 1,
            }
        }
        assert_eq!(counts, [8, 4, 4]);
        assert_eq!(v.kind(v.mask()), Some(TokenKind::Type));
        assert_eq!(v.kind(v.size()), None);
        let specials = [v.sos(), v.eos(), v.sep(), v.pad()];
        assert!(specials.iter().all(|&s| v.kind(s) == Some(TokenKind::Special)));
    }

    #[test]
    fn type_ids_follow_alphabetical_order() {
        let v = Vocabulary::new(4, &["toolbar", "text", "image", "text"]).unwrap();
        assert_eq!(v.type_names(), ["image", "text", "toolbar"]);
        assert_eq!(v.type_id("text").unwrap(), 1);
        assert!(matches!(v.type_id("icon"), Err(Error::UnknownType(_))));
        assert_eq!(v.type_of(v.type_token(2)), Some(2));
        assert_eq!(v.type_of(v.mask()), None);
    }
}
