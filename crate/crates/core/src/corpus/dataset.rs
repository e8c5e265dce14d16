use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{discretize, BoxSpec, Canvas, Layout};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, seeded};

/// On-disk corpus / layout list. Coordinates are normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub canvas: JsonCanvas,
    pub layouts: Vec<JsonLayout>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsonCanvas {
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonLayout {
    pub elements: Vec<JsonElement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonElement {
    #[serde(rename = "type")]
    pub type_name: String,
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

impl CorpusFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::MalformedCorpus(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    /// Distinct type names in first-seen order.
    pub fn type_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for el in self.layouts.iter().flat_map(|l| &l.elements) {
            if !names.contains(&el.type_name) {
                names.push(el.type_name.clone());
            }
        }
        names
    }

    /// Discretize every non-empty layout; `max_elements` drops longer ones.
    pub fn to_layouts(&self, vocab: &Vocabulary, max_elements: Option<usize>) -> Result<Vec<Layout>> {
        let canvas = Canvas {
            w: self.canvas.w,
            h: self.canvas.h,
        };
        if !(canvas.w > 0.0 && canvas.h > 0.0) {
            return Err(Error::MalformedCorpus("canvas must have positive size".into()));
        }
        let mut out = Vec::with_capacity(self.layouts.len());
        for (i, jl) in self.layouts.iter().enumerate() {
            let n = jl.elements.len();
            if n == 0 || max_elements.is_some_and(|m| n > m) {
                continue;
            }
            let boxes: Vec<BoxSpec> = jl
                .elements
                .iter()
                .map(|e| BoxSpec {
                    type_name: e.type_name.clone(),
                    l: e.l,
                    t: e.t,
                    r: e.r,
                    b: e.b,
                })
                .collect();
            let mut layout = discretize(&boxes, vocab)
                .map_err(|e| Error::MalformedCorpus(format!("layout {i}: {e}")))?;
            layout.canvas = canvas;
            out.push(layout);
        }
        Ok(out)
    }
}

/// Serialize layouts with each bin written as its center, so that reading
/// the file back reproduces the same bins.
pub fn write_layouts_json(layouts: &[Layout], vocab: &Vocabulary) -> CorpusFile {
    let k = vocab.k() as f64;
    let center = |b: usize| (b as f64 + 0.5) / k;
    let canvas = layouts.first().map(|l| l.canvas).unwrap_or_default();
    CorpusFile {
        canvas: JsonCanvas {
            w: canvas.w,
            h: canvas.h,
        },
        layouts: layouts
            .iter()
            .map(|l| JsonLayout {
                elements: l
                    .elements()
                    .iter()
                    .map(|e| JsonElement {
                        type_name: vocab.type_name(e.type_id).to_string(),
                        l: center(e.left),
                        t: center(e.top),
                        r: center(e.right),
                        b: center(e.bottom),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn read_layouts_json(path: &Path, vocab: &Vocabulary) -> Result<Vec<Layout>> {
    CorpusFile::read(path)?.to_layouts(vocab, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub n_max: usize,
    pub train: Vec<Layout>,
    pub val: Vec<Layout>,
    pub test: Vec<Layout>,
    /// `count_prior[n - 1]` is the training-split frequency of `n` elements.
    pub count_prior: Vec<f64>,
}

impl Corpus {
    /// Shuffle under `split_seed` and split 90/5/5.
    pub fn from_layouts(mut layouts: Vec<Layout>, n_max: usize, split_seed: u64) -> Result<Self> {
        layouts.retain(|l| !l.is_empty() && l.len() <= n_max);
        if layouts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        layouts.shuffle(&mut seeded(split_seed));
        let total = layouts.len();
        let n_train = ((total as f64) * 0.9).round() as usize;
        let n_val = (((total as f64) * 0.05).round() as usize).min(total - n_train);
        let test = layouts.split_off(n_train + n_val);
        let val = layouts.split_off(n_train);
        let train = layouts;
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut count_prior = vec![0.0; n_max];
        for l in &train {
            count_prior[l.len() - 1] += 1.0;
        }
        count_prior.iter_mut().for_each(|p| *p /= train.len() as f64);
        Ok(Corpus {
            n_max,
            train,
            val,
            test,
            count_prior,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        count_prior_sample(&self.count_prior, rng)
    }
}

/// Draw an element count `n` in `[1, N_max]` from a count prior.
pub fn count_prior_sample<R: Rng + ?Sized>(prior: &[f64], rng: &mut R) -> usize {
    sample_categorical(prior, rng) + 1
}

pub fn parse_corpus(text: &str, vocab: &Vocabulary, n_max: usize, split_seed: u64) -> Result<Corpus> {
    let file = CorpusFile::parse(text)?;
    Corpus::from_layouts(file.to_layouts(vocab, Some(n_max))?, n_max, split_seed)
}

pub fn load_corpus(path: &Path, vocab: &Vocabulary, n_max: usize, split_seed: u64) -> Result<Corpus> {
    let file = CorpusFile::read(path)?;
    Corpus::from_layouts(file.to_layouts(vocab, Some(n_max))?, n_max, split_seed)
}
