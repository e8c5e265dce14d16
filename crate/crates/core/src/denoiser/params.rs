use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::DenoiserConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embeddings,
    Attention,
    Ff,
    Norm,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Embeddings,
        ParamGroup::Attention,
        ParamGroup::Ff,
        ParamGroup::Norm,
        ParamGroup::Head,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Embeddings => "embeddings",
            ParamGroup::Attention => "attention",
            ParamGroup::Ff => "ff",
            ParamGroup::Norm => "norm",
            ParamGroup::Head => "head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// A named tensor inside the flat parameter vector. Vectors have `rows = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub group: ParamGroup,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Handle to a tensor, cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn mat<'a, F>(&self, data: &'a [F]) -> ArrayView2<'a, F> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.offset..self.offset + self.rows * self.cols])
            .expect("tensor shape")
    }

    pub fn mat_mut<'a, F>(&self, data: &'a mut [F]) -> ArrayViewMut2<'a, F> {
        ArrayViewMut2::from_shape(
            (self.rows, self.cols),
            &mut data[self.offset..self.offset + self.rows * self.cols],
        )
        .expect("tensor shape")
    }

    pub fn vec<'a, F>(&self, data: &'a [F]) -> ArrayView1<'a, F> {
        ArrayView1::from(&data[self.offset..self.offset + self.rows * self.cols])
    }

    pub fn vec_mut<'a, F>(&self, data: &'a mut [F]) -> ArrayViewMut1<'a, F> {
        ArrayViewMut1::from(&mut data[self.offset..self.offset + self.rows * self.cols])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerTensors {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub w_qkv: Tensor,
    pub b_qkv: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w_ff1: Tensor,
    pub b_ff1: Tensor,
    pub w_ff2: Tensor,
    pub b_ff2: Tensor,
}

/// Where every tensor lives in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub specs: Vec<TensorSpec>,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub time_emb: Tensor,
    pub layers: Vec<LayerTensors>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub head_coord_w: Tensor,
    pub head_coord_b: Tensor,
    pub head_type_w: Tensor,
    pub head_type_b: Tensor,
}

struct Builder {
    specs: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn add(&mut self, name: String, group: ParamGroup, rows: usize, cols: usize, init: Init) -> Tensor {
        let t = Tensor {
            offset: self.offset,
            rows,
            cols,
        };
        self.specs.push(TensorSpec {
            name,
            group,
            offset: self.offset,
            rows,
            cols,
            init,
        });
        self.offset += rows * cols;
        t
    }
}

impl ParamLayout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        use Init::*;
        use ParamGroup::*;
        let d = cfg.model_dim;
        let ff = cfg.ff_dim;
        let mut b = Builder {
            specs: Vec::new(),
            offset: 0,
        };
        let tok_emb = b.add("tok_emb".into(), Embeddings, cfg.vocab.size(), d, Normal);
        let pos_emb = b.add("pos_emb".into(), Embeddings, cfg.seq_len(), d, Normal);
        let time_emb = b.add("time_emb".into(), Embeddings, cfg.total_steps + 1, d, Normal);
        let layers = (0..cfg.layers)
            .map(|l| {
                let n = |s: &str| format!("layer{l}.{s}");
                LayerTensors {
                    ln1_g: b.add(n("ln1.g"), Norm, 1, d, Ones),
                    ln1_b: b.add(n("ln1.b"), Norm, 1, d, Zeros),
                    w_qkv: b.add(n("attn.w_qkv"), Attention, d, 3 * d, Normal),
                    b_qkv: b.add(n("attn.b_qkv"), Attention, 1, 3 * d, Zeros),
                    w_o: b.add(n("attn.w_o"), Attention, d, d, Normal),
                    b_o: b.add(n("attn.b_o"), Attention, 1, d, Zeros),
                    ln2_g: b.add(n("ln2.g"), Norm, 1, d, Ones),
                    ln2_b: b.add(n("ln2.b"), Norm, 1, d, Zeros),
                    w_ff1: b.add(n("ff.w1"), Ff, d, ff, Normal),
                    b_ff1: b.add(n("ff.b1"), Ff, 1, ff, Zeros),
                    w_ff2: b.add(n("ff.w2"), Ff, ff, d, Normal),
                    b_ff2: b.add(n("ff.b2"), Ff, 1, d, Zeros),
                }
            })
            .collect();
        let lnf_g = b.add("lnf.g".into(), Norm, 1, d, Ones);
        let lnf_b = b.add("lnf.b".into(), Norm, 1, d, Zeros);
        let head_coord_w = b.add("head.coord.w".into(), Head, d, cfg.vocab.k(), Normal);
        let head_coord_b = b.add("head.coord.b".into(), Head, 1, cfg.vocab.k(), Zeros);
        let head_type_w = b.add("head.type.w".into(), Head, d, cfg.vocab.num_types(), Normal);
        let head_type_b = b.add("head.type.b".into(), Head, 1, cfg.vocab.num_types(), Zeros);
        ParamLayout {
            specs: b.specs,
            tok_emb,
            pos_emb,
            time_emb,
            layers,
            lnf_g,
            lnf_b,
            head_coord_w,
            head_coord_b,
            head_type_w,
            head_type_b,
        }
    }

    pub fn len(&self) -> usize {
        self.specs.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        let pos = self.specs.partition_point(|s| s.offset + s.len() <= index);
        self.specs[pos].group
    }

    /// Weights ~ N(0, 0.02^2), norm gains 1, biases 0.
    pub fn init<F: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let mut out = vec![F::zero(); self.len()];
        for spec in &self.specs {
            let slot = &mut out[spec.range()];
            match spec.init {
                Init::Normal => slot.iter_mut().for_each(|x| *x = F::lit(normal.sample(rng))),
                Init::Ones => slot.fill(F::one()),
                Init::Zeros => {}
            }
        }
        out
    }
}
