use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// One typed box; coordinates are bins in `[0, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Element {
    pub type_id: usize,
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl Element {
    pub fn new(type_id: usize, left: usize, top: usize, right: usize, bottom: usize) -> Self {
        Element {
            type_id,
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn ltrb(&self) -> [usize; 4] {
        [self.left, self.top, self.right, self.bottom]
    }

    fn order_key(&self) -> (usize, usize, usize, usize, usize) {
        (self.type_id, self.top, self.left, self.right, self.bottom)
    }

    pub fn check(&self, vocab: &Vocabulary) -> Result<()> {
        let k = vocab.k();
        if self.type_id >= vocab.num_types() {
            return Err(Error::InvalidBox(format!("type id {} out of range", self.type_id)));
        }
        if self.ltrb().iter().any(|&c| c >= k) {
            return Err(Error::InvalidBox(format!("{:?} has a bin outside [0, {k})", self)));
        }
        if self.left > self.right || self.top > self.bottom {
            return Err(Error::InvalidBox(format!("{:?} is inverted", self)));
        }
        Ok(())
    }
}

/// Source canvas size. Only used to map normalized boxes back to source units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub w: f64,
    pub h: f64,
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas { w: 1.0, h: 1.0 }
    }
}

/// Elements in canonical order: alphabetical type (type ids are
/// alphabetical), then top, left, right, bottom, then insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    elements: Vec<Element>,
    pub canvas: Canvas,
}

impl Layout {
    pub fn new(mut elements: Vec<Element>, canvas: Canvas) -> Self {
        // stable sort keeps insertion order as the final tie-breaker
        elements.sort_by_key(Element::order_key);
        Layout { elements, canvas }
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Sorted type ids, the key that groups layouts by type multiset.
    pub fn type_multiset(&self) -> Vec<usize> {
        // canonical order already sorts by type id
        self.elements.iter().map(|e| e.type_id).collect()
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.elements.is_empty() {
            return Err(Error::EmptyLayout);
        }
        self.elements.iter().try_for_each(|e| e.check(vocab))
    }
}

/// A continuous box with coordinates normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub type_name: String,
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

fn to_bin(x: f64, k: usize) -> usize {
    let bin = (x * k as f64).floor();
    bin.clamp(0.0, (k - 1) as f64) as usize
}

pub fn discretize(boxes: &[BoxSpec], vocab: &Vocabulary) -> Result<Layout> {
    if boxes.is_empty() {
        return Err(Error::EmptyLayout);
    }
    let k = vocab.k();
    let elements = boxes
        .iter()
        .map(|bx| {
            let type_id = vocab.type_id(&bx.type_name)?;
            let coords = [bx.l, bx.t, bx.r, bx.b];
            if coords.iter().any(|c| !c.is_finite() || !(0.0..=1.0).contains(c)) {
                return Err(Error::InvalidBox(format!("{bx:?} leaves [0, 1]")));
            }
            if bx.l > bx.r || bx.t > bx.b {
                return Err(Error::InvalidBox(format!("{bx:?} is inverted")));
            }
            Ok(Element::new(
                type_id,
                to_bin(bx.l, k),
                to_bin(bx.t, k),
                to_bin(bx.r, k),
                to_bin(bx.b, k),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Layout::new(elements, Canvas::default()))
}

/// Gaussian jitter of every coordinate in normalized space, then
/// re-discretization. Bins are read at their centers.
pub fn perturb<R: Rng + ?Sized>(layout: &Layout, std: f64, k: usize, rng: &mut R) -> Layout {
    if std <= 0.0 {
        return layout.clone();
    }
    let noise = Normal::new(0.0, std).expect("finite std");
    let kf = k as f64;
    let mut jitter = |bin: usize| {
        let x = (bin as f64 + 0.5) / kf + noise.sample(rng);
        to_bin(x, k)
    };
    let elements = layout
        .elements()
        .iter()
        .map(|e| {
            let (mut l, mut t, mut r, mut b) =
                (jitter(e.left), jitter(e.top), jitter(e.right), jitter(e.bottom));
            if l > r {
                std::mem::swap(&mut l, &mut r);
            }
            if t > b {
                std::mem::swap(&mut t, &mut b);
            }
            Element::new(e.type_id, l, t, r, b)
        })
        .collect();
    Layout::new(elements, layout.canvas)
}
