//! Layout quality metrics: Alignment, Overlap, mIoU and SelfSim.
//!
//! Bins are read at their centers, `(bin + 0.5) / K`, so every metric works
//! in the unit square regardless of `K`.

pub mod assignment;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Layout, Vocabulary};
use assignment::max_weight_assignment;

/// Alignment distances are clamped below this before `-ln(1 - d)`.
const ALIGN_CLAMP: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitBox {
    pub type_id: usize,
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

impl UnitBox {
    pub fn area(&self) -> f64 {
        (self.r - self.l).max(0.0) * (self.b - self.t).max(0.0)
    }

    pub fn intersection(&self, other: &UnitBox) -> f64 {
        let w = self.r.min(other.r) - self.l.max(other.l);
        let h = self.b.min(other.b) - self.t.max(other.t);
        w.max(0.0) * h.max(0.0)
    }

    /// Degenerate boxes (zero union) score 1 against an identical box.
    pub fn iou(&self, other: &UnitBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            let same = (self.l, self.t, self.r, self.b) == (other.l, other.t, other.r, other.b);
            return if same { 1.0 } else { 0.0 };
        }
        inter / union
    }

    /// Left, x-center, right, top, y-center, bottom.
    fn alignment_values(&self) -> [f64; 6] {
        [
            self.l,
            0.5 * (self.l + self.r),
            self.r,
            self.t,
            0.5 * (self.t + self.b),
            self.b,
        ]
    }
}

pub fn unit_boxes(layout: &Layout, k: usize) -> Vec<UnitBox> {
    let kf = k as f64;
    let c = |bin: usize| (bin as f64 + 0.5) / kf;
    layout
        .elements()
        .iter()
        .map(|e| UnitBox {
            type_id: e.type_id,
            l: c(e.left),
            t: c(e.top),
            r: c(e.right),
            b: c(e.bottom),
        })
        .collect()
}

/// Mean over elements of `-ln(1 - d_i)`, where `d_i` is the smallest gap
/// between any alignment line of element `i` and the same line of another
/// element.
pub fn alignment(layout: &Layout, k: usize) -> f64 {
    alignment_of_boxes(&unit_boxes(layout, k))
}

pub fn alignment_of_boxes(boxes: &[UnitBox]) -> f64 {
    let n = boxes.len();
    if n < 2 {
        return 0.0;
    }
    let values: Vec<[f64; 6]> = boxes.iter().map(UnitBox::alignment_values).collect();
    let total: f64 = (0..n)
        .map(|i| {
            let d = (0..n)
                .filter(|&j| j != i)
                .flat_map(|j| (0..6).map(move |m| (j, m)))
                .map(|(j, m)| (values[i][m] - values[j][m]).abs())
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, ALIGN_CLAMP);
            -(1.0 - d).ln()
        })
        .sum();
    total / n as f64
}

/// Summed pairwise intersection area over the unit canvas, skipping pairs
/// that involve an ignored type.
pub fn overlap(layout: &Layout, k: usize, ignore_types: &[usize]) -> f64 {
    let boxes: Vec<UnitBox> = unit_boxes(layout, k)
        .into_iter()
        .filter(|b| !ignore_types.contains(&b.type_id))
        .collect();
    let mut total = 0.0;
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            total += boxes[i].intersection(&boxes[j]);
        }
    }
    total
}

/// Same-type optimal matching of boxes, total IoU over `max(n_a, n_b)`.
pub fn layout_iou(a: &Layout, b: &Layout, k: usize) -> f64 {
    let (ba, bb) = (unit_boxes(a, k), unit_boxes(b, k));
    let denom = ba.len().max(bb.len());
    if denom == 0 {
        return 0.0;
    }
    let mut types: Vec<usize> = ba.iter().chain(&bb).map(|x| x.type_id).collect();
    types.sort_unstable();
    types.dedup();
    let mut total = 0.0;
    for ty in types {
        let ga: Vec<&UnitBox> = ba.iter().filter(|x| x.type_id == ty).collect();
        let gb: Vec<&UnitBox> = bb.iter().filter(|x| x.type_id == ty).collect();
        let n = ga.len().max(gb.len());
        if ga.is_empty() || gb.is_empty() {
            continue;
        }
        let weights: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match (ga.get(i), gb.get(j)) {
                        (Some(x), Some(y)) => x.iou(y),
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        total += max_weight_assignment(&weights).0;
    }
    total / denom as f64
}

fn by_type_multiset(layouts: &[Layout]) -> (Vec<Vec<usize>>, HashMap<Vec<usize>, Vec<usize>>) {
    let mut order = Vec::new();
    let mut groups: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for (i, l) in layouts.iter().enumerate() {
        let key = l.type_multiset();
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }
    (order, groups)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiouResult {
    pub value: f64,
    /// Generated layouts that found a reference with the same type multiset.
    pub matched: usize,
}

/// Mean over generated layouts of the best [`layout_iou`] against reference
/// layouts with the same type multiset (0 when there is none).
pub fn miou(generated: &[Layout], reference: &[Layout], k: usize) -> MiouResult {
    if generated.is_empty() {
        return MiouResult { value: 0.0, matched: 0 };
    }
    let (_, groups) = by_type_multiset(reference);
    let mut matched = 0;
    let total: f64 = generated
        .iter()
        .map(|g| match groups.get(&g.type_multiset()) {
            Some(idx) => {
                matched += 1;
                idx.iter()
                    .map(|&i| layout_iou(g, &reference[i], k))
                    .fold(0.0, f64::max)
            }
            None => 0.0,
        })
        .sum();
    MiouResult {
        value: total / generated.len() as f64,
        matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfSimResult {
    pub value: f64,
    pub subsets: usize,
}

/// Partition by type multiset; each subset scores the mean pairwise
/// [`layout_iou`] (0 for singletons); subsets are weighted by their size.
pub fn selfsim(layouts: &[Layout], k: usize) -> SelfSimResult {
    let (order, groups) = by_type_multiset(layouts);
    let mut weighted = 0.0;
    let mut weight = 0usize;
    for key in &order {
        let idx = &groups[key];
        let l = idx.len();
        weight += l;
        if l < 2 {
            continue;
        }
        let mut sum = 0.0;
        for a in 0..l {
            for b in a + 1..l {
                sum += layout_iou(&layouts[idx[a]], &layouts[idx[b]], k);
            }
        }
        let pairs = (l * (l - 1) / 2) as f64;
        weighted += l as f64 * sum / pairs;
    }
    SelfSimResult {
        value: if weight == 0 { 0.0 } else { weighted / weight as f64 },
        subsets: order.len(),
    }
}

pub fn mean_alignment(layouts: &[Layout], k: usize) -> f64 {
    mean(layouts.iter().map(|l| alignment(l, k)))
}

pub fn mean_overlap(layouts: &[Layout], k: usize, ignore_types: &[usize]) -> f64 {
    mean(layouts.iter().map(|l| overlap(l, k, ignore_types)))
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return 0.0;
    }
    it.sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBaseline {
    pub align: f64,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub miou: f64,
    pub align: f64,
    pub overlap: f64,
    pub selfsim: f64,
    pub reference: ReferenceBaseline,
    pub n_generated: usize,
    pub n_reference: usize,
    pub miou_matched: usize,
    pub selfsim_subsets: usize,
}

/// Ignored type names that the vocabulary does not know are skipped.
pub fn resolve_ignore(vocab: &Vocabulary, names: &[String]) -> Vec<usize> {
    names.iter().filter_map(|n| vocab.type_id(n).ok()).collect()
}

pub fn eval_report(
    generated: &[Layout],
    reference: &[Layout],
    vocab: &Vocabulary,
    ignore_types: &[String],
) -> MetricsReport {
    let k = vocab.k();
    let ignore = resolve_ignore(vocab, ignore_types);
    let m = miou(generated, reference, k);
    let s = selfsim(generated, k);
    MetricsReport {
        miou: m.value,
        align: mean_alignment(generated, k),
        overlap: mean_overlap(generated, k, &ignore),
        selfsim: s.value,
        reference: ReferenceBaseline {
            align: mean_alignment(reference, k),
            overlap: mean_overlap(reference, k, &ignore),
        },
        n_generated: generated.len(),
        n_reference: reference.len(),
        miou_matched: m.matched,
        selfsim_subsets: s.subsets,
    }
}
