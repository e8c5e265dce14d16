//! Independent brute-force implementations of the layout metrics.

use heterodiff::corpus::{Element, Layout, Vocabulary};
use heterodiff::metrics::{unit_boxes, UnitBox};
use heterodiff::rng::seeded;
use rand::Rng;

use super::random_layout;

pub fn box_iou(x: &UnitBox, y: &UnitBox) -> f64 {
    let iw = (x.r.min(y.r) - x.l.max(y.l)).max(0.0);
    let ih = (x.b.min(y.b) - x.t.max(y.t)).max(0.0);
    let inter = iw * ih;
    let union = (x.r - x.l) * (x.b - x.t) + (y.r - y.l) * (y.b - y.t) - inter;
    if union <= 0.0 {
        return if (x.l, x.t, x.r, x.b) == (y.l, y.t, y.r, y.b) { 1.0 } else { 0.0 };
    }
    inter / union
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Best same-type matching by enumerating every permutation of the padded
/// element list.
pub fn brute_layout_iou(a: &Layout, b: &Layout, k: usize) -> f64 {
    let (ba, bb) = (unit_boxes(a, k), unit_boxes(b, k));
    let n = ba.len().max(bb.len());
    let mut best: f64 = 0.0;
    for perm in permutations(n) {
        let s: f64 = (0..n)
            .filter_map(|i| {
                let (x, y) = (ba.get(i)?, bb.get(perm[i])?);
                (x.type_id == y.type_id).then(|| box_iou(x, y))
            })
            .sum();
        best = best.max(s);
    }
    best / n as f64
}

/// Group by sorted type list, score each group by its mean pairwise IoU,
/// weight by group size.
pub fn brute_selfsim(layouts: &[Layout], k: usize) -> f64 {
    let mut keys: Vec<Vec<usize>> = layouts.iter().map(|l| l.type_multiset()).collect();
    keys.sort();
    keys.dedup();
    let mut num = 0.0;
    let mut den = 0.0;
    for key in keys {
        let members: Vec<&Layout> = layouts.iter().filter(|l| l.type_multiset() == key).collect();
        let l = members.len() as f64;
        den += l;
        if members.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0.0;
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                sum += brute_layout_iou(members[i], members[j], k);
                pairs += 1.0;
            }
        }
        num += l * sum / pairs;
    }
    num / den
}

/// Layouts with 1-4 elements over few types so groups repeat.
pub fn mixed_layouts(k: usize, count: usize, seed: u64) -> Vec<Layout> {
    let v = Vocabulary::new(k, &["a", "b", "c"]).unwrap();
    let mut rng = seeded(seed);
    let mut out: Vec<Layout> = Vec::new();
    while out.len() < count {
        if !out.is_empty() && rng.random_bool(0.3) {
            let src = out[rng.random_range(0..out.len())].clone();
            out.push(src);
            continue;
        }
        let n = rng.random_range(1..=4);
        let mut l = random_layout(&v, n, &mut rng);
        // restrict to two types to make type sets collide
        let els = l.elements().iter().map(|e| Element { type_id: e.type_id % 2, ..*e }).collect();
        l = Layout::new(els, l.canvas);
        out.push(l);
    }
    out
}
