//! Parametric layout templates. Every template places boxes on shared
//! edges (exact alignment) with at least one empty bin between neighbours
//! (no overlap).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Corpus;
use super::layout::{Canvas, Element, Layout};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    SingleColumn,
    DoubleColumn,
    Grid,
    ToolbarList,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::SingleColumn,
        Template::DoubleColumn,
        Template::Grid,
        Template::ToolbarList,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_layouts: usize,
    pub k: usize,
    pub type_names: Vec<String>,
    pub n_max: usize,
    /// Relative weights of [`Template::ALL`].
    pub style_mix: [f64; 4],
}

impl SynthSpec {
    pub fn new(n_layouts: usize, vocab: &Vocabulary, n_max: usize) -> Self {
        SynthSpec {
            n_layouts,
            k: vocab.k(),
            type_names: vocab.type_names().to_vec(),
            n_max,
            style_mix: [1.0; 4],
        }
    }
}

/// Semantic roles, resolved to type ids by name with a positional fallback.
#[derive(Clone, Copy)]
struct Roles {
    toolbar: usize,
    text: usize,
    image: usize,
    button: usize,
}

impl Roles {
    fn resolve(vocab: &Vocabulary) -> Self {
        let c = vocab.num_types();
        let pick = |name: &str, fallback: usize| vocab.type_id(name).unwrap_or(fallback % c);
        Roles {
            toolbar: pick("toolbar", 3),
            text: pick("text", 2),
            image: pick("image", 1),
            button: pick("button", 0),
        }
    }
}

/// Split `total` extra bins into `parts` random non-negative chunks.
fn split_extra<R: Rng>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    let weights: Vec<f64> = (0..parts).map(|_| rng.random_range(0.2..1.0)).collect();
    let sum: f64 = weights.iter().sum();
    let mut out: Vec<usize> = weights
        .iter()
        .map(|w| ((w / sum) * total as f64).floor() as usize)
        .collect();
    let used: usize = out.iter().sum();
    for i in 0..(total - used) {
        out[i % parts] += 1;
    }
    out
}

/// Vertical stack inside `[top, limit]` (inclusive); each element spans at
/// least two bins and consecutive elements are one bin apart.
fn stack<R: Rng>(n: usize, top: usize, limit: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let avail = limit + 1 - top;
    let need = 2 * n + (n - 1);
    debug_assert!(avail >= need);
    let spare = avail - need;
    let extra = split_extra(rng.random_range(spare / 2..=spare), n, rng);
    let mut y = top;
    extra
        .into_iter()
        .map(|e| {
            let span = (y, y + 1 + e);
            y = span.1 + 2;
            span
        })
        .collect()
}

/// Largest `n` a stack of height `avail` bins can hold.
fn stack_capacity(avail: usize) -> usize {
    (avail + 1) / 3
}

fn single_column<R: Rng>(k: usize, n_max: usize, roles: Roles, rng: &mut R) -> Vec<Element> {
    let margin = rng.random_range(1..=(k / 10).max(1));
    let top = rng.random_range(1..=(k / 16).max(1));
    let limit = k - 2;
    let n = rng.random_range(1..=n_max.min(stack_capacity(limit + 1 - top)));
    let (left, right) = (margin, k - 1 - margin);
    stack(n, top, limit, rng)
        .into_iter()
        .map(|(t, b)| {
            let type_id = match rng.random_range(0..10) {
                0..=5 => roles.text,
                6..=7 => roles.image,
                _ => roles.button,
            };
            // buttons hug the left edge; everything else spans the column
            let r = if type_id == roles.button && type_id != roles.text {
                left + (right - left) / 3
            } else {
                right
            };
            Element::new(type_id, left, t, r, b)
        })
        .collect()
}

fn double_column<R: Rng>(k: usize, n_max: usize, roles: Roles, rng: &mut R) -> Vec<Element> {
    let margin = rng.random_range(1..=(k / 10).max(1));
    let top = rng.random_range(1..=(k / 16).max(1));
    let limit = k - 2;
    let cap = stack_capacity(limit + 1 - top);
    let n = rng.random_range(2..=n_max.min(2 * cap).max(2));
    let n_left = rng.random_range(n.saturating_sub(cap).max(1)..=(n - 1).min(cap));
    let n_right = n - n_left;
    let mid = k / 2;
    let columns = [(margin, mid - 1, n_left, roles.image), (mid + 1, k - 1 - margin, n_right, roles.text)];
    let swap = rng.random_bool(0.5);
    let mut out = Vec::with_capacity(n);
    for (left, right, count, role) in columns {
        let role = match (swap, role == roles.image) {
            (true, true) => roles.text,
            (true, false) => roles.image,
            _ => role,
        };
        for (t, b) in stack(count, top, limit, rng) {
            out.push(Element::new(role, left, t, right, b));
        }
    }
    out
}

fn grid<R: Rng>(k: usize, n_max: usize, roles: Roles, rng: &mut R) -> Vec<Element> {
    let shapes: Vec<(usize, usize)> = [(1, 2), (2, 1), (2, 2), (2, 3), (3, 2), (3, 3), (1, 3), (4, 2)]
        .into_iter()
        .filter(|&(r, c)| r * c <= n_max && 3 * r < k && 3 * c < k)
        .collect();
    if shapes.is_empty() {
        return single_column(k, n_max, roles, rng);
    }
    let (rows, cols) = shapes[rng.random_range(0..shapes.len())];
    let margin = rng.random_range(1..=(k / 10).max(1));
    let top = rng.random_range(1..=(k / 8).max(1));
    let width = k - 2 * margin;
    let height = k - 1 - top;
    // cells of equal size, one empty bin between neighbours
    let cell_w = (width + 1) / cols - 1;
    let max_h = (height + 1) / rows - 1;
    let cell_h = rng.random_range(cell_w.min(max_h).max(2)..=max_h);
    let role = if rng.random_bool(0.6) { roles.image } else { roles.button };
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let l = margin + c * (cell_w + 1);
            let t = top + r * (cell_h + 1);
            out.push(Element::new(role, l, t, l + cell_w - 1, t + cell_h - 1));
        }
    }
    out
}

fn toolbar_list<R: Rng>(k: usize, n_max: usize, roles: Roles, rng: &mut R) -> Vec<Element> {
    let margin = rng.random_range(0..=(k / 16));
    let (left, right) = (margin, k - 1 - margin);
    let bar_bottom = rng.random_range(1..=(k / 10).max(1));
    let mut out = vec![Element::new(roles.toolbar, left, 0, right, bar_bottom)];
    let top = bar_bottom + 2;
    let limit = k - 2;
    let cap = stack_capacity(limit + 1 - top);
    let n_items = rng.random_range(0..=(n_max - 1).min(cap));
    if n_items > 0 {
        for (t, b) in stack(n_items, top, limit, rng) {
            out.push(Element::new(roles.text, left, t, right, b));
        }
    }
    out
}

pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    if spec.n_layouts < 20 {
        return Err(Error::Config("synthetic corpus needs at least 20 layouts".into()));
    }
    if spec.k < 16 || spec.n_max < 2 {
        return Err(Error::Config("synthetic corpus needs K >= 16 and N_max >= 2".into()));
    }
    let vocab = Vocabulary::new(spec.k, &spec.type_names)?;
    let roles = Roles::resolve(&vocab);
    let mut rng = seeded(seed);
    let layouts = (0..spec.n_layouts)
        .map(|_| {
            let elements = match Template::ALL[sample_categorical(&spec.style_mix, &mut rng)] {
                Template::SingleColumn => single_column(spec.k, spec.n_max, roles, &mut rng),
                Template::DoubleColumn => double_column(spec.k, spec.n_max, roles, &mut rng),
                Template::Grid => grid(spec.k, spec.n_max, roles, &mut rng),
                Template::ToolbarList => toolbar_list(spec.k, spec.n_max, roles, &mut rng),
            };
            Layout::new(elements, Canvas::default())
        })
        .collect();
    Corpus::from_layouts(layouts, spec.n_max, seed)
}
