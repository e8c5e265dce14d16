use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayViewMut1, Axis};
use rand::Rng;

use super::config::DenoiserConfig;
use super::params::{ParamLayout, Tensor};
use crate::corpus::{slot_kind, TokenKind, TokenSeq};
use crate::error::{Error, Result};
use crate::rng::DiffRng;
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

/// Which parameter copy to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    Live,
    Ema,
}

/// Head outputs for a batch. `coord` has one row per (sequence, coordinate
/// slot) with `K` columns; `types` one row per (sequence, type slot) with one
/// column per real type. MASK has no logit, so it never receives mass.
#[derive(Debug, Clone)]
pub struct Logits<F> {
    pub coord: Array2<F>,
    pub types: Array2<F>,
}

struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Vec<F>,
}

struct LayerCache<F> {
    ln1: LnCache<F>,
    h1: Array2<F>,
    qkv: Array2<F>,
    probs: Vec<Array2<F>>,
    attn: Array2<F>,
    drop1: Option<Array2<F>>,
    ln2: LnCache<F>,
    h2: Array2<F>,
    u: Array2<F>,
    /// `tanh` inside the GELU, reused by its derivative.
    th: Array2<F>,
    gact: Array2<F>,
    drop2: Option<Array2<F>>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<F> {
    batch: usize,
    tokens: Vec<usize>,
    steps: Vec<usize>,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    hf: Array2<F>,
}

/// Transformer denoiser predicting `p(x_0 | x_t)` for every slot.
#[derive(Debug, Clone)]
pub struct Denoiser<F: Scalar> {
    config: DenoiserConfig,
    layout: ParamLayout,
    params: Vec<F>,
    ema: Vec<F>,
    step: u64,
    coord_slots: Vec<usize>,
    type_slots: Vec<usize>,
}

impl<F: Scalar> Denoiser<F> {
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = layout.init(rng);
        Self::from_parts(config, params.clone(), params, 0)
    }

    pub fn from_parts(config: DenoiserConfig, params: Vec<F>, ema: Vec<F>, step: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.len() || ema.len() != layout.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {} (ema {})",
                layout.len(),
                params.len(),
                ema.len()
            )));
        }
        let m = config.seq_len();
        let slots_of = |kind| (0..m).filter(|&i| slot_kind(i, config.n_max) == kind).collect();
        Ok(Denoiser {
            coord_slots: slots_of(TokenKind::Coord),
            type_slots: slots_of(TokenKind::Type),
            config,
            layout,
            params,
            ema,
            step,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn ema(&self) -> &[F] {
        &self.ema
    }

    pub fn ema_mut(&mut self) -> &mut [F] {
        &mut self.ema
    }

    pub fn weights(&self, which: Weights) -> &[F] {
        match which {
            Weights::Live => &self.params,
            Weights::Ema => &self.ema,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// `ema <- rate * ema + (1 - rate) * params`.
    pub fn update_ema(&mut self, rate: f64) {
        let r = F::lit(rate);
        let one_minus = F::one() - r;
        for (e, &p) in self.ema.iter_mut().zip(&self.params) {
            *e = r * *e + one_minus * p;
        }
    }

    /// Copy the live parameters into the shadow.
    pub fn sync_ema(&mut self) {
        self.ema.copy_from_slice(&self.params);
    }

    /// Zero both output projections (weights and biases) in both copies.
    pub fn zero_heads(&mut self) {
        let l = &self.layout;
        for t in [l.head_coord_w, l.head_coord_b, l.head_type_w, l.head_type_b] {
            self.params[t.offset..t.offset + t.rows * t.cols].fill(F::zero());
            self.ema[t.offset..t.offset + t.rows * t.cols].fill(F::zero());
        }
    }

    /// Slot indices holding coordinate tokens, in logit-row order.
    pub fn coord_slots(&self) -> &[usize] {
        &self.coord_slots
    }

    /// Slot indices holding type tokens, in logit-row order.
    pub fn type_slots(&self) -> &[usize] {
        &self.type_slots
    }

    fn check_inputs(&self, seqs: &[TokenSeq], steps: &[usize]) {
        assert_eq!(seqs.len(), steps.len(), "one timestep per sequence");
        let m = self.config.seq_len();
        for (s, &t) in seqs.iter().zip(steps) {
            assert_eq!(s.len(), m, "sequence length");
            assert!(t <= self.config.total_steps, "timestep {t} beyond T");
        }
    }

    /// Inference forward pass, no dropout.
    pub fn logits(&self, which: Weights, seqs: &[TokenSeq], steps: &[usize]) -> Logits<F> {
        self.forward(self.weights(which), seqs, steps, None).0
    }

    /// Forward pass over a batch with explicit parameters. Dropout is active
    /// only when `dropout_rng` is given.
    pub fn forward(
        &self,
        p: &[F],
        seqs: &[TokenSeq],
        steps: &[usize],
        mut dropout_rng: Option<&mut DiffRng>,
    ) -> (Logits<F>, ForwardCache<F>) {
        self.check_inputs(seqs, steps);
        let cfg = &self.config;
        let (m, d) = (cfg.seq_len(), cfg.model_dim);
        let batch = seqs.len();
        let l = &self.layout;

        let tokens: Vec<usize> = seqs.iter().flat_map(|s| s.tokens().iter().copied()).collect();
        let mut x = Array2::<F>::zeros((batch * m, d));
        {
            let (tok, pos, time) = (l.tok_emb.mat(p), l.pos_emb.mat(p), l.time_emb.mat(p));
            for (row, mut xr) in x.axis_iter_mut(Axis(0)).enumerate() {
                let (b, i) = (row / m, row % m);
                xr.assign(&tok.row(tokens[row]));
                xr += &pos.row(i);
                xr += &time.row(steps[b]);
            }
        }

        let dropout = F::lit(cfg.dropout);
        let mut layers = Vec::with_capacity(cfg.layers);
        for lt in &l.layers {
            let (h1, ln1) = layer_norm(&x, lt.ln1_g.vec(p), lt.ln1_b.vec(p));
            let qkv = affine(&h1, lt.w_qkv, lt.b_qkv, p);
            let (attn, probs) = self.attention(&qkv, batch);
            let mut a = affine(&attn, lt.w_o, lt.b_o, p);
            let drop1 = apply_dropout(&mut a, dropout, dropout_rng.as_deref_mut());
            x += &a;

            let (h2, ln2) = layer_norm(&x, lt.ln2_g.vec(p), lt.ln2_b.vec(p));
            let u = affine(&h2, lt.w_ff1, lt.b_ff1, p);
            let th = u.mapv(gelu_tanh);
            let mut gact = u.clone();
            gact.zip_mut_with(&th, |g, &t| *g = F::lit(0.5) * *g * (F::one() + t));
            let mut f = affine(&gact, lt.w_ff2, lt.b_ff2, p);
            let drop2 = apply_dropout(&mut f, dropout, dropout_rng.as_deref_mut());
            x += &f;

            layers.push(LayerCache {
                ln1,
                h1,
                qkv,
                probs,
                attn,
                drop1,
                ln2,
                h2,
                u,
                th,
                gact,
                drop2,
            });
        }
        let (hf, lnf) = layer_norm(&x, l.lnf_g.vec(p), l.lnf_b.vec(p));
        let coord_rows = rows_for(&self.coord_slots, batch, m);
        let type_rows = rows_for(&self.type_slots, batch, m);
        let logits = Logits {
            coord: affine(&hf.select(Axis(0), &coord_rows), l.head_coord_w, l.head_coord_b, p),
            types: affine(&hf.select(Axis(0), &type_rows), l.head_type_w, l.head_type_b, p),
        };
        let cache = ForwardCache {
            batch,
            tokens,
            steps: steps.to_vec(),
            layers,
            lnf,
            hf,
        };
        (logits, cache)
    }

    fn attention(&self, qkv: &Array2<F>, batch: usize) -> (Array2<F>, Vec<Array2<F>>) {
        let cfg = &self.config;
        let (m, d, heads, dh) = (cfg.seq_len(), cfg.model_dim, cfg.heads, cfg.head_dim());
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let mut out = Array2::<F>::zeros((batch * m, d));
        let mut probs = Vec::with_capacity(batch * heads);
        for b in 0..batch {
            let rows = b * m..(b + 1) * m;
            for h in 0..heads {
                let c = h * dh;
                let q = qkv.slice(s![rows.clone(), c..c + dh]);
                let k = qkv.slice(s![rows.clone(), d + c..d + c + dh]);
                let v = qkv.slice(s![rows.clone(), 2 * d + c..2 * d + c + dh]);
                let mut sc = q.dot(&k.t());
                sc.mapv_inplace(|z| z * scale);
                softmax_rows(&mut sc);
                out.slice_mut(s![rows.clone(), c..c + dh]).assign(&sc.dot(&v));
                probs.push(sc);
            }
        }
        (out, probs)
    }

    fn attention_backward(&self, dattn: &Array2<F>, cache: &LayerCache<F>, batch: usize) -> Array2<F> {
        let cfg = &self.config;
        let (m, d, heads, dh) = (cfg.seq_len(), cfg.model_dim, cfg.heads, cfg.head_dim());
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let qkv = &cache.qkv;
        let mut dqkv = Array2::<F>::zeros((batch * m, 3 * d));
        for b in 0..batch {
            let rows = b * m..(b + 1) * m;
            for h in 0..heads {
                let c = h * dh;
                let pm = &cache.probs[b * heads + h];
                let q = qkv.slice(s![rows.clone(), c..c + dh]);
                let k = qkv.slice(s![rows.clone(), d + c..d + c + dh]);
                let v = qkv.slice(s![rows.clone(), 2 * d + c..2 * d + c + dh]);
                let dout = dattn.slice(s![rows.clone(), c..c + dh]);
                dqkv.slice_mut(s![rows.clone(), 2 * d + c..2 * d + c + dh])
                    .assign(&pm.t().dot(&dout));
                let mut ds = dout.dot(&v.t());
                for (mut dr, pr) in ds.axis_iter_mut(Axis(0)).zip(pm.axis_iter(Axis(0))) {
                    let dot: F = dr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum();
                    dr.zip_mut_with(&pr, |g, &pv| *g = pv * (*g - dot) * scale);
                }
                dqkv.slice_mut(s![rows.clone(), c..c + dh]).assign(&ds.dot(&k));
                dqkv.slice_mut(s![rows.clone(), d + c..d + c + dh])
                    .assign(&ds.t().dot(&q));
            }
        }
        dqkv
    }

    /// Gradient of a scalar objective given its gradient with respect to the
    /// logits. Returns a vector laid out like the parameters.
    pub fn backward(&self, p: &[F], cache: &ForwardCache<F>, dlogits: &Logits<F>) -> Vec<F> {
        let cfg = &self.config;
        let (m, d) = (cfg.seq_len(), cfg.model_dim);
        let batch = cache.batch;
        let l = &self.layout;
        let mut g = vec![F::zero(); p.len()];

        let mut dhf = Array2::<F>::zeros((batch * m, d));
        for (slots, dl, w, bias) in [
            (&self.coord_slots, &dlogits.coord, l.head_coord_w, l.head_coord_b),
            (&self.type_slots, &dlogits.types, l.head_type_w, l.head_type_b),
        ] {
            let rows = rows_for(slots, batch, m);
            let hsel = cache.hf.select(Axis(0), &rows);
            general_mat_mul(F::one(), &hsel.t(), dl, F::one(), &mut w.mat_mut(&mut g));
            bias.vec_mut(&mut g).zip_mut_with(&dl.sum_axis(Axis(0)), |a, &b| *a += b);
            let dh = dl.dot(&w.mat(p).t());
            for (r, dr) in rows.iter().zip(dh.axis_iter(Axis(0))) {
                let mut target = dhf.row_mut(*r);
                target += &dr;
            }
        }
        let mut dx = layer_norm_backward(&dhf, &cache.lnf, l.lnf_g, l.lnf_b, p, &mut g);

        for (lt, lc) in l.layers.iter().zip(&cache.layers).rev() {
            let mut df = dx.clone();
            if let Some(mask) = &lc.drop2 {
                df *= mask;
            }
            let dgact = affine_backward(&lc.gact, &df, lt.w_ff2, lt.b_ff2, p, &mut g);
            let mut du = dgact;
            ndarray::Zip::from(&mut du)
                .and(&lc.u)
                .and(&lc.th)
                .for_each(|gv, &uv, &tv| *gv *= gelu_grad_with(uv, tv));
            let dh2 = affine_backward(&lc.h2, &du, lt.w_ff1, lt.b_ff1, p, &mut g);
            dx += &layer_norm_backward(&dh2, &lc.ln2, lt.ln2_g, lt.ln2_b, p, &mut g);

            let mut da = dx.clone();
            if let Some(mask) = &lc.drop1 {
                da *= mask;
            }
            let dattn = affine_backward(&lc.attn, &da, lt.w_o, lt.b_o, p, &mut g);
            let dqkv = self.attention_backward(&dattn, lc, batch);
            let dh1 = affine_backward(&lc.h1, &dqkv, lt.w_qkv, lt.b_qkv, p, &mut g);
            dx += &layer_norm_backward(&dh1, &lc.ln1, lt.ln1_g, lt.ln1_b, p, &mut g);
        }

        for (row, dr) in dx.axis_iter(Axis(0)).enumerate() {
            let (b, i) = (row / m, row % m);
            add_row(&mut g, l.tok_emb, cache.tokens[row], dr);
            add_row(&mut g, l.pos_emb, i, dr);
            add_row(&mut g, l.time_emb, cache.steps[b], dr);
        }
        g
    }
}

fn rows_for(slots: &[usize], batch: usize, m: usize) -> Vec<usize> {
    (0..batch)
        .flat_map(|b| slots.iter().map(move |&s| b * m + s))
        .collect()
}

fn add_row<F: Scalar>(g: &mut [F], t: Tensor, row: usize, dr: ArrayView1<F>) {
    let start = t.offset + row * t.cols;
    for (a, &b) in g[start..start + t.cols].iter_mut().zip(dr.iter()) {
        *a += b;
    }
}

fn affine<F: Scalar>(x: &Array2<F>, w: Tensor, b: Tensor, p: &[F]) -> Array2<F> {
    let mut y = x.dot(&w.mat(p));
    y += &b.vec(p);
    y
}

/// Accumulates weight and bias gradients; returns the input gradient.
fn affine_backward<F: Scalar>(
    x: &Array2<F>,
    dy: &Array2<F>,
    w: Tensor,
    b: Tensor,
    p: &[F],
    g: &mut [F],
) -> Array2<F> {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), &mut w.mat_mut(g));
    let mut gb: ArrayViewMut1<F> = b.vec_mut(g);
    gb += &dy.sum_axis(Axis(0));
    dy.dot(&w.mat(p).t())
}

fn layer_norm<F: Scalar>(x: &Array2<F>, gain: ArrayView1<F>, bias: ArrayView1<F>) -> (Array2<F>, LnCache<F>) {
    let d = F::lit(x.ncols() as f64);
    let eps = F::lit(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.axis_iter_mut(Axis(0)) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<F>() / d;
        let r = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * r);
        rstd.push(r);
    }
    let mut y = &xhat * &gain;
    y += &bias;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    gain: Tensor,
    bias: Tensor,
    p: &[F],
    g: &mut [F],
) -> Array2<F> {
    let prod = dy * &cache.xhat;
    {
        let mut gg = gain.vec_mut(g);
        gg += &prod.sum_axis(Axis(0));
    }
    {
        let mut gb = bias.vec_mut(g);
        gb += &dy.sum_axis(Axis(0));
    }
    let gamma = gain.vec(p);
    let d = F::lit(dy.ncols() as f64);
    let mut dx = dy * &gamma;
    for ((mut row, xh), &r) in dx.axis_iter_mut(Axis(0)).zip(cache.xhat.axis_iter(Axis(0))).zip(&cache.rstd) {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<F>() / d;
        row.zip_mut_with(&xh, |v, &x| *v = r * (*v - mean_g - x * mean_gx));
    }
    dx
}

fn softmax_rows<F: Scalar>(m: &mut Array2<F>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn apply_dropout<F: Scalar>(a: &mut Array2<F>, rate: F, rng: Option<&mut DiffRng>) -> Option<Array2<F>> {
    let rng = rng?;
    if rate <= F::zero() {
        return None;
    }
    let keep = F::one() - rate;
    let scale = F::one() / keep;
    let keep_p = keep.as_f64();
    let mask = Array2::from_shape_simple_fn(a.raw_dim(), || {
        if rng.random::<f64>() < keep_p {
            scale
        } else {
            F::zero()
        }
    });
    *a *= &mask;
    Some(mask)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `tanh(c (u + a u^3))`, written through `exp` which is cheaper than
/// `tanh` in libm.
fn gelu_tanh<F: Scalar>(u: F) -> F {
    let z = F::lit(GELU_C) * (u + F::lit(GELU_A) * u * u * u);
    let two = F::lit(2.0);
    if z > F::lit(15.0) {
        return F::one();
    }
    if z < F::lit(-15.0) {
        return -F::one();
    }
    F::one() - two / ((two * z).exp() + F::one())
}

/// Tanh approximation of GELU.
#[cfg(test)]
fn gelu<F: Scalar>(u: F) -> F {
    F::lit(0.5) * u * (F::one() + gelu_tanh(u))
}

fn gelu_grad_with<F: Scalar>(u: F, th: F) -> F {
    let half = F::lit(0.5);
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    half * (F::one() + th) + half * u * (F::one() - th * th) * c * (F::one() + F::lit(3.0) * a * u * u)
}

/// Numerically stable softmax of one row, in double precision.
pub fn softmax_f64<F: Scalar>(row: ArrayView1<F>) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}
