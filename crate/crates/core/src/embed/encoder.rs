//! Post-LN transformer encoder in f64 with an explicit backward pass.
//!
//! Padding is never fed to the network: trailing `[PAD]` ids are stripped
//! before the forward pass, which is what an attention mask over a padded
//! suffix computes for the remaining positions.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbedError, PretrainBatch, PretrainTask, Sequence, Targets, PAD};
use crate::nn::TensorList;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub mask_prob: f64,
    pub cwp_window: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 2,
            heads: 4,
            embed_dim: 128,
            vocab_size,
            max_seq: 64,
            mask_prob: 0.15,
            cwp_window: 2,
        }
    }

    /// 12 layers of 8 heads.
    pub fn paper_scale(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 12,
            heads: 8,
            max_seq: 512,
            ..EncoderConfig::new(vocab_size)
        }
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.into()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad("embed_dim must be divisible by heads");
        }
        if self.vocab_size < super::SPECIALS.len() {
            return bad("vocab_size smaller than the special tokens");
        }
        if self.max_seq < 2 {
            return bad("max_seq must be >= 2");
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return bad("mask_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
}

/// All encoder tensors plus the three pretraining heads. Vectors are `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub tok: Array2<f64>,
    pub seg: Array2<f64>,
    pub pos: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub mlm_w: Array2<f64>,
    pub mlm_b: Array2<f64>,
    pub cwp_w: Array2<f64>,
    pub cwp_b: Array2<f64>,
    pub dup_w: Array2<f64>,
    pub dup_b: Array2<f64>,
}

impl TensorList for EncoderParams {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut v = vec![
            ("tok".to_string(), &self.tok),
            ("seg".into(), &self.seg),
            ("pos".into(), &self.pos),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let named = [
                ("wq", &l.wq),
                ("bq", &l.bq),
                ("wk", &l.wk),
                ("bk", &l.bk),
                ("wv", &l.wv),
                ("bv", &l.bv),
                ("wo", &l.wo),
                ("bo", &l.bo),
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
            ];
            v.extend(named.into_iter().map(|(n, t)| (format!("layer{i}.{n}"), t)));
        }
        v.extend([
            ("mlm_w".to_string(), &self.mlm_w),
            ("mlm_b".into(), &self.mlm_b),
            ("cwp_w".into(), &self.cwp_w),
            ("cwp_b".into(), &self.cwp_b),
            ("dup_w".into(), &self.dup_w),
            ("dup_b".into(), &self.dup_b),
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.tok, &mut self.seg, &mut self.pos];
        for l in &mut self.layers {
            v.extend([
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
                &mut l.ln2_g,
                &mut l.ln2_b,
            ]);
        }
        v.extend([
            &mut self.mlm_w,
            &mut self.mlm_b,
            &mut self.cwp_w,
            &mut self.cwp_b,
            &mut self.dup_w,
            &mut self.dup_b,
        ]);
        v
    }
}

impl EncoderParams {
    /// Weights uniform with standard deviation 0.02, biases zero, layer-norm
    /// gains one.
    pub fn init<R: Rng>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let a = INIT_STD * 3f64.sqrt();
        let mut w = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-a..a));
        let (d, f, v, m) = (cfg.embed_dim, cfg.ffn_dim(), cfg.vocab_size, cfg.max_seq);
        let zeros = |n: usize| Array2::zeros((1, n));
        let ones = |n: usize| Array2::ones((1, n));
        let (tok, seg, pos) = (w(v, d), w(m, d), w(m, d));
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                wq: w(d, d),
                bq: zeros(d),
                wk: w(d, d),
                bk: zeros(d),
                wv: w(d, d),
                bv: zeros(d),
                wo: w(d, d),
                bo: zeros(d),
                ln1_g: ones(d),
                ln1_b: zeros(d),
                w1: w(d, f),
                b1: zeros(f),
                w2: w(f, d),
                b2: zeros(d),
                ln2_g: ones(d),
                ln2_b: zeros(d),
            })
            .collect();
        EncoderParams {
            tok,
            seg,
            pos,
            layers,
            mlm_w: w(d, v),
            mlm_b: zeros(v),
            cwp_w: w(d, 2),
            cwp_b: zeros(2),
            dup_w: w(d, 2),
            dup_b: zeros(2),
        }
    }
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    xhat1: Array2<f64>,
    inv1: Array1<f64>,
    y1: Array2<f64>,
    u: Array2<f64>,
    gelu: Array2<f64>,
    xhat2: Array2<f64>,
    inv2: Array1<f64>,
}

/// Activations kept from the forward pass.
pub struct ForwardCache {
    seq: Sequence,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

fn row(v: &Array2<f64>) -> ndarray::ArrayView1<'_, f64> {
    v.row(0)
}

fn layer_norm(
    x: &Array2<f64>,
    g: &Array2<f64>,
    b: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.insert_axis(Axis(1));
    let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
    let inv = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &inv.view().insert_axis(Axis(1));
    let y = &(&xhat * &row(g)) + &row(b);
    (y, xhat, inv)
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    inv: &Array1<f64>,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    *dg += &(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * &row(g);
    let s1 = dxhat.sum_axis(Axis(1)).insert_axis(Axis(1));
    let s2 = (&dxhat * xhat).sum_axis(Axis(1)).insert_axis(Axis(1));
    let inner = &(&(&dxhat * d) - &s1) - &(xhat * &s2);
    &inner * &(inv / d).insert_axis(Axis(1))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut r in s.rows_mut() {
        let m = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|x| (x - m).exp());
        let z = r.sum();
        r /= z;
    }
}

fn softmax(v: ndarray::ArrayView1<'_, f64>) -> Array1<f64> {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = v.mapv(|x| (x - m).exp());
    let z = e.sum();
    e / z
}

fn add_bias(x: Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x + row(b)
}

fn accumulate_bias(db: &mut Array2<f64>, d: &Array2<f64>) {
    *db += &d.sum_axis(Axis(0)).insert_axis(Axis(0));
}

/// Drops the trailing `[PAD]` run.
pub(super) fn strip_padding(seq: &Sequence) -> Sequence {
    let n = seq
        .token_ids
        .iter()
        .rposition(|&t| t != PAD)
        .map_or(0, |i| i + 1);
    Sequence {
        token_ids: seq.token_ids[..n].to_vec(),
        segment_ids: seq.segment_ids[..n].to_vec(),
        position_ids: seq.position_ids[..n].to_vec(),
    }
}

impl Encoder {
    pub fn new<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self, EmbedError> {
        config.validate()?;
        Ok(Encoder {
            config,
            params: EncoderParams::init(&config, rng),
        })
    }

    fn clamp_seq(&self, seq: &Sequence) -> Sequence {
        let mut s = strip_padding(seq);
        s.token_ids.truncate(self.config.max_seq);
        s.segment_ids.truncate(self.config.max_seq);
        s.position_ids.truncate(self.config.max_seq);
        s
    }

    /// Final-layer hidden states, one row per non-pad position.
    pub fn forward(&self, seq: &Sequence) -> (Array2<f64>, ForwardCache) {
        let p = &self.params;
        let cfg = &self.config;
        let seq = self.clamp_seq(seq);
        let (n, d) = (seq.len(), cfg.embed_dim);
        let mut x = Array2::zeros((n, d));
        for i in 0..n {
            let mut r = x.row_mut(i);
            r += &p.tok.row(seq.token_ids[i].min(cfg.vocab_size - 1));
            r += &p.seg.row(seq.segment_ids[i].min(cfg.max_seq - 1));
            r += &p.pos.row(seq.position_ids[i].min(cfg.max_seq - 1));
        }
        let dh = d / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut caches = Vec::with_capacity(p.layers.len());
        for l in &p.layers {
            let q = add_bias(x.dot(&l.wq), &l.bq);
            let k = add_bias(x.dot(&l.wk), &l.bk);
            let v = add_bias(x.dot(&l.wv), &l.bv);
            let mut attn = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
                softmax_rows(&mut sc);
                attn.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
                probs.push(sc);
            }
            let r1 = &x + &add_bias(attn.dot(&l.wo), &l.bo);
            let (y1, xhat1, inv1) = layer_norm(&r1, &l.ln1_g, &l.ln1_b);
            let u = add_bias(y1.dot(&l.w1), &l.b1);
            let gl = u.mapv(gelu);
            let r2 = &y1 + &add_bias(gl.dot(&l.w2), &l.b2);
            let (y2, xhat2, inv2) = layer_norm(&r2, &l.ln2_g, &l.ln2_b);
            caches.push(LayerCache {
                x,
                q,
                k,
                v,
                probs,
                attn,
                xhat1,
                inv1,
                y1,
                u,
                gelu: gl,
                xhat2,
                inv2,
            });
            x = y2;
        }
        (
            x,
            ForwardCache {
                seq,
                layers: caches,
            },
        )
    }

    /// Mean of the final hidden states over non-pad positions.
    pub fn encode(&self, seq: &Sequence) -> Array1<f64> {
        let (h, _) = self.forward(seq);
        h.mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(self.config.embed_dim))
    }

    /// Accumulates parameter gradients for `dh` (gradient of the final
    /// hidden states) into `grads`.
    pub fn backward(&self, cache: &ForwardCache, dh: Array2<f64>, grads: &mut EncoderParams) {
        let cfg = &self.config;
        let d = cfg.embed_dim;
        let dh_ = d / cfg.heads;
        let scale = 1.0 / (dh_ as f64).sqrt();
        let mut dy = dh;
        for (li, (l, c)) in self
            .params
            .layers
            .iter()
            .zip(&cache.layers)
            .enumerate()
            .rev()
        {
            let g = &mut grads.layers[li];
            let dr2 =
                layer_norm_backward(&dy, &c.xhat2, &c.inv2, &l.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
            // feed-forward
            g.w2 += &c.gelu.t().dot(&dr2);
            accumulate_bias(&mut g.b2, &dr2);
            let du = &dr2.dot(&l.w2.t()) * &c.u.mapv(gelu_grad);
            g.w1 += &c.y1.t().dot(&du);
            accumulate_bias(&mut g.b1, &du);
            let dy1 = &dr2 + &du.dot(&l.w1.t());
            let dr1 = layer_norm_backward(
                &dy1,
                &c.xhat1,
                &c.inv1,
                &l.ln1_g,
                &mut g.ln1_g,
                &mut g.ln1_b,
            );
            // attention
            g.wo += &c.attn.t().dot(&dr1);
            accumulate_bias(&mut g.bo, &dr1);
            let dattn = dr1.dot(&l.wo.t());
            let n = dattn.nrows();
            let (mut dq, mut dk, mut dv) = (
                Array2::zeros((n, d)),
                Array2::zeros((n, d)),
                Array2::zeros((n, d)),
            );
            for (h, p) in c.probs.iter().enumerate() {
                let cols = s![.., h * dh_..(h + 1) * dh_];
                let do_h = dattn.slice(cols);
                dv.slice_mut(cols).assign(&p.t().dot(&do_h));
                let dp = do_h.dot(&c.v.slice(cols).t());
                let rowdot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = &(p * &(&dp - &rowdot)) * scale;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            let xt: ArrayView2<'_, f64> = c.x.t();
            g.wq += &xt.dot(&dq);
            g.wk += &xt.dot(&dk);
            g.wv += &xt.dot(&dv);
            accumulate_bias(&mut g.bq, &dq);
            accumulate_bias(&mut g.bk, &dk);
            accumulate_bias(&mut g.bv, &dv);
            dy = &(&(&dr1 + &dq.dot(&l.wq.t())) + &dk.dot(&l.wk.t())) + &dv.dot(&l.wv.t());
        }
        let s = &cache.seq;
        for i in 0..s.len() {
            let r = dy.row(i);
            let mut t = grads.tok.row_mut(s.token_ids[i].min(cfg.vocab_size - 1));
            t += &r;
            let mut t = grads.seg.row_mut(s.segment_ids[i].min(cfg.max_seq - 1));
            t += &r;
            let mut t = grads.pos.row_mut(s.position_ids[i].min(cfg.max_seq - 1));
            t += &r;
        }
    }

    fn head(&self, task: PretrainTask) -> (&Array2<f64>, &Array2<f64>) {
        match task {
            PretrainTask::Mlm => (&self.params.mlm_w, &self.params.mlm_b),
            PretrainTask::Cwp => (&self.params.cwp_w, &self.params.cwp_b),
            PretrainTask::Dup => (&self.params.dup_w, &self.params.dup_b),
        }
    }

    /// `(position, target class)` rows scored by the task head.
    fn scored_rows(&self, batch: &PretrainBatch, len: usize) -> Vec<(usize, usize)> {
        match &batch.targets {
            Targets::Masked(t) => t.iter().copied().filter(|&(p, _)| p < len).collect(),
            Targets::Binary(b) => vec![(0, usize::from(*b))],
        }
    }

    /// Mean cross-entropy over the scored positions, with predictions.
    pub fn loss(&self, batch: &PretrainBatch) -> (f64, Vec<usize>) {
        let (h, _) = self.forward(&batch.sequence);
        let (w, b) = self.head(batch.task);
        let rows = self.scored_rows(batch, h.nrows());
        let mut loss = 0.0;
        let mut preds = Vec::with_capacity(rows.len());
        for &(p, t) in &rows {
            let logits = &h.row(p).dot(w) + &row(b);
            let pr = softmax(logits.view());
            loss -= pr[t].ln();
            preds.push(
                pr.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |a, (i, &x)| if x > a.1 { (i, x) } else { a },
                    )
                    .0,
            );
        }
        (loss / rows.len().max(1) as f64, preds)
    }

    pub fn loss_and_grads(&self, batch: &PretrainBatch) -> (f64, EncoderParams) {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate(batch, 1.0, &mut grads);
        (loss, grads)
    }

    /// Adds `weight ×` the gradient of the batch loss into `grads` and
    /// returns the loss.
    pub fn accumulate(&self, batch: &PretrainBatch, weight: f64, grads: &mut EncoderParams) -> f64 {
        let (h, cache) = self.forward(&batch.sequence);
        let (w, b) = self.head(batch.task);
        let rows = self.scored_rows(batch, h.nrows());
        let scale = weight / rows.len().max(1) as f64;
        let mut dh = Array2::zeros(h.raw_dim());
        let mut dw = Array2::zeros(w.raw_dim());
        let mut db = Array2::zeros(b.raw_dim());
        let mut loss = 0.0;
        for &(p, t) in &rows {
            let hp = h.row(p);
            let mut dl = softmax((&hp.dot(w) + &row(b)).view());
            loss -= dl[t].ln();
            dl[t] -= 1.0;
            dl *= scale;
            let dl2 = dl.view().insert_axis(Axis(0));
            dw += &hp.insert_axis(Axis(1)).dot(&dl2);
            db += &dl2;
            let mut r = dh.row_mut(p);
            r += &w.dot(&dl);
        }
        let (gw, gb) = match batch.task {
            PretrainTask::Mlm => (&mut grads.mlm_w, &mut grads.mlm_b),
            PretrainTask::Cwp => (&mut grads.cwp_w, &mut grads.cwp_b),
            PretrainTask::Dup => (&mut grads.dup_w, &mut grads.dup_b),
        };
        *gw += &dw;
        *gb += &db;
        self.backward(&cache, dh, grads);
        loss / rows.len().max(1) as f64
    }
}
