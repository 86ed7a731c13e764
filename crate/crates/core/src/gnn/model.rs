use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis, LinalgScalar, Zip};
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Adjacency, GnnError, GraphSide, TwinSample};
use crate::nn::{glorot, TensorList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    /// Output width of each edge-type channel.
    pub channel: usize,
    pub conv_layers: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            input: 128,
            channel: 64,
            conv_layers: 3,
            hidden1: 128,
            hidden2: 64,
        }
    }
}

impl ModelDims {
    pub fn graph_width(&self) -> usize {
        3 * self.channel
    }
}

/// Convolution weights `conv[layer][channel]`, shared by both twin branches,
/// and the three-layer head. Biases are `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub dims: ModelDims,
    pub conv: Vec<[Array2<f64>; 3]>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub w3: Array2<f64>,
    pub b3: Array2<f64>,
}

impl TensorList for GnnParams {
    fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut v = Vec::new();
        for (h, layer) in self.conv.iter().enumerate() {
            for (k, w) in layer.iter().enumerate() {
                v.push((format!("conv{h}.w{k}"), w));
            }
        }
        v.extend([
            ("mlp.w1".to_string(), &self.w1),
            ("mlp.b1".into(), &self.b1),
            ("mlp.w2".into(), &self.w2),
            ("mlp.b2".into(), &self.b2),
            ("mlp.w3".into(), &self.w3),
            ("mlp.b3".into(), &self.b3),
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> =
            self.conv.iter_mut().flat_map(|l| l.iter_mut()).collect();
        v.extend([
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]);
        v
    }
}

impl GnnParams {
    fn build(dims: ModelDims, mut weight: impl FnMut(usize, usize) -> Array2<f64>) -> Self {
        let conv = (0..dims.conv_layers)
            .map(|h| {
                let fan_in = if h == 0 {
                    dims.input
                } else {
                    dims.graph_width()
                };
                [
                    weight(fan_in, dims.channel),
                    weight(fan_in, dims.channel),
                    weight(fan_in, dims.channel),
                ]
            })
            .collect();
        let joint = 2 * dims.graph_width();
        GnnParams {
            dims,
            conv,
            w1: weight(joint, dims.hidden1),
            b1: Array2::zeros((1, dims.hidden1)),
            w2: weight(dims.hidden1, dims.hidden2),
            b2: Array2::zeros((1, dims.hidden2)),
            w3: weight(dims.hidden2, 2),
            b3: Array2::zeros((1, 2)),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        GnnParams::build(dims, |r, c| glorot(r, c, rng))
    }

    pub fn zeros(dims: ModelDims) -> Self {
        GnnParams::build(dims, |r, c| Array2::zeros((r, c)))
    }
}

fn check_conv<F>(adj: &Adjacency, x: &Array2<F>, w: &[Array2<F>; 3]) -> Result<(), GnnError> {
    if adj.n == 0 {
        return Err(GnnError::EmptyGraph);
    }
    if x.nrows() != adj.n {
        return Err(GnnError::ShapeMismatch(format!(
            "{} rows for {} nodes",
            x.nrows(),
            adj.n
        )));
    }
    for (k, wk) in w.iter().enumerate() {
        if wk.nrows() != x.ncols() || wk.ncols() != w[0].ncols() {
            return Err(GnnError::ShapeMismatch(format!(
                "channel {k} weight {:?} for input width {}",
                wk.shape(),
                x.ncols()
            )));
        }
    }
    if adj
        .edges
        .iter()
        .flatten()
        .any(|&(s, d)| s >= adj.n || d >= adj.n)
    {
        return Err(GnnError::ShapeMismatch("edge endpoint out of range".into()));
    }
    Ok(())
}

/// `(A + I) · x`: row `i` is `x[i]` plus the rows of i's out-neighbors.
fn aggregate<F: Float>(edges: &[(usize, usize)], x: &Array2<F>) -> Array2<F> {
    let mut agg = x.clone();
    for &(s, d) in edges {
        let (mut dst, src) = (agg.row_mut(s), x.row(d));
        Zip::from(&mut dst).and(&src).for_each(|a, &b| *a = *a + b);
    }
    agg
}

/// One convolution: per edge type `k`, `relu((A_k + I) · x · W_k)`, the three
/// channels concatenated column-wise.
pub fn conv_forward<F: Float + LinalgScalar>(
    adj: &Adjacency,
    x: &Array2<F>,
    w: &[Array2<F>; 3],
) -> Result<Array2<F>, GnnError> {
    check_conv(adj, x, w)?;
    let parts: Vec<Array2<F>> = (0..3)
        .map(|k| {
            aggregate(&adj.edges[k], x)
                .dot(&w[k])
                .mapv(|v| v.max(F::zero()))
        })
        .collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(concatenate(Axis(1), &views).expect("equal row counts"))
}

/// Column-wise mean over nodes.
pub fn pool(x: &Array2<f64>) -> Result<Array1<f64>, GnnError> {
    x.mean_axis(Axis(0)).ok_or(GnnError::EmptyGraph)
}

pub enum Dropout<'a> {
    Off,
    /// One inverted-dropout mask per sample (entries `0` or `1/(1-p)`).
    Masks(&'a [Array1<f64>]),
}

pub fn sample_dropout_masks<R: Rng>(
    count: usize,
    width: usize,
    p: f64,
    rng: &mut R,
) -> Vec<Array1<f64>> {
    let keep = 1.0 / (1.0 - p);
    (0..count)
        .map(|_| Array1::from_shape_fn(width, |_| if rng.gen::<f64>() < p { 0.0 } else { keep }))
        .collect()
}

struct ConvCache {
    aggs: Vec<Array2<f64>>,
    zs: Vec<Array2<f64>>,
}

struct SideCache {
    layers: Vec<ConvCache>,
    n: usize,
}

pub(super) struct SampleCache {
    pre: SideCache,
    post: SideCache,
    mask: Option<Array1<f64>>,
    h0: Array1<f64>,
    a1: Array1<f64>,
    h1: Array1<f64>,
    a2: Array1<f64>,
    h2: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p0: f64,
    pub p1: f64,
}

impl Prediction {
    pub fn is_security(&self) -> bool {
        self.p1 >= 0.5
    }
}

fn side_forward(
    params: &GnnParams,
    side: &GraphSide,
) -> Result<(Array1<f64>, SideCache), GnnError> {
    let mut x = side.x.clone();
    let mut layers = Vec::with_capacity(params.conv.len());
    for w in &params.conv {
        check_conv(&side.adj, &x, w)?;
        let aggs: Vec<Array2<f64>> = (0..3).map(|k| aggregate(&side.adj.edges[k], &x)).collect();
        let zs: Vec<Array2<f64>> = (0..3).map(|k| aggs[k].dot(&w[k])).collect();
        let views: Vec<_> = zs.iter().map(|z| z.view()).collect();
        x = concatenate(Axis(1), &views)
            .expect("equal row counts")
            .mapv(|v| v.max(0.0));
        layers.push(ConvCache { aggs, zs });
    }
    Ok((
        pool(&x)?,
        SideCache {
            layers,
            n: side.adj.n,
        },
    ))
}

fn affine(x: ArrayView1<'_, f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array1<f64> {
    &x.dot(w) + &b.row(0)
}

fn softmax2(l: &Array1<f64>) -> (f64, f64) {
    let m = l[0].max(l[1]);
    let (e0, e1) = ((l[0] - m).exp(), (l[1] - m).exp());
    (e0 / (e0 + e1), e1 / (e0 + e1))
}

pub(super) fn forward_cached(
    params: &GnnParams,
    sample: &TwinSample,
    mask: Option<&Array1<f64>>,
) -> Result<(Prediction, SampleCache), GnnError> {
    let (g_pre, pre) = side_forward(params, &sample.pre)?;
    let (g_post, post) = side_forward(params, &sample.post)?;
    let mut h0 = concatenate(Axis(0), &[g_pre.view(), g_post.view()]).expect("1-d");
    if let Some(m) = mask {
        if m.len() != h0.len() {
            return Err(GnnError::ShapeMismatch(format!(
                "dropout mask of {} for width {}",
                m.len(),
                h0.len()
            )));
        }
        h0 = &h0 * m;
    }
    let a1 = affine(h0.view(), &params.w1, &params.b1);
    let h1 = a1.mapv(|v| v.max(0.0));
    let a2 = affine(h1.view(), &params.w2, &params.b2);
    let h2 = a2.mapv(|v| v.max(0.0));
    let logits = affine(h2.view(), &params.w3, &params.b3);
    let (p0, p1) = softmax2(&logits);
    Ok((
        Prediction { p0, p1 },
        SampleCache {
            pre,
            post,
            mask: mask.cloned(),
            h0,
            a1,
            h1,
            a2,
            h2,
        },
    ))
}

/// Class probabilities; `train_mode` draws a dropout mask from `rng`.
pub fn model_forward<R: Rng>(
    params: &GnnParams,
    sample: &TwinSample,
    train_mode: bool,
    p_drop: f64,
    rng: &mut R,
) -> Result<Prediction, GnnError> {
    let mask = train_mode
        .then(|| sample_dropout_masks(1, 2 * params.dims.graph_width(), p_drop, rng).remove(0));
    Ok(forward_cached(params, sample, mask.as_ref())?.0)
}

fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

fn relu_mask(d: &mut Array1<f64>, pre: &Array1<f64>) {
    Zip::from(d).and(pre).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

fn side_backward(
    params: &GnnParams,
    side: &GraphSide,
    cache: &SideCache,
    dpool: ArrayView1<'_, f64>,
    grads: &mut GnnParams,
) {
    let c = params.dims.channel;
    let mut dx = Array2::from_shape_fn((cache.n, dpool.len()), |(_, j)| dpool[j] / cache.n as f64);
    for (h, lc) in cache.layers.iter().enumerate().rev() {
        let in_width = lc.aggs[0].ncols();
        let mut dprev = Array2::zeros((cache.n, in_width));
        for k in 0..3 {
            let mut dz = dx.slice(s![.., k * c..(k + 1) * c]).to_owned();
            Zip::from(&mut dz).and(&lc.zs[k]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            grads.conv[h][k] += &lc.aggs[k].t().dot(&dz);
            if h == 0 {
                continue;
            }
            let dagg = dz.dot(&params.conv[h][k].t());
            dprev += &dagg;
            for &(s, d) in &side.adj.edges[k] {
                let mut r = dprev.row_mut(d);
                r += &dagg.row(s);
            }
        }
        dx = dprev;
    }
}

/// Adds `weight ×` the gradient of `-ln p_label` into `grads`.
pub(super) fn backward(
    params: &GnnParams,
    sample: &TwinSample,
    cache: &SampleCache,
    pred: Prediction,
    label: usize,
    weight: f64,
    grads: &mut GnnParams,
) {
    let mut dlogits = Array1::from(vec![pred.p0, pred.p1]);
    dlogits[label] -= 1.0;
    dlogits *= weight;
    grads.w3 += &outer(cache.h2.view(), dlogits.view());
    grads.b3 += &dlogits.view().insert_axis(Axis(0));
    let mut da2 = params.w3.dot(&dlogits);
    relu_mask(&mut da2, &cache.a2);
    grads.w2 += &outer(cache.h1.view(), da2.view());
    grads.b2 += &da2.view().insert_axis(Axis(0));
    let mut da1 = params.w2.dot(&da2);
    relu_mask(&mut da1, &cache.a1);
    grads.w1 += &outer(cache.h0.view(), da1.view());
    grads.b1 += &da1.view().insert_axis(Axis(0));
    let mut dh0 = params.w1.dot(&da1);
    if let Some(m) = &cache.mask {
        dh0 = &dh0 * m;
    }
    let g = params.dims.graph_width();
    side_backward(params, &sample.pre, &cache.pre, dh0.slice(s![..g]), grads);
    side_backward(params, &sample.post, &cache.post, dh0.slice(s![g..]), grads);
}
