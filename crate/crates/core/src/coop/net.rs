use glam::DVec2;
use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD, Axis};
use serde::{Deserialize, Serialize};

use crate::nn::{init_bias, init_uniform, softmax_rows, softmax_rows_backward, Parameters};
use crate::rng::{stream, Stream};

/// Displacements are divided by one step at 1 m/s (dt = 0.25 s) so that
/// embedding inputs are O(1).
pub const DISPLACEMENT_SCALE: f64 = 4.0;
/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoopDims {
    pub history_len: usize,
    pub d: usize,
    pub d_ff: usize,
    pub n_layers: usize,
}

impl Default for CoopDims {
    fn default() -> Self {
        Self {
            history_len: crate::sensing::HISTORY_LEN,
            d: 32,
            d_ff: 64,
            n_layers: 2,
        }
    }
}

impl CoopDims {
    /// Header dims of the parameter file: `[L, d, d_k, d_ff, n_layers]`.
    pub fn to_header(self) -> Vec<u64> {
        [self.history_len, self.d, self.d, self.d_ff, self.n_layers]
            .map(|v| v as u64)
            .to_vec()
    }

    pub fn from_header(h: &[u64]) -> Option<Self> {
        let &[l, d, dk, dff, n] = h else { return None };
        (l >= 1 && d >= 1 && dk == d && dff >= 1 && n >= 1 && l <= 1024 && d <= 4096 && dff <= 4096 && n <= 64).then_some(Self {
            history_len: l as usize,
            d: d as usize,
            d_ff: dff as usize,
            n_layers: n as usize,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Weights of the cooperation classifier. Row-vector convention: a layer
/// maps `x` to `x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoopNetParams {
    pub dims: CoopDims,
    pub w_embed: Array2<f64>,
    pub b_embed: Array1<f64>,
    pub layers: Vec<LayerParams>,
    pub wc1: Array2<f64>,
    pub bc1: Array1<f64>,
    pub wc2: Array2<f64>,
    pub bc2: Array1<f64>,
}

impl Parameters for CoopNetParams {
    fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut v = vec![self.w_embed.view().into_dyn(), self.b_embed.view().into_dyn()];
        for l in &self.layers {
            v.extend([
                l.wq.view().into_dyn(),
                l.wk.view().into_dyn(),
                l.wv.view().into_dyn(),
                l.w1.view().into_dyn(),
                l.b1.view().into_dyn(),
                l.w2.view().into_dyn(),
                l.b2.view().into_dyn(),
            ]);
        }
        v.extend([
            self.wc1.view().into_dyn(),
            self.bc1.view().into_dyn(),
            self.wc2.view().into_dyn(),
            self.bc2.view().into_dyn(),
        ]);
        v
    }

    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut v = vec![self.w_embed.view_mut().into_dyn(), self.b_embed.view_mut().into_dyn()];
        for l in &mut self.layers {
            v.extend([
                l.wq.view_mut().into_dyn(),
                l.wk.view_mut().into_dyn(),
                l.wv.view_mut().into_dyn(),
                l.w1.view_mut().into_dyn(),
                l.b1.view_mut().into_dyn(),
                l.w2.view_mut().into_dyn(),
                l.b2.view_mut().into_dyn(),
            ]);
        }
        v.extend([
            self.wc1.view_mut().into_dyn(),
            self.bc1.view_mut().into_dyn(),
            self.wc2.view_mut().into_dyn(),
            self.bc2.view_mut().into_dyn(),
        ]);
        v
    }
}

impl CoopNetParams {
    pub fn zeros(dims: CoopDims) -> Self {
        let CoopDims { history_len, d, d_ff, n_layers } = dims;
        Self {
            dims,
            w_embed: Array2::zeros((2 * history_len, d)),
            b_embed: Array1::zeros(d),
            layers: (0..n_layers)
                .map(|_| LayerParams {
                    wq: Array2::zeros((d, d)),
                    wk: Array2::zeros((d, d)),
                    wv: Array2::zeros((d, d)),
                    w1: Array2::zeros((d, d_ff)),
                    b1: Array1::zeros(d_ff),
                    w2: Array2::zeros((d_ff, d)),
                    b2: Array1::zeros(d),
                })
                .collect(),
            wc1: Array2::zeros((d, d_ff)),
            bc1: Array1::zeros(d_ff),
            wc2: Array2::zeros((d_ff, 2)),
            bc2: Array1::zeros(2),
        }
    }

    /// Uniform `±1/√fan_in` initialization, tensors drawn in file order.
    pub fn init(dims: CoopDims, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Init);
        let CoopDims { history_len, d, d_ff, n_layers } = dims;
        let r = &mut rng;
        let w_embed = init_uniform(r, 2 * history_len, d);
        let b_embed = init_bias(r, 2 * history_len, d);
        let layers = (0..n_layers)
            .map(|_| LayerParams {
                wq: init_uniform(r, d, d),
                wk: init_uniform(r, d, d),
                wv: init_uniform(r, d, d),
                w1: init_uniform(r, d, d_ff),
                b1: init_bias(r, d, d_ff),
                w2: init_uniform(r, d_ff, d),
                b2: init_bias(r, d_ff, d),
            })
            .collect();
        Self {
            dims,
            w_embed,
            b_embed,
            layers,
            wc1: init_uniform(r, d, d_ff),
            bc1: init_bias(r, d, d_ff),
            wc2: init_uniform(r, d_ff, 2),
            bc2: init_bias(r, d_ff, 2),
        }
    }
}

/// One scene: M pedestrian tracks in the robot frame (hold-imputed, oldest
/// first), their validity masks, the adjacency among them and, for
/// training data, ground-truth labels (1 = cooperative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopSample {
    pub trajectories: Vec<Vec<DVec2>>,
    pub valid: Vec<Vec<bool>>,
    pub adjacency: Array2<f64>,
    pub labels: Vec<u8>,
}

impl CoopSample {
    pub fn n_peds(&self) -> usize {
        self.trajectories.len()
    }
}

/// Flattened, scaled displacement sequence of the window ending at `end`
/// (inclusive), front-padded with zeros to `2L`. The first displacement of
/// any window is zero.
pub fn displacement_features(track: &[DVec2], end: usize) -> Vec<f64> {
    let l = track.len();
    let mut out = vec![0.0; 2 * l];
    let offset = l - 1 - end;
    for j in 1..=end {
        let delta = (track[j] - track[j - 1]) * DISPLACEMENT_SCALE;
        out[2 * (offset + j)] = delta.x;
        out[2 * (offset + j) + 1] = delta.y;
    }
    out
}

/// Embedding of the full windows: `tanh(U·W_e + b_e)`, one row per track.
pub fn embed_trajectories(params: &CoopNetParams, tracks: &[Vec<DVec2>]) -> Array2<f64> {
    let l = params.dims.history_len;
    let u = Array2::from_shape_fn((tracks.len(), 2 * l), |(i, j)| displacement_features(&tracks[i], l - 1)[j]);
    embed(params, &u)
}

fn embed(params: &CoopNetParams, u: &Array2<f64>) -> Array2<f64> {
    (u.dot(&params.w_embed) + &params.b_embed).mapv(f64::tanh)
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-step attention maps stacked: rows `ℓ·M .. (ℓ+1)·M` hold step ℓ.
    s: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
}

/// Forward activations retained for the backward pass. All L windows are
/// processed together with rows ordered step-major (`ℓ·M + i`).
pub struct Cache {
    m: usize,
    u: Array2<f64>,
    x0: Array2<f64>,
    layers: Vec<LayerCache>,
    e: Array2<f64>,
    pool_weights: Array2<f64>,
    pooled: Array2<f64>,
    z1: Array2<f64>,
}

/// `(softmax(QKᵀ/√d_k) ⊙ E)·V`, returning the attention output and
/// `[Q, K, V, S]`.
pub fn inter_attention(x: &Array2<f64>, e: &Array2<f64>, layer: &LayerParams) -> (Array2<f64>, [Array2<f64>; 4]) {
    let q = x.dot(&layer.wq);
    let k = x.dot(&layer.wk);
    let v = x.dot(&layer.wv);
    let (att, s) = blocked_attention(&q, &k, &v, e);
    (att, [q, k, v, s])
}

/// Attention applied independently to each consecutive block of `M` rows.
fn blocked_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, e: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let m = e.nrows();
    let rows = q.nrows();
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut att = Array2::zeros(v.raw_dim());
    let mut s = Array2::zeros((rows, m));
    for b in (0..rows).step_by(m.max(1)) {
        let r = s![b..b + m, ..];
        let sb = softmax_rows(&(q.slice(r).dot(&k.slice(r).t()) * scale));
        att.slice_mut(r).assign(&(&sb * e).dot(&v.slice(r)));
        s.slice_mut(r).assign(&sb);
    }
    (att, s)
}

/// Mean-pooling weights `[M × L]`: `1/n_i` on the valid steps of track i
/// (all steps if none is valid).
fn pool_weights(valid: &[Vec<bool>], l: usize) -> Array2<f64> {
    Array2::from_shape_fn((valid.len(), l), |(i, j)| {
        let n = valid[i].iter().filter(|&&v| v).count();
        if n == 0 {
            1.0 / l as f64
        } else if valid[i][j] {
            1.0 / n as f64
        } else {
            0.0
        }
    })
}

/// Class probabilities `[M × 2]` (column 1 = cooperative) for the sample
/// under selection matrix `e`. Each history step ℓ runs the attention
/// stack on the windows ending at ℓ; descriptors are mean-pooled over each
/// pedestrian's valid steps.
pub fn forward(params: &CoopNetParams, sample: &CoopSample, e: &Array2<f64>) -> (Array2<f64>, Cache) {
    let l = params.dims.history_len;
    let m = sample.n_peds();
    let mut u = Array2::zeros((l * m, 2 * l));
    for end in 0..l {
        for (i, track) in sample.trajectories.iter().enumerate() {
            let f = displacement_features(track, end);
            u.row_mut(end * m + i).iter_mut().zip(f).for_each(|(d, v)| *d = v);
        }
    }
    let x0 = embed(params, &u);
    let mut x = x0.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (att, [q, k, v, s]) = inter_attention(&x, e, layer);
        let z = &x + &att;
        let g = (z.dot(&layer.w1) + &layer.b1).mapv(f64::tanh);
        let h = g.dot(&layer.w2) + &layer.b2;
        layers.push(LayerCache {
            x: std::mem::replace(&mut x, h),
            q,
            k,
            v,
            s,
            z,
            g,
        });
    }
    let weights = pool_weights(&sample.valid, l);
    let mut pooled = Array2::zeros((m, params.dims.d));
    for end in 0..l {
        pooled += &(&x.slice(s![end * m..(end + 1) * m, ..]) * &weights.slice(s![.., end..end + 1]));
    }
    let z1 = (pooled.dot(&params.wc1) + &params.bc1).mapv(f64::tanh);
    let logits = z1.dot(&params.wc2) + &params.bc2;
    let probs = softmax_rows(&logits);
    (
        probs,
        Cache {
            m,
            u,
            x0,
            layers,
            e: e.clone(),
            pool_weights: weights,
            pooled,
            z1,
        },
    )
}

/// `−Σ_i log p_i[y_i]` for one sample (the batch mean is taken by the caller).
pub fn sample_loss(probs: &Array2<f64>, labels: &[u8]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs[[i, y as usize]].max(PROB_FLOOR).ln())
        .sum()
}

/// Cross-entropy over a batch: `−(1/B) Σ_b Σ_i log p_{b,i}[y_{b,i}]`.
pub fn coop_loss(predictions: &[Array2<f64>], labels: &[Vec<u8>]) -> f64 {
    let b = predictions.len() as f64;
    predictions.iter().zip(labels).map(|(p, y)| sample_loss(p, y)).sum::<f64>() / b
}

/// Accumulates `scale · ∂(sample_loss)/∂θ` into `grads`.
pub fn backward(params: &CoopNetParams, cache: &Cache, probs: &Array2<f64>, labels: &[u8], scale: f64, grads: &mut CoopNetParams) {
    let m = cache.m;
    let l = params.dims.history_len;
    let mut dlogits = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        dlogits[[i, y as usize]] -= 1.0;
    }
    dlogits *= scale;
    grads.wc2 += &cache.z1.t().dot(&dlogits);
    grads.bc2 += &dlogits.sum_axis(Axis(0));
    let da1 = dlogits.dot(&params.wc2.t()) * &cache.z1.mapv(|z| 1.0 - z * z);
    grads.wc1 += &cache.pooled.t().dot(&da1);
    grads.bc1 += &da1.sum_axis(Axis(0));
    let dpooled = da1.dot(&params.wc1.t());

    let mut dx = Array2::zeros((l * m, params.dims.d));
    for end in 0..l {
        dx.slice_mut(s![end * m..(end + 1) * m, ..])
            .assign(&(&dpooled * &cache.pool_weights.slice(s![.., end..end + 1])));
    }
    let scale_k = 1.0 / (params.dims.d as f64).sqrt();
    for (layer, (c, g)) in params.layers.iter().zip(cache.layers.iter().zip(grads.layers.iter_mut())).rev() {
        // H = tanh(Z·W1 + b1)·W2 + b2
        g.w2 += &c.g.t().dot(&dx);
        g.b2 += &dx.sum_axis(Axis(0));
        let da = dx.dot(&layer.w2.t()) * &c.g.mapv(|v| 1.0 - v * v);
        g.w1 += &c.z.t().dot(&da);
        g.b1 += &da.sum_axis(Axis(0));
        let dz = da.dot(&layer.w1.t());
        // Z = X + (S ⊙ E)·V, per step block.
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for b in (0..l * m).step_by(m.max(1)) {
            let r = s![b..b + m, ..];
            let sb = c.s.slice(r).to_owned();
            let dzb = dz.slice(r);
            dv.slice_mut(r).assign(&(&sb * &cache.e).t().dot(&dzb));
            let dp = dzb.dot(&c.v.slice(r).t());
            let dscores = softmax_rows_backward(&sb, &(&dp * &cache.e)) * scale_k;
            dq.slice_mut(r).assign(&dscores.dot(&c.k.slice(r)));
            dk.slice_mut(r).assign(&dscores.t().dot(&c.q.slice(r)));
        }
        g.wq += &c.x.t().dot(&dq);
        g.wk += &c.x.t().dot(&dk);
        g.wv += &c.x.t().dot(&dv);
        dx = dz + dq.dot(&layer.wq.t()) + dk.dot(&layer.wk.t()) + dv.dot(&layer.wv.t());
    }
    let da = dx * &cache.x0.mapv(|v| 1.0 - v * v);
    grads.w_embed += &cache.u.t().dot(&da);
    grads.b_embed += &da.sum_axis(Axis(0));
}

/// Batch loss and its gradient; `selections[b]` is the (frozen) E of sample b.
pub fn loss_and_grad(params: &CoopNetParams, samples: &[&CoopSample], selections: &[Array2<f64>]) -> (f64, CoopNetParams) {
    let mut grads = CoopNetParams::zeros(params.dims);
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    for (sample, e) in samples.iter().zip(selections) {
        let (probs, cache) = forward(params, sample, e);
        loss += sample_loss(&probs, &sample.labels) * scale;
        backward(params, &cache, &probs, &sample.labels, scale, &mut grads);
    }
    (loss, grads)
}
