//! Internal encoder mathematics: the cached forward pass and its manual
//! reverse-mode backward pass.
//!
//! Activations are kept as `[batch·seq, features]` matrices; attention
//! works on per-(example, head) `[seq, seq]` slices. Padding is excluded by
//! masking key scores to `-inf` before the row softmax, which also makes
//! every padding gradient vanish exactly.

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Head, LayerNormParams, ModelError, ModelParams};
use crate::tokenizer::Encoding;

const LN_EPS: f64 = 1e-12;

/// A validated batch, flattened row-major to `[b * t]`.
pub(crate) struct PackedBatch {
    pub ids: Vec<usize>,
    /// 1.0 at real positions, 0.0 at padding.
    pub mask: Vec<f64>,
    pub b: usize,
    pub t: usize,
}

/// Validates a batch of encodings against the model and flattens it.
pub(crate) fn pack(params: &ModelParams, batch: &[Encoding]) -> Result<PackedBatch, ModelError> {
    let config = &params.config;
    config.validate()?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let t = batch[0].ids.len();
    if t == 0 {
        return Err(ModelError::EmptyEncoding);
    }
    if t > config.max_len {
        return Err(ModelError::SequenceTooLong { len: t, max_len: config.max_len });
    }
    let b = batch.len();
    let mut ids = Vec::with_capacity(b * t);
    let mut mask = Vec::with_capacity(b * t);
    for enc in batch {
        if enc.ids.len() != t {
            return Err(ModelError::RaggedBatch { expected: t, found: enc.ids.len() });
        }
        if enc.attention_mask.len() != t {
            return Err(ModelError::RaggedBatch { expected: t, found: enc.attention_mask.len() });
        }
        if enc.attention_mask.iter().all(|&m| m == 0) {
            return Err(ModelError::EmptyEncoding);
        }
        for (&id, &m) in enc.ids.iter().zip(&enc.attention_mask) {
            if id as usize >= config.vocab_size {
                return Err(ModelError::TokenIdOutOfRange { id, vocab_size: config.vocab_size });
            }
            ids.push(id as usize);
            mask.push(f64::from(m != 0));
        }
    }
    Ok(PackedBatch { ids, mask, b, t })
}

/// Inverted-dropout mask source; draws nothing when disabled, so a rate of
/// zero is bit-identical to evaluation mode.
pub(crate) struct DropoutPlan {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl DropoutPlan {
    pub(crate) fn disabled() -> DropoutPlan {
        DropoutPlan { rate: 0.0, rng: None }
    }

    pub(crate) fn seeded(rate: f64, seed: u64) -> DropoutPlan {
        if rate == 0.0 {
            DropoutPlan::disabled()
        } else {
            DropoutPlan { rate, rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
        }
    }

    /// Draws a `[rows, cols]` mask of `0` or `1/(1-rate)`, row-major order.
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Array2<f64>> {
        let rng = self.rng.as_mut()?;
        let scale = 1.0 / (1.0 - self.rate);
        let mut mask = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                mask[[i, j]] = if rng.random::<f64>() < self.rate { 0.0 } else { scale };
            }
        }
        Some(mask)
    }
}

fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// tanh-approximation GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const C: f64 = 0.044715;
    0.5 * x * (1.0 + (A * (x + C * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub(crate) fn gelu_grad(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4;
    const C: f64 = 0.044715;
    let t = (A * (x + C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * A * (1.0 + 3.0 * C * x * x)
}

/// Row statistics cached by layer norm for its backward pass.
pub(crate) struct LnCache {
    x_hat: Array2<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm_forward(x: &Array2<f64>, ln: &LayerNormParams) -> (Array2<f64>, LnCache) {
    let (n, d) = x.dim();
    let mut x_hat = Array2::zeros((n, d));
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(istd);
        for j in 0..d {
            x_hat[[i, j]] = (x[[i, j]] - mean) * istd;
        }
    }
    let y = &x_hat * &ln.gain + &ln.bias;
    (y, LnCache { x_hat, inv_std })
}

/// Returns `(dx, dgain, dbias)` for `y = gain ∘ x_hat + bias`.
fn layer_norm_backward(
    dy: &Array2<f64>,
    ln: &LayerNormParams,
    cache: &LnCache,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (n, d) = dy.dim();
    let dgain = (dy * &cache.x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxhat = dy[[i, j]] * ln.gain[[0, j]];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * cache.x_hat[[i, j]];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for j in 0..d {
            let dxhat = dy[[i, j]] * ln.gain[[0, j]];
            dx[[i, j]] = cache.inv_std[i]
                * (dxhat - mean_dxhat - cache.x_hat[[i, j]] * mean_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

fn sum_rows(x: &Array2<f64>) -> Array2<f64> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Per-layer activations cached for the backward pass.
pub(crate) struct LayerCache {
    a_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Post-softmax attention probabilities (pre-dropout), one `[t, t]`
    /// matrix per `(example, head)` in row-major `(b, h)` order.
    probs: Vec<Array2<f64>>,
    prob_drops: Vec<Option<Array2<f64>>>,
    context: Array2<f64>,
    o_drop: Option<Array2<f64>>,
    ln1: LnCache,
    x1: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    z_drop: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct ForwardCache {
    x0_drop: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    xf: Array2<f64>,
}

/// Full forward pass; returns per-position head outputs `[b·t, classes]`
/// and the activation cache.
pub(crate) fn forward_pass(
    params: &ModelParams,
    batch: &PackedBatch,
    mut drop: DropoutPlan,
    head: Head,
) -> (Array2<f64>, ForwardCache) {
    let config = &params.config;
    let (b, t) = (batch.b, batch.t);
    let n = b * t;
    let d = config.d_model;
    let heads = config.n_heads;
    let dh = config.head_dim();
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

    // Token + position embeddings.
    let mut x = Array2::zeros((n, d));
    for (row, &id) in batch.ids.iter().enumerate() {
        let pos = row % t;
        for j in 0..d {
            x[[row, j]] =
                params.token_embeddings[[id, j]] + params.position_embeddings[[pos, j]];
        }
    }
    let x0_drop = drop.mask(n, d);
    apply_mask(&mut x, &x0_drop);

    let mut layer_caches = Vec::with_capacity(config.n_layers);
    for layer in &params.layers {
        let att = &layer.attention;
        let a_in = x;
        let q = a_in.dot(&att.w_q) + &att.b_q;
        let k = a_in.dot(&att.w_k) + &att.b_k;
        let v = a_in.dot(&att.w_v) + &att.b_v;

        let mut context = Array2::zeros((n, d));
        let mut probs = Vec::with_capacity(b * heads);
        let mut prob_drops = Vec::with_capacity(b * heads);
        for bi in 0..b {
            let rows = s![bi * t..(bi + 1) * t, ..];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qbh = q.slice(rows).slice(s![.., cols.clone()]).to_owned();
                let kbh = k.slice(rows).slice(s![.., cols.clone()]).to_owned();
                let vbh = v.slice(rows).slice(s![.., cols.clone()]).to_owned();

                let mut scores = qbh.dot(&kbh.t());
                scores *= inv_sqrt_dh;

                // Masked row softmax: padding keys contribute nothing.
                let mut p = Array2::zeros((t, t));
                for i in 0..t {
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..t {
                        if batch.mask[bi * t + j] != 0.0 {
                            max = max.max(scores[[i, j]]);
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..t {
                        if batch.mask[bi * t + j] != 0.0 {
                            let e = (scores[[i, j]] - max).exp();
                            p[[i, j]] = e;
                            sum += e;
                        }
                    }
                    for j in 0..t {
                        p[[i, j]] /= sum;
                    }
                }

                let p_mask = drop.mask(t, t);
                let mut p_used = p.clone();
                apply_mask(&mut p_used, &p_mask);
                let ctx = p_used.dot(&vbh);
                context
                    .slice_mut(s![bi * t..(bi + 1) * t, cols])
                    .assign(&ctx);
                probs.push(p);
                prob_drops.push(p_mask);
            }
        }

        let mut o = context.dot(&att.w_o) + &att.b_o;
        let o_drop = drop.mask(n, d);
        apply_mask(&mut o, &o_drop);

        let r1 = &a_in + &o;
        let (x1, ln1) = layer_norm_forward(&r1, &layer.ln_attn);

        let u = x1.dot(&layer.ff.w1) + &layer.ff.b1;
        let g = u.mapv(gelu);
        let mut z = g.dot(&layer.ff.w2) + &layer.ff.b2;
        let z_drop = drop.mask(n, d);
        apply_mask(&mut z, &z_drop);

        let r2 = &x1 + &z;
        let (x2, ln2) = layer_norm_forward(&r2, &layer.ln_ff);

        layer_caches.push(LayerCache {
            a_in,
            q,
            k,
            v,
            probs,
            prob_drops,
            context,
            o_drop,
            ln1,
            x1,
            u,
            g,
            z_drop,
            ln2,
        });
        x = x2;
    }

    let (xf, final_ln) = layer_norm_forward(&x, &params.final_ln);
    let out = match head {
        Head::Classifier => xf.dot(&params.classifier_weight) + &params.classifier_bias,
        Head::Mlm => {
            let mlm = params.mlm_head.as_ref().expect("MLM head presence checked by caller");
            xf.dot(&mlm.weight) + &mlm.bias
        }
    };
    let cache = ForwardCache { x0_drop, layers: layer_caches, final_ln, xf };
    (out, cache)
}

/// Backpropagates `dout` (gradient of the loss in the head outputs) through
/// the cached forward pass, returning gradients for every parameter.
/// Parameters off the active head's path keep zero gradients.
pub(crate) fn backward_pass(
    params: &ModelParams,
    batch: &PackedBatch,
    cache: &ForwardCache,
    dout: &Array2<f64>,
    head: Head,
) -> ModelParams {
    let config = &params.config;
    let (b, t) = (batch.b, batch.t);
    let n = b * t;
    let d = config.d_model;
    let heads = config.n_heads;
    let dh = config.head_dim();
    let inv_sqrt_dh = 1.0 / (dh as f64).sqrt();

    let mut grads = params.zeros_like();

    // Head.
    let dxf = match head {
        Head::Classifier => {
            grads.classifier_weight = cache.xf.t().dot(dout);
            grads.classifier_bias = sum_rows(dout);
            dout.dot(&params.classifier_weight.t())
        }
        Head::Mlm => {
            let mlm = params.mlm_head.as_ref().expect("MLM head presence checked by caller");
            let gm = grads.mlm_head.as_mut().expect("gradient bag mirrors parameters");
            gm.weight = cache.xf.t().dot(dout);
            gm.bias = sum_rows(dout);
            dout.dot(&mlm.weight.t())
        }
    };

    // Final layer norm.
    let (mut dx, dgain, dbias) = layer_norm_backward(&dxf, &params.final_ln, &cache.final_ln);
    grads.final_ln.gain = dgain;
    grads.final_ln.bias = dbias;

    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let lc = &cache.layers[li];
        let lg = &mut grads.layers[li];

        // x2 = LN2(x1 + z)
        let (dr2, dgain2, dbias2) = layer_norm_backward(&dx, &layer.ln_ff, &lc.ln2);
        lg.ln_ff.gain = dgain2;
        lg.ln_ff.bias = dbias2;

        let mut dx1 = dr2.clone();
        let mut dz = dr2;
        apply_mask(&mut dz, &lc.z_drop);

        // z = gelu(x1·w1 + b1)·w2 + b2
        lg.ff.w2 = lc.g.t().dot(&dz);
        lg.ff.b2 = sum_rows(&dz);
        let dg = dz.dot(&layer.ff.w2.t());
        let du = &dg * &lc.u.mapv(gelu_grad);
        lg.ff.w1 = lc.x1.t().dot(&du);
        lg.ff.b1 = sum_rows(&du);
        dx1 = dx1 + du.dot(&layer.ff.w1.t());

        // x1 = LN1(a_in + o)
        let (dr1, dgain1, dbias1) = layer_norm_backward(&dx1, &layer.ln_attn, &lc.ln1);
        lg.ln_attn.gain = dgain1;
        lg.ln_attn.bias = dbias1;

        let mut da_in = dr1.clone();
        let mut do_ = dr1;
        apply_mask(&mut do_, &lc.o_drop);

        // o = context·w_o + b_o
        lg.attention.w_o = lc.context.t().dot(&do_);
        lg.attention.b_o = sum_rows(&do_);
        let dcontext = do_.dot(&layer.attention.w_o.t());

        // Attention per (example, head).
        let mut dq = Array2::zeros((n, d));
        let mut dk = Array2::zeros((n, d));
        let mut dv = Array2::zeros((n, d));
        for bi in 0..b {
            let rows = s![bi * t..(bi + 1) * t, ..];
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let dctx = dcontext
                    .slice(rows)
                    .slice(s![.., cols.clone()])
                    .to_owned();
                let p = &lc.probs[bi * heads + h];
                let p_mask = &lc.prob_drops[bi * heads + h];
                let mut p_used = p.clone();
                apply_mask(&mut p_used, p_mask);
                let kbh = lc.k.slice(rows).slice(s![.., cols.clone()]).to_owned();
                let qbh = lc.q.slice(rows).slice(s![.., cols.clone()]).to_owned();
                let vbh = lc.v.slice(rows).slice(s![.., cols.clone()]).to_owned();

                // context_bh = p_used · v_bh
                let mut dp = dctx.dot(&vbh.t());
                let dvbh = p_used.t().dot(&dctx);
                apply_mask(&mut dp, p_mask);

                // Softmax rows: ds = p ∘ (dp − Σ_j p_j dp_j), masked cells stay 0.
                let mut ds = Array2::zeros((t, t));
                for i in 0..t {
                    let mut inner = 0.0;
                    for j in 0..t {
                        inner += p[[i, j]] * dp[[i, j]];
                    }
                    for j in 0..t {
                        ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - inner);
                    }
                }
                ds *= inv_sqrt_dh;

                let dqbh = ds.dot(&kbh);
                let dkbh = ds.t().dot(&qbh);
                dq.slice_mut(s![bi * t..(bi + 1) * t, cols.clone()]).assign(&dqbh);
                dk.slice_mut(s![bi * t..(bi + 1) * t, cols.clone()]).assign(&dkbh);
                dv.slice_mut(s![bi * t..(bi + 1) * t, cols]).assign(&dvbh);
            }
        }

        // q/k/v projections from a_in.
        lg.attention.w_q = lc.a_in.t().dot(&dq);
        lg.attention.b_q = sum_rows(&dq);
        lg.attention.w_k = lc.a_in.t().dot(&dk);
        lg.attention.b_k = sum_rows(&dk);
        lg.attention.w_v = lc.a_in.t().dot(&dv);
        lg.attention.b_v = sum_rows(&dv);
        da_in = da_in
            + dq.dot(&layer.attention.w_q.t())
            + dk.dot(&layer.attention.w_k.t())
            + dv.dot(&layer.attention.w_v.t());

        dx = da_in;
    }

    // Embeddings.
    apply_mask(&mut dx, &cache.x0_drop);
    for (row, &id) in batch.ids.iter().enumerate() {
        let pos = row % t;
        for j in 0..d {
            grads.token_embeddings[[id, j]] += dx[[row, j]];
            grads.position_embeddings[[pos, j]] += dx[[row, j]];
        }
    }

    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn gelu_known_values() {
        assert_eq!(gelu(0.0), 0.0);
        // Published tanh-approximation values.
        assert!((gelu(1.0) - 0.841192).abs() < 1e-6);
        assert!((gelu(-1.0) + 0.158808).abs() < 1e-6);
        assert_eq!(gelu_grad(0.0), 0.5);
        // Finite-difference agreement at several points.
        let h = 1e-6;
        for x in [-3.0, -0.7, 0.3, 1.9, 4.2] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-6, "x={x}: fd={fd} vs {}", gelu_grad(x));
        }
    }

    #[test]
    fn layer_norm_normalises_rows() {
        let ln = LayerNormParams {
            gain: Array2::ones((1, 4)),
            bias: Array2::zeros((1, 4)),
        };
        let x = arr2(&[[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 30.0, 30.0]]);
        let (y, _) = layer_norm_forward(&x, &ln);
        for i in 0..2 {
            let row = y.row(i);
            let mean: f64 = row.sum() / 4.0;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9, "row {i} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row {i} var {var}");
        }
        // Gain/bias shift and scale.
        let ln2 = LayerNormParams {
            gain: arr2(&[[2.0, 2.0, 2.0, 2.0]]),
            bias: arr2(&[[1.0, 1.0, 1.0, 1.0]]),
        };
        let (y2, _) = layer_norm_forward(&x, &ln2);
        for i in 0..2 {
            for j in 0..4 {
                assert!((y2[[i, j]] - (2.0 * y[[i, j]] + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let ln = LayerNormParams {
            gain: arr2(&[[1.2, 0.8, -0.5, 2.0]]),
            bias: arr2(&[[0.1, -0.2, 0.3, 0.0]]),
        };
        let x = arr2(&[[0.5, -1.0, 2.0, 0.3], [-0.2, 0.9, 0.1, 1.4]]);
        // Scalar objective: weighted sum of outputs with fixed weights.
        let w = arr2(&[[0.7, -1.1, 0.4, 0.9], [1.3, 0.2, -0.6, 0.5]]);
        let objective = |input: &Array2<f64>, gain: &LayerNormParams| -> f64 {
            let (y, _) = layer_norm_forward(input, gain);
            (&y * &w).sum()
        };
        let (_, cache) = layer_norm_forward(&x, &ln);
        let (dx, dgain, dbias) = layer_norm_backward(&w, &ln, &cache);

        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (objective(&xp, &ln) - objective(&xm, &ln)) / (2.0 * h);
                assert!(
                    (fd - dx[[i, j]]).abs() < 1e-6,
                    "dx[{i},{j}]: fd={fd} analytic={}",
                    dx[[i, j]]
                );
            }
        }
        for j in 0..4 {
            let mut perturbed = LayerNormParams { gain: ln.gain.clone(), bias: ln.bias.clone() };
            perturbed.gain[[0, j]] += h;
            let up = objective(&x, &perturbed);
            perturbed.gain[[0, j]] -= 2.0 * h;
            let down = objective(&x, &perturbed);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dgain[[0, j]]).abs() < 1e-6, "dgain[{j}]");

            let mut perturbed = LayerNormParams { gain: ln.gain.clone(), bias: ln.bias.clone() };
            perturbed.bias[[0, j]] += h;
            let up = objective(&x, &perturbed);
            perturbed.bias[[0, j]] -= 2.0 * h;
            let down = objective(&x, &perturbed);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dbias[[0, j]]).abs() < 1e-6, "dbias[{j}]");
        }
    }

    #[test]
    fn dropout_plan_draws_are_deterministic() {
        let mut a = DropoutPlan::seeded(0.5, 42);
        let mut b = DropoutPlan::seeded(0.5, 42);
        let ma = a.mask(8, 8).unwrap();
        let mb = b.mask(8, 8).unwrap();
        assert_eq!(ma, mb);
        // Scaled inverted dropout: entries are 0 or 1/(1-rate).
        assert!(ma.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
        assert!(ma.iter().any(|&v| v == 0.0));
        assert!(ma.iter().any(|&v| v != 0.0));

        assert!(DropoutPlan::disabled().mask(4, 4).is_none());
        assert!(DropoutPlan::seeded(0.0, 1).mask(4, 4).is_none());
    }
}
