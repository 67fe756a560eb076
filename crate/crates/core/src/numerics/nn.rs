//! Layers built from graph ops. Each layer only holds [`ParamId`]s; values
//! come from the [`ParamStore`] passed to `forward`.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), in_dim, out_dim, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], T::one()));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]));
        Self { gain, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Two-layer perceptron: `Linear -> ReLU -> Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), in_dim, hidden, rng),
            out: Linear::new(store, &format!("{name}.1"), hidden, out_dim, rng),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.relu(h);
        self.out.forward(g, store, h)
    }
}

/// Scaled dot-product attention over `heads` subspaces of a shared width.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), width, width, rng),
            key: Linear::new(store, &format!("{name}.k"), width, width, rng),
            value: Linear::new(store, &format!("{name}.v"), width, width, rng),
            output: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
            width,
        })
    }

    /// `queries` is `[n_q, width]`, `keys_values` is `[n_kv, width]`.
    /// `key_mask[j] == true` excludes key `j` from every query.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: Var,
        keys_values: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        self.forward_with_weights(g, store, queries, keys_values, key_mask).map(|(y, _)| y)
    }

    /// Like [`forward`](Self::forward) but also returns the per-head `[n_q, n_kv]` weights.
    pub fn forward_with_weights<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: Var,
        keys_values: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        let n_q = g.shape(queries)[0];
        let n_kv = g.shape(keys_values)[0];
        if let Some(mask) = key_mask {
            if mask.len() != n_kv {
                return Err(Error::Shape {
                    op: "attention",
                    detail: format!("key mask of {} for {} keys", mask.len(), n_kv),
                });
            }
            if mask.iter().all(|&m| m) {
                return Err(Error::InvalidArgument("attention: every key is masked".into()));
            }
        }
        let q = self.query.forward(g, store, queries)?;
        let k = self.key.forward(g, store, keys_values)?;
        let v = self.value.forward(g, store, keys_values)?;
        let dh = self.width / self.heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let full_mask: Option<Vec<bool>> = key_mask.map(|m| (0..n_q).flat_map(|_| m.iter().copied()).collect());
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice(q, 1, h * dh, (h + 1) * dh)?;
            let kh = g.slice(k, 1, h * dh, (h + 1) * dh)?;
            let vh = g.slice(v, 1, h * dh, (h + 1) * dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, inv_sqrt);
            if let Some(m) = &full_mask {
                scores = g.masked_fill(scores, m, f64::NEG_INFINITY)?;
            }
            let w = g.softmax(scores);
            outs.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat(&outs, 1)? };
        let y = self.output.forward(g, store, joined)?;
        Ok((y, weights))
    }
}

/// Pre-norm transformer encoder block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
}

impl EncoderLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), width),
            ff: Mlp::new(store, &format!("{name}.ff"), width, ff_dim, width, rng),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let h = self.norm_attn.forward(g, store, x)?;
        let a = self.attn.forward(g, store, h, h, mask)?;
        let x = g.add(x, a)?;
        let h = self.norm_ff.forward(g, store, x)?;
        let f = self.ff.forward(g, store, h)?;
        g.add(x, f)
    }
}

/// Pre-norm transformer decoder block: self-attention, cross-attention, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: Mlp,
}

impl DecoderLayer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), width),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), width, heads, rng)?,
            norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), width),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), width, heads, rng)?,
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), width),
            ff: Mlp::new(store, &format!("{name}.ff"), width, ff_dim, width, rng),
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        memory: Var,
        memory_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let h = self.norm_self.forward(g, store, x)?;
        let a = self.self_attn.forward(g, store, h, h, None)?;
        let x = g.add(x, a)?;
        let h = self.norm_cross.forward(g, store, x)?;
        let c = self.cross_attn.forward(g, store, h, memory, memory_mask)?;
        let x = g.add(x, c)?;
        let h = self.norm_ff.forward(g, store, x)?;
        let f = self.ff.forward(g, store, h)?;
        g.add(x, f)
    }
}
