//! Parameterized building blocks over the autodiff graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xgrasp_autodiff::{Array, Graph, ParamId, ParamStore, Var};

use crate::Result;

/// Registers freshly initialized parameters under a name prefix.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Runs `f` with `name` appended to the prefix.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Init) -> Result<T>) -> Result<T> {
        let saved = self.prefix.clone();
        self.prefix = if saved.is_empty() { name.to_string() } else { format!("{saved}.{name}") };
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn param(&mut self, name: &str, value: Array) -> Result<ParamId> {
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Ok(self.store.insert(full, value)?)
    }

    /// Uniform entries in `±bound`.
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.param(name, Array::from_vec(rows, cols, data)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        init.scoped(name, |init| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Ok(Self {
                w: init.uniform("w", fan_in, fan_out, bound)?,
                b: init.param("b", Array::zeros(1, fan_out))?,
                fan_in,
                fan_out,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(s, self.w);
        let b = g.param(s, self.b);
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

fn activate(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => g.relu(x),
        Activation::Gelu => g.gelu(x),
    }
}

/// Stack of linear layers with an activation between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
    /// Apply the activation after the last layer too.
    pub act_last: bool,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, widths: &[usize], act: Activation, act_last: bool) -> Result<Self> {
        init.scoped(name, |init| {
            let layers = widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| Linear::new(init, &i.to_string(), w[0], w[1]))
                .collect::<Result<_>>()?;
            Ok(Self { layers, act, act_last })
        })
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, s, x)?;
            if i + 1 < n || self.act_last {
                x = activate(g, x, self.act);
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Result<Self> {
        init.scoped(name, |init| {
            Ok(Self {
                gamma: init.param("gamma", Array::filled(1, dim, 1.0))?,
                beta: init.param("beta", Array::zeros(1, dim))?,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(s, self.gamma);
        let beta = g.param(s, self.beta);
        Ok(g.layer_norm(x, gamma, beta)?)
    }
}

/// Additive attention mask: `-inf` at every padded key column.
pub fn key_mask(rows: usize, key_pad: &[bool]) -> Array {
    let mut m = Array::zeros(rows, key_pad.len());
    for r in 0..rows {
        for (c, &p) in key_pad.iter().enumerate() {
            if p {
                m.set(r, c, f64::NEG_INFINITY);
            }
        }
    }
    m
}

/// Scaled dot-product attention split over `heads` column groups.
pub fn multi_head_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize, mask: Option<&Array>) -> Result<Var> {
    let d = g.shape(q).1;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let p = g.softmax_rows(scores, mask)?;
        outs.push(g.matmul(p, vh)?);
    }
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    Ok(g.concat_cols(&outs)?)
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff: Mlp,
    pub heads: usize,
}

impl TransformerBlock {
    pub fn new(init: &mut Init, name: &str, d: usize, heads: usize) -> Result<Self> {
        init.scoped(name, |init| {
            Ok(Self {
                ln1: LayerNorm::new(init, "ln1", d)?,
                wq: Linear::new(init, "wq", d, d)?,
                wk: Linear::new(init, "wk", d, d)?,
                wv: Linear::new(init, "wv", d, d)?,
                wo: Linear::new(init, "wo", d, d)?,
                ln2: LayerNorm::new(init, "ln2", d)?,
                ff: Mlp::new(init, "ff", &[d, 2 * d, d], Activation::Gelu, false)?,
                heads,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, x: Var, mask: Option<&Array>) -> Result<Var> {
        let h = self.ln1.forward(g, s, x)?;
        let q = self.wq.forward(g, s, h)?;
        let k = self.wk.forward(g, s, h)?;
        let v = self.wv.forward(g, s, h)?;
        let att = multi_head_attention(g, q, k, v, self.heads, mask)?;
        let att = self.wo.forward(g, s, att)?;
        let x = g.add(x, att)?;
        let h = self.ln2.forward(g, s, x)?;
        let f = self.ff.forward(g, s, h)?;
        Ok(g.add(x, f)?)
    }
}

/// Softmax-weighted pooling of `rows` (n × d) against a learned 1 × d query.
/// Padded rows get zero weight.
pub fn attention_pool(g: &mut Graph, query: Var, rows: Var, pad: &[bool]) -> Result<Var> {
    let d = g.shape(rows).1;
    let rt = g.transpose(rows);
    let scores = g.matmul(query, rt)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let mask = key_mask(1, pad);
    let w = g.softmax_rows(scores, Some(&mask))?;
    Ok(g.matmul(w, rows)?)
}
