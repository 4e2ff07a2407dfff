//! Amplitude predictor over conditioned eigengrasp tokens.

use xgrasp_autodiff::{Array, Graph, ParamStore, Var};

use super::config::ModelConfig;
use super::layers::{Activation, Init, LayerNorm, Linear, Mlp, TransformerBlock};
use crate::error::{Error, Result};
use crate::kinematics::WristPose;

/// Wrist translations are divided by this length inside tokens.
pub const TRANSLATION_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct AmplitudePredictor {
    in_ln: LayerNorm,
    proj: Linear,
    blocks: Vec<TransformerBlock>,
    out_ln: LayerNorm,
    heads: Vec<Mlp>,
    token_dim: usize,
}

/// `K × d_τ` token matrix: each row is `[e_i, m, f_obj, t / 0.1, R6]`.
pub fn conditioned_tokens(g: &mut Graph, e: Var, m: Var, f_obj: Var, wrist: &WristPose) -> Result<Var> {
    let k = g.shape(e).0;
    let mut pose = wrist.t.map(|x| x / TRANSLATION_SCALE).to_vec();
    pose.extend(wrist.r6);
    let pose = g.constant(Array::row_vector(pose));
    let mb = g.broadcast_rows(m, k)?;
    let fb = g.broadcast_rows(f_obj, k)?;
    let pb = g.broadcast_rows(pose, k)?;
    Ok(g.concat_cols(&[e, mb, fb, pb])?)
}

impl AmplitudePredictor {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let (dt, dh) = (cfg.token_dim(), cfg.d_h);
        init.scoped("amp", |init| {
            Ok(Self {
                in_ln: LayerNorm::new(init, "in_ln", dt)?,
                proj: Linear::new(init, "proj", dt, dh)?,
                blocks: (0..cfg.amp_depth)
                    .map(|i| TransformerBlock::new(init, &format!("block{i}"), dh, cfg.amp_heads))
                    .collect::<Result<_>>()?,
                out_ln: LayerNorm::new(init, "out_ln", dh)?,
                heads: (0..cfg.k)
                    .map(|i| Mlp::new(init, &format!("head{i}"), &[dh, (dh / 2).max(1), 1], Activation::Gelu, false))
                    .collect::<Result<_>>()?,
                token_dim: dt,
            })
        })
    }

    /// K × 1 amplitudes.
    pub fn forward(&self, g: &mut Graph, s: &ParamStore, e: Var, m: Var, f_obj: Var, wrist: &WristPose) -> Result<Var> {
        if g.shape(e).0 != self.heads.len() {
            return Err(Error::DimensionMismatch {
                what: "eigengrasp rows",
                expected: self.heads.len(),
                got: g.shape(e).0,
            });
        }
        let tokens = conditioned_tokens(g, e, m, f_obj, wrist)?;
        if g.shape(tokens).1 != self.token_dim {
            return Err(Error::DimensionMismatch {
                what: "conditioned token width",
                expected: self.token_dim,
                got: g.shape(tokens).1,
            });
        }
        let h = self.in_ln.forward(g, s, tokens)?;
        let mut z = self.proj.forward(g, s, h)?;
        for b in &self.blocks {
            z = b.forward(g, s, z, None)?;
        }
        if !self.blocks.is_empty() {
            z = self.out_ln.forward(g, s, z)?;
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            let zi = g.gather_rows(z, &[Some(i)])?;
            outs.push(head.forward(g, s, zi)?);
        }
        Ok(g.concat_rows(&outs)?)
    }

    pub fn head(&self, i: usize) -> &Mlp {
        &self.heads[i]
    }
}

/// `q = aᵀE` restricted to the first `d` columns, as a 1 × d row.
pub fn decode_graph(g: &mut Graph, a: Var, e: Var, d: usize) -> Result<Var> {
    let at = g.transpose(a);
    let q = g.matmul(at, e)?;
    Ok(g.slice_cols(q, 0, d)?)
}
