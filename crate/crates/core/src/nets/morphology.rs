//! Morphology encoder: token embedding, embodiment transformer, revolute
//! selection, morphology head and eigengrasp heads.

use std::f64::consts::PI;

use xgrasp_autodiff::{Array, Graph, ParamId, ParamStore, Var};

use super::config::ModelConfig;
use super::layers::{attention_pool, key_mask, Activation, Init, LayerNorm, Linear, Mlp, TransformerBlock};
use crate::error::{Error, Result};
use crate::morph::{MorphologyTokens, ENCODING_DIM};

const ANGLE_COLS: [usize; 11] = [0, 1, 2, 3, 4, 12, 13, 14, 22, 23, 24];
const KIND_COLS: [usize; 2] = [11, 21];

/// Fixed per-feature scaling: angles by π, primitive kind by 3, lengths in meters as is.
pub fn scale_tokens(tokens: &MorphologyTokens) -> Result<Array> {
    let m_max = tokens.m_max();
    let mut x = Array::zeros(m_max, ENCODING_DIM);
    for (r, row) in tokens.raw.iter().enumerate() {
        if row.len() != ENCODING_DIM {
            return Err(Error::DimensionMismatch {
                what: "token width",
                expected: ENCODING_DIM,
                got: row.len(),
            });
        }
        let out = x.row_mut(r);
        out.copy_from_slice(row);
        for c in ANGLE_COLS {
            out[c] /= PI;
        }
        for c in KIND_COLS {
            out[c] /= 3.0;
        }
    }
    Ok(x)
}

/// Gathers the revolute rows of `h` in order and zero-pads to `d_max` rows.
/// Returns the gathered rows and their padding mask.
pub fn select_revolute(g: &mut Graph, h: Var, rho: &[bool], d_max: usize) -> Result<(Var, Vec<bool>)> {
    let rows: Vec<usize> = (0..rho.len()).filter(|&i| rho[i]).collect();
    if rows.len() > d_max {
        return Err(Error::CapacityExceeded {
            what: "revolute joint count",
            got: rows.len(),
            max: d_max,
        });
    }
    let index: Vec<Option<usize>> = (0..d_max).map(|i| rows.get(i).copied()).collect();
    let pad = index.iter().map(Option::is_none).collect();
    Ok((g.gather_rows(h, &index)?, pad))
}

#[derive(Clone, Debug)]
struct EigenHead {
    query: ParamId,
    mlp: Mlp,
}

#[derive(Clone, Debug)]
pub struct MorphologyEncoder {
    joint_mlp: Mlp,
    parent_mlp: Mlp,
    child_mlp: Mlp,
    proj: Linear,
    /// Learned embedding of each token slot, in document order.
    slots: ParamId,
    in_ln: LayerNorm,
    blocks: Vec<TransformerBlock>,
    out_ln: LayerNorm,
    row_mlp: Mlp,
    pool_query: ParamId,
    out: Linear,
    heads: Vec<EigenHead>,
    m_max: usize,
    d_max: usize,
}

/// Everything the morphology encoder produces for one hand.
#[derive(Clone, Debug)]
pub struct MorphologyOutput {
    /// 1 × d_m embedding.
    pub m: Var,
    /// K × D_max eigengrasp rows.
    pub e: Var,
    /// D_max × d_h revolute features.
    pub h_sel: Var,
    pub sel_pad: Vec<bool>,
}

impl MorphologyEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let (de, dh) = (cfg.d_embed, cfg.d_h);
        init.scoped("morph", |init| {
            let joint_mlp = Mlp::new(init, "embed_joint", &[11, de, de], Activation::Gelu, true)?;
            let parent_mlp = Mlp::new(init, "embed_parent", &[10, de, de], Activation::Gelu, true)?;
            let child_mlp = Mlp::new(init, "embed_child", &[10, de, de], Activation::Gelu, true)?;
            let proj = Linear::new(init, "proj", 3 * de, dh)?;
            let slots = init.uniform("slots", cfg.m_max, dh, (6.0 / (cfg.m_max + dh) as f64).sqrt())?;
            let in_ln = LayerNorm::new(init, "in_ln", dh)?;
            let blocks = (0..cfg.morph_depth)
                .map(|i| TransformerBlock::new(init, &format!("block{i}"), dh, cfg.morph_heads))
                .collect::<Result<_>>()?;
            let out_ln = LayerNorm::new(init, "out_ln", dh)?;
            let row_mlp = Mlp::new(init, "head_rows", &[dh, dh, dh], Activation::Gelu, true)?;
            let bound = (3.0 / dh as f64).sqrt();
            let pool_query = init.uniform("head_query", 1, dh, bound)?;
            let out = Linear::new(init, "head_out", dh, cfg.d_m)?;
            let heads = (0..cfg.k)
                .map(|i| {
                    init.scoped(&format!("eig{i}"), |init| {
                        Ok(EigenHead {
                            query: init.uniform("query", 1, dh, bound)?,
                            mlp: Mlp::new(init, "mlp", &[2 * dh, dh, 1], Activation::Gelu, false)?,
                        })
                    })
                })
                .collect::<Result<_>>()?;
            Ok(Self {
                joint_mlp,
                parent_mlp,
                child_mlp,
                proj,
                slots,
                in_ln,
                blocks,
                out_ln,
                row_mlp,
                pool_query,
                out,
                heads,
                m_max: cfg.m_max,
                d_max: cfg.d_max,
            })
        })
    }

    fn check(&self, tokens: &MorphologyTokens) -> Result<()> {
        if tokens.m_max() != self.m_max || tokens.pad_mask.len() != self.m_max || tokens.rho.len() != self.m_max {
            return Err(Error::ConfigMismatch(format!(
                "tokens padded to {} rows, model expects M_max = {}",
                tokens.m_max(),
                self.m_max
            )));
        }
        Ok(())
    }

    /// M_max × d_h embeddings; padded rows are exactly zero.
    pub fn embed_tokens(&self, g: &mut Graph, s: &ParamStore, tokens: &MorphologyTokens) -> Result<Var> {
        self.check(tokens)?;
        let x = g.constant(scale_tokens(tokens)?);
        let joint = g.slice_cols(x, 0, 11)?;
        let parent = g.slice_cols(x, 11, 10)?;
        let child = g.slice_cols(x, 21, 10)?;
        let ej = self.joint_mlp.forward(g, s, joint)?;
        let ep = self.parent_mlp.forward(g, s, parent)?;
        let ec = self.child_mlp.forward(g, s, child)?;
        let cat = g.concat_cols(&[ej, ep, ec])?;
        let h = self.proj.forward(g, s, cat)?;
        let slots = g.param(s, self.slots);
        let h = g.add(h, slots)?;
        let h = self.in_ln.forward(g, s, h)?;
        let keep: Vec<bool> = tokens.pad_mask.iter().map(|p| !p).collect();
        Ok(g.mask_rows(h, &keep)?)
    }

    /// Masked pre-norm transformer; padded query rows are zeroed on output.
    pub fn embodiment_transformer(&self, g: &mut Graph, s: &ParamStore, x: Var, pad: &[bool]) -> Result<Var> {
        if self.blocks.is_empty() {
            return Ok(x);
        }
        let mask = key_mask(pad.len(), pad);
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, s, h, Some(&mask))?;
        }
        let h = self.out_ln.forward(g, s, h)?;
        let keep: Vec<bool> = pad.iter().map(|p| !p).collect();
        Ok(g.mask_rows(h, &keep)?)
    }

    /// 1 × d_m embedding pooled over the unmasked revolute rows.
    pub fn morphology_head(&self, g: &mut Graph, s: &ParamStore, h_sel: Var, pad: &[bool]) -> Result<Var> {
        if pad.iter().all(|&p| p) {
            return Err(Error::AllMasked("morphology head has no revolute rows"));
        }
        let rows = self.row_mlp.forward(g, s, h_sel)?;
        let q = g.param(s, self.pool_query);
        let pooled = attention_pool(g, q, rows, pad)?;
        self.out.forward(g, s, pooled)
    }

    /// K × D_max eigengrasp rows with masked columns forced to zero.
    pub fn eigengrasp_heads(&self, g: &mut Graph, s: &ParamStore, h_sel: Var, pad: &[bool]) -> Result<Var> {
        if pad.iter().all(|&p| p) {
            return Err(Error::AllMasked("eigengrasp heads have no revolute rows"));
        }
        let keep: Vec<bool> = pad.iter().map(|p| !p).collect();
        let mut rows = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = g.param(s, head.query);
            let p = attention_pool(g, q, h_sel, pad)?;
            let p = g.broadcast_rows(p, pad.len())?;
            let cat = g.concat_cols(&[h_sel, p])?;
            let col = head.mlp.forward(g, s, cat)?;
            let col = g.mask_rows(col, &keep)?;
            rows.push(g.transpose(col));
        }
        Ok(g.concat_rows(&rows)?)
    }

    pub fn forward(&self, g: &mut Graph, s: &ParamStore, tokens: &MorphologyTokens) -> Result<MorphologyOutput> {
        let x = self.embed_tokens(g, s, tokens)?;
        let h = self.embodiment_transformer(g, s, x, &tokens.pad_mask)?;
        let (h_sel, sel_pad) = select_revolute(g, h, &tokens.rho, self.d_max)?;
        let m = self.morphology_head(g, s, h_sel, &sel_pad)?;
        let e = self.eigengrasp_heads(g, s, h_sel, &sel_pad)?;
        Ok(MorphologyOutput { m, e, h_sel, sel_pad })
    }
}
