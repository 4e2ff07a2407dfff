use serde::{Deserialize, Serialize};

use crate::eigengrasp::DEFAULT_K;
use crate::morph::{DEFAULT_D_MAX, DEFAULT_M_MAX};

/// Object-encoder widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectPreset {
    /// Full widths with a 1024-dim embedding.
    Paper,
    /// Widths divided by 8, 128-dim embedding.
    Desk,
}

/// One set-abstraction stage. `centroids = None` pools the whole set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub centroids: Option<usize>,
    pub radius: f64,
    pub widths: Vec<usize>,
}

impl ObjectPreset {
    pub fn stages(self) -> Vec<StageConfig> {
        let div = match self {
            ObjectPreset::Paper => 1,
            ObjectPreset::Desk => 8,
        };
        let w = |v: [usize; 3]| v.iter().map(|x| x / div).collect();
        vec![
            StageConfig { centroids: Some(128), radius: 0.02, widths: w([64, 64, 128]) },
            StageConfig { centroids: Some(32), radius: 0.04, widths: w([128, 128, 256]) },
            StageConfig { centroids: None, radius: 0.1, widths: w([256, 512, 1024]) },
        ]
    }

    pub fn embedding_dim(self) -> usize {
        *self.stages().last().and_then(|s| s.widths.last()).expect("non-empty preset")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Token width of both transformers.
    pub d_h: usize,
    /// Width of each joint / link sub-block embedding.
    pub d_embed: usize,
    pub morph_depth: usize,
    pub morph_heads: usize,
    pub amp_depth: usize,
    pub amp_heads: usize,
    /// Morphology embedding size.
    pub d_m: usize,
    pub object_preset: ObjectPreset,
    /// Eigengrasp count.
    pub k: usize,
    pub d_max: usize,
    pub m_max: usize,
    /// Points emitted by the point-cloud decoder.
    pub decoder_points: usize,
    pub decoder_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_h: 128,
            d_embed: 64,
            morph_depth: 2,
            morph_heads: 4,
            amp_depth: 2,
            amp_heads: 4,
            d_m: 64,
            object_preset: ObjectPreset::Desk,
            k: DEFAULT_K,
            d_max: DEFAULT_D_MAX,
            m_max: DEFAULT_M_MAX,
            decoder_points: 256,
            decoder_hidden: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A narrow configuration for gradient checks and quick tests.
    pub fn small() -> Self {
        Self {
            d_h: 16,
            d_embed: 8,
            morph_depth: 1,
            morph_heads: 2,
            amp_depth: 1,
            amp_heads: 2,
            d_m: 8,
            decoder_points: 16,
            decoder_hidden: 16,
            ..Self::default()
        }
    }

    pub fn object_dim(&self) -> usize {
        self.object_preset.embedding_dim()
    }

    /// Conditioned token width: `D_max + d_m + |f_obj| + 3 + 6`.
    pub fn token_dim(&self) -> usize {
        self.d_max + self.d_m + self.object_dim() + 9
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: String| Err(crate::Error::ConfigMismatch(m));
        if self.d_h == 0 || self.morph_heads == 0 || self.amp_heads == 0 {
            return bad("d_h and head counts must be positive".into());
        }
        if !self.d_h.is_multiple_of(self.morph_heads) || !self.d_h.is_multiple_of(self.amp_heads) {
            return bad(format!("d_h = {} is not divisible by the head counts", self.d_h));
        }
        if self.k == 0 || self.d_max == 0 || self.m_max == 0 || self.d_m == 0 || self.d_embed == 0 {
            return bad("K, D_max, M_max, d_m and d_embed must be positive".into());
        }
        if self.d_h < 2 {
            return bad("d_h must be at least 2".into());
        }
        Ok(())
    }
}
