//! The full grasp network: morphology encoder, object encoder, point
//! decoder and amplitude predictor over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xgrasp_autodiff::{Array, Graph, ParamId, ParamStore, Var};

use super::amplitude::{decode_graph, AmplitudePredictor};
use super::config::ModelConfig;
use super::layers::Init;
use super::morphology::{MorphologyEncoder, MorphologyOutput};
use super::object::{CloudLayout, ObjectEncoder, PointDecoder};
use crate::eigengrasp::EigengraspSet;
use crate::error::Result;
use crate::kinematics::WristPose;
use crate::morph::MorphologyTokens;

#[derive(Clone, Debug)]
pub struct GraspModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub morph: MorphologyEncoder,
    pub object: ObjectEncoder,
    pub decoder: PointDecoder,
    pub amp: AmplitudePredictor,
}

/// Per-sample outputs of the amplitude pathway.
#[derive(Clone, Copy, Debug)]
pub struct SampleOutput {
    pub f_obj: Var,
    /// K × 1.
    pub a: Var,
    /// 1 × d.
    pub q: Var,
}

/// Plain values of one end-to-end inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub m: Vec<f64>,
    pub e: EigengraspSet,
    pub f_obj: Vec<f64>,
    pub a: Vec<f64>,
    pub q: Vec<f64>,
}

impl GraspModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init::new(&mut store, &mut rng);
        let morph = MorphologyEncoder::new(&mut init, &config)?;
        let object = ObjectEncoder::new(&mut init, &config)?;
        let decoder = PointDecoder::new(&mut init, &config)?;
        let amp = AmplitudePredictor::new(&mut init, &config)?;
        Ok(Self {
            config,
            store,
            morph,
            object,
            decoder,
            amp,
        })
    }

    /// Parameters of the object encoder.
    pub fn object_params(&self) -> Vec<ParamId> {
        self.params_with_prefix("object.")
    }

    pub fn params_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.store.iter().filter(|(_, n, _)| n.starts_with(prefix)).map(|(id, _, _)| id).collect()
    }

    pub fn encode_hand(&self, g: &mut Graph, s: &ParamStore, tokens: &MorphologyTokens) -> Result<MorphologyOutput> {
        self.morph.forward(g, s, tokens)
    }

    /// Object encoding, amplitudes and decoded articulation for one sample,
    /// using eigengrasps `e` (K × D_max) and morphology embedding `m`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_sample(
        &self,
        g: &mut Graph,
        s: &ParamStore,
        e: Var,
        m: Var,
        layout: &CloudLayout,
        wrist: &WristPose,
        d: usize,
    ) -> Result<SampleOutput> {
        let f_obj = self.object.forward_layout(g, s, layout)?;
        let a = self.amp.forward(g, s, e, m, f_obj, wrist)?;
        let q = decode_graph(g, a, e, d)?;
        Ok(SampleOutput { f_obj, a, q })
    }

    /// Full forward pass without gradients.
    pub fn infer(&self, tokens: &MorphologyTokens, cloud: &[[f64; 3]], wrist: &WristPose) -> Result<Inference> {
        let layout = self.object.layout(cloud)?;
        self.infer_layout(tokens, &layout, wrist)
    }

    pub fn infer_layout(&self, tokens: &MorphologyTokens, layout: &CloudLayout, wrist: &WristPose) -> Result<Inference> {
        let mut g = Graph::new();
        let s = &self.store;
        let h = self.encode_hand(&mut g, s, tokens)?;
        let d = tokens.dof();
        let out = self.forward_sample(&mut g, s, h.e, h.m, layout, wrist, d)?;
        let e_arr = g.value(h.e);
        let e = EigengraspSet {
            k: e_arr.rows(),
            d,
            e: (0..e_arr.rows()).map(|r| e_arr.row(r).to_vec()).collect(),
        };
        Ok(Inference {
            m: g.value(h.m).data().to_vec(),
            e,
            f_obj: g.value(out.f_obj).data().to_vec(),
            a: g.value(out.a).data().to_vec(),
            q: g.value(out.q).data().to_vec(),
        })
    }

    /// Embedding of a cloud without gradients.
    pub fn object_embedding(&self, cloud: &[[f64; 3]]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let f = self.object.forward(&mut g, &self.store, cloud)?;
        Ok(g.value(f).data().to_vec())
    }

    /// Autoencoder reconstruction of a cloud.
    pub fn reconstruct(&self, cloud: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let mut g = Graph::new();
        let f = self.object.forward(&mut g, &self.store, cloud)?;
        let p = self.decoder.forward(&mut g, &self.store, f)?;
        Ok(rows3(g.value(p)))
    }
}

pub(crate) fn rows3(a: &Array) -> Vec<[f64; 3]> {
    (0..a.rows()).map(|r| [a.get(r, 0), a.get(r, 1), a.get(r, 2)]).collect()
}
