//! Mini-batch Adam training of the grasp network and autoencoder
//! pretraining of the object encoder.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use xgrasp_autodiff::{Adam, Array, Graph, ParamId, ParamStore, Var};

use super::loss::{loss_eig, loss_kal};
use super::model::GraspModel;
use super::object::{cloud_array, CloudLayout};
use crate::data::augment::{augment, sample_rng, AugmentConfig};
use crate::data::schema::{Dataset, GraspSample};
use crate::eigengrasp::{pca_eigengrasps, EigengraspSet};
use crate::error::{Error, Result};
use crate::kinematics::{kal_weights, DEFAULT_LAMBDA};
use crate::morph::{tokenize, MorphologyTokens};
use crate::urdf::HandModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Jacobian-weighted articulation loss.
    Kal,
    /// Unit weights.
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epoch count the run trains up to, counting resumed epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate of the cosine schedule, as a fraction of `lr`.
    pub lr_min_ratio: f64,
    pub seed: u64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub freeze_object: bool,
    /// Feed ground-truth eigengrasps to the amplitude predictor.
    pub teacher_forcing: bool,
    pub loss: LossKind,
    pub lambda: [f64; 6],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr: 1e-3,
            lr_min_ratio: 0.01,
            seed: 0,
            augment: true,
            augmentation: AugmentConfig::default(),
            freeze_object: false,
            teacher_forcing: false,
            loss: LossKind::Kal,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let total = self.epochs.max(1) as f64;
        let frac = (epoch as f64 / total).min(1.0);
        let min = self.lr * self.lr_min_ratio;
        min + 0.5 * (self.lr - min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(rename = "L_eig")]
    pub l_eig: f64,
    #[serde(rename = "L_KAL")]
    pub l_kal: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    pub wall_time_s: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,L_eig,L_KAL,L_total,wall_time_s\n");
    for r in rows {
        s += &format!("{},{},{},{},{}\n", r.epoch, r.l_eig, r.l_kal, r.l_total, r.wall_time_s);
    }
    s
}

/// A hand with its tokens and ground-truth eigengrasps.
#[derive(Clone, Debug)]
pub struct HandEntry {
    pub id: String,
    pub model: HandModel,
    pub tokens: MorphologyTokens,
    pub e_star: EigengraspSet,
}

impl HandEntry {
    pub fn e_star_array(&self) -> Array {
        let rows: Vec<f64> = self.e_star.e.iter().flatten().copied().collect();
        Array::from_vec(self.e_star.k, self.e_star.d_max(), rows).expect("K × D_max")
    }
}

#[derive(Clone, Debug)]
pub struct TrainSample {
    pub hand: usize,
    pub sample: GraspSample,
    /// Per-joint loss weights.
    pub weights: Vec<f64>,
    pub layout: CloudLayout,
}

/// Samples with everything precomputed that does not change during training.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub hands: Vec<HandEntry>,
    pub samples: Vec<TrainSample>,
}

/// Eigengrasps of every hand from its samples' articulations.
pub fn hand_eigengrasps(samples: &[&GraspSample], d: usize, k: usize, d_max: usize) -> Result<EigengraspSet> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = DMatrix::from_fn(samples.len(), d, |i, j| samples[i].q[j]);
    pca_eigengrasps(&q, k, d_max)
}

impl TrainingSet {
    pub fn new(
        hands: &BTreeMap<String, HandModel>,
        samples: &[GraspSample],
        model: &GraspModel,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mc = &model.config;
        let mut entries = Vec::new();
        let mut index = BTreeMap::new();
        for (id, hm) in hands {
            let own: Vec<&GraspSample> = samples.iter().filter(|s| &s.hand_id == id).collect();
            if own.is_empty() {
                continue;
            }
            let tokens = tokenize(hm, mc.m_max, mc.d_max)?;
            let e_star = hand_eigengrasps(&own, hm.dof(), mc.k, mc.d_max)?;
            index.insert(id.clone(), entries.len());
            entries.push(HandEntry {
                id: id.clone(),
                model: hm.clone(),
                tokens,
                e_star,
            });
        }
        let stages = model.object.stage_configs();
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let &h = index
                .get(&s.hand_id)
                .ok_or_else(|| Error::ConfigMismatch(format!("no hand model for {}", s.hand_id)))?;
            let hm = &entries[h].model;
            let weights = match cfg.loss {
                LossKind::Kal => kal_weights(hm, &s.q, &cfg.lambda)?,
                LossKind::Mse => vec![1.0; hm.dof()],
            };
            out.push(TrainSample {
                hand: h,
                sample: s.clone(),
                weights,
                layout: CloudLayout::new(&s.cloud, &stages)?,
            });
        }
        Ok(Self {
            hands: entries,
            samples: out,
        })
    }

    pub fn from_dataset(ds: &Dataset, model: &GraspModel, cfg: &TrainConfig) -> Result<Self> {
        Self::new(&ds.hand_models()?, &ds.samples, model, cfg)
    }
}

/// Loss terms of one batch, as graph nodes.
pub struct BatchLoss {
    pub total: Var,
    /// Sums over samples of each term.
    pub l_eig_sum: f64,
    pub l_kal_sum: f64,
}

fn add_all(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

/// Mean over `indices` of `L_eig + L_KAL`. The morphology encoder runs once
/// per distinct hand. `aug` supplies the epoch for augmentation streams.
pub fn batch_loss(
    model: &GraspModel,
    g: &mut Graph,
    s: &ParamStore,
    set: &TrainingSet,
    indices: &[usize],
    cfg: &TrainConfig,
    aug: Option<u64>,
) -> Result<BatchLoss> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hand_out = BTreeMap::new();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in indices {
        *counts.entry(set.samples[i].hand).or_default() += 1;
    }
    let mut terms = Vec::new();
    let mut l_eig_sum = 0.0;
    for (&h, &n) in &counts {
        let entry = &set.hands[h];
        let out = model.encode_hand(g, s, &entry.tokens)?;
        let le = loss_eig(g, out.e, &entry.e_star_array())?;
        l_eig_sum += g.value(le).data()[0] * n as f64;
        terms.push(g.scale(le, n as f64));
        hand_out.insert(h, out);
    }
    let mut l_kal_sum = 0.0;
    for &i in indices {
        let ts = &set.samples[i];
        let entry = &set.hands[ts.hand];
        let out = &hand_out[&ts.hand];
        let (sample, layout) = match aug {
            Some(epoch) => {
                let mut rng = sample_rng(cfg.seed ^ cfg.augmentation.seed, epoch, i as u64);
                let a = augment(&ts.sample, &cfg.augmentation, &mut rng)?;
                let layout = model.object.layout(&a.cloud)?;
                (std::borrow::Cow::Owned(a), std::borrow::Cow::Owned(layout))
            }
            None => (std::borrow::Cow::Borrowed(&ts.sample), std::borrow::Cow::Borrowed(&ts.layout)),
        };
        let e = if cfg.teacher_forcing {
            g.constant(entry.e_star_array())
        } else {
            out.e
        };
        let so = model.forward_sample(g, s, e, out.m, &layout, &sample.wrist, entry.model.dof())?;
        let lk = loss_kal(g, so.q, &sample.q, &ts.weights)?;
        l_kal_sum += g.value(lk).data()[0];
        terms.push(lk);
    }
    let sum = add_all(g, &terms)?;
    Ok(BatchLoss {
        total: g.scale(sum, 1.0 / indices.len() as f64),
        l_eig_sum,
        l_kal_sum,
    })
}

pub struct Trainer {
    pub model: GraspModel,
    pub adam: Adam,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    frozen: Vec<ParamId>,
}

impl Trainer {
    pub fn new(model: GraspModel, config: TrainConfig) -> Self {
        let adam = Adam::new(config.lr);
        Self::resume(model, adam, config, 0, Vec::new())
    }

    pub fn resume(model: GraspModel, adam: Adam, config: TrainConfig, epoch: usize, metrics: Vec<EpochMetrics>) -> Self {
        let frozen = if config.freeze_object { model.object_params() } else { Vec::new() };
        Self {
            model,
            adam,
            config,
            epoch,
            metrics,
            frozen,
        }
    }

    pub fn run_epoch(&mut self, set: &TrainingSet, clock: Instant) -> Result<EpochMetrics> {
        let cfg = &self.config;
        if cfg.batch_size == 0 {
            return Err(Error::ConfigMismatch("batch_size must be positive".into()));
        }
        let e = self.epoch as u64;
        let mut order: Vec<usize> = (0..set.samples.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, e, u64::MAX));
        self.adam.lr = cfg.lr_at(self.epoch);
        let (mut le, mut lk) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let bl = batch_loss(&self.model, &mut g, &self.model.store, set, batch, cfg, cfg.augment.then_some(e))?;
            if !g.value(bl.total).is_finite() {
                return Err(Error::DegenerateInput(format!("non-finite loss at epoch {}", self.epoch)));
            }
            le += bl.l_eig_sum;
            lk += bl.l_kal_sum;
            let grads = g.backward(bl.total)?;
            let frozen = &self.frozen;
            self.adam.step_filtered(&mut self.model.store, &grads, |id| !frozen.contains(&id))?;
        }
        let n = set.samples.len() as f64;
        self.epoch += 1;
        let m = EpochMetrics {
            epoch: self.epoch,
            l_eig: le / n,
            l_kal: lk / n,
            l_total: (le + lk) / n,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        self.metrics.push(m);
        Ok(m)
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn train(&mut self, set: &TrainingSet, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<()> {
        let clock = Instant::now();
        let offset = self.metrics.last().map_or(0.0, |m| m.wall_time_s);
        while self.epoch < self.config.epochs {
            let mut m = self.run_epoch(set, clock)?;
            m.wall_time_s += offset;
            *self.metrics.last_mut().expect("pushed") = m;
            on_epoch(&m);
        }
        Ok(())
    }
}

/// Mean `(L_eig, L_KAL)` over the whole set without augmentation.
pub fn evaluate_losses(model: &GraspModel, set: &TrainingSet, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let idx: Vec<usize> = (0..set.samples.len()).collect();
    let bl = batch_loss(model, &mut g, &model.store, set, &idx, cfg, None)?;
    let n = idx.len() as f64;
    Ok((bl.l_eig_sum / n, bl.l_kal_sum / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 10,
            lr: 2e-3,
            seed: 0,
        }
    }
}

/// Mean Chamfer distance of the autoencoder over `clouds`.
pub fn mean_chamfer(model: &GraspModel, clouds: &[Vec<[f64; 3]>]) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for c in clouds {
        let rec = model.reconstruct(c)?;
        total += super::object::chamfer_distance(&rec, c)?;
    }
    Ok(total / clouds.len() as f64)
}

/// Trains the object encoder and point decoder to reconstruct `clouds`.
/// Returns the mean training Chamfer distance of each epoch.
pub fn pretrain_object(model: &mut GraspModel, clouds: &[Vec<[f64; 3]>], cfg: &PretrainConfig) -> Result<Vec<f64>> {
    if clouds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::ConfigMismatch("batch_size must be positive".into()));
    }
    let layouts: Vec<CloudLayout> = clouds.iter().map(|c| model.object.layout(c)).collect::<Result<_>>()?;
    let targets: Vec<Array> = clouds.iter().map(|c| cloud_array(c)).collect();
    let mut trainable = model.object_params();
    trainable.extend(model.params_with_prefix("decoder."));
    let mut adam = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let sched = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        ..TrainConfig::default()
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..clouds.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, epoch as u64, u64::MAX));
        adam.lr = sched.lr_at(epoch);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let mut terms = Vec::with_capacity(batch.len());
            for &i in batch {
                let f = model.object.forward_layout(&mut g, &model.store, &layouts[i])?;
                let p = model.decoder.forward(&mut g, &model.store, f)?;
                let c = g.chamfer(p, &targets[i])?;
                sum += g.value(c).data()[0];
                terms.push(c);
            }
            let total = add_all(&mut g, &terms)?;
            let total = g.scale(total, 1.0 / batch.len() as f64);
            let grads = g.backward(total)?;
            adam.step_filtered(&mut model.store, &grads, |id| trainable.contains(&id))?;
        }
        history.push(sum / clouds.len() as f64);
    }
    Ok(history)
}
