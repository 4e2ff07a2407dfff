//! End-to-end articulation prediction for one hand, cloud and wrist pose.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::model::GraspModel;
use crate::data::schema::normalize_scene;
use crate::eigengrasp::EigengraspSet;
use crate::error::Result;
use crate::kinematics::{clamp_to_limits, WristPose};
use crate::morph::tokenize;
use crate::urdf::{parse_urdf, HandModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Articulation clamped to the joint limits.
    pub q: Vec<f64>,
    pub q_raw: Vec<f64>,
    /// Per-joint `|q - q_raw|`.
    pub clamp: Vec<f64>,
    pub a: Vec<f64>,
    pub eigengrasps: EigengraspSet,
    /// Wrist pose in the centred cloud frame.
    pub wrist: WristPose,
    pub wall_time_s: f64,
}

/// Predicts an articulation. The cloud is centred and the wrist moved with it.
pub fn predict_for_hand(hand: &HandModel, cloud: &[[f64; 3]], wrist: &WristPose, model: &GraspModel) -> Result<Prediction> {
    let clock = Instant::now();
    let (cloud, wrist) = normalize_scene(cloud, wrist)?;
    let tokens = tokenize(hand, model.config.m_max, model.config.d_max)?;
    let out = model.infer(&tokens, &cloud, &wrist)?;
    let report = clamp_to_limits(hand, &out.q)?;
    Ok(Prediction {
        q: report.q,
        q_raw: out.q,
        clamp: report.clamp,
        a: out.a,
        eigengrasps: out.e,
        wrist,
        wall_time_s: clock.elapsed().as_secs_f64(),
    })
}

pub fn predict_articulation(urdf: &str, cloud: &[[f64; 3]], wrist: &WristPose, model: &GraspModel) -> Result<Prediction> {
    predict_for_hand(&parse_urdf(urdf)?, cloud, wrist, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_hand, HandSpec};
    use crate::nets::ModelConfig;

    fn cloud() -> Vec<[f64; 3]> {
        (0..64)
            .map(|i| {
                let t = i as f64 * 0.7;
                [0.03 * t.cos(), 0.03 * t.sin(), 0.002 * (i % 7) as f64]
            })
            .collect()
    }

    #[test]
    fn zero_amplitude_head_gives_zero_q() {
        let mut model = GraspModel::new(ModelConfig::small()).unwrap();
        let zero: Vec<_> = model
            .store
            .iter()
            .filter(|(_, n, _)| n.starts_with("amp.head") && n.ends_with(".w"))
            .map(|(id, _, a)| (id, a.map(|_| 0.0)))
            .collect();
        let bias: Vec<_> = model
            .store
            .iter()
            .filter(|(_, n, _)| n.starts_with("amp.head") && n.ends_with(".b"))
            .map(|(id, _, a)| (id, a.map(|_| 0.0)))
            .collect();
        assert!(!zero.is_empty());
        for (id, a) in zero.into_iter().chain(bias) {
            model.store.set(id, a).unwrap();
        }
        let urdf = synth_hand(&HandSpec::new(2, 2)).unwrap();
        let p = predict_articulation(&urdf, &cloud(), &WristPose::identity(), &model).unwrap();
        assert!(p.a.iter().all(|&x| x == 0.0));
        assert_eq!(p.q_raw, vec![0.0; 4]);
    }

    #[test]
    fn deterministic_and_clamped() {
        let model = GraspModel::new(ModelConfig::small()).unwrap();
        let hand = parse_urdf(&synth_hand(&HandSpec::new(3, 3)).unwrap()).unwrap();
        let w = WristPose::identity();
        let a = predict_for_hand(&hand, &cloud(), &w, &model).unwrap();
        let b = predict_for_hand(&hand, &cloud(), &w, &model).unwrap();
        assert_eq!(a.q, b.q);
        assert_eq!(a.q.len(), 9);
        for (j, (lo, hi)) in hand.revolute_limits().into_iter().enumerate() {
            assert!(a.q[j] >= lo && a.q[j] <= hi);
            assert_eq!(a.clamp[j], (a.q[j] - a.q_raw[j]).abs());
        }
    }
}
