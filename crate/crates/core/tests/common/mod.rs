#![allow(dead_code)]

use std::path::PathBuf;

use xgrasp_core::data::synth::{synth_hand, HandSpec};
use xgrasp_core::urdf::{parse_urdf, HandModel};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

pub fn three_finger() -> HandModel {
    parse_urdf(&fixture_text("three_finger.urdf")).unwrap()
}

pub fn shadow_like() -> HandModel {
    parse_urdf(&fixture_text("shadow_like.urdf")).unwrap()
}

pub fn synthetic(fingers: usize, joints: usize) -> HandModel {
    parse_urdf(&synth_hand(&HandSpec::new(fingers, joints)).unwrap()).unwrap()
}

/// Planar serial finger about z with links along x.
pub fn planar_finger(lengths: &[f64]) -> HandModel {
    let mut s = String::from(r#"<robot name="planar"><link name="l0"/>"#);
    let mut prev_len = 0.0;
    for (i, &len) in lengths.iter().enumerate() {
        s += &format!(
            r#"<link name="l{c}"/><joint name="j{i}" type="revolute"><parent link="l{i}"/><child link="l{c}"/>
            <origin xyz="{prev_len} 0 0"/><axis xyz="0 0 1"/><limit lower="-3" upper="3"/></joint>"#,
            c = i + 1
        );
        prev_len = len;
    }
    let n = lengths.len();
    s += &format!(
        r#"<link name="tip"/><joint name="tipj" type="fixed"><parent link="l{n}"/><child link="tip"/>
        <origin xyz="{prev_len} 0 0"/></joint></robot>"#
    );
    parse_urdf(&s).unwrap()
}

pub fn random_q(h: &HandModel, rng: &mut impl rand::Rng) -> Vec<f64> {
    h.revolute_limits().into_iter().map(|(lo, hi)| rng.random_range(lo..=hi)).collect()
}

/// A synthetic hand with `n` grasps on small primitive objects.
pub fn grasp_set(
    fingers: usize,
    joints: usize,
    n: usize,
    points: usize,
    seed: u64,
) -> (std::collections::BTreeMap<String, HandModel>, Vec<xgrasp_core::data::GraspSample>) {
    use rand::SeedableRng;
    use xgrasp_core::data::synth::{random_objects, synth_grasps, SynthConfig};
    let hand = synthetic(fingers, joints);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let objects = random_objects(n.clamp(1, 6), &mut rng);
    let cfg = SynthConfig {
        cloud_points: points,
        ..SynthConfig::default()
    };
    let samples = synth_grasps(&hand, "hand", &objects, n, &cfg, &mut rng).unwrap();
    let mut hands = std::collections::BTreeMap::new();
    hands.insert("hand".to_string(), hand);
    (hands, samples)
}
