mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xgrasp_core::autodiff::{gradcheck, Array, Graph, GradcheckOptions};
use xgrasp_core::error::Error;
use xgrasp_core::kinematics::WristPose;
use xgrasp_core::morph::{tokenize, MorphologyTokens};
use xgrasp_core::nets::checkpoint::{load_checkpoint, save_checkpoint};
use xgrasp_core::nets::loss::{loss_kal_value, mse_value};
use xgrasp_core::nets::train::{batch_loss, LossKind, TrainConfig, Trainer, TrainingSet};
use xgrasp_core::nets::{GraspModel, ModelConfig, ObjectPreset};

use common::{grasp_set, shadow_like, three_finger};

fn ring_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let z: f64 = rng.random_range(-0.02..0.02);
            [0.03 * t.cos(), 0.02 * t.sin(), z]
        })
        .collect()
}

fn wrist() -> WristPose {
    WristPose {
        t: [0.01, 0.0, 0.08],
        r6: [1.0, 0.0, 0.0, 0.0, -1.0, 0.0],
    }
}

fn default_tokens() -> MorphologyTokens {
    let c = ModelConfig::default();
    tokenize(&three_finger(), c.m_max, c.d_max).unwrap()
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn padded_rows_never_reach_outputs() {
    let model = GraspModel::new(ModelConfig::default()).unwrap();
    let tokens = default_tokens();
    let cloud = ring_cloud(200, 1);
    let base = model.infer(&tokens, &cloud, &wrist()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let mut t = tokens.clone();
        for (row, &pad) in t.raw.iter_mut().zip(&tokens.pad_mask) {
            if pad {
                for v in row.iter_mut() {
                    *v = rng.random_range(-100.0..100.0);
                }
            }
        }
        let out = model.infer(&t, &cloud, &wrist()).unwrap();
        assert_eq!(out.m, base.m);
        assert_eq!(out.e, base.e);
        assert_eq!(out.a, base.a);
        assert_eq!(out.q, base.q);
    }
}

#[test]
fn default_shapes() {
    let model = GraspModel::new(ModelConfig::default()).unwrap();
    let tokens = default_tokens();
    let mut g = Graph::new();
    let h = model.morph.embed_tokens(&mut g, &model.store, &tokens).unwrap();
    assert_eq!(g.shape(h), (32, 128));
    for r in 12..32 {
        assert!(g.value(h).row(r).iter().all(|&x| x == 0.0));
    }
    let out = model.morph.forward(&mut g, &model.store, &tokens).unwrap();
    assert_eq!(g.shape(out.e), (9, 24));
    assert_eq!(out.sel_pad, (0..24).map(|i| i >= 9).collect::<Vec<_>>());
    let e = g.value(out.e);
    for k in 0..9 {
        assert!(e.row(k)[9..].iter().all(|&x| x == 0.0));
        assert!(e.row(k)[..9].iter().any(|&x| x != 0.0));
    }
    let inf = model.infer(&tokens, &ring_cloud(100, 3), &wrist()).unwrap();
    assert_eq!(inf.a.len(), 9);
    assert_eq!(inf.q.len(), 9);
    assert_eq!(inf.m.len(), 64);
    assert_eq!(inf.f_obj.len(), 128);
}

#[test]
fn paper_preset_embedding_is_1024() {
    let cfg = ModelConfig {
        object_preset: ObjectPreset::Paper,
        ..ModelConfig::small()
    };
    let model = GraspModel::new(cfg).unwrap();
    assert_eq!(model.object_embedding(&ring_cloud(300, 4)).unwrap().len(), 1024);
}

#[test]
fn object_encoder_is_a_set_function() {
    let model = GraspModel::new(ModelConfig::default()).unwrap();
    let cloud = ring_cloud(300, 5);
    let f = model.object_embedding(&cloud).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let mut p = cloud.clone();
        for i in (1..p.len()).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        let fp = model.object_embedding(&p).unwrap();
        assert!(f.iter().zip(&fp).all(|(a, b)| (a - b).abs() <= 1e-6));
    }
    let doubled: Vec<_> = cloud.iter().chain(&cloud).copied().collect();
    let fd = model.object_embedding(&doubled).unwrap();
    assert!(f.iter().zip(&fd).all(|(a, b)| (a - b).abs() <= 1e-6));
}

#[test]
fn different_hands_embed_differently() {
    let model = GraspModel::new(ModelConfig::default()).unwrap();
    let c = &model.config;
    let mut g = Graph::new();
    let a = model.morph.forward(&mut g, &model.store, &tokenize(&three_finger(), c.m_max, c.d_max).unwrap()).unwrap();
    let b = model.morph.forward(&mut g, &model.store, &tokenize(&shadow_like(), c.m_max, c.d_max).unwrap()).unwrap();
    assert_ne!(g.value(a.m), g.value(b.m));
}

#[test]
fn zero_depth_transformer_is_identity() {
    let cfg = ModelConfig {
        morph_depth: 0,
        ..ModelConfig::small()
    };
    let model = GraspModel::new(cfg).unwrap();
    let t = tokenize(&three_finger(), 32, 24).unwrap();
    let mut g = Graph::new();
    let x = model.morph.embed_tokens(&mut g, &model.store, &t).unwrap();
    let h = model.morph.embodiment_transformer(&mut g, &model.store, x, &t.pad_mask).unwrap();
    assert_eq!(g.value(h), g.value(x));
}

#[test]
fn decoder_shape_and_zero_embedding() {
    let model = GraspModel::new(ModelConfig::small()).unwrap();
    let rec = model.reconstruct(&ring_cloud(100, 7)).unwrap();
    assert_eq!(rec.len(), 16);
    let run = || {
        let mut g = Graph::new();
        let z = g.constant(Array::zeros(1, 128));
        let p = model.decoder.forward(&mut g, &model.store, z).unwrap();
        g.value(p).clone()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.shape(), (16, 3));
    assert_eq!(a, b);
}

#[test]
fn decode_matches_eigengrasp_combination() {
    let model = GraspModel::new(ModelConfig::small()).unwrap();
    let t = tokenize(&shadow_like(), 32, 24).unwrap();
    let out = model.infer(&t, &ring_cloud(80, 8), &wrist()).unwrap();
    assert_eq!(out.q.len(), 22);
    for j in 0..22 {
        let q: f64 = (0..9).map(|k| out.a[k] * out.e.e[k][j]).sum();
        assert!((q - out.q[j]).abs() <= 1e-12 * (1.0 + q.abs()));
    }
}

#[test]
fn amplitude_heads_are_independent() {
    let mut model = GraspModel::new(ModelConfig::small()).unwrap();
    let target = 4;
    let prefix = format!("amp.head{target}.");
    let ids: Vec<_> = model.store.iter().filter(|(_, n, _)| n.starts_with(&prefix)).map(|(id, n, a)| (id, n.to_string(), a.clone())).collect();
    assert!(!ids.is_empty());
    for (id, name, a) in ids {
        let v = if name.ends_with("1.b") { a.map(|_| 0.37) } else { a.map(|_| 0.0) };
        model.store.set(id, v).unwrap();
    }
    let t = tokenize(&three_finger(), 32, 24).unwrap();
    let a0 = model.infer(&t, &ring_cloud(60, 9), &wrist()).unwrap().a;
    assert_eq!(a0[target], 0.37);
    for (id, name, a) in model.store.iter().map(|(id, n, a)| (id, n.to_string(), a.clone())).collect::<Vec<_>>() {
        if name.starts_with("amp.head") && !name.starts_with(&prefix) {
            model.store.set(id, a.map(|x| x * 1.7 + 0.01)).unwrap();
        }
    }
    let t2 = tokenize(&shadow_like(), 32, 24).unwrap();
    let a1 = model.infer(&t2, &ring_cloud(90, 10), &WristPose::identity()).unwrap().a;
    assert_eq!(a1[target], 0.37);
    assert!(a0.iter().zip(&a1).enumerate().any(|(i, (x, y))| i != target && x != y));
}

#[test]
fn unit_weights_give_plain_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let d = rng.random_range(1..=24);
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert_eq!(loss_kal_value(&p, &q, &vec![1.0; d]).unwrap(), mse_value(&p, &q));
    }
    let (hands, samples) = grasp_set(2, 2, 3, 32, 1);
    let model = GraspModel::new(ModelConfig::small()).unwrap();
    let cfg = TrainConfig {
        loss: LossKind::Mse,
        ..TrainConfig::default()
    };
    let set = TrainingSet::new(&hands, &samples, &model, &cfg).unwrap();
    assert!(set.samples.iter().all(|s| s.weights.iter().all(|&w| w == 1.0)));
}

#[test]
fn composed_loss_passes_gradcheck() {
    let (hands, samples) = grasp_set(2, 2, 3, 48, 2);
    let mut model = GraspModel::new(ModelConfig::small()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let biases: Vec<_> = model.store.iter().filter(|(_, n, _)| n.ends_with(".b")).map(|(id, _, _)| id).collect();
    for id in biases {
        for x in model.store.get_mut(id).data_mut() {
            *x = rng.random_range(-0.05..0.05);
        }
    }
    let cfg = TrainConfig::default();
    let set = TrainingSet::new(&hands, &samples, &model, &cfg).unwrap();
    let idx = [0, 1, 2];
    let opts = GradcheckOptions {
        max_entries_per_param: Some(3),
        ..GradcheckOptions::default()
    };
    let report = gradcheck(
        &model.store,
        |g, s| Ok(batch_loss(&model, g, s, &set, &idx, &cfg, None).map_err(|e| match e {
            Error::Autodiff(a) => a,
            other => panic!("{other}"),
        })?.total),
        &opts,
    )
    .unwrap();
    assert!(report.entries_checked > 400);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn teacher_forcing_uses_ground_truth_eigengrasps() {
    let (hands, samples) = grasp_set(3, 2, 4, 48, 3);
    let model = GraspModel::new(ModelConfig::small()).unwrap();
    let plain = TrainConfig::default();
    let forced = TrainConfig {
        teacher_forcing: true,
        ..TrainConfig::default()
    };
    let set = TrainingSet::new(&hands, &samples, &model, &plain).unwrap();
    let idx = [0, 1, 2, 3];
    let mut g = Graph::new();
    let a = batch_loss(&model, &mut g, &model.store, &set, &idx, &plain, None).unwrap();
    let b = batch_loss(&model, &mut g, &model.store, &set, &idx, &forced, None).unwrap();
    assert_eq!(a.l_eig_sum, b.l_eig_sum);
    assert_ne!(a.l_kal_sum, b.l_kal_sum);

    let entry = &set.hands[0];
    let mut expect = 0.0;
    for ts in &set.samples {
        let mut g = Graph::new();
        let h = model.encode_hand(&mut g, &model.store, &entry.tokens).unwrap();
        let e = g.constant(entry.e_star_array());
        let so = model.forward_sample(&mut g, &model.store, e, h.m, &ts.layout, &ts.sample.wrist, 6).unwrap();
        expect += loss_kal_value(g.value(so.q).data(), &ts.sample.q, &ts.weights).unwrap();
    }
    assert!((b.l_kal_sum - expect).abs() < 1e-12);
}

#[test]
fn augmentation_changes_the_loss() {
    let (hands, samples) = grasp_set(2, 2, 3, 48, 4);
    let model = GraspModel::new(ModelConfig::small()).unwrap();
    let cfg = TrainConfig::default();
    let set = TrainingSet::new(&hands, &samples, &model, &cfg).unwrap();
    let mut g = Graph::new();
    let a = batch_loss(&model, &mut g, &model.store, &set, &[0, 1, 2], &cfg, None).unwrap();
    let b = batch_loss(&model, &mut g, &model.store, &set, &[0, 1, 2], &cfg, Some(0)).unwrap();
    let c = batch_loss(&model, &mut g, &model.store, &set, &[0, 1, 2], &cfg, Some(0)).unwrap();
    assert_ne!(a.l_kal_sum, b.l_kal_sum);
    assert_eq!(b.l_kal_sum, c.l_kal_sum);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (hands, samples) = grasp_set(2, 2, 6, 48, 5);
    let cfg = quick_train(4);
    let set = TrainingSet::new(&hands, &samples, &GraspModel::new(ModelConfig::small()).unwrap(), &cfg).unwrap();

    let mut full = Trainer::new(GraspModel::new(ModelConfig::small()).unwrap(), cfg.clone());
    full.train(&set, |_| {}).unwrap();
    let mut again = Trainer::new(GraspModel::new(ModelConfig::small()).unwrap(), cfg.clone());
    again.train(&set, |_| {}).unwrap();
    assert_eq!(full.model.store, again.model.store);
    let losses = |t: &Trainer| t.metrics.iter().map(|m| (m.epoch, m.l_eig, m.l_kal, m.l_total)).collect::<Vec<_>>();
    assert_eq!(losses(&full), losses(&again));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck/half.bin");
    let mut half = Trainer::new(GraspModel::new(ModelConfig::small()).unwrap(), cfg.clone());
    let clock = Instant::now();
    for _ in 0..2 {
        half.run_epoch(&set, clock).unwrap();
    }
    save_checkpoint(&path, &half.model, Some(&half.adam), half.epoch, &half.metrics, Some(&half.config)).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.header.epoch, 2);
    let mut resumed = Trainer::resume(ck.model, ck.adam.unwrap(), cfg.clone(), ck.header.epoch, ck.header.metrics);
    resumed.train(&set, |_| {}).unwrap();
    assert_eq!(resumed.metrics.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(resumed.metrics.windows(2).all(|w| w[1].wall_time_s >= w[0].wall_time_s));
    assert_eq!(losses(&resumed)[2..], losses(&full)[2..]);
    assert_eq!(resumed.model.store, full.model.store);
}

#[test]
fn frozen_object_encoder_stays_put() {
    let (hands, samples) = grasp_set(2, 2, 4, 48, 6);
    let cfg = TrainConfig {
        freeze_object: true,
        ..quick_train(2)
    };
    let model = GraspModel::new(ModelConfig::small()).unwrap();
    let set = TrainingSet::new(&hands, &samples, &model, &cfg).unwrap();
    let before = model.store.clone();
    let mut t = Trainer::new(model, cfg);
    t.run_epoch(&set, Instant::now()).unwrap();
    let mut moved = false;
    for (id, name, a) in t.model.store.iter() {
        if name.starts_with("object.") {
            assert_eq!(a, before.get(id), "{name}");
        } else {
            moved |= a != before.get(id);
        }
    }
    assert!(moved);
}

#[test]
fn checkpoint_config_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let model = GraspModel::new(ModelConfig::small()).unwrap();
    save_checkpoint(&path, &model, None, 0, &[], None).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let needle = b"\"morph.slots\"";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut renamed = bytes.clone();
    renamed[at..at + needle.len()].copy_from_slice(b"\"morph.slotz\"");
    std::fs::write(&path, &renamed).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::ConfigMismatch(_))));

    let needle = b"\"d_h\":16";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut widened = bytes.clone();
    widened[at..at + needle.len()].copy_from_slice(b"\"d_h\":32");
    std::fs::write(&path, &widened).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::ConfigMismatch(_))));

    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap().model.store, model.store);
}
