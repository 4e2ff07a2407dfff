//! One function per subcommand. Each writes its outputs and a resolved
//! config snapshot into its output directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use xgrasp_core::data::schema::read_xyz;
use xgrasp_core::data::synth::random_objects;
use xgrasp_core::data::{load_dataset, normalize_scene, synth_grasps, synth_hand, write_dataset, Dataset};
use xgrasp_core::gevaluate::{evaluate_grasp, posed_primitives, write_verdicts_csv, GraspVerdict};
use xgrasp_core::kinematics::{kal_weights, WristPose};
use xgrasp_core::morph::tokenize;
use xgrasp_core::nets::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use xgrasp_core::nets::predict::predict_for_hand;
use xgrasp_core::nets::train::{hand_eigengrasps, metrics_csv, pretrain_object, LossKind, Trainer, TrainingSet};
use xgrasp_core::nets::{GraspModel, ObjectPreset};
use xgrasp_core::urdf::{parse_urdf, parse_urdf_with, HandModel, MeshFileBounds};

use crate::config::{resolve, write_snapshot, RunConfig, Snapshot};
use crate::{
    Cli, CliError, Command, EigengraspsArgs, EvaluateArgs, KalArgs, LossArg, Preset, PredictArgs, PretrainArgs, SynthArgs,
    TokenizeArgs, TrainArgs, PROXY_DISCLAIMER,
};

type Res<T> = Result<T, CliError>;

/// Shared per-run context.
struct Run<'a> {
    cli: &'a Cli,
    name: &'static str,
    inputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    fn new(cli: &'a Cli, name: &'static str) -> Self {
        Self {
            cli,
            name,
            inputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, key: &str, value: impl std::fmt::Display) {
        self.inputs.insert(key.to_string(), value.to_string());
    }

    /// File and `--set` layers over `base`, then the global seed.
    fn config(&self, base: &RunConfig) -> Res<RunConfig> {
        let mut cfg = resolve(base, self.cli.config.as_deref(), &self.cli.sets)?;
        if let Some(s) = self.cli.seed {
            cfg.seed = s;
            cfg.model.seed = s;
            cfg.pretrain.seed = s;
            cfg.train.seed = s;
        }
        Ok(cfg)
    }

    fn finish(self, out: &Path, config: RunConfig) -> Res<()> {
        write_snapshot(
            out,
            &Snapshot {
                command: self.name.to_string(),
                inputs: self.inputs,
                config,
            },
        )
    }
}

pub fn dispatch(cli: Cli) -> Res<()> {
    match &cli.command {
        Command::Tokenize(a) => cmd_tokenize(&cli, a),
        Command::Eigengrasps(a) => cmd_eigengrasps(&cli, a),
        Command::PretrainObject(a) => cmd_pretrain_object(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Predict(a) => cmd_predict(&cli, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, a),
        Command::Synth(a) => cmd_synth(&cli, a),
        Command::KalWeights(a) => cmd_kal_weights(&cli, a),
    }
}

fn out_dir(path: &Path) -> Res<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Res<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Res<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

/// Mesh-only links resolve against files next to the URDF.
fn load_hand(path: &Path) -> Res<HandModel> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(parse_urdf_with(&read_text(path)?, &MeshFileBounds::new(dir))?)
}

fn parse_floats(s: &str, what: &str) -> Res<Vec<f64>> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Input(format!("{what}: expected comma-separated numbers, got {s:?}")))
}

fn parse_wrist(s: &str) -> Res<WristPose> {
    let v = parse_floats(s, "--wrist")?;
    if v.len() != 9 {
        return Err(CliError::Input(format!("--wrist: expected 9 numbers, got {}", v.len())));
    }
    let w = WristPose {
        t: [v[0], v[1], v[2]],
        r6: [v[3], v[4], v[5], v[6], v[7], v[8]],
    };
    w.to_isometry()?;
    Ok(w)
}

fn checkpoint(path: &Path) -> Res<Checkpoint> {
    Ok(load_checkpoint(path)?)
}

/// The resolved model settings must describe the checkpoint's network.
fn check_model(cfg: &RunConfig, ck: &Checkpoint, path: &Path) -> Res<()> {
    if cfg.model != ck.header.model {
        return Err(CliError::Input(format!(
            "ConfigMismatch: model settings differ from checkpoint {}",
            path.display()
        )));
    }
    Ok(())
}

fn finite(x: f64, what: &str) -> Res<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(CliError::Numeric(format!("DegenerateInput: {what} is not finite")))
    }
}

fn cmd_tokenize(cli: &Cli, a: &TokenizeArgs) -> Res<()> {
    let mut run = Run::new(cli, "tokenize");
    run.input("urdf", a.urdf.display());
    let cfg = run.config(&RunConfig::default())?;
    let hand = load_hand(&a.urdf)?;
    let tokens = tokenize(&hand, cfg.model.m_max, cfg.model.d_max)?;
    out_dir(&a.out)?;
    write_json(&a.out.join("tokens.json"), &tokens)?;
    println!("{}: M = {}, d = {}", hand.name, tokens.m, tokens.dof());
    run.finish(&a.out, cfg)
}

fn cmd_eigengrasps(cli: &Cli, a: &EigengraspsArgs) -> Res<()> {
    let mut run = Run::new(cli, "eigengrasps");
    run.input("dataset", a.dataset.display());
    run.input("hand", &a.hand);
    let mut cfg = run.config(&RunConfig::default())?;
    if let Some(k) = a.k {
        cfg.model.k = k;
    }
    let ds = load_dataset(&a.dataset)?;
    let idx = ds
        .by_hand()
        .remove(&a.hand)
        .ok_or_else(|| CliError::Input(format!("EmptyDataset: no samples for hand {:?}", a.hand)))?;
    let hand = ds.hand_model(&a.hand)?;
    let own: Vec<_> = idx.iter().map(|&i| &ds.samples[i]).collect();
    let set = hand_eigengrasps(&own, hand.dof(), cfg.model.k, cfg.model.d_max)?;
    out_dir(&a.out)?;
    write_json(&a.out.join("eigengrasps.json"), &set)?;
    println!("{}: K = {}, d = {}, from {} samples", a.hand, set.k, set.d, own.len());
    run.finish(&a.out, cfg)
}

/// One cloud per distinct object, in order of first appearance.
fn object_clouds(ds: &Dataset) -> Vec<Vec<[f64; 3]>> {
    let mut seen = HashSet::new();
    ds.samples
        .iter()
        .filter(|s| seen.insert(s.object_id.clone()))
        .map(|s| s.cloud.clone())
        .collect()
}

fn cmd_pretrain_object(cli: &Cli, a: &PretrainArgs) -> Res<()> {
    let mut run = Run::new(cli, "pretrain-object");
    run.input("dataset", a.dataset.display());
    let mut cfg = run.config(&RunConfig::default())?;
    if let Some(p) = a.preset {
        cfg.model.object_preset = match p {
            Preset::Desk => ObjectPreset::Desk,
            Preset::Paper => ObjectPreset::Paper,
        };
    }
    if let Some(e) = a.epochs {
        cfg.pretrain.epochs = e;
    }
    let ds = load_dataset(&a.dataset)?;
    let clouds = object_clouds(&ds);
    if clouds.is_empty() {
        return Err(CliError::Input("EmptyDataset: no clouds to pretrain on".into()));
    }
    let mut model = GraspModel::new(cfg.model.clone())?;
    let curve = pretrain_object(&mut model, &clouds, &cfg.pretrain)?;
    let last = finite(*curve.last().unwrap_or(&f64::NAN), "final Chamfer distance")?;
    out_dir(&a.out)?;
    save_checkpoint(&a.out.join("object.ckpt"), &model, None, 0, &[], None)?;
    let mut csv = String::from("epoch,chamfer\n");
    for (i, c) in curve.iter().enumerate() {
        csv += &format!("{},{}\n", i + 1, c);
    }
    write_text(&a.out.join("pretrain.csv"), &csv)?;
    println!("{} clouds, {} epochs, final mean Chamfer {last:e}", clouds.len(), curve.len());
    run.finish(&a.out, cfg)
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Res<()> {
    let mut run = Run::new(cli, "train");
    run.input("dataset", a.dataset.display());
    let start = match (&a.init, &a.resume) {
        (Some(p), _) => {
            run.input("init", p.display());
            Some((checkpoint(p)?, p.clone(), false))
        }
        (None, Some(p)) => {
            run.input("resume", p.display());
            Some((checkpoint(p)?, p.clone(), true))
        }
        _ => None,
    };
    let mut base = RunConfig::default();
    if let Some((ck, _, resume)) = &start {
        base.model = ck.header.model.clone();
        if *resume {
            base.train = ck.header.train.clone().unwrap_or_default();
        }
    }
    let mut cfg = run.config(&base)?;
    let t = &mut cfg.train;
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(lr) = a.lr {
        t.lr = lr;
    }
    if let Some(l) = a.loss {
        t.loss = match l {
            LossArg::Kal => LossKind::Kal,
            LossArg::Mse => LossKind::Mse,
        };
    }
    t.teacher_forcing |= a.teacher_forcing;
    t.freeze_object |= a.freeze_object;
    if a.no_augment {
        t.augment = false;
    }
    let ds = load_dataset(&a.dataset)?;
    let mut trainer = match start {
        Some((ck, path, resume)) => {
            check_model(&cfg, &ck, &path)?;
            if resume {
                let adam = ck
                    .adam
                    .ok_or_else(|| CliError::Input(format!("{}: no optimizer state to resume", path.display())))?;
                Trainer::resume(ck.model, adam, cfg.train.clone(), ck.header.epoch, ck.header.metrics)
            } else {
                Trainer::new(ck.model, cfg.train.clone())
            }
        }
        None => Trainer::new(GraspModel::new(cfg.model.clone())?, cfg.train.clone()),
    };
    let set = TrainingSet::from_dataset(&ds, &trainer.model, &cfg.train)?;
    let total = cfg.train.epochs;
    trainer.train(&set, |m| {
        eprintln!(
            "epoch {}/{total}  L_eig {:.4e}  L_KAL {:.4e}  ({:.1}s)",
            m.epoch, m.l_eig, m.l_kal, m.wall_time_s
        )
    })?;
    out_dir(&a.out)?;
    save_checkpoint(
        &a.out.join("model.ckpt"),
        &trainer.model,
        Some(&trainer.adam),
        trainer.epoch,
        &trainer.metrics,
        Some(&trainer.config),
    )?;
    write_text(&a.out.join("metrics.csv"), &metrics_csv(&trainer.metrics))?;
    if let Some(m) = trainer.metrics.last() {
        println!("{} samples, epoch {}: L_eig {:e}, L_KAL {:e}", set.samples.len(), m.epoch, m.l_eig, m.l_kal);
    }
    run.finish(&a.out, cfg)
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    hand: &'a str,
    dof: usize,
    q: &'a [f64],
    q_raw: &'a [f64],
    clamp: &'a [f64],
    amplitudes: &'a [f64],
    eigengrasps: &'a xgrasp_core::eigengrasp::EigengraspSet,
    /// Wrist pose in the centred cloud frame.
    wrist: WristPose,
    cloud_centroid: [f64; 3],
    wall_time_s: f64,
}

#[derive(Serialize)]
struct PrimitiveOut {
    link: String,
    kind: String,
    dims: [f64; 3],
    translation: [f64; 3],
    /// Row-major rotation.
    rotation: [[f64; 3]; 3],
}

#[derive(Serialize)]
struct GeometryOut {
    frame: &'static str,
    wrist: WristPose,
    primitives: Vec<PrimitiveOut>,
    cloud: Vec<[f64; 3]>,
}

fn cmd_predict(cli: &Cli, a: &PredictArgs) -> Res<()> {
    let mut run = Run::new(cli, "predict");
    run.input("checkpoint", a.checkpoint.display());
    run.input("urdf", a.urdf.display());
    run.input("cloud", a.cloud.display());
    run.input("wrist", &a.wrist);
    let ck = checkpoint(&a.checkpoint)?;
    let base = RunConfig {
        model: ck.header.model.clone(),
        ..RunConfig::default()
    };
    let cfg = run.config(&base)?;
    check_model(&cfg, &ck, &a.checkpoint)?;
    let hand = load_hand(&a.urdf)?;
    let cloud = read_xyz(&a.cloud)?;
    let wrist = parse_wrist(&a.wrist)?;
    let p = predict_for_hand(&hand, &cloud, &wrist, &ck.model)?;
    let (centred, _) = normalize_scene(&cloud, &wrist)?;
    let c = xgrasp_core::data::schema::cloud_centroid(&cloud)?;
    out_dir(&a.out)?;
    write_json(
        &a.out.join("prediction.json"),
        &PredictionOut {
            hand: &hand.name,
            dof: hand.dof(),
            q: &p.q,
            q_raw: &p.q_raw,
            clamp: &p.clamp,
            amplitudes: &p.a,
            eigengrasps: &p.eigengrasps,
            wrist: p.wrist,
            cloud_centroid: c,
            wall_time_s: p.wall_time_s,
        },
    )?;
    if a.geometry {
        let prims = posed_primitives(&hand, &p.q, &p.wrist)?
            .into_iter()
            .map(|pp| {
                let r = pp.pose.rotation.to_rotation_matrix();
                let m = r.matrix();
                PrimitiveOut {
                    link: hand.link(pp.link).name.clone(),
                    kind: format!("{:?}", pp.prim.kind).to_lowercase(),
                    dims: pp.prim.dims,
                    translation: pp.pose.translation.vector.into(),
                    rotation: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]),
                }
            })
            .collect();
        write_json(
            &a.out.join("geometry.json"),
            &GeometryOut {
                frame: "centred cloud",
                wrist: p.wrist,
                primitives: prims,
                cloud: centred,
            },
        )?;
    }
    let q: Vec<String> = p.q.iter().map(|x| format!("{x:.4}")).collect();
    println!("q = [{}]", q.join(", "));
    println!("inference {:.4} s per grasp", p.wall_time_s);
    run.finish(&a.out, cfg)
}

#[derive(Serialize)]
struct EvalSummary {
    samples: usize,
    stable: usize,
    proxy_success_rate: f64,
    random_baseline_success_rate: Option<f64>,
    dataset_label_success_rate: Option<f64>,
    mean_inference_s: f64,
    mu: f64,
    note: &'static str,
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Res<()> {
    let mut run = Run::new(cli, "evaluate");
    run.input("checkpoint", a.checkpoint.display());
    run.input("dataset", a.dataset.display());
    let ck = checkpoint(&a.checkpoint)?;
    let base = RunConfig {
        model: ck.header.model.clone(),
        ..RunConfig::default()
    };
    let mut cfg = run.config(&base)?;
    if let Some(mu) = a.mu {
        cfg.eval.mu = mu;
    }
    check_model(&cfg, &ck, &a.checkpoint)?;
    let ds = load_dataset(&a.dataset)?;
    if ds.samples.is_empty() {
        return Err(CliError::Input("EmptyDataset: nothing to evaluate".into()));
    }
    let hands = ds.hand_models()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows: Vec<(String, GraspVerdict)> = Vec::with_capacity(ds.samples.len());
    let (mut random_ok, mut labels, mut label_ok, mut time) = (0usize, 0usize, 0usize, 0.0);
    for (i, s) in ds.samples.iter().enumerate() {
        let hand = &hands[&s.hand_id];
        let p = predict_for_hand(hand, &s.cloud, &s.wrist, &ck.model)?;
        time += p.wall_time_s;
        let v = evaluate_grasp(hand, &p.q, &p.wrist, &s.cloud, &cfg.eval)?;
        rows.push((format!("{i}:{}", s.object_id), v));
        if a.random_baseline {
            let q: Vec<f64> = hand.revolute_limits().into_iter().map(|(lo, hi)| rng.random_range(lo..=hi)).collect();
            random_ok += evaluate_grasp(hand, &q, &s.wrist, &s.cloud, &cfg.eval)?.stable as usize;
        }
        if let Some(l) = s.label {
            labels += 1;
            label_ok += l.stable as usize;
        }
    }
    let n = rows.len();
    let stable = rows.iter().filter(|(_, v)| v.stable).count();
    let summary = EvalSummary {
        samples: n,
        stable,
        proxy_success_rate: stable as f64 / n as f64,
        random_baseline_success_rate: a.random_baseline.then(|| random_ok as f64 / n as f64),
        dataset_label_success_rate: (labels > 0).then(|| label_ok as f64 / labels as f64),
        mean_inference_s: time / n as f64,
        mu: cfg.eval.mu,
        note: PROXY_DISCLAIMER,
    };
    out_dir(&a.out)?;
    write_verdicts_csv(&a.out.join("verdicts.csv"), &rows)?;
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("proxy success rate {:.3} ({stable}/{n})", summary.proxy_success_rate);
    if let Some(r) = summary.random_baseline_success_rate {
        println!("random articulation baseline {r:.3}");
    }
    println!("mean inference {:.4} s per grasp", summary.mean_inference_s);
    println!("{PROXY_DISCLAIMER}");
    run.finish(&a.out, cfg)
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Res<()> {
    let run = Run::new(cli, "synth");
    let mut cfg = run.config(&RunConfig::default())?;
    let sc = &mut cfg.synth;
    if let Some(f) = a.fingers {
        sc.hand.fingers = f;
    }
    if let Some(j) = a.joints {
        sc.hand.joints_per_finger = j;
    }
    if let Some(g) = a.grasps {
        sc.grasps = g;
    }
    if let Some(o) = a.objects {
        sc.objects = o;
    }
    sc.stable_only |= a.stable_only;
    let sc = &cfg.synth;
    let urdf = synth_hand(&sc.hand)?;
    let hand = parse_urdf(&urdf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objects = random_objects(sc.objects, &mut rng);
    let mut samples = synth_grasps(&hand, &sc.hand.name, &objects, sc.grasps, &sc.grasp, &mut rng)?;
    let total = samples.len();
    let stable = samples.iter().filter(|s| s.label.is_some_and(|l| l.stable)).count();
    if sc.stable_only {
        samples.retain(|s| s.label.is_some_and(|l| l.stable));
    }
    out_dir(&a.out)?;
    write_text(&a.out.join("hand.urdf"), &urdf)?;
    write_json(&a.out.join("objects.json"), &objects)?;
    let mut ds = Dataset::new(&a.out);
    ds.hands.insert(sc.hand.name.clone(), PathBuf::from("hand.urdf"));
    ds.samples = samples;
    write_dataset(&a.out.join("dataset.jsonl"), &ds)?;
    println!(
        "{}: d = {}, {} objects, {total} grasps ({stable} stable), {} written",
        sc.hand.name,
        hand.dof(),
        objects.len(),
        ds.samples.len()
    );
    run.finish(&a.out, cfg)
}

#[derive(Serialize)]
struct KalOut {
    joints: Vec<String>,
    q: Vec<f64>,
    weights: Vec<f64>,
}

fn cmd_kal_weights(cli: &Cli, a: &KalArgs) -> Res<()> {
    let mut run = Run::new(cli, "kal-weights");
    run.input("urdf", a.urdf.display());
    if let Some(q) = &a.q {
        run.input("q", q);
    }
    let cfg = run.config(&RunConfig::default())?;
    let hand = load_hand(&a.urdf)?;
    let q = match &a.q {
        Some(s) => parse_floats(s, "--q")?,
        None => vec![0.0; hand.dof()],
    };
    let weights = kal_weights(&hand, &q, &cfg.train.lambda)?;
    let joints: Vec<String> = hand.revolute_joints().into_iter().map(|j| hand.joint(j).name.clone()).collect();
    for (n, w) in joints.iter().zip(&weights) {
        println!("{n}\t{w:.6}");
    }
    out_dir(&a.out)?;
    write_json(&a.out.join("weights.json"), &KalOut { joints, q, weights })?;
    run.finish(&a.out, cfg)
}
