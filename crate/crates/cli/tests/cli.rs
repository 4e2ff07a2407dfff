use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xgrasp_core::data::{load_dataset, write_dataset, Dataset, GraspSample};
use xgrasp_core::kinematics::WristPose;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xgrasp"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read(path: PathBuf) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

/// A small seeded synthetic dataset shared by several tests.
fn synth(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--grasps", "12", "--objects", "4", "--out", name];
    args.extend(extra);
    ok(dir, &args);
}

#[test]
fn tokenize_fixture() {
    let d = tempfile::tempdir().unwrap();
    let urdf = fixture("three_finger.urdf");
    let stdout = ok(d.path(), &["tokenize", "--urdf", urdf.to_str().unwrap(), "--out", "a"]);
    assert!(stdout.contains("M = 12"));
    let t = json(d.path().join("a/tokens.json"));
    assert_eq!(t["M"], 12);
    let rho = t["rho"].as_array().unwrap();
    assert_eq!(rho.len(), 32);
    assert_eq!(rho.iter().filter(|v| v.as_bool().unwrap()).count(), 9);
    ok(d.path(), &["tokenize", "--urdf", urdf.to_str().unwrap(), "--out", "b"]);
    for f in ["tokens.json", "run_config.toml"] {
        assert_eq!(read(d.path().join("a").join(f)), read(d.path().join("b").join(f)));
    }
}

#[test]
fn malformed_urdf_exits_with_input_code() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.urdf"), "<robot name='x'><link").unwrap();
    let out = run(d.path(), &["tokenize", "--urdf", "bad.urdf", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("MalformedDocument"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn missing_inputs_exit_with_input_code() {
    let d = tempfile::tempdir().unwrap();
    let out = run(d.path(), &["pretrain-object", "--dataset", "nope.jsonl", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d.path(), &["--set", "train.epoch=3", "synth", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("train.epoch"));
    let out = run(d.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_every_command() {
    let out = String::from_utf8(bin().arg("--help").output().unwrap().stdout).unwrap();
    for c in ["tokenize", "eigengrasps", "pretrain-object", "train", "predict", "evaluate", "synth", "kal-weights"] {
        assert!(out.contains(c), "{c}");
    }
    let out = String::from_utf8(bin().args(["train", "--help"]).output().unwrap().stdout).unwrap();
    assert!(out.contains("--loss") && out.contains("default"));
}

fn rank_one_dataset(dir: &Path) {
    let hand = std::fs::read_to_string(fixture("three_finger.urdf")).unwrap();
    std::fs::write(dir.join("hand.urdf"), hand).unwrap();
    let v = [0.1, 0.2, 0.3, -0.1, 0.4, 0.0, 0.2, -0.3, 0.5];
    let mut ds = Dataset::new(dir);
    ds.hands.insert("h".into(), "hand.urdf".into());
    for i in 0..15 {
        let s = (i as f64 - 6.0) * 0.3;
        ds.samples.push(GraspSample {
            hand_id: "h".into(),
            object_id: format!("o{i}"),
            cloud: vec![[0.01, 0.0, 0.0], [-0.01, 0.0, 0.0]],
            cloud_ref: None,
            wrist: WristPose::identity(),
            q: v.iter().map(|x| x * s).collect(),
            label: None,
        });
    }
    write_dataset(&dir.join("r1.jsonl"), &ds).unwrap();
}

#[test]
fn eigengrasps_of_rank_one_data() {
    let d = tempfile::tempdir().unwrap();
    rank_one_dataset(d.path());
    ok(d.path(), &["eigengrasps", "--dataset", "r1.jsonl", "--hand", "h", "--out", "e"]);
    let e = json(d.path().join("e/eigengrasps.json"));
    assert_eq!(e["K"], 9);
    let rows = e["E"].as_array().unwrap();
    assert_eq!(rows.len(), 9);
    let e1: Vec<f64> = rows[0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let v = [0.1, 0.2, 0.3, -0.1, 0.4, 0.0, 0.2, -0.3, 0.5];
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = e1.iter().zip(&v).map(|(a, b)| a * b / n).sum();
    assert!((dot.abs() - 1.0).abs() < 1e-10);
    assert!(e1[9..].iter().all(|&x| x == 0.0));
    ok(d.path(), &["eigengrasps", "--dataset", "r1.jsonl", "--hand", "h", "--out", "e2"]);
    assert_eq!(read(d.path().join("e/eigengrasps.json")), read(d.path().join("e2/eigengrasps.json")));
    ok(d.path(), &["eigengrasps", "--dataset", "r1.jsonl", "--hand", "h", "--k", "3", "--out", "e3"]);
    assert_eq!(json(d.path().join("e3/eigengrasps.json"))["K"], 3);
    assert_eq!(run(d.path(), &["eigengrasps", "--dataset", "r1.jsonl", "--hand", "zz", "--out", "e4"]).status.code(), Some(2));
}

#[test]
fn synth_outputs_and_seeds() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["synth", "--fingers", "3", "--joints", "3", "--grasps", "200", "--out", "s"]);
    assert!(out.contains("d = 9"), "{out}");
    let ds = load_dataset(&d.path().join("s/dataset.jsonl")).unwrap();
    assert_eq!(ds.samples.len(), 200);
    assert!(ds.samples.iter().all(|s| s.q.len() == 9 && s.label.is_some()));
    let urdf = std::fs::read_to_string(d.path().join("s/hand.urdf")).unwrap();
    assert_eq!(xgrasp_core::urdf::parse_urdf(&urdf).unwrap().dof(), 9);
    synth(d.path(), "a", &[]);
    synth(d.path(), "b", &[]);
    ok(d.path(), &["--seed", "5", "synth", "--grasps", "12", "--objects", "4", "--out", "c"]);
    assert_eq!(read(d.path().join("a/dataset.jsonl")), read(d.path().join("b/dataset.jsonl")));
    assert_ne!(read(d.path().join("a/dataset.jsonl")), read(d.path().join("c/dataset.jsonl")));
    synth(d.path(), "st", &["--stable-only"]);
    let st = load_dataset(&d.path().join("st/dataset.jsonl")).unwrap();
    assert!(st.samples.iter().all(|s| s.label.unwrap().stable));
}

#[test]
fn pretrain_is_seeded() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "s", &[]);
    let a = ok(d.path(), &["pretrain-object", "--dataset", "s/dataset.jsonl", "--epochs", "3", "--out", "p1"]);
    let b = ok(d.path(), &["pretrain-object", "--dataset", "s/dataset.jsonl", "--epochs", "3", "--out", "p2"]);
    assert_eq!(a, b);
    assert_eq!(read(d.path().join("p1/pretrain.csv")), read(d.path().join("p2/pretrain.csv")));
    assert_eq!(read(d.path().join("p1/object.ckpt")), read(d.path().join("p2/object.ckpt")));
    let csv = String::from_utf8(read(d.path().join("p1/pretrain.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn train_resume_predict_evaluate() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "s", &[]);
    let small = [
        "--set", "model.d_h=16", "--set", "model.d_embed=8", "--set", "model.d_m=8", "--set", "model.morph_depth=1",
        "--set", "model.amp_depth=1", "--set", "model.decoder_points=16", "--set", "model.decoder_hidden=16",
    ];
    let with = |extra: &[&str]| -> Vec<String> { small.iter().chain(extra).map(|s| s.to_string()).collect() };
    let args = with(&["train", "--dataset", "s/dataset.jsonl", "--epochs", "2", "--batch-size", "4", "--out", "t1"]);
    ok(d.path(), &args.iter().map(String::as_str).collect::<Vec<_>>());
    let args = with(&["train", "--dataset", "s/dataset.jsonl", "--resume", "t1/model.ckpt", "--epochs", "4", "--out", "t2"]);
    ok(d.path(), &args.iter().map(String::as_str).collect::<Vec<_>>());
    let m1 = String::from_utf8(read(d.path().join("t1/metrics.csv"))).unwrap();
    let m2 = String::from_utf8(read(d.path().join("t2/metrics.csv"))).unwrap();
    assert_eq!(m2.lines().next().unwrap(), "epoch,L_eig,L_KAL,L_total,wall_time_s");
    assert_eq!(m2.lines().count(), 5);
    assert_eq!(m1.lines().nth(2), m2.lines().nth(2));
    let epochs: Vec<&str> = m2.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["1", "2", "3", "4"]);

    let args = with(&["train", "--dataset", "s/dataset.jsonl", "--epochs", "1", "--loss", "mse", "--out", "t3"]);
    ok(d.path(), &args.iter().map(String::as_str).collect::<Vec<_>>());
    let snap = std::fs::read_to_string(d.path().join("t3/run_config.toml")).unwrap();
    assert!(snap.contains("loss = \"mse\""), "{snap}");
    assert!(snap.contains("command = \"train\""));

    let ds = load_dataset(&d.path().join("s/dataset.jsonl")).unwrap();
    let s = &ds.samples[0];
    let cloud: String = s.cloud.iter().map(|p| format!("{} {} {}\n", p[0] + 0.2, p[1], p[2])).collect();
    std::fs::write(d.path().join("c.xyz"), cloud).unwrap();
    let w: Vec<String> = s.wrist.t.iter().enumerate().map(|(i, x)| (x + if i == 0 { 0.2 } else { 0.0 }).to_string()).chain(s.wrist.r6.iter().map(|x| x.to_string())).collect();
    let w = w.join(",");
    let pred = ["predict", "--checkpoint", "t2/model.ckpt", "--urdf", "s/hand.urdf", "--cloud", "c.xyz", "--wrist", &w, "--geometry", "--out", "p"];
    let out = ok(d.path(), &pred);
    assert!(out.contains("per grasp"));
    let p = json(d.path().join("p/prediction.json"));
    assert_eq!(p["q"].as_array().unwrap().len(), 9);
    assert_eq!(p["dof"], 9);
    assert!(p["wall_time_s"].as_f64().unwrap() > 0.0);
    let g = json(d.path().join("p/geometry.json"));
    let prims = g["primitives"].as_array().unwrap();
    assert!(prims.iter().any(|p| p["kind"] == "sphere"));
    assert!(prims.len() >= 10);
    assert_eq!(g["cloud"].as_array().unwrap().len(), s.cloud.len());
    assert!((p["wrist"]["t"][0].as_f64().unwrap() - s.wrist.t[0]).abs() < 1e-9);

    let eval = ["evaluate", "--checkpoint", "t2/model.ckpt", "--dataset", "s/dataset.jsonl", "--random-baseline", "--out", "e1"];
    let out = ok(d.path(), &eval);
    assert!(out.contains("proxy success rate") && out.contains("not a physics-simulated"));
    let csv = String::from_utf8(read(d.path().join("e1/verdicts.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + ds.samples.len());
    let sum = json(d.path().join("e1/summary.json"));
    assert!(sum["proxy_success_rate"].is_f64() && sum["random_baseline_success_rate"].is_f64());
    let mut eval2 = eval;
    eval2[7] = "e2";
    ok(d.path(), &eval2);
    assert_eq!(csv.as_bytes(), read(d.path().join("e2/verdicts.csv")));

    let bad = ["evaluate", "--checkpoint", "t2/model.ckpt", "--dataset", "s/dataset.jsonl", "--set", "model.d_h=32", "--out", "e3"];
    assert_eq!(run(d.path(), &bad).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_code_3() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "s", &[]);
    let out = run(
        d.path(),
        &["--set", "model.d_h=16", "--set", "model.d_embed=8", "--set", "train.lr=nan", "train", "--dataset", "s/dataset.jsonl", "--epochs", "2", "--out", "t"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stderr).unwrap().contains("DegenerateInput"));
}

#[test]
fn kal_weights_command() {
    let d = tempfile::tempdir().unwrap();
    let urdf = fixture("three_finger.urdf");
    ok(d.path(), &["kal-weights", "--urdf", urdf.to_str().unwrap(), "--q", "0.1,0.2,0.3,0.1,0.2,0.3,0.1,0.2,0.3", "--out", "k"]);
    let k = json(d.path().join("k/weights.json"));
    let w: Vec<f64> = k["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(w.len(), 9);
    assert!((w.iter().sum::<f64>() / 9.0 - 1.0).abs() < 1e-9);
    let out = run(d.path(), &["kal-weights", "--urdf", urdf.to_str().unwrap(), "--q", "0.1,0.2", "--out", "k2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tokenize_resolves_meshes_next_to_the_urdf() {
    let d = tempfile::tempdir().unwrap();
    let urdf = r#"<robot name="m"><link name="palm"/>
        <link name="f"><collision><geometry><mesh filename="package://hand/f.obj"/></geometry></collision></link>
        <joint name="j" type="revolute"><parent link="palm"/><child link="f"/><axis xyz="0 0 1"/><limit lower="0" upper="1"/></joint></robot>"#;
    std::fs::write(d.path().join("m.urdf"), urdf).unwrap();
    ok(d.path(), &["tokenize", "--urdf", "m.urdf", "--out", "dummy"]);
    std::fs::write(d.path().join("f.obj"), "v 0 0 0\nv 0.02 0.01 0.04\n").unwrap();
    ok(d.path(), &["tokenize", "--urdf", "m.urdf", "--out", "boxed"]);
    let row = |dir: &str| json(d.path().join(dir).join("tokens.json"))["raw"][0].clone();
    let boxed: Vec<f64> = row("boxed").as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_ne!(row("dummy"), row("boxed"));
    assert!(boxed.iter().any(|&x| (x - 0.04).abs() < 1e-12), "{boxed:?}");
}
