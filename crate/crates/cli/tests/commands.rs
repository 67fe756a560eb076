use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

use scene_informer::numerics::Checkpoint;
use scene_informer::scene::{featurize, prepare_scene, read_scenes, write_scenes, Vec2};
use scene_informer::train::{build_samples, SampleSpec, Trainer};
use scene_informer::geometry::RegimeMode;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scene-informer")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scenes plus a briefly trained checkpoint, shared across tests.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn scenes(&self) -> PathBuf {
        self.dir.path().join("scenes.jsonl")
    }

    fn ckpt(&self) -> PathBuf {
        self.dir.path().join("run/final.ckpt")
    }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        ok(&["generate", "--count", "6", "--seed", "3", "--out", s(&f.scenes())]);
        let run_dir = f.dir.path().join("run");
        ok(&["train", "--data", s(&f.scenes()), "--out", s(&run_dir), "--steps", "2", "--seed", "1"]);
        f
    })
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    ok(&["generate", "--count", "10", "--seed", "7", "--out", s(&a)]);
    ok(&["generate", "--count", "10", "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_scenes(&a).unwrap().len(), 10);
    let meta: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.jsonl.meta.json")).unwrap()).unwrap();
    assert!(meta["tool_version"].is_string());
}

#[test]
fn generate_zero_scenes_writes_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.jsonl");
    ok(&["generate", "--count", "0", "--out", s(&out)]);
    assert!(read_scenes(&out).unwrap().is_empty());
}

#[test]
fn bad_template_key_exits_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.toml");
    std::fs::write(&cfg, "count = 2\n[[templates]]\nkind = \"straight_road\"\nlane_countz = 3\n").unwrap();
    let out = run(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("templates[0]") && err.contains("lane_countz"), "{err}");
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["annotate", "--scene-file", s(&dir.path().join("nope.jsonl")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_writes_epoch_and_final_checkpoints() {
    let f = fixture();
    let run_dir = f.dir.path().join("run");
    assert!(f.ckpt().is_file());
    assert!(run_dir.join("epoch_001.ckpt").is_file());
    let log = std::fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 2);
    assert!(run_dir.join("train_log.jsonl.meta.json").is_file());
}

#[test]
fn eval_sweep_is_deterministic_and_has_five_regimes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["eval", "--ckpt", s(&f.ckpt()), "--data", s(&f.scenes()), "--n-anchors", "8", "--out", s(out)]);
    }
    let csv = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(csv.as_bytes(), std::fs::read(b.join("metrics.csv")).unwrap());
    let mut regimes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    regimes.dedup();
    assert_eq!(regimes, ["0%", "25%", "50%", "75%", "100%"]);
    let report: Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 5);
    assert!(report["tool_version"].is_string() && report["config"].is_object());
}

#[test]
fn single_sweep_point_gives_one_block() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&["eval", "--ckpt", s(&f.ckpt()), "--data", s(&f.scenes()), "--sweep", "0", "--n-anchors", "8", "--out", s(dir.path())]);
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 1);
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(text.matches("[0%]").count(), 1);
}

#[test]
fn incompatible_checkpoint_exits_with_two() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = std::fs::read(f.ckpt()).unwrap();
    bytes[8] = 9;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let out = run(&["eval", "--ckpt", s(&bad), "--data", s(&f.scenes()), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));

    let mut scenes = read_scenes(&f.scenes()).unwrap();
    for sc in &mut scenes {
        sc.future -= 1;
        for a in &mut sc.agents {
            a.states.pop();
        }
    }
    let short = dir.path().join("short.jsonl");
    write_scenes(&short, &scenes).unwrap();
    let out = run(&["eval", "--ckpt", s(&f.ckpt()), "--data", s(&short), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

/// A scene and an occluder that casts a shadow.
fn query_target(scenes: &Path) -> (String, String) {
    let scenes = read_scenes(scenes).unwrap();
    let spec = SampleSpec { regime: RegimeMode::SingleOccluder, occlusion_anchors: 4, seed: 0 };
    let s = build_samples(&scenes, &spec).unwrap().0.remove(0);
    (s.scene_id, s.occluder_id)
}

#[test]
fn infer_writes_anchors_in_the_scene_frame() {
    let f = fixture();
    let (scene_id, occluder) = query_target(&f.scenes());
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("q.json");
    ok(&[
        "infer", "--ckpt", s(&f.ckpt()), "--scene-file", s(&f.scenes()), "--scene-id", &scene_id,
        "--occluder-id", &occluder, "--n-anchors", "48", "--out", s(&out_path),
    ]);
    let out: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert!(out["tool_version"].is_string());
    let anchors = out["anchors"].as_array().unwrap();

    let scene = read_scenes(&f.scenes()).unwrap().into_iter().find(|x| x.scene_id == scene_id).unwrap();
    let prepared = prepare_scene(&scene).unwrap();
    let t = prepared.prediction_step();
    let observed = prepared.agents.iter().filter(|a| a.state_at(t).is_some_and(|st| st.observed)).count();
    let occlusion = anchors.iter().filter(|a| a["source"].get("occlusion").is_some()).count();
    assert_eq!(occlusion, 48);
    assert_eq!(anchors.len(), 48 + observed);

    // observed anchors sit on the agents' file-frame positions
    for a in anchors.iter().filter_map(|a| a["source"]["observed_agent"].as_str().map(|id| (id, a))) {
        let st = scene.agent(a.0).unwrap().state_at(t).unwrap();
        assert!((a.1["x"].as_f64().unwrap() - st.x).abs() < 1e-6);
        assert!((a.1["y"].as_f64().unwrap() - st.y).abs() < 1e-6);
    }

    // means projected back into the ego frame match a direct forward pass
    let trainer = Trainer::from_checkpoint(&Checkpoint::load(&f.ckpt()).unwrap()).unwrap();
    let frame = scene.ego_frame().unwrap();
    let positions: Vec<Vec2> =
        anchors.iter().map(|a| frame.to_local(Vec2::new(a["x"].as_f64().unwrap(), a["y"].as_f64().unwrap()))).collect();
    let preds = trainer.model.predict(&trainer.store, &featurize(&prepared).unwrap(), &positions).unwrap();
    for (a, p) in anchors.iter().zip(&preds) {
        assert!((a["p_occ"].as_f64().unwrap() - p.p_occ).abs() < 1e-6);
        for (mode, want) in a["modes"].as_array().unwrap().iter().zip(&p.trajectories) {
            for (g, w) in mode.as_array().unwrap().iter().zip(want) {
                let local = frame.to_local(Vec2::new(g[0].as_f64().unwrap(), g[1].as_f64().unwrap()));
                assert!((local.x - w[0]).abs() < 1e-6 && (local.y - w[1]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn infer_rejects_unknown_or_shadowless_occluders() {
    let f = fixture();
    let (scene_id, occluder) = query_target(&f.scenes());
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("q.json");
    let query = |file: &Path, occ: &str| {
        run(&[
            "infer", "--ckpt", s(&f.ckpt()), "--scene-file", s(file), "--scene-id", &scene_id, "--occluder-id", occ,
            "--out", s(&out_path),
        ])
    };
    let out = query(&f.scenes(), "no-such-agent");
    assert_eq!(out.status.code(), Some(2));

    // move the occluder far outside the crop radius
    let mut scenes = read_scenes(&f.scenes()).unwrap();
    let sc = scenes.iter_mut().find(|x| x.scene_id == scene_id).unwrap();
    for st in &mut sc.agents.iter_mut().find(|a| a.id == occluder).unwrap().states {
        st.x += 1e4;
    }
    let moved = dir.path().join("moved.jsonl");
    write_scenes(&moved, &scenes).unwrap();
    let out = query(&moved, &occluder);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no occlusion"));
}

#[test]
fn annotate_fills_occlusions_and_anchors() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ann.jsonl");
    ok(&["annotate", "--scene-file", s(&f.scenes()), "--regime", "partial:0.5", "--n-anchors", "6", "--out", s(&out)]);
    let scenes = read_scenes(&out).unwrap();
    assert!(!scenes.is_empty());
    assert!(scenes.iter().all(|sc| sc.occlusions.as_ref().is_some_and(|o| !o.is_empty()) && sc.anchors.as_ref().is_some_and(|a| !a.is_empty())));
    let bad = run(&["annotate", "--scene-file", s(&f.scenes()), "--regime", "partial:2", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn params_reports_both_presets() {
    let out = ok(&["params"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("desk: 321308"), "{text}");
    assert!(text.contains("full:"));
}
