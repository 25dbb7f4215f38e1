use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use urbanmon::ensemble::read_predictions;
use urbanmon::raster::TileCoord;
use urbanmon::synth::{ChangeEvent, EventKind, ScenarioSpec};

fn urbanmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urbanmon"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = urbanmon(args);
    assert!(
        out.status.success(),
        "urbanmon {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 16×16 scene of four 8×8 tiles with one testing tile.
fn tiny_scenario(dir: &Path) -> PathBuf {
    let mut spec = ScenarioSpec::desk();
    spec.height = 16;
    spec.width = 16;
    spec.tile_size = 8;
    spec.duration_days = 80;
    spec.testing_tiles = vec![TileCoord::new(1, 1)];
    spec.events = vec![
        ChangeEvent::with_kind(EventKind::Construction, 2, 2, (4, 4), 30.0, 10.0),
        ChangeEvent::with_kind(EventKind::Destruction, 9, 10, (4, 5), 40.0, 10.0),
        ChangeEvent::with_kind(EventKind::Construction, 10, 1, (3, 4), 35.0, 10.0),
        ChangeEvent::with_kind(EventKind::Construction, 1, 10, (5, 3), 25.0, 10.0),
    ];
    let path = dir.join("scenario.json");
    spec.save(&path).unwrap();
    path
}

/// Synthesizes the tiny scenario and shrinks windows and training to fit it.
fn prepared(dir: &Path) -> PathBuf {
    let spec = tiny_scenario(dir);
    let data = dir.join("data");
    ok(&["synth", "--spec", s(&spec), "--out", s(&data), "--seed", "7"]);
    let run = data.join("run.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&run).unwrap()).unwrap();
    for (k, v) in [
        ("window_days", Value::from(20)),
        ("min_window", Value::from(4)),
        ("max_window", Value::from(10)),
        ("epochs_max", Value::from(2)),
        ("windows_per_tile", Value::from(2)),
        ("first_window_index", Value::from(0)),
        ("offset_range", serde_json::json!([2, 3])),
        ("folds", Value::from(3)),
    ] {
        cfg[k] = v;
    }
    fs::write(&run, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    run
}

#[test]
fn synth_writes_bundle_labels_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_scenario(dir.path());
    let out = dir.path().join("bundle");
    let res = urbanmon(&["synth", "--spec", s(&spec), "--out", s(&out), "--seed", "7"]);
    assert_eq!(res.status.code(), Some(0));
    for f in ["scene.json", "manifest.json", "labels.json", "run.json", "scenario.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn transfer_is_reproducible_and_feeds_predict_combine_eval() {
    let dir = tempfile::tempdir().unwrap();
    let run = prepared(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for r in [&a, &b] {
        ok(&["--threads", "1", "transfer", "--config", s(&run), "--variant", "1", "--run-dir", s(r)]);
    }
    for f in ["model.json", "model.bin"] {
        let x = fs::read(a.join("V1_best").join(f)).unwrap();
        let y = fs::read(b.join("V1_best").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    assert!(a.join("folds.json").exists() && a.join("config.json").exists() && a.join("V1_trace.csv").exists());

    let pred = dir.path().join("pred");
    ok(&["predict", "--config", s(&run), "--run-dir", s(&a), "--dataset", "all", "--out", s(&pred)]);
    ok(&["combine", "--pred", s(&pred)]);
    let preds = read_predictions(&pred).unwrap();
    assert_eq!(preds.iter().filter(|p| p.model == "combined").count(), 4);

    let labels = dir.path().join("data/labels.json");
    let metrics = dir.path().join("metrics");
    ok(&["eval", "--pred", s(&pred), "--labels", s(&labels), "--dataset", "all", "--exclude", "1:1", "--out", s(&metrics)]);
    let summary: Vec<Value> = serde_json::from_str(&fs::read_to_string(metrics.join("metrics.json")).unwrap()).unwrap();
    let models: Vec<&str> = summary.iter().map(|m| m["model"].as_str().unwrap()).collect();
    assert_eq!(models, ["V1", "combined"]);
    assert!(summary.iter().all(|m| m["dataset"] == "all-"));
    assert!(metrics.join("combined_all-_roc.csv").exists());

    let everything = urbanmon(&[
        "eval", "--pred", s(&pred), "--labels", s(&labels), "--dataset", "all",
        "--exclude", "0:0,0:1,1:0,1:1", "--out", s(&metrics),
    ]);
    assert_eq!(everything.status.code(), Some(2));

    // trace length equals the number of windows and its maximum is the tile prediction
    let trace = ok(&["trace", "--config", s(&run), "--model", s(&a.join("V1_best")), "--tile", "0:0", "--pixel", "2,3", "--pixel", "5,5"]);
    let text = String::from_utf8(trace.stdout).unwrap();
    let tile = preds.iter().find(|p| p.model == "V1" && p.coord == TileCoord::new(0, 0)).unwrap();
    for (r, c) in [(2usize, 3usize), (5, 5)] {
        let values: Vec<f32> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|f| f[3] == r.to_string() && f[4] == c.to_string())
            .map(|f| f[7].parse().unwrap())
            .collect();
        assert_eq!(values.len(), tile.windows);
        let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(max, tile.raster.get(r, c));
    }
    let outside = urbanmon(&["trace", "--config", s(&run), "--run-dir", s(&a), "--tile", "0:0", "--pixel", "8,0"]);
    assert_eq!(outside.status.code(), Some(2));
}

#[test]
fn stack_windows_and_ablate_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = prepared(dir.path());
    let stack = dir.path().join("stack");
    ok(&["stack", "--config", s(&run), "--out", s(&stack)]);
    let frames: Vec<Value> = serde_json::from_str(&fs::read_to_string(stack.join("frames.json")).unwrap()).unwrap();
    let stale = dir.path().join("stale");
    ok(&["stack", "--config", s(&run), "--out", s(&stale), "--opt-step", "inf"]);
    let stale_frames: Vec<Value> = serde_json::from_str(&fs::read_to_string(stale.join("frames.json")).unwrap()).unwrap();
    assert_eq!(frames, stale_frames);

    let windows = dir.path().join("windows");
    ok(&["windows", "--config", s(&run), "--out", s(&windows)]);
    let tiles: Vec<Value> = serde_json::from_str(&fs::read_to_string(windows.join("windows.json")).unwrap()).unwrap();
    assert_eq!(tiles.len(), 4);
    assert!(tiles.iter().all(|t| t["windows"].as_array().unwrap().iter().all(|w| w["frames"].as_u64().unwrap() >= 4)));

    let run_dir = dir.path().join("run");
    ok(&["transfer", "--config", s(&run), "--variant", "2", "--run-dir", s(&run_dir), "--epochs", "1"]);
    let ablation = dir.path().join("ablation");
    ok(&[
        "ablate", "--config", s(&run), "--run-dir", s(&run_dir), "--dataset", "all",
        "--deltas", "inf", "--axes", "OPT", "--out", s(&ablation),
    ]);
    let csv = fs::read_to_string(ablation.join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("mode_axis,delta_days,model,roc_auc,pr_auc,kappa_max,kappa_argmax"));
    let cells: Vec<String> = lines.map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(cells, ["both,2,V2", "both,2,combined", "OPT,inf,V2", "OPT,inf,combined"]);
}

#[test]
fn exit_codes_and_metadata() {
    let count = ok(&["param-count"]);
    assert_eq!(String::from_utf8(count.stdout).unwrap().trim(), "71401");
    let version = ok(&["--version"]);
    assert!(String::from_utf8(version.stdout).unwrap().contains("checkpoint format 1"));
    assert_eq!(urbanmon(&["transfer", "--no-such-flag"]).status.code(), Some(1));
    // no run directory configured
    assert_eq!(urbanmon(&["transfer"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let res = urbanmon(&["windows", "--bundle", s(&missing), "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(2));
}
