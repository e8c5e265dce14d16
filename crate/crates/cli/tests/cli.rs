use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

const TINY: &str = r#"{
  "layers": 1, "heads": 2, "model_dim": 16, "ff_dim": 32,
  "train": {"batch_size": 8, "total_steps": 40, "warmup_steps": 2}
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_heterodiff"));
    c.env_remove("HETERODIFF_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A shared directory with a corpus, its split and a tiny trained model.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        std::fs::write(dir.join("tiny.json"), TINY).unwrap();
        ok(&dir, &["--config", "tiny.json", "synth", "--n", "200", "--seed", "7", "--out", "corpus.json"]);
        ok(&dir, &["ingest", "corpus.json", "--out-dir", "split"]);
        ok(&dir, &["--config", "tiny.json", "train", "--corpus", "split", "--out", "model.ck", "--log", "loss.csv", "--quiet"]);
        dir
    })
}

fn layouts(v: &Value) -> &Vec<Value> {
    v["layouts"].as_array().unwrap()
}

fn types_of(layout: &Value) -> Vec<String> {
    let mut t: Vec<String> = layout["elements"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["type"].as_str().unwrap().to_string())
        .collect();
    t.sort();
    t
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        ok(dir.path(), &["synth", "--n", "300", "--seed", "7", "--out", name]);
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(layouts(&read_json(&dir.path().join("a.json"))).len(), 300);
}

#[test]
fn ingest_reports_split_sizes() {
    let dir = fixture();
    let out = ok(dir, &["ingest", "corpus.json", "--out-dir", "split2"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("train 180 (90.0%)"), "{text}");
    assert!(text.contains("val 10 (5.0%)") && text.contains("test 10 (5.0%)"), "{text}");
    for (name, n) in [("train", 180), ("val", 10), ("test", 10)] {
        assert_eq!(layouts(&read_json(&dir.join("split2").join(format!("{name}.json")))).len(), n);
    }
}

#[test]
fn malformed_input_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"canvas\": {\"w\": 1, \"h\": 1},\n \"layouts\": [ nope ]}").unwrap();
    let out = run(dir.path(), &["ingest", "bad.json", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = run(dir.path(), &["eval", "--generated", "missing.json", "--reference", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["--profile", "huge", "synth", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(bin().arg("--help").output().unwrap().status.success());
}

#[test]
fn resumed_training_reproduces_the_uninterrupted_log() {
    let dir = fixture();
    let cfg = ["--config", "tiny.json", "--seed", "3"];
    let train = |extra: &[&str]| {
        let mut args: Vec<&str> = cfg.to_vec();
        args.extend(["train", "--corpus", "split", "--quiet"]);
        args.extend(extra);
        ok(dir, &args);
    };
    train(&["--steps", "6", "--out", "full.ck", "--log", "full.csv"]);
    train(&["--steps", "3", "--out", "half.ck", "--log", "half.csv"]);
    train(&["--steps", "6", "--resume", "half.ck", "--out", "half.ck", "--log", "half.csv"]);
    let full = std::fs::read_to_string(dir.join("full.csv")).unwrap();
    let half = std::fs::read_to_string(dir.join("half.csv")).unwrap();
    assert_eq!(full.lines().count(), 7);
    assert_eq!(full, half);
}

#[test]
fn loss_log_feeds_the_plot_command() {
    let dir = fixture();
    let log = std::fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 41);
    ok(dir, &["plot", "loss", "--log", "loss.csv", "--out", "loss.svg"]);
    ok(dir, &["plot", "schedule", "--out", "schedule.svg"]);
    for f in ["loss.svg", "schedule.svg"] {
        let text = std::fs::read_to_string(dir.join(f)).unwrap();
        roxmltree::Document::parse(&text).unwrap();
        assert!(text.contains("<polyline"));
    }
}

#[test]
fn gentype_outputs_exactly_the_requested_types() {
    let dir = fixture();
    ok(dir, &["sample", "--checkpoint", "model.ck", "--mode", "gentype", "--types", "toolbar,text,text", "--n", "5", "--out", "gt.json"]);
    let v = read_json(&dir.join("gt.json"));
    assert_eq!(layouts(&v).len(), 5);
    for l in layouts(&v) {
        assert_eq!(types_of(l), ["text", "text", "toolbar"]);
    }
    let out = run(dir, &["sample", "--checkpoint", "model.ck", "--mode", "gentype", "--types", "sofa", "--out", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_has_one_frame_per_reverse_step() {
    let dir = fixture();
    ok(dir, &["sample", "--checkpoint", "model.ck", "--mode", "ugen", "--n", "3", "--out", "u.json", "--trace", "u_trace.json"]);
    let trace = read_json(&dir.join("u_trace.json"));
    let samples = trace["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 3);
    for s in samples {
        let frames = s["frames"].as_array().unwrap();
        assert_eq!(frames.len(), 50);
        assert_eq!(frames.last().unwrap()["t"], 0);
        assert_eq!(frames[0]["t"], 49);
    }
}

#[test]
fn fixed_seed_gives_identical_samples() {
    let dir = fixture();
    for (seed, name) in [("5", "s1.json"), ("5", "s2.json"), ("6", "s3.json")] {
        ok(dir, &["--seed", seed, "sample", "--checkpoint", "model.ck", "--mode", "ugen", "--n", "6", "--out", name]);
    }
    let s1 = std::fs::read(dir.join("s1.json")).unwrap();
    assert_eq!(s1, std::fs::read(dir.join("s2.json")).unwrap());
    assert_ne!(s1, std::fs::read(dir.join("s3.json")).unwrap());
    // The environment variable is the fallback seed.
    let out = bin()
        .current_dir(dir)
        .env("HETERODIFF_SEED", "5")
        .args(["sample", "--checkpoint", "model.ck", "--mode", "ugen", "--n", "6", "--out", "s4.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(s1, std::fs::read(dir.join("s4.json")).unwrap());
}

#[test]
fn refine_keeps_types_and_count() {
    let dir = fixture();
    ok(dir, &["sample", "--checkpoint", "model.ck", "--mode", "refine", "--input", "split/test.json", "--t-refine", "5", "--out", "refined.json"]);
    let input = read_json(&dir.join("split/test.json"));
    let output = read_json(&dir.join("refined.json"));
    assert_eq!(layouts(&input).len(), layouts(&output).len());
    for (a, b) in layouts(&input).iter().zip(layouts(&output)) {
        assert_eq!(types_of(a), types_of(b));
    }
}

#[test]
fn corrupt_frames_span_clean_to_fully_masked() {
    let dir = fixture();
    ok(dir, &["corrupt", "split/test.json", "--index", "2", "--out", "cor.json", "--dump-matrices", "mats"]);
    let v = read_json(&dir.join("cor.json"));
    let frames = v["samples"][0]["frames"].as_array().unwrap();
    let ts: Vec<u64> = frames.iter().map(|f| f["t"].as_u64().unwrap()).collect();
    assert_eq!(ts, [0, 8, 17, 25, 33, 42, 50]);
    let test_split = read_json(&dir.join("split/test.json"));
    let input = &layouts(&test_split)[2];
    assert_eq!(frames[0]["elements"], input["elements"]);
    let last = frames[6]["elements"].as_array().unwrap();
    assert_eq!(last.len(), input["elements"].as_array().unwrap().len());
    assert!(last.iter().all(|e| e["type"] == "MASK"));
    // Rows of every dumped matrix sum to one.
    let csv = std::fs::read_to_string(dir.join("mats/coord_cum_t025.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);
    for line in csv.lines() {
        let s: f64 = line.split(',').map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert!(dir.join("mats/type_step_t050.csv").exists());
}

#[test]
fn eval_is_deterministic_and_self_consistent() {
    let dir = fixture();
    let a = ok(dir, &["eval", "--generated", "split/test.json", "--reference", "split/test.json"]).stdout;
    let b = ok(dir, &["eval", "--generated", "split/test.json", "--reference", "split/test.json"]).stdout;
    assert_eq!(a, b);
    let r: Value = serde_json::from_slice(&a).unwrap();
    assert!((r["miou"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r["align"], r["reference"]["align"]);
    assert_eq!(r["overlap"], r["reference"]["overlap"]);
    assert_eq!(r["n_generated"], 10);
}

#[test]
fn render_writes_one_rect_per_element() {
    let dir = fixture();
    ok(dir, &["render", "split/test.json", "--out-dir", "svg"]);
    let input = read_json(&dir.join("split/test.json"));
    let mut fills: std::collections::HashMap<String, String> = Default::default();
    for (i, l) in layouts(&input).iter().enumerate() {
        let text = std::fs::read_to_string(dir.join(format!("svg/layout{i:04}.svg"))).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let rects: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("rect")).collect();
        assert_eq!(rects.len(), l["elements"].as_array().unwrap().len());
        for r in rects {
            let ty = r.children().find(|c| c.has_tag_name("title")).unwrap().text().unwrap().to_string();
            let fill = r.attribute("fill").unwrap().to_string();
            assert_eq!(fills.entry(ty).or_insert_with(|| fill.clone()), &fill);
        }
    }
    ok(dir, &["corrupt", "split/test.json", "--out", "cor0.json"]);
    ok(dir, &["render", "cor0.json", "--out-dir", "svg_trace"]);
    let strip = std::fs::read_to_string(dir.join("svg_trace/sample0000_strip.svg")).unwrap();
    roxmltree::Document::parse(&strip).unwrap();
    assert!(strip.contains("mask-hatch"));
    assert_eq!(std::fs::read_dir(dir.join("svg_trace")).unwrap().count(), 8);
}
