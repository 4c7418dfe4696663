use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use serde_json::{json, Value};

fn negclip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_negclip"))
        .args(args)
        .env_remove("NEGCLIP_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn stats_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stats.json");
    let v = stdout_json(&negclip(&["stats", "--input", s(&fixture("corpus_1000.tsv")), "--out", s(&out)]));
    assert_eq!(v["caption_neg"], 73);
    assert_eq!(v["word_neg"], 91);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("stats.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "stats");
    assert_eq!(manifest["config"]["format"], "tsv");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("negclip.toml");
    std::fs::write(&config, "[stats]\nlexicon = [\"without\"]\n").unwrap();
    let out = dir.path().join("s.json");
    let corpus = fixture("corpus_1000.tsv");
    let from_file = stdout_json(&negclip(&["--config", s(&config), "stats", "--input", s(&corpus), "--out", s(&out)]));
    assert_eq!(from_file["lexicon"], json!(["without"]));
    let from_flag = stdout_json(&negclip(&[
        "--config", s(&config), "stats", "--input", s(&corpus), "--lexicon", "no,not", "--out", s(&out),
    ]));
    assert_eq!(from_flag["lexicon"], json!(["no", "not"]));

    std::fs::write(&config, "[stats]\nlexicons = []\n").unwrap();
    let bad = negclip(&["--config", s(&config), "stats", "--input", s(&corpus)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error[config]"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(negclip(&["stats"]).status.code(), Some(2));
    assert_eq!(negclip(&["evaluate", "--protocol", "nonsense"]).status.code(), Some(2));
    assert_eq!(negclip(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn build_benchmark_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for out in [&a, &b] {
        let v = stdout_json(&negclip(&["build-benchmark", "--annotations", s(&fixture("regions_20.json")), "--out", s(out)]));
        assert_eq!(v["triplets"], 3);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dir.path().join("a.jsonl.manifest.json").exists());
}

#[test]
fn missing_bundle_is_reported_before_input() {
    let out = negclip(&["evaluate", "--protocol", "negrefcocog", "--bundle", "/nonexistent/bundle", "--input", "/nonexistent/in.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[bundle-not-found]"));
}

fn write_images(dir: &Path, n: usize) {
    for k in 0..n {
        let rgb = [(k * 37 % 256) as u8, (k * 91 % 256) as u8, (k * 53 % 256) as u8];
        RgbImage::from_pixel(12, 12, Rgb(rgb)).save(dir.join(format!("{k}.png"))).unwrap();
    }
}

const OBJECTS: [&str; 10] = ["saddle", "ball", "cup", "kite", "umbrella", "lamp", "bench", "glove", "knife", "plant"];

fn p1_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    write_images(dir, 10);
    let items: Vec<String> = (0..10)
        .map(|k| json!({"id": format!("{k}"), "image": format!("{k}.png"), "caption": format!("scene number {k} outdoors")}).to_string())
        .collect();
    let input = dir.join("captions.jsonl");
    std::fs::write(&input, items.join("\n") + "\n").unwrap();
    let mut rules = Vec::new();
    for (k, object) in OBJECTS.iter().enumerate() {
        let caption = format!("scene number {k} outdoors");
        rules.push(json!({"contains": format!("corresponding to the caption '{caption}'"), "replies": [object]}));
        rules.push(json!({"contains": format!("absence of the {object}"), "replies": [format!("{caption} with no {object}")]}));
        let present = k % 3 == 0;
        rules.push(json!({"contains": format!("Is there {object} in"), "replies": [if present { "Yes" } else { "No" }]}));
    }
    let stub = dir.join("stub.json");
    std::fs::write(&stub, json!({"rules": rules}).to_string()).unwrap();
    (input, stub)
}

#[test]
fn generate_p1_with_stub_map_then_original() {
    let dir = tempfile::tempdir().unwrap();
    let (input, stub) = p1_inputs(dir.path());
    let out = dir.path().join("p1.jsonl");
    let args = ["generate", "--pipeline", "p1", "--input", s(&input), "--out", s(&out), "--stub-map", s(&stub), "--image-root", s(dir.path())];
    let report = stdout_json(&negclip(&args));
    // k = 0, 3, 6, 9 answer "Yes".
    assert_eq!(report["emitted"], 6);
    assert_eq!(report["dropped_by_reason"]["object-present"], 4);
    let first = std::fs::read(&out).unwrap();
    stdout_json(&negclip(&args));
    assert_eq!(std::fs::read(&out).unwrap(), first);
    assert!(dir.path().join("p1.jsonl.report.json").exists());

    let orig = dir.path().join("orig.jsonl");
    let v = stdout_json(&negclip(&["generate", "--pipeline", "original", "--input", s(&out), "--out", s(&orig)]));
    assert_eq!(v["pairs"], 6);
    let converted = lines(&orig);
    assert_eq!(converted.len(), 6);
    assert_eq!(converted[0]["pipeline"], "OriginalCaption");
    assert_eq!(converted[0]["augmented_caption"], converted[0]["original_caption"]);
}

#[test]
fn generate_without_models_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = p1_inputs(dir.path());
    let out = negclip(&["generate", "--pipeline", "p1", "--input", s(&input), "--out", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
}

#[test]
fn init_finetune_swap_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (input, stub) = p1_inputs(d);
    let pairs = d.join("pairs.jsonl");
    stdout_json(&negclip(&["generate", "--pipeline", "p1", "--input", s(&input), "--out", s(&pairs), "--stub-map", s(&stub), "--image-root", s(d)]));

    let bundle = d.join("bundle");
    assert!(negclip(&["init-bundle", "--arch", "ViT-B/32", "--out", s(&bundle), "--seed", "3"]).status.success());
    assert!(bundle.join("run_manifest.json").exists());

    let tuned = d.join("tuned");
    let summary = stdout_json(&negclip(&[
        "finetune", "--bundle", s(&bundle), "--pairs", s(&pairs), "--sources", "p1", "--epochs", "2",
        "--learning-rate", "0.001", "--image-root", s(d), "--out", s(&tuned),
    ]));
    assert_eq!(summary["train_pairs"].as_u64().unwrap() + summary["val_pairs"].as_u64().unwrap(), 6);
    let log = lines(&tuned.join("train_log.jsonl"));
    assert!(log.iter().any(|e| e["split"] == "epoch_train"));

    let wrong_arch = negclip(&["finetune", "--bundle", s(&bundle), "--pairs", s(&pairs), "--arch", "ViT-L/14", "--out", s(&d.join("x"))]);
    assert!(String::from_utf8_lossy(&wrong_arch.stderr).starts_with("error[architecture-mismatch]"));

    let swapped = d.join("swapped");
    assert!(negclip(&["swap-encoder", "--bundle", s(&bundle), "--text-tower", s(&tuned), "--out", s(&swapped)]).status.success());

    let triplets = d.join("triplets.jsonl");
    let t = json!({
        "id": "t1", "text": "a cat with no collar", "image": "0.png", "image_width": 12, "image_height": 12, "category": 1,
        "positive": {"bbox": {"x": 0, "y": 0, "w": 6, "h": 12}, "original": {"x": 0, "y": 0, "w": 6, "h": 12}, "annotation_id": 1},
        "negative": {"bbox": {"x": 6, "y": 0, "w": 6, "h": 12}, "original": {"x": 6, "y": 0, "w": 6, "h": 12}, "annotation_id": 2}
    });
    std::fs::write(&triplets, format!("{t}\n")).unwrap();
    let report_path = d.join("negref.json");
    let v = stdout_json(&negclip(&[
        "evaluate", "--protocol", "negrefcocog", "--bundle", s(&swapped), "--input", s(&triplets),
        "--image-root", s(d), "--out", s(&report_path),
    ]));
    assert_eq!(v["items"], 1);
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(stored["protocol"], "negrefcocog");
    assert_eq!(stored["scale"], 100.0);
}

const ADAPTER: &str = r#"
import sys, json, os
req = json.loads(sys.stdin.readline())
root = os.environ["ADAPTER_ROOT"]
if req["task"] == "generate":
    print(json.dumps({"image": os.path.join(root, "gen-%d.png" % req["seed"])}))
elif req["task"] == "detect":
    print(json.dumps({"detected": req["object"] == "cat" and req["image"].endswith("gen-1.png")}))
else:
    path = os.path.join(root, "heat.json")
    with open(path, "w") as f:
        json.dump({"width": 10, "height": 4, "values": [1.0 if 10 <= i < 40 else 0.0 for i in range(40)]}, f)
    print(json.dumps({"heatmap": path}))
"#;

fn python() -> bool {
    Command::new("python3").arg("--version").output().is_ok()
}

#[test]
fn adapter_protocols() {
    if !python() {
        eprintln!("python3 unavailable; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::env::set_var("ADAPTER_ROOT", d);
    let objects = d.join("objects.txt");
    std::fs::write(&objects, "cat\ndog\n").unwrap();
    let out = d.join("absence.json");
    let v = stdout_json(&negclip(&[
        "evaluate", "--protocol", "absence", "--input", s(&objects), "--adapter", "python3",
        "--adapter-arg", "-c", "--adapter-arg", ADAPTER, "--seeds", "0,1", "--out", s(&out),
    ]));
    assert_eq!(v["aggregate"], 75.0);

    // Mask covers pixels 0..30, heatmap 10..40: IoU 20/40.
    let mask = d.join("mask.json");
    std::fs::write(&mask, json!({"width": 10, "height": 4, "values": (0..40).map(|i| (i < 30) as u8).collect::<Vec<_>>()}).to_string()).unwrap();
    let items = d.join("seg.jsonl");
    std::fs::write(&items, json!({"id": "s1", "image": "img.png", "text": "a cat", "mask": s(&mask)}).to_string() + "\n").unwrap();
    let seg_out = d.join("seg.json");
    let v = stdout_json(&negclip(&[
        "evaluate", "--protocol", "segmentation", "--input", s(&items), "--adapter", "python3",
        "--adapter-arg", "-c", "--adapter-arg", ADAPTER, "--threshold", "0.5", "--out", s(&seg_out),
    ]));
    assert_eq!(v["aggregate"], 0.5);
    let stored: Value = serde_json::from_str(&std::fs::read_to_string(&seg_out).unwrap()).unwrap();
    assert_eq!(stored["extra"]["iou_bin"], 0.5);
}
