use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chartfc::data::{write_seed, Label, Split};
use chartfc::nn::{load_checkpoint, save_checkpoint};
use chartfc::pipeline::Dataset;
use chartfc::synth::{sprint_seed, seed_corpus};

const TINY: &str = r#"
seed = 3

[run]
model = "chartbert"
template = "tmp1"

[run.chartbert]
layers = 1
hidden = 16
heads = 2
ffn = 16
max_len = 96

[run.train]
batch_size = 8
lr = 1e-3
max_epochs = 1
"#;

fn chartfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chartfc")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generated corpus dataset plus a tiny-model config file.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let seeds = dir.join("seeds");
    write_seed(&seed_corpus(30, 3, 2), &seeds).unwrap();
    let data = dir.join("data");
    let o = chartfc(&["generate", "--seeds", s(&seeds), "--out", s(&data), "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let config = dir.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    (data, config)
}

#[test]
fn generate_is_reproducible_and_logs_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds");
    write_seed(&sprint_seed(), &seeds).unwrap();
    let a = dir.path().join("a");
    let o = chartfc(&["generate", "--seeds", s(&seeds), "--out", s(&a)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("1 samples, 0 rejected"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds: split=0"));
    let manifest = fs::read(a.join("manifest.jsonl")).unwrap();
    let o = chartfc(&["generate", "--seeds", s(&seeds), "--out", s(&a)]);
    assert_eq!(code(&o), 0);
    assert_eq!(manifest, fs::read(a.join("manifest.jsonl")).unwrap());
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = dir.path().join("seeds");
    fs::create_dir_all(&seeds).unwrap();
    fs::write(seeds.join("tables.jsonl"), "{broken\n").unwrap();
    fs::write(seeds.join("claims.jsonl"), "").unwrap();
    let out = dir.path().join("out");
    let o = chartfc(&["generate", "--seeds", s(&seeds), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());

    let config = dir.path().join("bad.toml");
    fs::write(&config, "[run]\nlayers = 3\n").unwrap();
    let o = chartfc(&["--config", s(&config), "generate", "--seeds", s(&seeds), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    assert_eq!(code(&chartfc(&["frobnicate"])), 2);
    assert_eq!(code(&chartfc(&["read", "--data", s(dir.path())])), 2);

    let (data, _) = setup(dir.path());
    let junk = dir.path().join("junk.ck");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let o = chartfc(&["eval", "--data", s(&data), "--checkpoint", s(&junk)]);
    assert_eq!(code(&o), 2);
    let o = chartfc(&["read", "--data", s(&data), "--reader", "ocr"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unreachable_ocr_endpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let o = chartfc(&["read", "--data", s(&data), "--reader", "ocr", "--ocr-endpoint", "http://127.0.0.1:9"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn read_seqgen_and_encode_print_one_line_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = setup(dir.path());
    let n = Dataset::open(&data).unwrap().split(Split::Valid).len();
    for cmd in ["read", "seqgen", "encode"] {
        let o = chartfc(&[cmd, "--data", s(&data), "--split", "valid", "--template", "tmp3"]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), n, "{cmd}");
    }
    let o = chartfc(&["seqgen", "--data", s(&data), "--template", "tmp3"]);
    assert!(stdout(&o).contains(" when "));
}

#[test]
fn render_writes_image_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("sub.json");
    fs::write(&sub, serde_json::to_string(&chartfc::synth::sprint_subtable()).unwrap()).unwrap();
    let out = dir.path().join("chart");
    let o = chartfc(&["render", "--subtable", s(&sub), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(fs::read(out.with_extension("png")).unwrap().starts_with(b"\x89PNG"));
    assert!(fs::read_to_string(out.with_extension("json")).unwrap().contains("usain bolt"));
}

#[test]
fn zero_checkpoint_scores_the_supports_share() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = setup(dir.path());
    let ck = dir.path().join("model.ck");
    let o = chartfc(&["--config", s(&config), "train", "--data", s(&data), "--out", s(&ck)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("\"epoch\":1"));

    let mut zero = load_checkpoint(&ck).unwrap();
    zero.params.zero_trainable();
    save_checkpoint(&zero, &ck).unwrap();
    let o = chartfc(&["eval", "--data", s(&data), "--checkpoint", s(&ck)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let test = Dataset::open(&data).unwrap();
    let test = test.split(Split::Test);
    let share = test.iter().filter(|s| s.label() == Label::Supports).count() as f64 / test.len() as f64;
    assert!((m["accuracy"].as_f64().unwrap() - share).abs() < 1e-12);
    assert_eq!(m["n"].as_u64().unwrap() as usize, test.len());
}

#[test]
fn report_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (data, config) = setup(dir.path());
    let ck = dir.path().join("model.ck");
    let o = chartfc(&[
        "--config",
        s(&config),
        "train",
        "--data",
        s(&data),
        "--out",
        s(&ck),
        "--grid",
        "--batch-sizes",
        "8,16",
        "--learning-rates",
        "1e-3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.starts_with(" batch"));
    assert_eq!(table.lines().count(), 4, "{table}");

    let test_ids: Vec<String> = Dataset::open(&data)
        .unwrap()
        .split(Split::Test)
        .iter()
        .map(|s| s.id().to_string())
        .collect();
    let ann = dir.path().join("ann.tsv");
    fs::write(&ann, format!("{}\tretrieve_value,compare\n{}\tcompare\n", test_ids[0], test_ids[1])).unwrap();
    let o = chartfc(&["report", "--data", s(&data), "--checkpoint", s(&ck), "--annotations", s(&ann)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert_eq!(report.lines().count(), 3, "{report}");
    assert!(report.lines().any(|l| l.starts_with("compare") && l.contains(" 2 ")));

    fs::write(&ann, "no-such-sample\tcompare\n").unwrap();
    let o = chartfc(&["report", "--data", s(&data), "--checkpoint", s(&ck), "--annotations", s(&ann)]);
    assert_eq!(code(&o), 2);
}
