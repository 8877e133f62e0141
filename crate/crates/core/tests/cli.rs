use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unit-insight"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn metric(stdout: &str, name: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name}\t")))
        .unwrap_or_else(|| panic!("no {name} in {stdout:?}"))
        .to_string()
}

#[test]
fn dedup_writes_units_and_durations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.txt"), "utt1 12 12 25 31 31 31\n").unwrap();
    let stdout = ok(dir.path(), &["dedup", "--units", "u.txt", "--out", "d.txt"]);
    assert_eq!(metric(&stdout, "runs"), "3");
    let text = std::fs::read_to_string(dir.path().join("d.txt")).unwrap();
    assert!(text.contains("12 25 31"));
    assert!(text.contains("D 2 1 3"));
    assert!(dir.path().join("dedup.run.json").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = bin().args(["dedup", "--units", "x.txt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn module_error_exits_one_with_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["dedup", "--units", "missing.txt", "--out", "d.txt"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err:?}");
    assert!(err.starts_with("error:"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.txt"), "a 1 1\n").unwrap();
    let out = bin()
        .current_dir(dir.path())
        .env("UNIT_INSIGHT_THREADS", "0")
        .args(["dedup", "--units", "u.txt", "--out", "d.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-synthetic", "--out", "c", "--utterances", "6", "--runs", "10"]);
    std::fs::write(d.join("cfg.json"), r#"{"k": 5, "seed": 3, "max_iters": 50}"#).unwrap();
    let out = ok(d, &["kmeans-train", "--config", "cfg.json", "--feats", "c/feats", "--out", "m/cb.cbok"]);
    assert_eq!(metric(&out, "k"), "5");
    let out = ok(d, &["kmeans-train", "--config", "cfg.json", "--k", "4", "--feats", "c/feats", "--out", "m/cb4.cbok"]);
    assert_eq!(metric(&out, "k"), "4");
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("m/kmeans-train.run.json")).unwrap()).unwrap();
    assert_eq!(echo["args"]["kmeans-train"]["seed"], 3);
    assert_eq!(echo["args"]["kmeans-train"]["k"], 4);
}

/// gen -> kmeans -> quantize -> dedup -> lv-resynth -> cr -> merge kwh -> abx.
fn pipeline(d: &Path, threads: &str) -> Vec<(String, String)> {
    let go = |args: &[&str]| {
        let out = bin().current_dir(d).env("UNIT_INSIGHT_THREADS", threads).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let mut metrics = Vec::new();
    go(&["gen-synthetic", "--out", "corpus", "--seed", "5", "--utterances", "30"]);
    go(&["kmeans-train", "--feats", "corpus/feats", "--k", "12", "--out", "cb.cbok"]);
    go(&["quantize", "--feats", "corpus/feats", "--codebook", "cb.cbok", "--out", "units.txt"]);
    go(&["dedup", "--units", "units.txt", "--out", "deduped.txt"]);
    let v = go(&["vmeasure", "--units", "units.txt", "--alignment", "corpus/phones.tsv", "--kind", "phoneme"]);
    metrics.push(("v".into(), metric(&v, "v")));
    let lv = go(&[
        "lv-resynth", "--units", "deduped.txt", "--wav-dir", "corpus/wav", "--key", "cf", "--out-dir", "resynth",
        "--report", "lv.tsv", "--synthetic-truth", "corpus/truth.json", "--feats", "corpus/feats", "--codebook",
        "cb.cbok", "--pass2-units", "pass2.txt",
    ]);
    metrics.push(("ued_mean".into(), metric(&lv, "ued_mean")));
    let cr = go(&["cr", "--units-pass1", "deduped.txt", "--units-pass2", "pass2.txt", "--k", "12", "--out", "cr.tsv"]);
    assert_eq!(metric(&cr, "ued_mean"), metric(&lv, "ued_mean"));
    go(&[
        "merge", "--codebook", "cb.cbok", "--method", "kwh", "--target", "10", "--cr", "cr.tsv", "--out",
        "cb10.cbok", "--map", "map.tsv",
    ]);
    go(&["quantize", "--feats", "corpus/feats", "--codebook", "cb.cbok", "--map", "map.tsv", "--out", "units10.txt"]);
    let abx = go(&[
        "abx", "--units", "units10.txt", "--codebook", "cb10.cbok", "--phones", "corpus/phones.tsv", "--speakers",
        "corpus/speakers.tsv", "--mode", "across",
    ]);
    metrics.push(("abx_across".into(), metric(&abx, "abx_across")));
    let ued = go(&["ued", "--a", "deduped.txt", "--b", "pass2.txt"]);
    assert_eq!(metric(&ued, "mean"), metric(&lv, "ued_mean"));
    metrics
}

const OUTPUTS: &[&str] = &[
    "cb.cbok", "units.txt", "deduped.txt", "lv.tsv", "pass2.txt", "cr.tsv", "cb10.cbok", "map.tsv", "units10.txt",
    "resynth/utt00000.wav", "corpus/truth.json", "corpus/feats/utt00003.feats", "merge.run.json",
];

#[test]
fn synthetic_pipeline_is_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = pipeline(a.path(), "1");
    let mb = pipeline(b.path(), "4");
    assert_eq!(ma, mb);
    for f in OUTPUTS {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let map = std::fs::read_to_string(a.path().join("map.tsv")).unwrap();
    assert!(map.starts_with("# method=kwh"));
}

#[test]
fn viz_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-synthetic", "--out", "c", "--utterances", "10", "--phones", "8", "--swap-pairs", "1"]);
    ok(d, &["kmeans-train", "--feats", "c/feats", "--k", "8", "--out", "cb.cbok"]);
    ok(d, &["quantize", "--feats", "c/feats", "--codebook", "cb.cbok", "--out", "u.txt"]);
    let out = ok(
        d,
        &["viz", "--codebook", "cb.cbok", "--units", "u.txt", "--alignment", "c/phones.tsv", "--iters", "300", "--out", "plots/u.svg"],
    );
    assert!(metric(&out, "final_kl").parse::<f64>().unwrap().is_finite());
    let svg = std::fs::read_to_string(d.join("plots/u.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polygon").count(), 8);
}
