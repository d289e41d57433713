use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mini_corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/mini_corpus")
}

fn tweetsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tweetsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_prints_stats() {
    let out = tempfile::tempdir().unwrap();
    let o = tweetsim(&["ingest", "--corpus", s(&mini_corpus()), "--output", s(out.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("category,users,avg_posts_per_user,avg_time_span_days\n"));
    assert!(stdout.contains("All (weighted),8,28.50,223.75"), "{stdout}");
    assert!(out.path().join("stats.csv").exists());
}

#[test]
fn ablation_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = tweetsim(&["ablation", "--corpus", s(&mini_corpus()), "-o", s(d.path())]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("ablation.csv")).unwrap();
    let csv = read(&a);
    assert_eq!(csv, read(&b));
    assert!(csv.starts_with("# seed=42 config="));
    assert_eq!(csv.lines().filter(|l| l.contains(",ok,")).count(), 12);
}

#[test]
fn sweep_writes_requested_values() {
    let out = tempfile::tempdir().unwrap();
    let o = tweetsim(&[
        "sweep", "--corpus", s(&mini_corpus()), "-o", s(out.path()), "--axis", "time_window", "--values", "30,365",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lineage = out.path().join("lineage/sweep");
    assert!(lineage.join("time_window-30").is_dir() && lineage.join("time_window-365").is_dir());
}

#[test]
fn cohort_without_controls_fails() {
    let corpus = tempfile::tempdir().unwrap();
    let adhd = corpus.path().join("ADHD");
    std::fs::create_dir(&adhd).unwrap();
    for e in std::fs::read_dir(mini_corpus().join("ADHD")).unwrap().flatten() {
        std::fs::copy(e.path(), adhd.join(e.file_name())).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let o = tweetsim(&["cohort", "--corpus", s(corpus.path()), "-o", s(out.path())]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("NEG"));
}

#[test]
fn evaluate_text_pair() {
    let o = tweetsim(&["evaluate", "--original", "cannot sleep again tonight", "--simulated", "cannot sleep again tonight"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("fre_diff"), "{stdout}");
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[retrieval]\nstate_coeff = 0.5\n").unwrap();
    let o = tweetsim(&["ablation", "-c", s(&cfg), "--corpus", s(&mini_corpus()), "-o", s(dir.path())]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("state_coeff"));
}
