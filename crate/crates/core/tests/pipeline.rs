use std::path::PathBuf;

use tweetsim_core::corpus::Category;
use tweetsim_core::experiment::{Experiment, ExperimentConfig, ExperimentError};

fn mini_corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/mini_corpus")
}

fn experiment(toml: &str) -> Experiment {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, toml).unwrap();
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.corpus = mini_corpus();
    cfg.output = PathBuf::new();
    Experiment::from_config(cfg).unwrap()
}

#[test]
fn category_filter_and_user_cap() {
    let exp = experiment("categories = [\"NEG\"]\nmax_users = 2\n");
    let users = exp.load_users().unwrap();
    assert_eq!(users.len(), 2);
    assert!(users.iter().all(|u| u.category == Some(Category::Neg)));
}

#[test]
fn prepared_events_are_chronological_and_capped() {
    let exp = experiment("events_per_user = 3\n");
    let (users, failures) = exp.prepare_all(exp.load_users().unwrap());
    assert!(failures.is_empty(), "{failures:?}");
    for u in &users {
        assert!(u.events.len() <= 3);
        let times: Vec<_> = u.events.iter().map(|e| e.summary.event_time).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn memory_off_grid_without_lineage() {
    let exp = experiment("memory = [false]\nprofiles = [\"normal\"]\n");
    let (users, _) = exp.prepare_all(exp.load_users().unwrap());
    let table = exp.run_ablation(&users).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r.status == "ok" && r.means.n > 0));
}

#[test]
fn cohort_needs_both_sides() {
    let exp = experiment("categories = [\"Depression\"]\n");
    let (users, _) = exp.prepare_all(exp.load_users().unwrap());
    assert!(matches!(exp.run_cohort_comparison(&users), Err(ExperimentError::EmptyCohort(c)) if c == "NEG"));
}
