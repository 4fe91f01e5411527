mod common;

use std::fs;

use common::repo_root;
use mgpg_harness::campaign::CampaignReport;
use mgpg_harness::config::SeedList;
use mgpg_harness::formats::read_metrics;
use mgpg_harness::{emit_plot_data, load_experiment, run_campaign, ExperimentSpec};

fn small_spec(arms: usize, seeds: usize, episodes: usize) -> ExperimentSpec {
    let mut spec = load_experiment(&repo_root().join("default.cfg")).unwrap();
    spec.arms.truncate(arms);
    for arm in &mut spec.arms {
        arm.learner.episodes = episodes;
    }
    spec.seeds = SeedList::List((0..seeds as u64).collect());
    spec.probe_episodes = 5;
    spec
}

fn csv_rows(path: &std::path::Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn single_run_curve_has_one_point_per_episode() {
    let report = run_campaign(&small_spec(1, 1, 10), 1).unwrap();
    assert_eq!(report.runs.len(), 1);
    assert_eq!(report.convergence_curve("pg").len(), 10);
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&report, dir.path()).unwrap();
    let rows = csv_rows(&dir.path().join("convergence.csv"));
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r[1] == "pg" && r[3] == "0.000000"));
    let records =
        read_metrics(fs::File::open(dir.path().join("runs/pg-0.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert_eq!(records, report.runs[0].metrics.records);
}

#[test]
fn empty_report_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&CampaignReport::default(), dir.path()).unwrap();
    for (name, header) in [
        ("convergence.csv", "episode,arm,mean,stderr"),
        ("cdf.csv", "threshold,arm,fraction,fraction_at_least"),
        ("eta_trace.csv", "episode,arm,seed,eta"),
    ] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text, format!("{header}\r\n"), "{name}");
    }
}

#[test]
fn cdf_is_monotone_and_reaches_one() {
    let report = run_campaign(&small_spec(2, 4, 30), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&report, dir.path()).unwrap();
    let rows = csv_rows(&dir.path().join("cdf.csv"));
    for arm in ["pg", "mgpg"] {
        let f: Vec<f64> = rows.iter().filter(|r| r[1] == arm).map(|r| r[2].parse().unwrap()).collect();
        assert_eq!(f.len(), 101);
        assert!(f.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*f.last().unwrap(), 1.0);
    }
}

#[test]
fn paired_deltas_match_per_seed_finals() {
    let report = run_campaign(&small_spec(2, 3, 20), 1).unwrap();
    let deltas = report.paired_deltas();
    assert_eq!(deltas.len(), 3);
    for d in &deltas {
        let f = |arm: &str| report.runs_of(arm).find(|r| r.seed == d.seed).unwrap().metrics.final_utility;
        assert_eq!(d.final_delta, f("mgpg") - f("pg"));
        assert_eq!(d.baseline, "pg");
    }
}

#[test]
fn snapshot_is_written_for_every_arm() {
    let report = run_campaign(&small_spec(2, 2, 10), 1).unwrap();
    assert_eq!(report.snapshots.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&report, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("trajectory_snapshot.txt")).unwrap();
    assert!(text.contains("pg") && text.contains("mgpg") && text.contains("route: O ->"));
}

#[test]
fn worker_count_does_not_change_results() {
    let spec = small_spec(2, 3, 15);
    let a = run_campaign(&spec, 1).unwrap();
    let b = run_campaign(&spec, 4).unwrap();
    assert_eq!(a.runs.len(), b.runs.len());
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.metrics.records, y.metrics.records);
        assert_eq!(x.params, y.params);
    }
}
