//! Plot-ready CSV and text exports of a campaign report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::campaign::{CampaignReport, HEADLINE_THRESHOLD};
use crate::error::{HarnessError, Result};
use crate::formats::write_metrics;

pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const CDF_CSV: &str = "cdf.csv";
pub const ETA_TRACE_CSV: &str = "eta_trace.csv";
pub const SNAPSHOT_TXT: &str = "trajectory_snapshot.txt";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const PAIRED_CSV: &str = "paired.csv";

/// Number of CDF thresholds in `[0, 1]`.
const CDF_STEPS: u32 = 100;

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path).map_err(|e| {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => HarnessError::Io { path: path.to_path_buf(), source },
            other => HarnessError::Invalid(format!("{other:?}")),
        }
    })?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(HarnessError::io(path))
}

pub fn snapshot_text(report: &CampaignReport) -> String {
    let mut out = String::new();
    match report.snapshot_realization {
        Some((seed, id)) => writeln!(out, "held-out realization {id} of seed {seed}").unwrap(),
        None => writeln!(out, "no runs").unwrap(),
    }
    for s in &report.snapshots {
        writeln!(out).unwrap();
        writeln!(out, "arm {} (run seed {}): success rate {:.4}", s.arm, s.seed, s.utility).unwrap();
        let stops: Vec<String> = std::iter::once("O".to_string())
            .chain(s.trajectory.iter().map(|c| c.to_string()))
            .chain(["O".into()])
            .collect();
        writeln!(out, "  route: {}", stops.join(" -> ")).unwrap();
        for v in &s.timeline.visits {
            writeln!(
                out,
                "  cluster {:>2}  arrive {:>9.3} s  hover {:>8.3} s  depart {:>9.3} s  served {:>3}",
                v.cluster,
                v.arrival_s,
                v.hover_s,
                v.departure_s,
                v.served.len()
            )
            .unwrap();
        }
        writeln!(out, "  back at origin {:.3} s, {} users served", s.timeline.return_s, s.timeline.served_total)
            .unwrap();
    }
    out
}

/// Writes the campaign's CSVs, the trajectory snapshot and per-run metrics
/// into `dir`. Identical reports give byte-identical files.
pub fn emit_plot_data(report: &CampaignReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let mut written = Vec::new();
    let path = |name: &str| dir.join(name);

    let p = path(CONVERGENCE_CSV);
    let rows = report.arms.iter().flat_map(|arm| {
        report
            .convergence_curve(arm)
            .into_iter()
            .enumerate()
            .map(move |(i, (m, se))| vec![i.to_string(), arm.clone(), num(m), num(se)])
    });
    write_csv(&p, &["episode", "arm", "mean", "stderr"], rows)?;
    written.push(p);

    let p = path(CDF_CSV);
    let rows = report.arms.iter().flat_map(|arm| {
        let finals = report.finals(arm);
        let n = finals.len().max(1) as f64;
        (0..=CDF_STEPS).map(move |i| {
            let t = f64::from(i) / f64::from(CDF_STEPS);
            let below = finals.iter().filter(|&&f| f <= t).count() as f64;
            let at_least = finals.iter().filter(|&&f| f >= t).count() as f64;
            vec![num(t), arm.clone(), num(below / n), num(at_least / n)]
        })
    });
    write_csv(&p, &["threshold", "arm", "fraction", "fraction_at_least"], rows)?;
    written.push(p);

    let p = path(ETA_TRACE_CSV);
    let rows = report.runs.iter().flat_map(|run| {
        run.metrics
            .records
            .iter()
            .map(move |r| vec![r.episode.to_string(), run.arm.clone(), run.seed.to_string(), num(r.eta)])
    });
    write_csv(&p, &["episode", "arm", "seed", "eta"], rows)?;
    written.push(p);

    let p = path(SUMMARY_CSV);
    let rows = report.arms.iter().map(|arm| {
        let s = report.summary(arm);
        vec![
            s.arm,
            s.runs.to_string(),
            s.failed.to_string(),
            num(s.mean_final),
            num(s.stderr_final),
            num(s.median_episodes_to_converge),
            s.converged_runs.to_string(),
            num(s.fraction_at_least_headline),
            num(s.mean_heldout),
        ]
    });
    let headline = format!("fraction_final_at_least_{HEADLINE_THRESHOLD}");
    write_csv(
        &p,
        &[
            "arm",
            "runs",
            "failed",
            "mean_final",
            "stderr_final",
            "median_episodes_to_converge",
            "converged_runs",
            &headline,
            "mean_heldout",
        ],
        rows,
    )?;
    written.push(p);

    let p = path(PAIRED_CSV);
    let rows = report.paired_deltas().into_iter().map(|d| {
        vec![
            d.seed.to_string(),
            d.arm,
            d.baseline,
            num(d.final_delta),
            d.converge_delta.to_string(),
            num(d.heldout_delta),
        ]
    });
    write_csv(&p, &["seed", "arm", "baseline", "final_delta", "converge_delta", "heldout_delta"], rows)?;
    written.push(p);

    let p = path(SNAPSHOT_TXT);
    fs::write(&p, snapshot_text(report)).map_err(HarnessError::io(&p))?;
    written.push(p);

    if !report.failures.is_empty() {
        let p = path("failures.txt");
        let text: String =
            report.failures.iter().map(|f| format!("{} seed {}: {}\n", f.arm, f.seed, f.error)).collect();
        fs::write(&p, text).map_err(HarnessError::io(&p))?;
        written.push(p);
    }

    let runs = dir.join("runs");
    if !report.runs.is_empty() {
        fs::create_dir_all(&runs).map_err(HarnessError::io(&runs))?;
    }
    for run in &report.runs {
        let p = runs.join(format!("{}-{}.jsonl", run.arm, run.seed));
        let mut buf = Vec::new();
        write_metrics(&run.metrics.records, &mut buf)?;
        fs::write(&p, buf).map_err(HarnessError::io(&p))?;
        written.push(p);
    }
    Ok(written)
}
