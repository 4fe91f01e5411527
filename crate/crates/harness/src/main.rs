use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mgpg_core::learner::Trainer;
use mgpg_core::metrics::RunMetrics;
use mgpg_core::{generate_realization, LearnerConfig, RealizationStream, ScenarioSpec};
use mgpg_harness::campaign::{run_campaign, IdStream};
use mgpg_harness::config::{load_experiment, load_scenario, resolve_output};
use mgpg_harness::formats::{write_metrics, write_params, write_realization, Progress};
use mgpg_harness::gradcheck::{check_meta_gradient, check_policy_gradient, desk_scenario, optimality_check};
use mgpg_harness::plots::emit_plot_data;
use mgpg_harness::HarnessError;

#[derive(Parser)]
#[command(name = "mgpg", about = "Drone base station trajectory learning experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one realization and write it as JSON lines.
    GenScenario {
        /// Scenario or experiment file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one arm of an experiment for one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Arm name; the first arm when omitted.
        #[arg(long)]
        arm: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the arm's episode budget.
        #[arg(long)]
        episodes: Option<usize>,
        /// Write a checkpoint every this many episodes (0 disables).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[arg(long, default_value = "train")]
        out: PathBuf,
    },
    /// Run every arm and seed of an experiment and write plot data.
    Campaign {
        #[arg(long)]
        spec: PathBuf,
        /// Worker threads (0 means one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Overrides the experiment's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, default_value_t = 50)]
        meta_configs: usize,
    },
    /// Compare trained policies with the enumerated optimum on a small instance.
    OracleCheck {
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        realization_seed: u64,
        /// Allowed shortfall relative to the optimum.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Share of seeds that must be within tolerance.
        #[arg(long, default_value_t = 0.8)]
        required: f64,
    },
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    }
    let f = fs::File::create(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(BufWriter::new(f))
}

fn flush(mut w: impl Write, path: &Path) -> Result<(), HarnessError> {
    w.flush().map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn gen_scenario(config: Option<PathBuf>, seed: u64, out: Option<PathBuf>) -> Result<Outcome, HarnessError> {
    let spec = match config {
        Some(p) => load_scenario(&p)?,
        None => ScenarioSpec::default(),
    };
    let r = generate_realization(&spec, seed)?;
    match out {
        Some(p) => {
            let p = resolve_output(&p);
            let mut w = create(&p)?;
            write_realization(&r, &mut w)?;
            flush(w, &p)?;
            eprintln!("wrote {} ({} users, {} requesting)", p.display(), r.users().len(), r.requesting_users());
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            write_realization(&r, &mut w)?;
        }
    }
    Ok(Outcome::Ok)
}

fn train(
    config: &Path,
    arm: Option<String>,
    seed: u64,
    episodes: Option<usize>,
    checkpoint_every: usize,
    out: &Path,
) -> Result<Outcome, HarnessError> {
    let spec = load_experiment(config)?;
    let arm = match &arm {
        Some(name) => spec
            .arms
            .iter()
            .find(|a| &a.name == name)
            .ok_or_else(|| HarnessError::Invalid(format!("no arm named `{name}`")))?,
        None => &spec.arms[0],
    };
    let learner = LearnerConfig { episodes: episodes.unwrap_or(arm.learner.episodes), ..arm.learner.clone() };
    let out = resolve_output(out);
    let mut stream = IdStream::new(&spec.scenario, seed, spec.protocol.train_ids)?;
    let mut trainer = Trainer::new(arm.algorithm, learner.clone(), spec.scenario.num_clusters(), seed)?;
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics_out = create(&metrics_path)?;
    let mut records = Vec::with_capacity(learner.episodes);
    for i in 0..learner.episodes {
        let rec = trainer.run_episode(stream.realization(i))?;
        write_metrics(std::slice::from_ref(&rec), &mut metrics_out)?;
        records.push(rec);
        if checkpoint_every > 0 && (i + 1) % checkpoint_every == 0 {
            let p = out.join("checkpoints").join(format!("episode-{:06}.txt", i + 1));
            let mut w = create(&p)?;
            write_params(trainer.params(), Some(Progress { eta: trainer.eta(), episode: i + 1 }), &mut w)?;
            flush(w, &p)?;
        }
    }
    flush(metrics_out, &metrics_path)?;
    let params_path = out.join("params.txt");
    let mut w = create(&params_path)?;
    write_params(trainer.params(), Some(Progress { eta: trainer.eta(), episode: trainer.episode() }), &mut w)?;
    flush(w, &params_path)?;
    let m = RunMetrics::from_records(records);
    println!(
        "{} seed {seed}: {} episodes, final success {:.4}, converged at {}{}, final eta {:.4}",
        arm.name,
        learner.episodes,
        m.final_utility,
        m.episodes_to_converge,
        if m.converged { "" } else { " (not detected)" },
        trainer.eta()
    );
    println!("wrote {}", out.display());
    Ok(Outcome::Ok)
}

fn campaign(spec_path: &Path, workers: usize, out: Option<PathBuf>) -> Result<Outcome, HarnessError> {
    let mut spec = load_experiment(spec_path)?;
    if let Some(o) = out {
        spec.output_dir = o;
    }
    let report = run_campaign(&spec, workers)?;
    let dir = spec.resolved_output_dir();
    emit_plot_data(&report, &dir)?;
    println!(
        "{:<12} {:>5} {:>11} {:>9} {:>12} {:>9} {:>9}",
        "arm", "runs", "mean_final", "stderr", "median_conv", "frac>=0.5", "heldout"
    );
    for arm in &report.arms {
        let s = report.summary(arm);
        println!(
            "{:<12} {:>5} {:>11.4} {:>9.4} {:>12.1} {:>9.3} {:>9.4}",
            s.arm,
            s.runs,
            s.mean_final,
            s.stderr_final,
            s.median_episodes_to_converge,
            s.fraction_at_least_headline,
            s.mean_heldout
        );
    }
    let deltas = report.paired_deltas();
    for arm in report.arms.iter().skip(1) {
        let d: Vec<_> = deltas.iter().filter(|d| &d.arm == arm).collect();
        if d.is_empty() {
            continue;
        }
        let mean = d.iter().map(|d| d.final_delta).sum::<f64>() / d.len() as f64;
        let wins = d.iter().filter(|d| d.final_delta > 0.0).count();
        println!(
            "{arm} - {}: mean final-success delta {:+.4}, positive in {}/{} seeds",
            d[0].baseline,
            mean,
            wins,
            d.len()
        );
    }
    for f in &report.failures {
        eprintln!("run failed: {} seed {}: {}", f.arm, f.seed, f.error);
    }
    println!("wrote {}", dir.display());
    Ok(if report.failures.is_empty() { Outcome::Ok } else { Outcome::CheckFailed })
}

fn gradcheck(seed: u64, configs: usize, meta_configs: usize) -> Outcome {
    let g = check_policy_gradient(seed, configs);
    println!(
        "policy gradient: max relative error {:.3e} over {} configs (tolerance {:.0e})",
        g.max_rel_err, g.configs, g.tolerance
    );
    let m = check_meta_gradient(seed, meta_configs);
    println!(
        "meta-gradient:   max relative error {:.3e} over {} configs (tolerance {:.0e})",
        m.max_rel_err, m.configs, m.tolerance
    );
    if g.passed() && m.passed() {
        Outcome::Ok
    } else {
        Outcome::CheckFailed
    }
}

fn oracle_check(
    clusters: usize,
    seeds: u64,
    episodes: usize,
    realization_seed: u64,
    tolerance: f64,
    required: f64,
) -> Result<Outcome, HarnessError> {
    let config = LearnerConfig { episodes, ..LearnerConfig::default() };
    let seeds: Vec<u64> = (0..seeds).collect();
    let rows = optimality_check(&desk_scenario(clusters), realization_seed, &seeds, &config)?;
    for r in &rows {
        println!(
            "seed {:>3}: optimal {:.4} learned {:.4}{}",
            r.seed,
            r.optimal,
            r.learned,
            if r.within(tolerance) { "" } else { "  (short)" }
        );
    }
    let hits = rows.iter().filter(|r| r.within(tolerance)).count();
    let share = hits as f64 / rows.len().max(1) as f64;
    println!(
        "{hits}/{} seeds within {:.0}% of optimal (required {:.0}%)",
        rows.len(),
        tolerance * 100.0,
        required * 100.0
    );
    Ok(if share >= required { Outcome::Ok } else { Outcome::CheckFailed })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScenario { config, seed, out } => gen_scenario(config, seed, out),
        Command::Train { config, arm, seed, episodes, checkpoint_every, out } => {
            train(&config, arm, seed, episodes, checkpoint_every, &out)
        }
        Command::Campaign { spec, workers, out } => campaign(&spec, workers, out),
        Command::Gradcheck { seed, configs, meta_configs } => Ok(gradcheck(seed, configs, meta_configs)),
        Command::OracleCheck { clusters, seeds, episodes, realization_seed, tolerance, required } => {
            oracle_check(clusters, seeds, episodes, realization_seed, tolerance, required)
        }
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e @ (HarnessError::Config { .. } | HarnessError::Invalid(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
