//! Multi-seed training campaigns comparing algorithm arms.

use mgpg_core::learner::{Algorithm, Trainer};
use mgpg_core::mdp::{rollout, Greedy};
use mgpg_core::rng::{mix, seeded, Stream};
use mgpg_core::scenario::{timeline, Timeline};
use mgpg_core::{generate_realization, PolicyParams, Realization, RealizationStream, RunMetrics, ScenarioSpec};
use rayon::prelude::*;

use crate::config::{ArmSpec, Evaluation, ExperimentSpec};
use crate::error::{HarnessError, Result};

/// Success-rate threshold used for the headline CDF comparison.
pub const HEADLINE_THRESHOLD: f64 = 0.5;

/// Realization `id` of run `seed`.
pub fn realization_for(scenario: &ScenarioSpec, seed: u64, id: u64) -> Result<Realization> {
    Ok(generate_realization(scenario, mix(seed, id))?)
}

/// Cycles through a half-open id range, generating each realization on demand.
pub struct IdStream<'a> {
    scenario: &'a ScenarioSpec,
    seed: u64,
    ids: [u64; 2],
    current: Option<(u64, Realization)>,
}

impl<'a> IdStream<'a> {
    pub fn new(scenario: &'a ScenarioSpec, seed: u64, ids: [u64; 2]) -> Result<Self> {
        scenario.validate()?;
        if ids[1] <= ids[0] {
            return Err(HarnessError::Invalid("empty realization id range".into()));
        }
        Ok(IdStream { scenario, seed, ids, current: None })
    }

    pub fn id_for(&self, episode: usize) -> u64 {
        self.ids[0] + episode as u64 % (self.ids[1] - self.ids[0])
    }
}

impl RealizationStream for IdStream<'_> {
    fn realization(&mut self, episode: usize) -> &Realization {
        let id = self.id_for(episode);
        if !matches!(&self.current, Some((c, _)) if *c == id) {
            let r = realization_for(self.scenario, self.seed, id).expect("scenario validated");
            self.current = Some((id, r));
        }
        &self.current.as_ref().unwrap().1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub arm: String,
    pub seed: u64,
    pub metrics: RunMetrics,
    /// Success rate on each held-out realization.
    pub heldout: Vec<f64>,
    pub params: PolicyParams,
    pub final_eta: f64,
}

impl RunOutcome {
    pub fn heldout_mean(&self) -> f64 {
        mean(&self.heldout)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub arm: String,
    pub seed: u64,
    pub error: String,
}

/// Best greedy trajectory of one arm on the snapshot realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub arm: String,
    pub seed: u64,
    pub utility: f64,
    pub trajectory: Vec<usize>,
    pub timeline: Timeline,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CampaignReport {
    pub arms: Vec<String>,
    /// Successful runs ordered by arm, then seed.
    pub runs: Vec<RunOutcome>,
    pub failures: Vec<RunFailure>,
    /// Run seed and realization id of the snapshot realization.
    pub snapshot_realization: Option<(u64, u64)>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_final: f64,
    pub stderr_final: f64,
    pub median_episodes_to_converge: f64,
    pub converged_runs: usize,
    /// Share of runs whose final success rate is at least [`HEADLINE_THRESHOLD`].
    pub fraction_at_least_headline: f64,
    pub mean_heldout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedDelta {
    pub seed: u64,
    pub arm: String,
    pub baseline: String,
    pub final_delta: f64,
    pub converge_delta: i64,
    pub heldout_delta: f64,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub(crate) fn stderr(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl CampaignReport {
    pub fn runs_of<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a RunOutcome> + 'a {
        self.runs.iter().filter(move |r| r.arm == arm)
    }

    pub fn finals(&self, arm: &str) -> Vec<f64> {
        self.runs_of(arm).map(|r| r.metrics.final_utility).collect()
    }

    pub fn summary(&self, arm: &str) -> ArmSummary {
        let finals = self.finals(arm);
        let converge: Vec<f64> = self.runs_of(arm).map(|r| r.metrics.episodes_to_converge as f64).collect();
        let heldout: Vec<f64> = self.runs_of(arm).map(RunOutcome::heldout_mean).collect();
        let at_least = finals.iter().filter(|&&f| f >= HEADLINE_THRESHOLD).count();
        ArmSummary {
            arm: arm.to_string(),
            runs: finals.len(),
            failed: self.failures.iter().filter(|f| f.arm == arm).count(),
            mean_final: mean(&finals),
            stderr_final: stderr(&finals),
            median_episodes_to_converge: median(&converge),
            converged_runs: self.runs_of(arm).filter(|r| r.metrics.converged).count(),
            fraction_at_least_headline: if finals.is_empty() { 0.0 } else { at_least as f64 / finals.len() as f64 },
            mean_heldout: mean(&heldout),
        }
    }

    /// Per-episode mean and standard error of the training success rate.
    pub fn convergence_curve(&self, arm: &str) -> Vec<(f64, f64)> {
        let runs: Vec<&RunOutcome> = self.runs_of(arm).collect();
        let len = runs.iter().map(|r| r.metrics.records.len()).min().unwrap_or(0);
        (0..len)
            .map(|i| {
                let xs: Vec<f64> = runs.iter().map(|r| r.metrics.records[i].utility_e).collect();
                (mean(&xs), stderr(&xs))
            })
            .collect()
    }

    /// Share of runs with final success rate at most `threshold`.
    pub fn cdf(&self, arm: &str, threshold: f64) -> f64 {
        let finals = self.finals(arm);
        if finals.is_empty() {
            return 0.0;
        }
        finals.iter().filter(|&&f| f <= threshold).count() as f64 / finals.len() as f64
    }

    /// Every other arm against the first, for seeds where both succeeded.
    pub fn paired_deltas(&self) -> Vec<PairedDelta> {
        let Some(baseline) = self.arms.first() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for arm in &self.arms[1..] {
            for run in self.runs_of(arm) {
                if let Some(base) = self.runs_of(baseline).find(|b| b.seed == run.seed) {
                    out.push(PairedDelta {
                        seed: run.seed,
                        arm: arm.clone(),
                        baseline: baseline.clone(),
                        final_delta: run.metrics.final_utility - base.metrics.final_utility,
                        converge_delta: run.metrics.episodes_to_converge as i64
                            - base.metrics.episodes_to_converge as i64,
                        heldout_delta: run.heldout_mean() - base.heldout_mean(),
                    });
                }
            }
        }
        out
    }
}

/// Trains one (arm, seed) for `episodes` episodes on the spec's training
/// stream.
pub fn train_run(
    spec: &ExperimentSpec,
    arm: &ArmSpec,
    seed: u64,
    episodes: usize,
) -> Result<(PolicyParams, RunMetrics, f64)> {
    let mut stream = IdStream::new(&spec.scenario, seed, spec.protocol.train_ids)?;
    let clusters = spec.scenario.num_clusters();
    let mut trainer = Trainer::new(arm.algorithm, arm.learner.clone(), clusters, seed)?;
    let mut records = Vec::with_capacity(episodes);
    for i in 0..episodes {
        records.push(trainer.run_episode(stream.realization(i))?);
    }
    let eta = trainer.eta();
    Ok((trainer.params().clone(), RunMetrics::from_records(records), eta))
}

/// Success rate of `params` on `realization` under the chosen evaluation rule.
pub fn evaluate(params: &PolicyParams, realization: &Realization, evaluation: Evaluation, seed: u64) -> f64 {
    let mut rng = seeded(mix(seed, realization.seed()), Stream::Eval);
    match evaluation {
        Evaluation::Greedy => rollout(realization, &Greedy(params), &mut rng).total_utility,
        Evaluation::Stochastic => rollout(realization, params, &mut rng).total_utility,
    }
}

fn run_one(spec: &ExperimentSpec, arm: &ArmSpec, seed: u64, heldout: &[Realization]) -> Result<RunOutcome> {
    let (params, metrics, final_eta) = train_run(spec, arm, seed, arm.learner.episodes)?;
    let heldout = heldout.iter().map(|r| evaluate(&params, r, spec.protocol.evaluation, seed)).collect();
    Ok(RunOutcome { arm: arm.name.clone(), seed, metrics, heldout, params, final_eta })
}

/// Runs every (arm, seed) pair on up to `workers` threads (0 means one per
/// core). Failed runs are reported and skipped; a run that does not
/// reproduce its own first episodes aborts the campaign.
pub fn run_campaign(spec: &ExperimentSpec, workers: usize) -> Result<CampaignReport> {
    spec.validate()?;
    let seeds = spec.seeds.seeds();
    let heldout_ids = spec.protocol.heldout();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Invalid(format!("thread pool: {e}")))?;

    let heldout: Vec<Vec<Realization>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| heldout_ids.iter().map(|&id| realization_for(&spec.scenario, s, id)).collect())
            .collect::<Result<_>>()
    })?;

    let jobs: Vec<(usize, usize)> = (0..spec.arms.len()).flat_map(|a| (0..seeds.len()).map(move |s| (a, s))).collect();
    let results: Vec<Result<RunOutcome>> =
        pool.install(|| jobs.par_iter().map(|&(a, s)| run_one(spec, &spec.arms[a], seeds[s], &heldout[s])).collect());

    let mut report = CampaignReport { arms: spec.arms.iter().map(|a| a.name.clone()).collect(), ..Default::default() };
    for (&(a, s), result) in jobs.iter().zip(results) {
        match result {
            Ok(run) => report.runs.push(run),
            Err(e) => report.failures.push(RunFailure {
                arm: spec.arms[a].name.clone(),
                seed: seeds[s],
                error: e.to_string(),
            }),
        }
    }

    if let Some(first) = report.runs.first() {
        let arm = spec.arms.iter().find(|a| a.name == first.arm).unwrap();
        let n = spec.probe_episodes.min(first.metrics.records.len());
        let (_, probe, _) = train_run(spec, arm, first.seed, n)?;
        if let Some(i) = (0..n).find(|&i| probe.records[i] != first.metrics.records[i]) {
            return Err(HarnessError::NonReproducible { arm: first.arm.clone(), seed: first.seed, episode: i });
        }
    }

    let snap_seed = seeds[0];
    let snap_id = heldout_ids[0];
    let snap = &heldout[0][0];
    report.snapshot_realization = Some((snap_seed, snap_id));
    for arm in &report.arms {
        let best = report
            .runs_of(arm)
            .map(|r| {
                let exp = rollout(snap, &Greedy(&r.params), &mut seeded(r.seed, Stream::Eval));
                (r.seed, exp)
            })
            .fold(None, |best: Option<(u64, mgpg_core::Experience)>, cur| match best {
                Some(b) if b.1.total_utility >= cur.1.total_utility => Some(b),
                _ => Some(cur),
            });
        if let Some((seed, exp)) = best {
            let trajectory = exp.trajectory();
            report.snapshots.push(Snapshot {
                arm: arm.clone(),
                seed,
                utility: exp.total_utility,
                timeline: timeline(snap, &trajectory)?,
                trajectory,
            });
        }
    }
    Ok(report)
}

/// Config spelling of an algorithm.
pub fn algorithm_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Mgpg => "mgpg",
        Algorithm::VanillaPg => "vanilla_pg",
    }
}
