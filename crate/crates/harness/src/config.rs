//! Experiment specification files (TOML).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use mgpg_core::learner::Algorithm;
use mgpg_core::{LearnerConfig, ScenarioSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Overrides where relative output directories are resolved.
pub const OUTPUT_ROOT_ENV: &str = "MGPG_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub learner: LearnerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedList {
    List(Vec<u64>),
    Range { first: u64, count: u64 },
}

impl SeedList {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedList::List(v) => v.clone(),
            SeedList::Range { first, count } => (*first..first + count).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Evaluate on realizations never seen in training.
    #[default]
    Unseen,
    /// Evaluate on the training realizations.
    InSample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    #[default]
    Greedy,
    Stochastic,
}

/// Which realizations each run trains and is evaluated on. Ids are
/// half-open ranges; realization `i` of run seed `s` is drawn with seed
/// `mix(s, i)`, so every arm sees the same realizations for a given seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    pub kind: ProtocolKind,
    /// Cycled through, one per episode.
    pub train_ids: [u64; 2],
    pub heldout_ids: [u64; 2],
    pub evaluation: Evaluation,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            kind: ProtocolKind::Unseen,
            train_ids: [0, 1 << 32],
            heldout_ids: [1 << 32, (1 << 32) + 16],
            evaluation: Evaluation::Greedy,
        }
    }
}

impl Protocol {
    pub fn train_count(&self) -> u64 {
        self.train_ids[1].saturating_sub(self.train_ids[0])
    }

    pub fn heldout(&self) -> Vec<u64> {
        match self.kind {
            ProtocolKind::Unseen => (self.heldout_ids[0]..self.heldout_ids[1]).collect(),
            ProtocolKind::InSample => {
                let n = self.train_count().min(self.heldout_ids[1].saturating_sub(self.heldout_ids[0]));
                (self.train_ids[0]..self.train_ids[0] + n).collect()
            }
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_probe() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub scenario: ScenarioSpec,
    pub arms: Vec<ArmSpec>,
    pub seeds: SeedList,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Episodes re-run on the first (arm, seed) to detect nondeterminism.
    #[serde(default = "default_probe")]
    pub probe_episodes: usize,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if self.seeds.seeds().is_empty() {
            return invalid("at least one seed is required");
        }
        if self.arms.is_empty() {
            return invalid("at least one arm is required");
        }
        let mut names = HashSet::new();
        for arm in &self.arms {
            if !names.insert(arm.name.as_str()) {
                return Err(HarnessError::Invalid(format!("duplicate arm name `{}`", arm.name)));
            }
            if arm.name.is_empty() || arm.name.contains([',', '"', '\n', '/']) {
                return Err(HarnessError::Invalid(format!("arm name `{}` is not a plain identifier", arm.name)));
            }
            arm.learner.validate()?;
        }
        self.scenario.validate()?;
        let p = &self.protocol;
        if p.train_count() == 0 {
            return invalid("protocol.train_ids is empty");
        }
        if p.heldout().is_empty() {
            return invalid("protocol.heldout_ids is empty");
        }
        if p.kind == ProtocolKind::Unseen && p.train_ids[0] < p.heldout_ids[1] && p.heldout_ids[0] < p.train_ids[1] {
            return invalid("held-out realization ids overlap the training ids");
        }
        Ok(())
    }

    /// Output directory, resolved against `MGPG_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Parses TOML text, reporting the key path of the first offending field.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let message = e.into_inner().message().trim().to_string();
        HarnessError::Config { key, message }
    })
}

pub fn parse_experiment(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = parse_toml(text)?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    parse_experiment(&text)
}

/// A scenario file is either a bare scenario table or an experiment file
/// with a `[scenario]` table.
pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    let mut table: toml::Table = parse_toml(&text)?;
    let spec: ScenarioSpec = match table.remove("scenario") {
        Some(value) => serde_path_to_error::deserialize(value).map_err(|e| HarnessError::Config {
            key: format!("scenario.{}", e.path()),
            message: e.into_inner().message().trim().to_string(),
        })?,
        None => parse_toml(&text)?,
    };
    spec.validate()?;
    Ok(spec)
}
