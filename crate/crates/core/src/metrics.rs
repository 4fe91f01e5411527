//! Per-episode training records and convergence statistics.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Trailing window used for convergence and final utility.
pub const CONVERGENCE_WINDOW: usize = 50;
/// A run has converged once its trailing mean reaches this share of the
/// final-window mean.
pub const CONVERGENCE_FRACTION: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Success rate of the training rollout `e`.
    pub utility_e: f64,
    /// Success rate of the validation rollout `e'` (MGPG only).
    pub utility_e_prime: Option<f64>,
    /// Discount used for this episode's policy update.
    pub eta: f64,
    /// Norm of the policy gradient applied this episode.
    pub grad_norm: f64,
    /// Meta-gradient of the validation objective w.r.t. the discount (MGPG only).
    pub meta_grad: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Convergence {
    /// 1-based episode count at which the criterion first held; the series
    /// length when it never did.
    pub episodes: usize,
    pub detected: bool,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// First episode whose trailing `window` mean reaches `fraction` of the
/// final-window mean. Series shorter than `window` report no convergence.
pub fn episodes_to_converge(series: &[f64], window: usize, fraction: f64) -> Convergence {
    let n = series.len();
    if window == 0 || n < window {
        return Convergence { episodes: n, detected: false };
    }
    let target = fraction * mean(&series[n - window..]);
    for end in window..=n {
        if mean(&series[end - window..end]) >= target {
            return Convergence { episodes: end, detected: true };
        }
    }
    Convergence { episodes: n, detected: false }
}

#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RunMetrics {
    pub records: Vec<EpisodeRecord>,
    pub episodes_to_converge: usize,
    pub converged: bool,
    /// Mean training success rate over the final window.
    pub final_utility: f64,
}

impl RunMetrics {
    pub fn from_records(records: Vec<EpisodeRecord>) -> Self {
        let utilities: Vec<f64> = records.iter().map(|r| r.utility_e).collect();
        let c = episodes_to_converge(&utilities, CONVERGENCE_WINDOW, CONVERGENCE_FRACTION);
        let tail = utilities.len().saturating_sub(CONVERGENCE_WINDOW);
        RunMetrics {
            final_utility: mean(&utilities[tail..]),
            episodes_to_converge: c.episodes,
            converged: c.detected,
            records,
        }
    }

    pub fn utilities(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.utility_e).collect()
    }

    pub fn etas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eta).collect()
    }
}
