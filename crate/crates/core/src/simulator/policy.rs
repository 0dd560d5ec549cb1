//! Two-phase recommendation: maximize the predicted consumption rating
//! among items whose predicted likelihood clears a threshold, lowering the
//! threshold step by step when too few items clear it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    /// Initial likelihood threshold.
    pub epsilon: f64,
    /// Threshold decrement per retry.
    pub delta: f64,
    /// Slate size.
    pub k: usize,
    /// The threshold is never lowered below this.
    #[serde(default)]
    pub epsilon_floor: f64,
}

impl TwoPhaseConfig {
    pub fn new(epsilon: f64, delta: f64, k: usize) -> Self {
        TwoPhaseConfig {
            epsilon,
            delta,
            k,
            epsilon_floor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config("delta must be > 0".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon_floor.is_finite()) {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        if self.epsilon < self.epsilon_floor {
            return Err(Error::Config("epsilon must be >= epsilon_floor".into()));
        }
        Ok(())
    }

    /// Threshold after `step` decrements.
    pub fn threshold(&self, step: u64) -> f64 {
        self.epsilon - step as f64 * self.delta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem<I> {
    pub item: I,
    /// Predicted likelihood rating.
    pub likelihood: f64,
    /// Predicted consumption rating.
    pub consumption: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slate<I> {
    /// Chosen items, highest consumption first.
    pub items: Vec<ScoredItem<I>>,
    /// Threshold the slate was selected at.
    pub epsilon: f64,
    /// Number of decrements applied.
    pub steps: u64,
}

/// Slate order: higher consumption, then higher likelihood, then smaller id.
pub fn slate_order<I: Ord>(a: &ScoredItem<I>, b: &ScoredItem<I>) -> Ordering {
    b.consumption
        .total_cmp(&a.consumption)
        .then(b.likelihood.total_cmp(&a.likelihood))
        .then(a.item.cmp(&b.item))
}

pub fn two_phase_recommend<I: Ord + Clone>(
    candidates: &[ScoredItem<I>],
    config: &TwoPhaseConfig,
) -> Result<Slate<I>> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidates to recommend".into()));
    }
    if candidates
        .iter()
        .any(|c| !(c.likelihood.is_finite() && c.consumption.is_finite()))
    {
        return Err(Error::validation(None, "candidate scores must be finite"));
    }

    // Last step whose threshold is still >= the floor.
    let mut last = ((config.epsilon - config.epsilon_floor) / config.delta).floor() as u64;
    while last > 0 && config.threshold(last) < config.epsilon_floor {
        last -= 1;
    }
    while config.threshold(last + 1) >= config.epsilon_floor {
        last += 1;
    }

    let mut likelihoods: Vec<f64> = candidates.iter().map(|c| c.likelihood).collect();
    likelihoods.sort_by(|a, b| b.total_cmp(a));
    // First step at which k items clear the threshold, i.e. threshold < k-th largest L.
    let needed = likelihoods.get(config.k - 1).map(|&kth| {
        let mut step = ((config.epsilon - kth) / config.delta).floor().max(0.0) as u64;
        while step > 0 && config.threshold(step - 1) < kth {
            step -= 1;
        }
        while config.threshold(step) >= kth {
            step += 1;
        }
        step
    });

    let (steps, fill) = match needed {
        Some(step) if step <= last => (step, true),
        _ => (last, false),
    };
    let epsilon = config.threshold(steps);
    let mut items: Vec<ScoredItem<I>> = candidates
        .iter()
        .filter(|c| c.likelihood > epsilon)
        .cloned()
        .collect();
    items.sort_by(slate_order);
    if fill {
        items.truncate(config.k);
    }
    Ok(Slate {
        items,
        epsilon,
        steps,
    })
}
