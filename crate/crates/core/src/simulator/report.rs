use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Rating, StrategyKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub fraction_above_5: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: StrategyKind,
    pub likelihood: Option<LikelihoodSummary>,
    pub consumption: Option<ConsumptionSummary>,
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Per-strategy rating summaries, one row per strategy present in either
/// phase, in strategy order.
pub fn strategy_report(
    likelihood: &[(StrategyKind, Rating)],
    consumption: &[(StrategyKind, Rating)],
) -> Vec<StrategyRow> {
    let group = |records: &[(StrategyKind, Rating)]| {
        let mut m: BTreeMap<StrategyKind, Vec<f64>> = BTreeMap::new();
        for (k, r) in records {
            m.entry(*k).or_default().push(r.value() as f64);
        }
        m
    };
    let l = group(likelihood);
    let c = group(consumption);
    StrategyKind::ALL
        .into_iter()
        .filter(|k| l.contains_key(k) || c.contains_key(k))
        .map(|k| StrategyRow {
            strategy: k,
            likelihood: l.get(&k).map(|v| {
                let (mean, std) = mean_std(v);
                LikelihoodSummary {
                    n: v.len(),
                    mean,
                    std,
                    fraction_above_5: v.iter().filter(|x| **x > 5.0).count() as f64 / v.len() as f64,
                }
            }),
            consumption: c.get(&k).map(|v| {
                let (mean, std) = mean_std(v);
                ConsumptionSummary {
                    n: v.len(),
                    mean,
                    std,
                }
            }),
        })
        .collect()
}
