use std::collections::BTreeMap;

use super::cohort::{generate_cohort, CohortConfig};
use super::phases::{pair_ratings, simulate_phase1, simulate_phase2_with_kappa};
use crate::error::{Error, Result};
use crate::model::Rating;

/// Fewest rating pairs a calibration run measures at each step.
pub const MIN_CALIBRATION_PAIRS: usize = 10_000;
/// Upper end of the coupling search.
pub const KAPPA_MAX: f64 = 40.0;

/// Pearson correlation of likelihood and consumption ratings after
/// z-scoring each coordinate within each user. Users with fewer than two
/// pairs or a constant coordinate are left out.
pub fn zscore_correlation<U: Ord + Clone>(pairs: &[(U, f64, f64)]) -> Result<f64> {
    let mut by_user: BTreeMap<U, Vec<(f64, f64)>> = BTreeMap::new();
    for (u, l, r) in pairs {
        by_user.entry(u.clone()).or_default().push((*l, *r));
    }
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    for group in by_user.values() {
        if group.len() < 2 {
            continue;
        }
        let n = group.len() as f64;
        let (ml, mr) = group
            .iter()
            .fold((0.0, 0.0), |(a, b), (l, r)| (a + l / n, b + r / n));
        let (vl, vr) = group.iter().fold((0.0, 0.0), |(a, b), (l, r)| {
            (a + (l - ml).powi(2) / n, b + (r - mr).powi(2) / n)
        });
        if vl <= 1e-12 || vr <= 1e-12 {
            continue;
        }
        let (sl, sr) = (vl.sqrt(), vr.sqrt());
        pooled.extend(group.iter().map(|(l, r)| ((l - ml) / sl, (r - mr) / sr)));
    }
    if pooled.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable pairs after excluding degenerate users",
            pooled.len()
        )));
    }
    Ok(pearson(&pooled))
}

fn pearson(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let (mx, my) = xy.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xy {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Convenience wrapper over rating triples.
pub fn zscore_correlation_ratings<U: Ord + Clone>(pairs: &[(U, Rating, Rating)]) -> Result<f64> {
    let numeric: Vec<(U, f64, f64)> = pairs
        .iter()
        .map(|(u, l, r)| (u.clone(), l.value() as f64, r.value() as f64))
        .collect();
    zscore_correlation(&numeric)
}

/// Measures the z-scored correlation a configuration produces at a given
/// consumption coupling.
pub struct CorrelationProbe {
    cohort: super::cohort::SyntheticCohort,
    phase1: Vec<super::phases::LikelihoodRecord>,
    seed: u64,
}

impl CorrelationProbe {
    /// Builds the world once; every `measure` call reuses it and the same
    /// consumption seed, so `r` varies only through the coupling.
    pub fn new(config: &CohortConfig, seed: u64) -> Result<Self> {
        let mut config = config.clone();
        loop {
            let cohort = generate_cohort(&config, seed)?;
            let phase1 = simulate_phase1(&cohort, seed)?;
            let probe = CorrelationProbe {
                cohort,
                phase1,
                seed,
            };
            let pairs = probe.pairs(0.0)?.len();
            if pairs >= MIN_CALIBRATION_PAIRS {
                return Ok(probe);
            }
            if pairs == 0 && config.n_users > 1_000_000 {
                return Err(Error::Config("configuration yields no rating pairs".into()));
            }
            let per_user = (pairs as f64 / config.n_users as f64).max(0.5);
            let needed = (MIN_CALIBRATION_PAIRS as f64 / per_user * 1.1).ceil() as usize;
            config.n_users = needed.max(config.n_users * 2);
            config.mean_degree = config.mean_degree.min((config.n_users - 1) as f64);
        }
    }

    fn pairs(&self, kappa: f64) -> Result<Vec<(u32, Rating, Rating)>> {
        let p2 = simulate_phase2_with_kappa(
            &self.cohort,
            &self.phase1,
            self.cohort.config.per_strategy_pick,
            kappa,
            self.seed,
        )?;
        Ok(pair_ratings(&self.phase1, &p2))
    }

    pub fn n_users(&self) -> usize {
        self.cohort.users.len()
    }

    pub fn measure(&self, kappa: f64) -> Result<f64> {
        zscore_correlation_ratings(&self.pairs(kappa)?)
    }

    pub fn n_pairs(&self) -> Result<usize> {
        Ok(self.pairs(0.0)?.len())
    }
}

/// Finds the consumption coupling whose simulated z-scored correlation is
/// within `tol` of `target_r`, by bisection over `[0, KAPPA_MAX]`. The
/// search keeps halving until it is within a quarter of `tol`, so a fresh
/// seed still lands inside the band.
pub fn calibrate_correlation(config: &CohortConfig, target_r: f64, tol: f64, seed: u64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Config("tolerance must be > 0".into()));
    }
    let probe = CorrelationProbe::new(config, seed)?;
    let r_low = probe.measure(0.0)?;
    let in_domain = (0.0..0.9).contains(&target_r);
    if in_domain && (r_low - target_r).abs() <= tol {
        return Ok(0.0);
    }
    let r_high = probe.measure(KAPPA_MAX)?;
    if !in_domain || r_high < target_r - tol || r_low > target_r + tol {
        return Err(Error::Calibration {
            target: target_r,
            low: r_low,
            high: r_high,
        });
    }
    let (mut lo, mut hi) = (0.0, KAPPA_MAX);
    let mut best = (KAPPA_MAX, (r_high - target_r).abs());
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let r = probe.measure(mid)?;
        let gap = (r - target_r).abs();
        if gap < best.1 {
            best = (mid, gap);
        }
        if gap <= tol / 4.0 {
            return Ok(mid);
        }
        if r < target_r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.1 <= tol {
        Ok(best.0)
    } else {
        Err(Error::Calibration {
            target: target_r,
            low: r_low,
            high: r_high,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn identical_coordinates() {
        let pairs: Vec<(u32, f64, f64)> = (0..20).map(|i| (i % 4, (i % 7) as f64, (i % 7) as f64)).collect();
        assert!((zscore_correlation(&pairs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_user_matches_textbook_formula() {
        let pairs = vec![(0u32, 1.0, 2.0), (0, 2.0, 1.0), (0, 3.0, 4.0), (0, 4.0, 3.0)];
        let oracle = textbook_pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]);
        assert!((oracle - 0.6).abs() < 1e-12);
        assert!((zscore_correlation(&pairs).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_users_are_excluded() {
        let mut pairs = vec![(0u32, 1.0, 2.0), (0, 2.0, 1.0), (0, 3.0, 4.0), (0, 4.0, 3.0)];
        let base = zscore_correlation(&pairs).unwrap();
        pairs.extend([(1, 5.0, 1.0), (1, 5.0, 9.0), (1, 5.0, 3.0)]);
        pairs.push((2, 7.0, 7.0));
        assert!((zscore_correlation(&pairs).unwrap() - base).abs() < 1e-12);
        assert!(matches!(
            zscore_correlation(&[(0u32, 1.0, 1.0), (0, 2.0, 2.0)]),
            Err(Error::InsufficientData(_))
        ));
    }
}
