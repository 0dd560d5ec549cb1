//! The two rating phases of the study: likelihood ratings under randomly
//! assigned explanation strategies, then consumption ratings for a few
//! items per strategy.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::Serialize;

use super::cohort::{ItemId, SyntheticCohort, UserId};
use super::explanation::{select_with_ties, tie_table, Explanation};
use crate::error::Result;
use crate::model::{
    a_for_discrete_base_weight, discrete_base_weight, discretize_pmf, MixtureParams, Phase, Rating, RatingPmf,
    RatingSampler, StrategyKind, N_BINS,
};
use crate::seeding::rng_for;

const STREAM_PHASE1: u64 = 101;
const STREAM_PHASE2: u64 = 102;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikelihoodRecord {
    pub user: UserId,
    pub item: ItemId,
    pub strategy: StrategyKind,
    pub explanation: Explanation,
    pub rating: Rating,
    /// Position in the user's randomized presentation order.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumptionRecord {
    pub user: UserId,
    pub item: ItemId,
    pub strategy: StrategyKind,
    pub rating: Rating,
}

/// Center of the explanation effect after the affinity shift.
pub fn shifted_center(mu: f64, lambda: f64, affinity: f64) -> f64 {
    (mu + lambda * (affinity - 0.5)).clamp(0.0, 10.0)
}

/// Discrete base-component weight after the affinity shift. Averaged over a
/// uniform affinity it equals `w`, and the pmf is linear in `w`, so the
/// coupling leaves the marginal pmf unchanged when the center does not move.
pub fn shifted_weight(w: f64, coupling: f64, affinity: f64) -> f64 {
    (w + coupling * w.min(1.0 - w) * (1.0 - 2.0 * affinity)).clamp(0.0, 1.0)
}

/// Per-item parameters under the affinity couplings.
pub fn coupled_params(params: &MixtureParams, lambda: f64, coupling: f64, affinity: f64) -> Result<MixtureParams> {
    let mu = shifted_center(params.mu(), lambda, affinity);
    if mu == params.mu() && (coupling == 0.0 || affinity == 0.5) {
        return Ok(*params);
    }
    let w = shifted_weight(discrete_base_weight(params), coupling, affinity);
    let moved = params.with_mu_and_a(mu, params.a())?;
    let a = a_for_discrete_base_weight(&moved, w);
    params.with_mu_and_a(mu, a)
}

/// Likelihood ratings for every candidate item of every user. Output is
/// ordered by user then item.
pub fn simulate_phase1(cohort: &SyntheticCohort, seed: u64) -> Result<Vec<LikelihoodRecord>> {
    let config = &cohort.config;
    let mut records = Vec::new();
    for user in &cohort.users {
        let mut rng = rng_for(seed, STREAM_PHASE1, user.id as u64);
        let ties = tie_table(user.id, cohort)?;
        let mut order: Vec<usize> = (0..user.candidates.len()).collect();
        order.shuffle(&mut rng);
        let mut user_records = Vec::with_capacity(order.len());
        for (position, idx) in order.into_iter().enumerate() {
            let candidate = &user.candidates[idx];
            let strategy = *config
                .strategies
                .choose(&mut rng)
                .expect("config has at least one strategy");
            let Some(explanation) =
                select_with_ties(user.id, candidate.item, strategy, cohort, &ties, &mut rng)?
            else {
                continue;
            };
            let effective = coupled_params(
                &user.params[&strategy],
                config.lambda,
                config.membership_coupling,
                candidate.affinity,
            )?;
            let sampler = RatingSampler::from_params(&effective, config.pmf_mode)?;
            user_records.push(LikelihoodRecord {
                user: user.id,
                item: candidate.item,
                strategy,
                explanation,
                rating: sampler.sample(&mut rng),
                position,
            });
        }
        user_records.sort_by_key(|r| r.item);
        records.extend(user_records);
    }
    Ok(records)
}

/// Base consumption distribution: flat over 0..=8, with 9 and 10 at half
/// weight.
pub fn consumption_base_pmf() -> RatingPmf {
    let mut weights = [1.0; N_BINS];
    weights[9] = 0.5;
    weights[10] = 0.5;
    RatingPmf::from_weights(weights).expect("static weights are valid")
}

/// Draws a consumption rating: a base draw spread uniformly over its unit
/// bin, shifted by `kappa * (affinity - 0.5) + shift`, then rounded and
/// clamped to the scale. With no shift the base pmf is reproduced exactly.
pub fn draw_consumption<R: Rng + ?Sized>(
    base: &RatingSampler,
    kappa: f64,
    affinity: f64,
    shift: f64,
    rng: &mut R,
) -> u8 {
    let k = base.sample_value(rng) as f64;
    let jitter: f64 = rng.random::<f64>() - 0.5;
    let x = k + jitter + kappa * (affinity - 0.5) + shift;
    x.round().clamp(0.0, 10.0) as u8
}

/// Consumption ratings for `per_strategy_pick` items per strategy and
/// user, chosen at random from the user's likelihood records, using the
/// cohort's configured coupling.
pub fn simulate_phase2(
    cohort: &SyntheticCohort,
    phase1: &[LikelihoodRecord],
    per_strategy_pick: usize,
    seed: u64,
) -> Result<Vec<ConsumptionRecord>> {
    simulate_phase2_with_kappa(cohort, phase1, per_strategy_pick, cohort.config.kappa, seed)
}

pub fn simulate_phase2_with_kappa(
    cohort: &SyntheticCohort,
    phase1: &[LikelihoodRecord],
    per_strategy_pick: usize,
    kappa: f64,
    seed: u64,
) -> Result<Vec<ConsumptionRecord>> {
    let base = RatingSampler::new(&consumption_base_pmf(), Phase::Consumption);
    let mut by_user: BTreeMap<UserId, BTreeMap<StrategyKind, Vec<&LikelihoodRecord>>> =
        BTreeMap::new();
    for r in phase1 {
        by_user
            .entry(r.user)
            .or_default()
            .entry(r.strategy)
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for (user_id, groups) in by_user {
        let user = cohort.user(user_id)?;
        let affinity: BTreeMap<ItemId, f64> =
            user.candidates.iter().map(|c| (c.item, c.affinity)).collect();
        let mut rng = rng_for(seed, STREAM_PHASE2, user_id as u64);
        let mut user_records = Vec::new();
        for (strategy, mut records) in groups {
            records.sort_by_key(|r| r.item);
            let picks: Vec<&&LikelihoodRecord> = records
                .choose_multiple(&mut rng, per_strategy_pick)
                .collect();
            let shift = cohort
                .config
                .consumption_shift
                .get(&strategy)
                .copied()
                .unwrap_or(0.0);
            for r in picks {
                let z = affinity.get(&r.item).copied().unwrap_or(0.5);
                let value = draw_consumption(&base, kappa, z, shift, &mut rng);
                user_records.push(ConsumptionRecord {
                    user: user_id,
                    item: r.item,
                    strategy,
                    rating: Rating::new(value, Phase::Consumption)?,
                });
            }
        }
        user_records.sort_by_key(|r| r.item);
        out.extend(user_records);
    }
    Ok(out)
}

/// Pairs each consumption rating with the likelihood rating of the same
/// user and item.
pub fn pair_ratings(
    phase1: &[LikelihoodRecord],
    phase2: &[ConsumptionRecord],
) -> Vec<(UserId, Rating, Rating)> {
    let likelihood: BTreeMap<(UserId, ItemId), Rating> =
        phase1.iter().map(|r| ((r.user, r.item), r.rating)).collect();
    phase2
        .iter()
        .filter_map(|c| {
            likelihood
                .get(&(c.user, c.item))
                .map(|l| (c.user, *l, c.rating))
        })
        .collect()
}

/// Pmf a user's likelihood ratings follow for one strategy when the
/// affinity coupling is off.
pub fn likelihood_pmf(cohort: &SyntheticCohort, user: UserId, strategy: StrategyKind) -> Result<RatingPmf> {
    let u = cohort.user(user)?;
    discretize_pmf(&u.params[&strategy], cohort.config.pmf_mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fraction_above, PmfMode};
    use crate::simulator::cohort::{generate_cohort, CohortConfig};
    use crate::simulator::explanation::tie_strength;

    fn small(config: CohortConfig) -> SyntheticCohort {
        generate_cohort(&config, 21).unwrap()
    }

    #[test]
    fn forced_strategy() {
        let cohort = small(CohortConfig {
            n_users: 1,
            mean_degree: 0.0,
            n_items: 60,
            strategies: vec![StrategyKind::OverallPop],
            ..CohortConfig::default()
        });
        let records = simulate_phase1(&cohort, 1).unwrap();
        assert_eq!(records.len(), 30);
        assert!(records.iter().all(|r| r.strategy == StrategyKind::OverallPop));
        let mut positions: Vec<_> = records.iter().map(|r| r.position).collect();
        positions.sort();
        assert_eq!(positions, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn good_friend_without_ties_is_always_skipped() {
        let mut cohort = small(CohortConfig {
            n_users: 30,
            mean_degree: 8.0,
            n_items: 60,
            strategies: vec![StrategyKind::GoodFriend, StrategyKind::FriendPop],
            ..CohortConfig::default()
        });
        for u in &mut cohort.users {
            u.interactions.clear();
        }
        let records = simulate_phase1(&cohort, 2).unwrap();
        assert!(!records.is_empty());
        assert!(records.iter().all(|r| r.strategy == StrategyKind::FriendPop));
    }

    #[test]
    fn named_friends_have_ties() {
        let cohort = small(CohortConfig::default());
        let records = simulate_phase1(&cohort, 3).unwrap();
        let mut good = 0;
        for r in &records {
            assert!(r.explanation.is_well_formed());
            if r.strategy.needs_good_friend() {
                good += 1;
                let f = r.explanation.friend.unwrap();
                assert!(tie_strength(r.user, f, &cohort).unwrap() > 0);
            }
        }
        assert!(good > 0);
    }

    #[test]
    fn zero_center_shift_matches_analytic_fraction_above() {
        let cohort = small(CohortConfig {
            n_users: 400,
            mean_degree: 20.0,
            n_items: 300,
            candidates_per_user: 250,
            lambda: 0.0,
            ..CohortConfig::default()
        });
        let records = simulate_phase1(&cohort, 4).unwrap();
        for kind in [StrategyKind::OverallPop, StrategyKind::FriendPop] {
            let ratings: Vec<_> = records.iter().filter(|r| r.strategy == kind).collect();
            let above = ratings.iter().filter(|r| r.rating.value() > 5).count() as f64;
            let observed = above / ratings.len() as f64;
            let expected = fraction_above(&kind.default_params(), 5, PmfMode::default()).unwrap();
            assert!((observed - expected).abs() < 0.02, "{kind}: {observed} vs {expected}");
        }
    }

    #[test]
    fn weight_coupling_preserves_the_marginal_pmf() {
        let n = 20_000;
        for kind in StrategyKind::ALL {
            let params = kind.default_params();
            let mut mean = [0.0; N_BINS];
            for i in 0..n {
                let z = (i as f64 + 0.5) / n as f64;
                let p = coupled_params(&params, 0.0, 1.0, z).unwrap();
                let pmf = discretize_pmf(&p, PmfMode::default()).unwrap();
                for k in 0..N_BINS {
                    mean[k] += pmf.probs()[k] / n as f64;
                }
            }
            let target = discretize_pmf(&params, PmfMode::default()).unwrap();
            for k in 0..N_BINS {
                assert!((mean[k] - target.probs()[k]).abs() < 1e-6, "{kind} bin {k}");
            }
        }
    }

    #[test]
    fn discrete_weight_round_trips() {
        for kind in StrategyKind::ALL {
            let params = kind.default_params();
            let w = discrete_base_weight(&params);
            assert!((a_for_discrete_base_weight(&params, w) - params.a()).abs() < 1e-12);
        }
    }

    #[test]
    fn phase2_picks() {
        let cohort = small(CohortConfig::default());
        let p1 = simulate_phase1(&cohort, 5).unwrap();
        assert!(simulate_phase2(&cohort, &p1, 0, 5).unwrap().is_empty());
        let p2 = simulate_phase2(&cohort, &p1, 2, 5).unwrap();
        let mut per: BTreeMap<(UserId, StrategyKind), usize> = BTreeMap::new();
        for r in &p2 {
            *per.entry((r.user, r.strategy)).or_default() += 1;
        }
        assert!(per.values().all(|&n| n <= 2));
        assert_eq!(pair_ratings(&p1, &p2).len(), p2.len());
        assert_eq!(p2, simulate_phase2(&cohort, &p1, 2, 5).unwrap());
    }

    #[test]
    fn zero_kappa_reproduces_base_pmf() {
        let base = RatingSampler::new(&consumption_base_pmf(), Phase::Consumption);
        let mut rng = rng_for(1, 0, 0);
        let mut counts = [0usize; N_BINS];
        let n = 100_000;
        for _ in 0..n {
            counts[draw_consumption(&base, 0.0, rng.random(), 0.0, &mut rng) as usize] += 1;
        }
        let pmf = consumption_base_pmf();
        for k in 0..N_BINS {
            let f = counts[k] as f64 / n as f64;
            assert!((f - pmf.probs()[k]).abs() < 0.005, "bin {k}: {f}");
        }
        assert!((pmf.mean() - 4.55).abs() < 1e-12);
    }
}
