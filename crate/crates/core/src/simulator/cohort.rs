//! Synthetic worlds: users with rating behavior, a friendship graph,
//! per-user interaction logs, item Likes and latent user-item affinities.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixtureParams, PmfMode, StrategyKind};
use crate::seeding::rng_for;

/// Fewest unfamiliar items each user is asked to rate.
pub const MIN_CANDIDATES: usize = 30;

pub type UserId = u32;
pub type ItemId = u32;

const STREAM_GRAPH: u64 = 1;
const STREAM_ITEMS: u64 = 2;
const STREAM_LIKES: u64 = 3;
const STREAM_LOGS: u64 = 4;
const STREAM_CANDIDATES: u64 = 5;
const STREAM_ARCHETYPE: u64 = 6;

/// One behavior type in an archetype population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub params: MixtureParams,
    /// Relative share of users with this behavior.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

/// Where users' rating parameters come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    /// Every user shares one parameter set per strategy.
    PerStrategy {
        params: BTreeMap<StrategyKind, MixtureParams>,
    },
    /// Each user follows one archetype regardless of strategy.
    Archetypes { archetypes: Vec<Archetype> },
}

impl Default for Behavior {
    fn default() -> Self {
        Behavior::PerStrategy {
            params: StrategyKind::ALL
                .into_iter()
                .map(|k| (k, k.default_params()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_users: usize,
    pub mean_degree: f64,
    pub n_items: usize,
    pub likes_per_user: usize,
    pub candidates_per_user: usize,
    /// Mean interaction-log length; each user's length is uniform in
    /// `[0.5, 1.5]` times this.
    pub interactions_per_user: usize,
    /// How many friends a user interacts with at all.
    pub close_friends: usize,
    pub behavior: Behavior,
    /// Strategies assigned to candidate items, uniformly.
    pub strategies: Vec<StrategyKind>,
    /// Shift of the explanation-effect center per unit of affinity.
    pub lambda: f64,
    /// How far affinity moves the base-component weight, in `[0, 1]`. At 1
    /// the weight spans `a +- min(a, 1 - a)` across the affinity range.
    pub membership_coupling: f64,
    /// Shift of consumption ratings per unit of affinity.
    pub kappa: f64,
    /// Items listened to per strategy in the consumption phase.
    pub per_strategy_pick: usize,
    /// Optional additive consumption effect per strategy.
    pub consumption_shift: BTreeMap<StrategyKind, f64>,
    pub pmf_mode: PmfMode,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_users: 200,
            mean_degree: 20.0,
            n_items: 400,
            likes_per_user: 40,
            candidates_per_user: MIN_CANDIDATES,
            interactions_per_user: 600,
            close_friends: 8,
            behavior: Behavior::default(),
            strategies: StrategyKind::ALL.to_vec(),
            lambda: DEFAULT_LAMBDA,
            membership_coupling: DEFAULT_MEMBERSHIP_COUPLING,
            kappa: 0.0,
            per_strategy_pick: 2,
            consumption_shift: BTreeMap::new(),
            pmf_mode: PmfMode::TruncatedRenormalized,
        }
    }
}

/// Default affinity coupling of likelihood ratings.
pub const DEFAULT_LAMBDA: f64 = 4.0;

/// Default affinity coupling of the mixing weight.
pub const DEFAULT_MEMBERSHIP_COUPLING: f64 = 1.0;

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be >= 1".into()));
        }
        if !(self.mean_degree.is_finite() && self.mean_degree >= 0.0) {
            return Err(Error::Config("mean_degree must be finite and >= 0".into()));
        }
        if self.mean_degree > (self.n_users - 1) as f64 {
            return Err(Error::Config(format!(
                "mean degree {} needs more friends than the {} other users",
                self.mean_degree,
                self.n_users - 1
            )));
        }
        if self.candidates_per_user < MIN_CANDIDATES {
            return Err(Error::Config(format!(
                "candidates_per_user must be >= {MIN_CANDIDATES}"
            )));
        }
        if self.n_items < self.candidates_per_user {
            return Err(Error::Config(format!(
                "{} items cannot give {} unfamiliar candidates per user",
                self.n_items, self.candidates_per_user
            )));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy must be enabled".into()));
        }
        if !(self.lambda.is_finite() && self.kappa.is_finite()) {
            return Err(Error::Config("lambda and kappa must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.membership_coupling) {
            return Err(Error::Config("membership_coupling must be in [0, 1]".into()));
        }
        if self.consumption_shift.values().any(|s| !s.is_finite()) {
            return Err(Error::Config("consumption shifts must be finite".into()));
        }
        match &self.behavior {
            Behavior::PerStrategy { params } => {
                for kind in &self.strategies {
                    if !params.contains_key(kind) {
                        return Err(Error::Config(format!("no behavior parameters for {kind}")));
                    }
                }
                params.values().try_for_each(MixtureParams::validate)?;
            }
            Behavior::Archetypes { archetypes } => {
                if archetypes.is_empty() {
                    return Err(Error::Config("archetype list is empty".into()));
                }
                if archetypes.iter().any(|a| !(a.weight.is_finite() && a.weight > 0.0)) {
                    return Err(Error::Config("archetype weights must be > 0".into()));
                }
                archetypes.iter().try_for_each(|a| a.params.validate())?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item: ItemId,
    /// Latent affinity of the user for the item, uniform on `[0, 1]`.
    pub affinity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUser {
    pub id: UserId,
    /// Index into the archetype list, when behavior is archetype-based.
    pub archetype: Option<usize>,
    pub params: BTreeMap<StrategyKind, MixtureParams>,
    pub friends: BTreeSet<UserId>,
    /// Counterpart of each interaction, oldest first.
    pub interactions: Vec<UserId>,
    /// Items the user has not Liked and is asked about.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohort {
    pub config: CohortConfig,
    pub users: Vec<SimUser>,
    /// Latent appeal of each item, in `[0, 1]`.
    pub item_appeal: Vec<f64>,
    /// Likers of each item that has any.
    pub likes: BTreeMap<ItemId, BTreeSet<UserId>>,
}

impl SyntheticCohort {
    pub fn user(&self, id: UserId) -> Result<&SimUser> {
        self.users
            .get(id as usize)
            .ok_or_else(|| Error::Lookup(format!("user {id}")))
    }

    pub fn check_item(&self, id: ItemId) -> Result<()> {
        if (id as usize) < self.item_appeal.len() {
            Ok(())
        } else {
            Err(Error::Lookup(format!("item {id}")))
        }
    }

    pub fn likers(&self, item: ItemId) -> impl Iterator<Item = UserId> + '_ {
        self.likes.get(&item).into_iter().flatten().copied()
    }

    pub fn friendships(&self) -> Vec<(UserId, UserId)> {
        self.users
            .iter()
            .flat_map(|u| u.friends.iter().filter(move |f| **f > u.id).map(move |f| (u.id, *f)))
            .collect()
    }

    pub fn mean_degree(&self) -> f64 {
        let total: usize = self.users.iter().map(|u| u.friends.len()).sum();
        total as f64 / self.users.len() as f64
    }
}

/// Builds a world from a configuration; the same seed always gives the
/// same world.
pub fn generate_cohort(config: &CohortConfig, seed: u64) -> Result<SyntheticCohort> {
    config.validate()?;
    let n = config.n_users;

    let mut friends: Vec<BTreeSet<UserId>> = vec![BTreeSet::new(); n];
    if n > 1 {
        let p = config.mean_degree / (n - 1) as f64;
        for i in 0..n {
            let mut rng = rng_for(seed, STREAM_GRAPH, i as u64);
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    friends[i].insert(j as UserId);
                    friends[j].insert(i as UserId);
                }
            }
        }
    }

    let mut item_rng = rng_for(seed, STREAM_ITEMS, 0);
    let item_appeal: Vec<f64> = (0..config.n_items).map(|_| item_rng.random::<f64>()).collect();

    // Likes: weighted sampling without replacement by appeal (Efraimidis-Spirakis keys).
    let n_likes = config
        .likes_per_user
        .min(config.n_items - config.candidates_per_user);
    let mut liked: Vec<BTreeSet<ItemId>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_for(seed, STREAM_LIKES, i as u64);
        let mut keyed: Vec<(f64, ItemId)> = item_appeal
            .iter()
            .enumerate()
            .map(|(item, w)| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (u.ln() / (w + 0.05), item as ItemId)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        liked.push(keyed.into_iter().take(n_likes).map(|(_, item)| item).collect());
    }
    let mut likes: BTreeMap<ItemId, BTreeSet<UserId>> = BTreeMap::new();
    for (user, items) in liked.iter().enumerate() {
        for item in items {
            likes.entry(*item).or_default().insert(user as UserId);
        }
    }

    let archetype_weights = match &config.behavior {
        Behavior::Archetypes { archetypes } => Some(archetypes.iter().map(|a| a.weight).collect::<Vec<_>>()),
        Behavior::PerStrategy { .. } => None,
    };

    let mut users = Vec::with_capacity(n);
    for i in 0..n {
        let id = i as UserId;

        let mut log_rng = rng_for(seed, STREAM_LOGS, i as u64);
        let mut close: Vec<UserId> = friends[i].iter().copied().collect();
        close.shuffle(&mut log_rng);
        close.truncate(config.close_friends);
        let mut interactions = Vec::new();
        if !close.is_empty() {
            let base = config.interactions_per_user as f64;
            let len = (base * (0.5 + log_rng.random::<f64>())).round() as usize;
            // Zipf-like closeness: the r-th close friend gets weight 1/(r+1).
            let weights: Vec<f64> = (0..close.len()).map(|r| 1.0 / (r + 1) as f64).collect();
            let total: f64 = weights.iter().sum();
            for _ in 0..len {
                let mut u = log_rng.random::<f64>() * total;
                let mut pick = close.len() - 1;
                for (r, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = r;
                        break;
                    }
                    u -= w;
                }
                interactions.push(close[pick]);
            }
        }

        // Unfamiliar items, preferring those some friend Likes.
        let mut cand_rng = rng_for(seed, STREAM_CANDIDATES, i as u64);
        let friend_liked: BTreeSet<ItemId> = friends[i]
            .iter()
            .flat_map(|f| liked[*f as usize].iter().copied())
            .collect();
        let (mut social, mut other): (Vec<ItemId>, Vec<ItemId>) = (0..config.n_items as ItemId)
            .filter(|item| !liked[i].contains(item))
            .partition(|item| friend_liked.contains(item));
        social.shuffle(&mut cand_rng);
        other.shuffle(&mut cand_rng);
        let mut chosen: Vec<ItemId> = social
            .into_iter()
            .chain(other)
            .take(config.candidates_per_user)
            .collect();
        chosen.sort_unstable();
        let candidates = chosen
            .into_iter()
            .map(|item| Candidate {
                item,
                affinity: cand_rng.random(),
            })
            .collect();

        let (archetype, params) = match (&config.behavior, &archetype_weights) {
            (Behavior::PerStrategy { params }, _) => (None, params.clone()),
            (Behavior::Archetypes { archetypes }, Some(weights)) => {
                let mut rng = rng_for(seed, STREAM_ARCHETYPE, i as u64);
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                let mut pick = weights.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = k;
                        break;
                    }
                    u -= w;
                }
                let p = archetypes[pick].params;
                (Some(pick), StrategyKind::ALL.into_iter().map(|k| (k, p)).collect())
            }
            (Behavior::Archetypes { .. }, None) => unreachable!("weights built for archetypes"),
        };

        users.push(SimUser {
            id,
            archetype,
            params,
            friends: std::mem::take(&mut friends[i]),
            interactions,
            candidates,
        });
    }

    Ok(SyntheticCohort {
        config: config.clone(),
        users,
        item_appeal,
        likes,
    })
}
