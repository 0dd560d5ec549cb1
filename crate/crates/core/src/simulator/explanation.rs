use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cohort::{ItemId, SyntheticCohort, UserId};
use crate::error::Result;
use crate::model::StrategyKind;

/// Only this many of a user's most recent interactions count toward tie
/// strength.
pub const TIE_WINDOW: usize = 500;

/// Social information shown next to a recommended item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub kind: StrategyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friend: Option<UserId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub friend_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_count: Option<usize>,
}

impl Explanation {
    /// Whether the populated fields are exactly those `kind` calls for.
    pub fn is_well_formed(&self) -> bool {
        let (friend, count, overall) = match self.kind {
            StrategyKind::OverallPop => (false, false, true),
            StrategyKind::FriendPop => (false, true, false),
            StrategyKind::RandFriend | StrategyKind::GoodFriend => (true, false, false),
            StrategyKind::GoodFrCount => (true, true, false),
        };
        self.friend.is_some() == friend
            && self.friend_count.is_some() == count
            && self.overall_count.is_some() == overall
    }
}

/// Interactions with `friend` among the user's last [`TIE_WINDOW`] events
/// (the whole log when it is shorter).
pub fn tie_strength(user: UserId, friend: UserId, cohort: &SyntheticCohort) -> Result<usize> {
    let u = cohort.user(user)?;
    cohort.user(friend)?;
    Ok(recent(&u.interactions).iter().filter(|&&c| c == friend).count())
}

fn recent(log: &[UserId]) -> &[UserId] {
    &log[log.len().saturating_sub(TIE_WINDOW)..]
}

/// Tie strengths of every counterpart in the user's recent window.
pub fn tie_table(user: UserId, cohort: &SyntheticCohort) -> Result<BTreeMap<UserId, usize>> {
    let mut table = BTreeMap::new();
    for &c in recent(&cohort.user(user)?.interactions) {
        *table.entry(c).or_insert(0) += 1;
    }
    Ok(table)
}

/// Builds the explanation for `item` under `kind`, or `None` when the
/// strategy has no friend to name and the item must be skipped.
pub fn select_explanation<R: Rng + ?Sized>(
    user: UserId,
    item: ItemId,
    kind: StrategyKind,
    cohort: &SyntheticCohort,
    rng: &mut R,
) -> Result<Option<Explanation>> {
    let ties = tie_table(user, cohort)?;
    select_with_ties(user, item, kind, cohort, &ties, rng)
}

pub(crate) fn select_with_ties<R: Rng + ?Sized>(
    user: UserId,
    item: ItemId,
    kind: StrategyKind,
    cohort: &SyntheticCohort,
    ties: &BTreeMap<UserId, usize>,
    rng: &mut R,
) -> Result<Option<Explanation>> {
    let u = cohort.user(user)?;
    cohort.check_item(item)?;
    // Ascending ids, as friends iterate in order.
    let liking_friends: Vec<UserId> = match cohort.likes.get(&item) {
        Some(likers) => u.friends.iter().copied().filter(|f| likers.contains(f)).collect(),
        None => Vec::new(),
    };
    let mut explanation = Explanation {
        kind,
        friend: None,
        friend_count: None,
        overall_count: None,
    };
    match kind {
        StrategyKind::OverallPop => {
            explanation.overall_count = Some(cohort.likes.get(&item).map_or(0, |l| l.len()));
        }
        StrategyKind::FriendPop => {
            explanation.friend_count = Some(liking_friends.len());
        }
        StrategyKind::RandFriend => {
            if liking_friends.is_empty() {
                return Ok(None);
            }
            explanation.friend = Some(liking_friends[rng.random_range(0..liking_friends.len())]);
        }
        StrategyKind::GoodFriend | StrategyKind::GoodFrCount => {
            // max strength, smallest id on ties (likers iterate in ascending id)
            let mut best: Option<(usize, UserId)> = None;
            for f in &liking_friends {
                let s = ties.get(f).copied().unwrap_or(0);
                if s > 0 && best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, *f));
                }
            }
            let Some((_, friend)) = best else {
                return Ok(None);
            };
            explanation.friend = Some(friend);
            if kind == StrategyKind::GoodFrCount {
                explanation.friend_count = Some(liking_friends.len());
            }
        }
    }
    debug_assert!(explanation.is_well_formed());
    Ok(Some(explanation))
}
