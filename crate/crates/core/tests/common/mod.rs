use std::cmp::Ordering;

use explainmix::simulator::{ScoredItem, TwoPhaseConfig};

/// Exhaustive search: walk the threshold schedule, and at the first threshold
/// where k items qualify try every k-subset of the qualifying items.
pub fn brute_force(items: &[ScoredItem<u32>], config: &TwoPhaseConfig) -> (Vec<u32>, u64) {
    // Better item first: higher R, then higher L, then smaller id.
    let better = |x: &ScoredItem<u32>, y: &ScoredItem<u32>| -> Ordering {
        if x.consumption != y.consumption {
            return if x.consumption > y.consumption { Ordering::Less } else { Ordering::Greater };
        }
        if x.likelihood != y.likelihood {
            return if x.likelihood > y.likelihood { Ordering::Less } else { Ordering::Greater };
        }
        x.item.cmp(&y.item)
    };
    let ranked = |mut v: Vec<ScoredItem<u32>>| {
        v.sort_by(better);
        v
    };
    let mut step = 0u64;
    loop {
        let eps = config.epsilon - step as f64 * config.delta;
        let qualifying: Vec<ScoredItem<u32>> =
            items.iter().filter(|c| c.likelihood > eps).cloned().collect();
        if qualifying.len() >= config.k {
            let mut best: Option<Vec<ScoredItem<u32>>> = None;
            for mask in 0u32..(1 << qualifying.len()) {
                if mask.count_ones() as usize != config.k {
                    continue;
                }
                let subset = ranked(
                    (0..qualifying.len())
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| qualifying[i].clone())
                        .collect(),
                );
                let wins = match &best {
                    None => true,
                    Some(b) => subset
                        .iter()
                        .zip(b)
                        .map(|(x, y)| better(x, y))
                        .find(|o| o.is_ne())
                        == Some(Ordering::Less),
                };
                if wins {
                    best = Some(subset);
                }
            }
            return (best.unwrap().iter().map(|c| c.item).collect(), step);
        }
        if config.epsilon - (step + 1) as f64 * config.delta < config.epsilon_floor {
            return (ranked(qualifying).iter().map(|c| c.item).collect(), step);
        }
        step += 1;
    }
}
