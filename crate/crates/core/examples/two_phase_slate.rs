//! Selects a slate by lowering the likelihood threshold until k items qualify.
use explainmix::simulator::{two_phase_recommend, ScoredItem, TwoPhaseConfig};

fn main() -> explainmix::Result<()> {
    let scores = [("A", 6.0, 3.0), ("B", 4.0, 9.0), ("C", 5.5, 7.0), ("D", 3.0, 8.5), ("E", 7.0, 6.0)];
    let items: Vec<_> = scores
        .iter()
        .map(|&(item, likelihood, consumption)| ScoredItem { item, likelihood, consumption })
        .collect();
    for k in [1, 3, 4] {
        let slate = two_phase_recommend(&items, &TwoPhaseConfig::new(5.0, 1.0, k))?;
        let chosen: Vec<_> = slate.items.iter().map(|c| c.item).collect();
        println!("k {k}: {chosen:?} at threshold {:.1} after {} decrements", slate.epsilon, slate.steps);
    }
    Ok(())
}
