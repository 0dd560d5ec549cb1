//! Generates a synthetic cohort, runs both study phases and summarizes each strategy.
use explainmix::simulator::{
    generate_cohort, simulate_phase1, simulate_phase2, strategy_report, zscore_correlation_ratings, CohortConfig,
};

fn main() -> explainmix::Result<()> {
    // Coupling found by the calibrate_correlation example for r = 0.17.
    let config = CohortConfig { n_users: 1000, kappa: 7.5, ..CohortConfig::default() };
    let cohort = generate_cohort(&config, 3)?;
    let phase1 = simulate_phase1(&cohort, 3)?;
    let phase2 = simulate_phase2(&cohort, &phase1, config.per_strategy_pick, 3)?;
    println!(
        "{} users, mean degree {:.2}, {} likelihood and {} consumption ratings",
        cohort.users.len(),
        cohort.mean_degree(),
        phase1.len(),
        phase2.len()
    );
    let likelihood: Vec<_> = phase1.iter().map(|r| (r.strategy, r.rating)).collect();
    let consumption: Vec<_> = phase2.iter().map(|r| (r.strategy, r.rating)).collect();
    for row in strategy_report(&likelihood, &consumption) {
        let l = row.likelihood.as_ref();
        let c = row.consumption.as_ref();
        println!(
            "{:<14} likelihood mean {:.2} P(>5) {:.3}  consumption mean {:.2} (n {})",
            row.strategy,
            l.map_or(f64::NAN, |s| s.mean),
            l.map_or(f64::NAN, |s| s.fraction_above_5),
            c.map_or(f64::NAN, |s| s.mean),
            c.map_or(0, |s| s.n),
        );
    }
    let pairs: Vec<_> = phase2
        .iter()
        .filter_map(|c| {
            phase1
                .iter()
                .find(|l| l.user == c.user && l.item == c.item)
                .map(|l| (c.user, l.rating, c.rating))
        })
        .collect();
    println!("z-scored likelihood/consumption correlation r = {:.3}", zscore_correlation_ratings(&pairs)?);
    Ok(())
}
