//! Moves a user from the population prior to a cluster model to an individual fit.
use std::collections::BTreeMap;

use explainmix::cohorts::{cluster_and_fit, personalize, PersonalizationState};
use explainmix::estimation::FitOptions;
use explainmix::model::{cluster_archetype_params, population_params, PmfMode, RatingSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> explainmix::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let archetypes = cluster_archetype_params();
    let mut users = BTreeMap::new();
    for (label, params) in archetypes.iter().enumerate() {
        let sampler = RatingSampler::from_params(params, PmfMode::default())?;
        for i in 0..40 {
            users.insert(label * 100 + i, (0..30).map(|_| sampler.sample(&mut rng)).collect());
        }
    }
    let clusters = cluster_and_fit(&users, 3, &FitOptions::constrained(), 4)?;
    let population = population_params();
    let mut state = PersonalizationState::new(population)
        .with_thresholds(5, 20)?
        .with_individual_fitting(5, FitOptions::default(), 4);
    let sampler = RatingSampler::from_params(&archetypes[2], PmfMode::default())?;
    for n in 1..=30 {
        state = personalize(state, sampler.sample(&mut rng), &clusters, &population);
        if n % 5 == 0 {
            let p = &state.effective_params;
            println!(
                "after {n:>2} ratings: {:?} cluster {:?}  mu {:.2} sigma {:.2} a {:.3}",
                state.stage,
                state.cluster_id,
                p.mu(),
                p.sigma(),
                p.a()
            );
        }
    }
    Ok(())
}
