//! Clusters users drawn from three rating archetypes and fits each cluster.
use std::collections::BTreeMap;

use explainmix::cohorts::cluster_and_fit;
use explainmix::estimation::FitOptions;
use explainmix::model::{cluster_archetype_params, PmfMode, RatingSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> explainmix::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut users = BTreeMap::new();
    for (label, params) in cluster_archetype_params().iter().enumerate() {
        let sampler = RatingSampler::from_params(params, PmfMode::default())?;
        for i in 0..80 {
            let ratings: Vec<_> = (0..30).map(|_| sampler.sample(&mut rng)).collect();
            users.insert(format!("arch{label}-user{i:02}"), ratings);
        }
    }
    for c in cluster_and_fit(&users, 3, &FitOptions::constrained(), 2)? {
        let p = &c.fit.params;
        let from: BTreeMap<&str, usize> = c.members.iter().fold(BTreeMap::new(), |mut m, id| {
            *m.entry(&id[..5]).or_default() += 1;
            m
        });
        println!(
            "cluster {} centroid (mean {:.2}, var {:.2}) size {}  mu {:.2} sigma {:.2} a {:.3}  members by archetype {from:?}",
            c.cluster_id,
            c.centroid[0],
            c.centroid[1],
            c.members.len(),
            p.mu(),
            p.sigma(),
            p.a()
        );
    }
    Ok(())
}
