//! Samples ratings from known parameters and recovers them by fitting.
use explainmix::estimation::{build_histogram, fit_mixture, FitOptions};
use explainmix::model::{MixtureParams, PmfMode, RatingSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> explainmix::Result<()> {
    let truth = MixtureParams::free(6.5, 1.6, 0.3, 0.45)?;
    let sampler = RatingSampler::from_params(&truth, PmfMode::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ratings: Vec<_> = (0..20_000).map(|_| sampler.sample(&mut rng)).collect();
    let hist = build_histogram(&ratings)?;
    println!("counts {:?}", hist.counts());
    for (name, options) in [("free", FitOptions::default()), ("constrained", FitOptions::constrained())] {
        let fit = fit_mixture(&hist, &options, 1)?;
        let p = &fit.params;
        println!(
            "{name:<12} mu {:.3} sigma {:.3} a {:.3} alpha {:.3}  rse {:.2e}  evals {}",
            p.mu(),
            p.sigma(),
            p.a(),
            p.alpha(),
            fit.rse,
            fit.n_evals
        );
    }
    println!("{:<12} mu {:.3} sigma {:.3} a {:.3} alpha {:.3}", "truth", 6.5, 1.6, 0.3, 0.45);
    Ok(())
}
