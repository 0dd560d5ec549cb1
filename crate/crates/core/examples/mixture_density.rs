//! Density, rating pmf and fraction above 5 for each strategy's default parameters.
use explainmix::model::{discretize_pmf, fraction_above, mixture_density, mixture_mean, PmfMode, StrategyKind};

fn main() -> explainmix::Result<()> {
    for kind in StrategyKind::ALL {
        let params = kind.default_params();
        let pmf = discretize_pmf(&params, PmfMode::default())?;
        println!(
            "{kind:<14} mu {:.2} sigma {:.2} a {:.3} alpha {:.3}  mean {:.3}  h(5) {:.4}  P(>5) {:.3}",
            params.mu(),
            params.sigma(),
            params.a(),
            params.alpha(),
            mixture_mean(&params),
            mixture_density(5.0, &params)?,
            fraction_above(&params, 5, PmfMode::default())?,
        );
        let bars: Vec<String> = pmf.probs().iter().map(|p| format!("{p:.3}")).collect();
        println!("{:<14} pmf [{}]", "", bars.join(" "));
    }
    Ok(())
}
