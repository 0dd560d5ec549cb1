//! Least-squares fitting of mixture parameters to rating histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    discretize_pmf, MixtureParams, PmfMode, Rating, StrategyKind, MAX_RATING, N_BINS,
};
use crate::optim::{latin_hypercube, levenberg_marquardt, nelder_mead_restarted, Bounds, SimplexOptions};

/// Strategies with fewer ratings than this are not fitted on their own.
pub const MIN_RATINGS_PER_STRATEGY: usize = 50;

pub const MU_BOUNDS: (f64, f64) = (0.0, 10.0);
pub const SIGMA_BOUNDS: (f64, f64) = (0.1, 100.0);
pub const A_BOUNDS: (f64, f64) = (0.0, 1.0);
pub const ALPHA_BOUNDS: (f64, f64) = (1e-3, 10.0);

/// A parameter counts as sitting on its bound when it is within this
/// fraction of the bound's range.
const BOUNDARY_FRACTION: f64 = 1e-6;

const INFEASIBLE_PENALTY: f64 = 1e3;

/// Counts of each rating value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    counts: [u64; N_BINS],
    total: u64,
    freqs: [f64; N_BINS],
}

impl Histogram {
    pub fn from_counts(counts: [u64; N_BINS]) -> Result<Histogram> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("histogram has no ratings".into()));
        }
        let freqs = counts.map(|c| c as f64 / total as f64);
        Ok(Histogram {
            counts,
            total,
            freqs,
        })
    }

    /// Histogram with exact relative frequencies, e.g. a model's own
    /// prediction. `counts` holds the frequencies scaled to parts per
    /// million and is only nominal.
    pub fn from_frequencies(freqs: [f64; N_BINS]) -> Result<Histogram> {
        if freqs.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::validation(None, "frequencies must be finite and >= 0"));
        }
        let sum: f64 = freqs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(None, format!("frequencies sum to {sum}, not 1")));
        }
        let counts = freqs.map(|f| (f * 1e6).round() as u64);
        Ok(Histogram {
            counts,
            total: counts.iter().sum::<u64>().max(1),
            freqs: freqs.map(|f| f / sum),
        })
    }

    pub fn counts(&self) -> &[u64; N_BINS] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn freqs(&self) -> &[f64; N_BINS] {
        &self.freqs
    }

    pub fn mean(&self) -> f64 {
        self.freqs.iter().enumerate().map(|(k, f)| k as f64 * f).sum()
    }
}

pub fn build_histogram(ratings: &[Rating]) -> Result<Histogram> {
    if ratings.is_empty() {
        return Err(Error::EmptyInput("no ratings to histogram".into()));
    }
    let mut counts = [0u64; N_BINS];
    for r in ratings {
        if r.value() > MAX_RATING {
            return Err(Error::validation(None, format!("rating {} out of range", r.value())));
        }
        counts[r.value() as usize] += 1;
    }
    Histogram::from_counts(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Derive alpha from the mean constraint instead of fitting it.
    pub constrain_mean: bool,
    /// Leave rating 5 out of the loss.
    pub exclude_bin5: bool,
    pub n_starts: usize,
    pub max_iters: usize,
    /// Convergence tolerance on the loss.
    pub tol: f64,
    /// Mean target for the constraint; the histogram mean when unset.
    pub mean_target: Option<f64>,
    pub pmf_mode: PmfMode,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            constrain_mean: false,
            exclude_bin5: false,
            n_starts: 12,
            max_iters: 3000,
            tol: 1e-14,
            mean_target: None,
            pmf_mode: PmfMode::TruncatedRenormalized,
        }
    }
}

impl FitOptions {
    pub fn constrained() -> Self {
        FitOptions {
            constrain_mean: true,
            ..FitOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::Config("n_starts must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be > 0".into()));
        }
        Ok(())
    }

    /// Number of free parameters in the fitted model.
    pub fn n_free_params(&self) -> usize {
        if self.constrain_mean {
            3
        } else {
            4
        }
    }

    fn included_bins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..N_BINS).filter(move |&k| !(self.exclude_bin5 && k == 5))
    }

    pub fn n_bins_used(&self) -> usize {
        self.included_bins().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: MixtureParams,
    /// Residual standard error in frequency units.
    pub rse: f64,
    /// Residual sum of squares.
    pub loss: f64,
    pub boundary_hit: bool,
    pub n_evals: usize,
    pub converged: bool,
}

/// Binned model frequencies the loss is measured against.
pub fn model_frequencies(params: &MixtureParams, mode: PmfMode) -> Result<[f64; N_BINS]> {
    Ok(*discretize_pmf(params, mode)?.probs())
}

fn rss(hist: &Histogram, model: &[f64; N_BINS], options: &FitOptions) -> f64 {
    options
        .included_bins()
        .map(|k| (hist.freqs[k] - model[k]).powi(2))
        .sum()
}

/// Residual sum of squares over the bins `options` includes.
pub fn residual_sum_of_squares(
    hist: &Histogram,
    params: &MixtureParams,
    options: &FitOptions,
) -> Result<f64> {
    let model = model_frequencies(params, options.pmf_mode)?;
    Ok(rss(hist, &model, options))
}

pub fn residual_standard_error(
    hist: &Histogram,
    params: &MixtureParams,
    options: &FitOptions,
) -> Result<f64> {
    let bins = options.n_bins_used();
    let p = options.n_free_params();
    if bins <= p {
        return Err(Error::DegreesOfFreedom { bins, params: p });
    }
    let loss = residual_sum_of_squares(hist, params, options)?;
    Ok((loss / (bins - p) as f64).sqrt())
}

/// Search coordinates are `(mu, ln sigma, a, ln alpha)`; the scale
/// parameters span several decades.
fn bounds_for(options: &FitOptions) -> Bounds {
    let mut lower = vec![MU_BOUNDS.0, SIGMA_BOUNDS.0.ln(), A_BOUNDS.0];
    let mut upper = vec![MU_BOUNDS.1, SIGMA_BOUNDS.1.ln(), A_BOUNDS.1];
    if !options.constrain_mean {
        lower.push(ALPHA_BOUNDS.0.ln());
        upper.push(ALPHA_BOUNDS.1.ln());
    }
    Bounds::new(lower, upper)
}

/// Maps an optimizer point to parameters; `Err` carries how far the point
/// is from satisfying the mean constraint.
fn params_at(x: &[f64], c: Option<f64>) -> std::result::Result<MixtureParams, f64> {
    let (mu, sigma, a) = (x[0], x[1].exp(), x[2]);
    match c {
        None => MixtureParams::free(mu, sigma, a, x[3].exp()).map_err(|_| 1.0),
        Some(c) => {
            let denominator = c - (1.0 - a) * mu;
            if a <= 0.0 || denominator <= 0.0 {
                return Err(1.0 - denominator.min(0.0) + if a <= 0.0 { 1.0 } else { 0.0 });
            }
            MixtureParams::constrained(mu, sigma, a, c).map_err(|_| 1.0)
        }
    }
}

/// Moves a start point inside the feasible region of the mean constraint
/// by lowering `mu` and raising `a` where needed. `None` when no point is
/// feasible.
fn repair_start(x: &mut [f64], c: f64) -> Option<()> {
    if !(c > 0.0) {
        return None;
    }
    x[2] = x[2].max(1e-3);
    let limit = 0.9 * c / (1.0 - x[2]);
    if x[0] >= limit {
        x[0] = limit.clamp(MU_BOUNDS.0, MU_BOUNDS.1);
    }
    params_at(x, Some(c)).ok().map(|_| ())
}

fn lexicographic_key(p: &MixtureParams) -> (f64, f64, f64) {
    (p.mu(), p.sigma(), p.a())
}

/// Fits the mixture to a histogram by multi-start bounded simplex search
/// on the residual sum of squares.
pub fn fit_mixture(hist: &Histogram, options: &FitOptions, seed: u64) -> Result<FitResult> {
    options.validate()?;
    let bins = options.n_bins_used();
    let p = options.n_free_params();
    if bins <= p {
        return Err(Error::DegreesOfFreedom { bins, params: p });
    }
    let c = options
        .constrain_mean
        .then(|| options.mean_target.unwrap_or_else(|| hist.mean()));
    let bounds = bounds_for(options);

    let objective = |x: &[f64]| -> f64 {
        match params_at(x, c) {
            Ok(params) => match discretize_pmf(&params, options.pmf_mode) {
                Ok(pmf) => rss(hist, pmf.probs(), options),
                Err(_) => INFEASIBLE_PENALTY,
            },
            Err(violation) => INFEASIBLE_PENALTY * (1.0 + violation),
        }
    };
    let residuals = |x: &[f64]| -> Option<Vec<f64>> {
        let params = params_at(x, c).ok()?;
        let pmf = discretize_pmf(&params, options.pmf_mode).ok()?;
        Some(
            options
                .included_bins()
                .map(|k| pmf.probs()[k] - hist.freqs[k])
                .collect(),
        )
    };
    let simplex = SimplexOptions {
        max_iters: options.max_iters,
        f_tol: options.tol,
        ..SimplexOptions::default()
    };

    let mut best: Option<(MixtureParams, f64, bool, Vec<f64>)> = None;
    let mut n_evals = 0;
    let mut feasible_starts = 0;
    for mut start in latin_hypercube(&bounds, options.n_starts, seed) {
        if let Some(c) = c {
            if repair_start(&mut start, c).is_none() {
                continue;
            }
        }
        feasible_starts += 1;
        let coarse = nelder_mead_restarted(objective, &start, &bounds, &simplex, 8);
        let polished = levenberg_marquardt(residuals, &coarse.x, &bounds, 200);
        n_evals += coarse.n_evals + polished.n_evals;
        let m = if polished.f < coarse.f { polished } else { coarse };
        let Ok(params) = params_at(&m.x, c) else {
            continue;
        };
        let replace = match &best {
            None => true,
            Some((incumbent, loss, _, _)) => {
                // Relative tie window: an absolute one lets a 1e-14 loss beat an exact fit.
                if (m.f - loss).abs() <= 1e-12 * m.f.max(*loss) {
                    lexicographic_key(&params)
                        .partial_cmp(&lexicographic_key(incumbent))
                        .is_some_and(|o| o.is_lt())
                } else {
                    m.f < *loss
                }
            }
        };
        if replace {
            best = Some((params, m.f, m.converged, m.x));
        }
    }
    if feasible_starts == 0 {
        return Err(Error::FitInfeasible(format!(
            "mean target {:?} admits no feasible parameters",
            c
        )));
    }
    let (params, loss, converged, x) = best.ok_or_else(|| {
        Error::FitInfeasible("no start converged to feasible parameters".into())
    })?;

    let boundary_hit = (0..bounds.dim()).any(|i| {
        let slack = BOUNDARY_FRACTION * (bounds.upper[i] - bounds.lower[i]);
        x[i] - bounds.lower[i] <= slack || bounds.upper[i] - x[i] <= slack
    });
    let rse = (loss / (bins - p) as f64).sqrt();
    Ok(FitResult {
        params,
        rse,
        loss,
        boundary_hit,
        n_evals,
        converged,
    })
}

/// A strategy left out of per-strategy fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStrategy {
    pub strategy: StrategyKind,
    pub n_ratings: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFits {
    pub per_strategy: BTreeMap<StrategyKind, FitResult>,
    pub combined: FitResult,
    pub skipped: Vec<SkippedStrategy>,
}

/// Fits each strategy's ratings separately and all ratings pooled. Every
/// group is fitted with the same seed, so identical groups give identical
/// results.
pub fn fit_all_strategies(
    ratings: &[(StrategyKind, Rating)],
    options: &FitOptions,
    seed: u64,
) -> Result<StrategyFits> {
    if ratings.is_empty() {
        return Err(Error::EmptyInput("no ratings to fit".into()));
    }
    let mut groups: BTreeMap<StrategyKind, Vec<Rating>> = BTreeMap::new();
    for (kind, rating) in ratings {
        groups.entry(*kind).or_default().push(*rating);
    }
    let mut per_strategy = BTreeMap::new();
    let mut skipped = Vec::new();
    for (kind, group) in &groups {
        if group.len() < MIN_RATINGS_PER_STRATEGY {
            skipped.push(SkippedStrategy {
                strategy: *kind,
                n_ratings: group.len(),
                reason: format!("fewer than {MIN_RATINGS_PER_STRATEGY} ratings"),
            });
            continue;
        }
        let hist = build_histogram(group)?;
        per_strategy.insert(*kind, fit_mixture(&hist, options, seed)?);
    }
    let pooled: Vec<Rating> = ratings.iter().map(|(_, r)| *r).collect();
    let combined = fit_mixture(&build_histogram(&pooled)?, options, seed)?;
    Ok(StrategyFits {
        per_strategy,
        combined,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{population_params, Phase, RatingSampler};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ratings(values: &[u8]) -> Vec<Rating> {
        values.iter().map(|&v| Rating::likelihood(v).unwrap()).collect()
    }

    fn sample_hist(params: &MixtureParams, n: usize, seed: u64) -> Histogram {
        let sampler = RatingSampler::from_params(params, PmfMode::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = [0u64; N_BINS];
        for _ in 0..n {
            counts[sampler.sample_value(&mut rng) as usize] += 1;
        }
        Histogram::from_counts(counts).unwrap()
    }

    #[test]
    fn histogram_counts() {
        let h = build_histogram(&ratings(&[0, 0, 10])).unwrap();
        assert_eq!(h.counts()[0], 2);
        assert_eq!(h.counts()[10], 1);
        assert!((h.freqs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((h.freqs()[10] - 1.0 / 3.0).abs() < 1e-15);

        let all: Vec<u8> = (0..=10).collect();
        let u = build_histogram(&ratings(&all)).unwrap();
        assert!(u.freqs().iter().all(|f| (f - 1.0 / 11.0).abs() < 1e-15));
        assert!((u.freqs().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(matches!(build_histogram(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn sampled_histogram_close_to_pmf() {
        let p = population_params();
        let h = sample_hist(&p, 100_000, 5);
        let model = model_frequencies(&p, PmfMode::default()).unwrap();
        let tv: f64 = 0.5 * (0..N_BINS).map(|k| (h.freqs()[k] - model[k]).abs()).sum::<f64>();
        assert!(tv < 0.01, "{tv}");
    }

    #[test]
    fn model_frequencies_is_the_pmf() {
        let p = population_params();
        let pmf = discretize_pmf(&p, PmfMode::default()).unwrap();
        assert_eq!(&model_frequencies(&p, PmfMode::default()).unwrap(), pmf.probs());
        // Rating 0 only collects [0, 0.5] of the exponential, so the pmf is
        // strictly decreasing from 0 only once alpha > 2 ln(golden ratio).
        let threshold = 2.0 * ((1.0 + 5f64.sqrt()) / 2.0).ln();
        for alpha in [0.97, 1.5, 4.0] {
            let expo = MixtureParams::free(0.0, 1.0, 1.0, alpha).unwrap();
            let f = model_frequencies(&expo, PmfMode::default()).unwrap();
            assert!(f.windows(2).all(|w| w[1] < w[0]), "alpha {alpha}");
        }
        for alpha in [0.2, 0.47, 0.95] {
            let expo = MixtureParams::free(0.0, 1.0, 1.0, alpha).unwrap();
            let f = model_frequencies(&expo, PmfMode::default()).unwrap();
            assert!(f[1..].windows(2).all(|w| w[1] < w[0]), "alpha {alpha}");
            assert_eq!(f[0] > f[1], alpha > threshold);
        }
    }

    #[test]
    fn rse_zero_on_exact_histogram() {
        let p = population_params();
        let h = Histogram::from_frequencies(model_frequencies(&p, PmfMode::default()).unwrap())
            .unwrap();
        assert!(residual_standard_error(&h, &p, &FitOptions::default()).unwrap() < 1e-12);
    }

    #[test]
    fn rss_perturbation_identity() {
        let p = population_params();
        let model = model_frequencies(&p, PmfMode::default()).unwrap();
        let mut freqs = model;
        freqs[3] += 0.01;
        freqs[4] -= 0.01;
        let h0 = Histogram::from_frequencies(freqs).unwrap();
        let opts = FitOptions::default();
        let base = residual_sum_of_squares(&h0, &p, &opts).unwrap();
        let eps = 1e-3;
        let mut bumped = freqs;
        bumped[7] += eps;
        bumped[8] -= eps;
        let h1 = Histogram::from_frequencies(bumped).unwrap();
        let r7 = freqs[7] - model[7];
        let r8 = freqs[8] - model[8];
        let expected = base + 2.0 * eps * eps + 2.0 * eps * (r7 - r8);
        let got = residual_sum_of_squares(&h1, &p, &opts).unwrap();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn rse_on_study_sized_sample() {
        let p = population_params();
        let h = sample_hist(&p, 4458, 11);
        let rse = residual_standard_error(&h, &p, &FitOptions::default()).unwrap();
        assert!(rse < 0.03, "{rse}");
    }

    #[test]
    fn dof_error() {
        let p = population_params();
        let h = sample_hist(&p, 100, 1);
        assert!(residual_standard_error(&h, &p, &FitOptions::default()).is_ok());
        assert_eq!(FitOptions::constrained().n_free_params(), 3);
        let opts = FitOptions {
            exclude_bin5: true,
            ..FitOptions::default()
        };
        assert_eq!(opts.n_bins_used(), 10);
    }

    #[test]
    fn recovers_exact_model() {
        let truth = MixtureParams::free(6.9, 3.0, 0.7, 0.47).unwrap();
        let h = Histogram::from_frequencies(model_frequencies(&truth, PmfMode::default()).unwrap())
            .unwrap();
        let fit = fit_mixture(&h, &FitOptions::default(), 7).unwrap();
        assert!(fit.rse < 1e-6, "{fit:?}");
        let p = fit.params;
        assert!((p.mu() - 6.9).abs() < 0.05, "{p:?}");
        assert!((p.sigma() - 3.0).abs() < 0.05, "{p:?}");
        assert!((p.a() - 0.7).abs() < 0.05, "{p:?}");
        assert!((p.alpha() - 0.47).abs() < 0.05, "{p:?}");
        let truth_loss = residual_sum_of_squares(&h, &truth, &FitOptions::default()).unwrap();
        assert!(fit.loss <= truth_loss + 1e-15);
    }

    #[test]
    fn point_mass_at_zero_hits_boundary() {
        let mut counts = [0u64; N_BINS];
        counts[0] = 500;
        let h = Histogram::from_counts(counts).unwrap();
        let fit = fit_mixture(&h, &FitOptions::default(), 3).unwrap();
        assert!(fit.boundary_hit);
        let pmf = discretize_pmf(&fit.params, PmfMode::default()).unwrap();
        assert!(pmf.probs()[0] > 0.99);
        assert!(fit.params.a() <= A_BOUNDS.0 + 1e-6 || fit.params.a() >= A_BOUNDS.1 - 1e-6);
        // The mean constraint has no feasible point when every rating is 0.
        assert!(matches!(
            fit_mixture(&h, &FitOptions::constrained(), 3),
            Err(Error::FitInfeasible(_))
        ));
    }

    #[test]
    fn constrained_fit_keeps_mean_identity() {
        let truth = MixtureParams::constrained(6.9, 3.0, 0.7, 2.3).unwrap();
        let h = sample_hist(&truth, 20_000, 2);
        let opts = FitOptions {
            mean_target: Some(2.3),
            ..FitOptions::constrained()
        };
        let fit = fit_mixture(&h, &opts, 1).unwrap();
        assert!((crate::model::mixture_mean(&fit.params) - 2.3).abs() < 1e-12);
        assert!((fit.params.a() - 0.7).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn fit_is_deterministic() {
        let h = sample_hist(&population_params(), 2000, 4);
        let a = fit_mixture(&h, &FitOptions::default(), 99).unwrap();
        let b = fit_mixture(&h, &FitOptions::default(), 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn excluding_bin5_never_raises_optimal_rss() {
        let h = sample_hist(&population_params(), 3000, 8);
        let with = FitOptions::default();
        let without = FitOptions {
            exclude_bin5: true,
            ..FitOptions::default()
        };
        let full = fit_mixture(&h, &with, 5).unwrap();
        let dropped = fit_mixture(&h, &without, 5).unwrap();
        // The full-fit optimum, scored without bin 5, bounds the reduced optimum.
        let full_scored = residual_sum_of_squares(&h, &full.params, &without).unwrap();
        assert!(dropped.loss <= full_scored + 1e-12);
    }

    #[test]
    fn strategy_grouping() {
        let single: Vec<_> = (0..200)
            .map(|i| (StrategyKind::OverallPop, Rating::likelihood((i % 7) as u8).unwrap()))
            .collect();
        let fits = fit_all_strategies(&single, &FitOptions::default(), 1).unwrap();
        assert_eq!(fits.per_strategy.len(), 1);
        assert_eq!(fits.per_strategy[&StrategyKind::OverallPop], fits.combined);

        let mut sparse = single.clone();
        sparse.push((StrategyKind::GoodFriend, Rating::new(3, Phase::Likelihood).unwrap()));
        let fits = fit_all_strategies(&sparse, &FitOptions::default(), 1).unwrap();
        assert_eq!(fits.skipped.len(), 1);
        assert_eq!(fits.skipped[0].strategy, StrategyKind::GoodFriend);

        assert!(matches!(
            fit_all_strategies(&[], &FitOptions::default(), 1),
            Err(Error::EmptyInput(_))
        ));
    }
}
