//! The rating mixture: an exponential "inherent preference" component mixed
//! with a Gaussian "explanation effect" component, discretized onto the
//! 0..=10 rating scale.
//!
//! ```
//! use explainmix::model::{MixtureParams, PmfMode, discretize_pmf, mixture_mean};
//!
//! let params = MixtureParams::free(6.88, 3.05, 0.69, 0.47).unwrap();
//! assert!((mixture_mean(&params) - 3.6008).abs() < 1e-3);
//! let pmf = discretize_pmf(&params, PmfMode::TruncatedRenormalized).unwrap();
//! assert!((pmf.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest value on the rating scale.
pub const MAX_RATING: u8 = 10;
/// Number of points on the rating scale.
pub const N_BINS: usize = 11;

const LOWER_EDGE: f64 = -0.5;
const UPPER_EDGE: f64 = MAX_RATING as f64 + 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Pre-consumption estimate of how likely the user is to try the item.
    Likelihood,
    /// Post-consumption evaluation.
    Consumption,
}

impl Phase {
    /// Numeric code used in the ratings CSV.
    pub fn code(self) -> u8 {
        match self {
            Phase::Likelihood => 1,
            Phase::Consumption => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Phase> {
        match code {
            1 => Some(Phase::Likelihood),
            2 => Some(Phase::Consumption),
            _ => None,
        }
    }
}

/// A 0..=10 Likert response. Serializes as its bare integer value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rating {
    value: u8,
    phase: Phase,
}

impl Serialize for Rating {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.value)
    }
}

impl Rating {
    pub fn new(value: u8, phase: Phase) -> Result<Rating> {
        if value > MAX_RATING {
            return Err(Error::validation(
                None,
                format!("rating {value} outside 0..={MAX_RATING}"),
            ));
        }
        Ok(Rating { value, phase })
    }

    pub fn likelihood(value: u8) -> Result<Rating> {
        Rating::new(value, Phase::Likelihood)
    }

    pub fn consumption(value: u8) -> Result<Rating> {
        Rating::new(value, Phase::Consumption)
    }

    pub fn value(self) -> u8 {
        self.value
    }

    pub fn phase(self) -> Phase {
        self.phase
    }
}

/// The five kinds of social explanation shown alongside a recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Number of Likes across the whole network.
    OverallPop,
    /// Number of the user's friends who Like the item.
    FriendPop,
    /// Name of a friend picked at random among those who Like the item.
    RandFriend,
    /// Name of the liking friend with the highest tie strength.
    GoodFriend,
    /// GoodFriend plus the friend count.
    GoodFrCount,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::OverallPop,
        StrategyKind::FriendPop,
        StrategyKind::RandFriend,
        StrategyKind::GoodFriend,
        StrategyKind::GoodFrCount,
    ];

    pub fn token(self) -> &'static str {
        match self {
            StrategyKind::OverallPop => "overall_pop",
            StrategyKind::FriendPop => "friend_pop",
            StrategyKind::RandFriend => "rand_friend",
            StrategyKind::GoodFriend => "good_friend",
            StrategyKind::GoodFrCount => "good_fr_count",
        }
    }

    /// Behavior parameters measured for the average user under this
    /// strategy. Used as the default generating model for simulation.
    pub fn default_params(self) -> MixtureParams {
        // (alpha, mu, sigma, a)
        let (alpha, mu, sigma, a) = match self {
            StrategyKind::FriendPop => (0.44, 6.85, 3.61, 0.74),
            StrategyKind::RandFriend => (0.49, 7.10, 3.57, 0.71),
            StrategyKind::OverallPop => (0.49, 6.89, 3.10, 0.66),
            StrategyKind::GoodFriend => (0.46, 6.46, 2.51, 0.66),
            StrategyKind::GoodFrCount => (0.50, 6.84, 2.26, 0.61),
        };
        MixtureParams::free(mu, sigma, a, alpha).expect("built-in parameters are valid")
    }

    /// Whether the explanation names a specific friend.
    pub fn names_friend(self) -> bool {
        matches!(
            self,
            StrategyKind::RandFriend | StrategyKind::GoodFriend | StrategyKind::GoodFrCount
        )
    }

    /// Whether the explanation needs a liking friend with non-zero tie strength.
    pub fn needs_good_friend(self) -> bool {
        matches!(self, StrategyKind::GoodFriend | StrategyKind::GoodFrCount)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::validation(None, format!("unknown strategy token `{s}`")))
    }
}

/// Pooled parameters of the whole population, used before anything is
/// known about a user.
pub fn population_params() -> MixtureParams {
    MixtureParams::free(6.88, 3.05, 0.69, 0.47).expect("built-in parameters are valid")
}

/// Three behavior types: explanations have no effect, are useful, or are
/// relied on. Each archetype's rate is pinned by its mean rating.
pub fn cluster_archetype_params() -> [MixtureParams; 3] {
    [(0.05, 78.82, 0.62, 0.67), (1.43, 1.98, 0.50, 2.44), (4.99, 3.22, 0.08, 4.89)]
        .map(|(mu, sigma, a, c)| {
            MixtureParams::constrained(mu, sigma, a, c).expect("built-in parameters are valid")
        })
}

/// How the exponential rate is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `alpha` is a free parameter.
    Free,
    /// `alpha` is derived so that the continuous mixture mean equals `c`.
    Constrained,
}

/// Parameters of the two-component rating mixture.
///
/// `a` is the rigidness (weight of the inherent-preference exponential),
/// `alpha` the discernment (its decay rate), `mu` the receptiveness and
/// `sigma` the variability of the explanation effect. At `a == 0` the
/// exponential is unused and `alpha` is not validated; at `a == 1` the same
/// holds for `mu` and `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct MixtureParams {
    mu: f64,
    sigma: f64,
    a: f64,
    alpha: f64,
    c: Option<f64>,
    mode: AlphaMode,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    mu: f64,
    sigma: f64,
    a: f64,
    alpha: f64,
    #[serde(default)]
    c: Option<f64>,
    #[serde(default = "free_mode")]
    mode: AlphaMode,
}

fn free_mode() -> AlphaMode {
    AlphaMode::Free
}

impl TryFrom<RawParams> for MixtureParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let params = MixtureParams {
            mu: raw.mu,
            sigma: raw.sigma,
            a: raw.a,
            alpha: raw.alpha,
            c: raw.c,
            mode: raw.mode,
        };
        params.validate()?;
        Ok(params)
    }
}

impl From<MixtureParams> for RawParams {
    fn from(p: MixtureParams) -> Self {
        RawParams {
            mu: p.mu,
            sigma: p.sigma,
            a: p.a,
            alpha: p.alpha,
            c: p.c,
            mode: p.mode,
        }
    }
}

impl MixtureParams {
    /// Parameters with a directly supplied exponential rate.
    pub fn free(mu: f64, sigma: f64, a: f64, alpha: f64) -> Result<Self> {
        let params = MixtureParams {
            mu,
            sigma,
            a,
            alpha,
            c: None,
            mode: AlphaMode::Free,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters whose exponential rate is pinned by the mean target `c`.
    pub fn constrained(mu: f64, sigma: f64, a: f64, c: f64) -> Result<Self> {
        let alpha = alpha_from_constraint(a, c, mu)?;
        let params = MixtureParams {
            mu,
            sigma,
            a,
            alpha,
            c: Some(c),
            mode: AlphaMode::Constrained,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c(&self) -> Option<f64> {
        self.c
    }

    pub fn mode(&self) -> AlphaMode {
        self.mode
    }

    /// Same parameters with the Gaussian center replaced. Constrained
    /// parameters become free, since moving `mu` breaks the mean identity.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        MixtureParams::free(mu, self.sigma, self.a, self.alpha)
    }

    /// Same parameters with the Gaussian center and mixing weight replaced,
    /// as free parameters.
    pub fn with_mu_and_a(&self, mu: f64, a: f64) -> Result<Self> {
        MixtureParams::free(mu, self.sigma, a, self.alpha)
    }

    fn uses_exponential(&self) -> bool {
        self.a > 0.0
    }

    fn uses_gaussian(&self) -> bool {
        self.a < 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && (0.0..=1.0).contains(&self.a)) {
            return Err(Error::ParameterDomain(format!("a = {} not in [0, 1]", self.a)));
        }
        if self.uses_gaussian() {
            if !self.mu.is_finite() {
                return Err(Error::ParameterDomain(format!("mu = {} not finite", self.mu)));
            }
            if !(self.sigma.is_finite() && self.sigma > 0.0) {
                return Err(Error::ParameterDomain(format!("sigma = {} must be > 0", self.sigma)));
            }
        }
        if self.uses_exponential() && !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::ParameterDomain(format!("alpha = {} must be > 0", self.alpha)));
        }
        match (self.mode, self.c) {
            (AlphaMode::Free, _) => Ok(()),
            (AlphaMode::Constrained, None) => Err(Error::ParameterDomain(
                "constrained parameters need a mean target c".into(),
            )),
            (AlphaMode::Constrained, Some(c)) => {
                let expected = alpha_from_constraint(self.a, c, self.mu)?;
                if (expected - self.alpha).abs() > 1e-9 * expected.abs().max(1.0) {
                    return Err(Error::ParameterDomain(format!(
                        "alpha = {} inconsistent with constraint value {expected}",
                        self.alpha
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Inherent-preference density `alpha * exp(-alpha * x)`.
pub fn base_density(x: f64, alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::ParameterDomain(format!("alpha = {alpha} must be > 0")));
    }
    if !(x >= 0.0) {
        return Err(Error::ParameterDomain(format!("x = {x} must be >= 0")));
    }
    Ok(alpha * (-alpha * x).exp())
}

/// Explanation-effect density: the normal pdf centered at `mu`.
pub fn explanation_density(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::ParameterDomain(format!("sigma = {sigma} must be > 0")));
    }
    Ok(normal_pdf(x, mu, sigma))
}

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Exponential rate that makes the continuous mixture mean equal `c`.
pub fn alpha_from_constraint(a: f64, c: f64, mu: f64) -> Result<f64> {
    if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
        return Err(Error::ParameterDomain(format!("a = {a} not in [0, 1]")));
    }
    if a == 0.0 {
        return Err(Error::Degenerate(
            "a = 0 leaves no exponential component to constrain".into(),
        ));
    }
    let denominator = c - (1.0 - a) * mu;
    if !(denominator > 0.0) {
        return Err(Error::InfeasibleConstraint { denominator });
    }
    Ok(a / denominator)
}

/// `h(x) = a * f(x) + (1 - a) * g(x)`.
pub fn mixture_density(x: f64, params: &MixtureParams) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::ParameterDomain(format!("x = {x} must be >= 0")));
    }
    let mut h = 0.0;
    if params.uses_exponential() {
        h += params.a * base_density(x, params.alpha)?;
    }
    if params.uses_gaussian() {
        h += (1.0 - params.a) * explanation_density(x, params.mu, params.sigma)?;
    }
    Ok(h)
}

/// Mean of the continuous (untruncated) mixture, `a / alpha + (1 - a) * mu`.
pub fn mixture_mean(params: &MixtureParams) -> f64 {
    let mut mean = 0.0;
    if params.uses_exponential() {
        mean += params.a / params.alpha;
    }
    if params.uses_gaussian() {
        mean += (1.0 - params.a) * params.mu;
    }
    mean
}

/// How the continuous density is turned into 11 rating probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmfMode {
    /// Bin integrals over `[k - 0.5, k + 0.5]`, renormalized by their sum.
    #[default]
    TruncatedRenormalized,
    /// Bin integrals divided by the analytic mass of `[-0.5, 10.5]`.
    PaperContinuousBinned,
}

/// Probability mass over the ratings 0..=10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingPmf {
    probs: [f64; N_BINS],
    mode: PmfMode,
}

impl RatingPmf {
    pub fn probs(&self) -> &[f64; N_BINS] {
        &self.probs
    }

    pub fn mode(&self) -> PmfMode {
        self.mode
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn cdf(&self) -> [f64; N_BINS] {
        let mut cdf = [0.0; N_BINS];
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            cdf[k] = acc;
        }
        cdf
    }

    /// Builds a pmf from arbitrary non-negative weights.
    pub fn from_weights(weights: [f64; N_BINS]) -> Result<RatingPmf> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::ParameterDomain("pmf weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ParameterDomain("pmf weights sum to zero".into()));
        }
        Ok(RatingPmf {
            probs: weights.map(|w| w / total),
            mode: PmfMode::TruncatedRenormalized,
        })
    }
}

/// `Phi(hi) - Phi(lo)` for the standard normal, computed on the side that
/// avoids cancellation in the tails.
fn normal_interval(lo: f64, hi: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if lo >= 0.0 {
        0.5 * (libm::erfc(lo * s) - libm::erfc(hi * s))
    } else if hi <= 0.0 {
        0.5 * (libm::erfc(-hi * s) - libm::erfc(-lo * s))
    } else {
        0.5 * (libm::erf(hi * s) - libm::erf(lo * s))
    }
}

/// Integral of `alpha * exp(-alpha * x)` over `[lo, hi]` with the density
/// taken as zero below 0.
fn exponential_interval(lo: f64, hi: f64, alpha: f64) -> f64 {
    let lo = lo.max(0.0);
    if hi <= lo {
        return 0.0;
    }
    // exp(-a lo) - exp(-a hi) = exp(-a lo) * (1 - exp(-a (hi - lo)))
    (-alpha * lo).exp() * -(-alpha * (hi - lo)).exp_m1()
}

fn gaussian_interval(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    normal_interval((lo - mu) / sigma, (hi - mu) / sigma)
}

fn mixture_interval(lo: f64, hi: f64, params: &MixtureParams) -> f64 {
    let mut mass = 0.0;
    if params.uses_exponential() {
        mass += params.a * exponential_interval(lo, hi, params.alpha);
    }
    if params.uses_gaussian() {
        mass += (1.0 - params.a) * gaussian_interval(lo, hi, params.mu, params.sigma);
    }
    mass
}

/// Mass of the exponential and of the Gaussian component on the rating
/// scale `[-0.5, 10.5]`, before mixing.
pub fn component_masses(params: &MixtureParams) -> (f64, f64) {
    (
        exponential_interval(LOWER_EDGE, UPPER_EDGE, params.alpha),
        gaussian_interval(LOWER_EDGE, UPPER_EDGE, params.mu, params.sigma),
    )
}

/// Share of the discretized pmf carried by the exponential component. The
/// pmf is linear in this share, unlike in `a`.
pub fn discrete_base_weight(params: &MixtureParams) -> f64 {
    let (e, g) = component_masses(params);
    let base = params.a * e;
    let total = base + (1.0 - params.a) * g;
    if total > 0.0 { base / total } else { params.a }
}

/// The `a` that gives `params` a discrete base weight of `w`.
pub fn a_for_discrete_base_weight(params: &MixtureParams, w: f64) -> f64 {
    let (e, g) = component_masses(params);
    let total = w * g + (1.0 - w) * e;
    if total > 0.0 { (w * g / total).clamp(0.0, 1.0) } else { w }
}

/// Discretizes the mixture onto the rating scale.
pub fn discretize_pmf(params: &MixtureParams, mode: PmfMode) -> Result<RatingPmf> {
    params.validate()?;
    let mut raw = [0.0; N_BINS];
    for (k, slot) in raw.iter_mut().enumerate() {
        let center = k as f64;
        *slot = mixture_interval(center - 0.5, center + 0.5, params);
    }
    let total = match mode {
        PmfMode::TruncatedRenormalized => raw.iter().sum::<f64>(),
        PmfMode::PaperContinuousBinned => mixture_interval(LOWER_EDGE, UPPER_EDGE, params),
    };
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "mixture puts no mass on the rating scale".into(),
        ));
    }
    Ok(RatingPmf {
        probs: raw.map(|m| m / total),
        mode,
    })
}

/// Inverse-CDF sampler over a fixed pmf.
#[derive(Debug, Clone)]
pub struct RatingSampler {
    cdf: [f64; N_BINS],
    phase: Phase,
}

impl RatingSampler {
    pub fn new(pmf: &RatingPmf, phase: Phase) -> Self {
        RatingSampler {
            cdf: pmf.cdf(),
            phase,
        }
    }

    pub fn from_params(params: &MixtureParams, mode: PmfMode) -> Result<Self> {
        Ok(RatingSampler::new(&discretize_pmf(params, mode)?, Phase::Likelihood))
    }

    pub fn sample_value<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        let u: f64 = rng.random::<f64>() * self.cdf[N_BINS - 1];
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(N_BINS - 1) as u8
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Rating {
        Rating {
            value: self.sample_value(rng),
            phase: self.phase,
        }
    }
}

/// Draws one likelihood rating from the discretized mixture.
pub fn sample_rating<R: Rng + ?Sized>(
    params: &MixtureParams,
    mode: PmfMode,
    rng: &mut R,
) -> Result<Rating> {
    Ok(RatingSampler::from_params(params, mode)?.sample(rng))
}

/// Probability of a rating strictly above `threshold`.
pub fn fraction_above(params: &MixtureParams, threshold: u8, mode: PmfMode) -> Result<f64> {
    if threshold > MAX_RATING {
        return Err(Error::ParameterDomain(format!(
            "threshold {threshold} outside 0..={MAX_RATING}"
        )));
    }
    let pmf = discretize_pmf(params, mode)?;
    Ok(pmf.probs[threshold as usize + 1..].iter().sum())
}
