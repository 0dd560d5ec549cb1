//! Grouping users by rating behavior and staged personalization of their
//! model parameters.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{build_histogram, fit_mixture, FitOptions, FitResult};
use crate::model::{MixtureParams, Phase, Rating};
use crate::seeding::rng_for;

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_M_CLUSTER: usize = 10;
pub const DEFAULT_M_INDIVIDUAL: usize = 30;

const STREAM_KMEANS: u64 = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary<U> {
    pub user_id: U,
    pub mean: f64,
    /// Population variance (divides by n).
    pub variance: f64,
    pub n_ratings: usize,
}

impl<U> UserSummary<U> {
    pub fn point(&self) -> [f64; 2] {
        [self.mean, self.variance]
    }
}

fn mean_variance(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64, usize)> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let variance = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Some((mean, variance, n))
}

pub fn summarize_user<U>(user_id: U, ratings: &[Rating]) -> Result<UserSummary<U>> {
    let (mean, variance, n_ratings) = mean_variance(ratings.iter().map(|r| r.value() as f64))
        .ok_or_else(|| Error::EmptyInput("user has no ratings".into()))?;
    Ok(UserSummary {
        user_id,
        mean,
        variance,
        n_ratings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves more than this.
    pub tol: f64,
    /// Cluster on coordinates divided by their standard deviation.
    pub scale: bool,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            k: DEFAULT_K,
            max_iters: 500,
            tol: 1e-9,
            scale: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// Centroids in the original coordinates.
    pub centroids: Vec<[f64; 2]>,
    /// Within-cluster sum of squares after each Lloyd iteration, in the
    /// clustering coordinates.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Index of the nearest centroid, the lowest index on ties.
pub fn nearest_centroid(point: &[f64; 2], centroids: &[[f64; 2]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

fn centroid_of(points: &[[f64; 2]], assignments: &[usize], k: usize) -> Vec<[f64; 2]> {
    let mut sums = vec![[0.0; 2]; k];
    let mut counts = vec![0usize; k];
    for (p, &j) in points.iter().zip(assignments) {
        sums[j][0] += p[0];
        sums[j][1] += p[1];
        counts[j] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| [s[0] / n as f64, s[1] / n as f64])
        .collect()
}

fn inertia(points: &[[f64; 2]], assignments: &[usize], centroids: &[[f64; 2]]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &j)| dist2(p, &centroids[j]))
        .sum()
}

fn plus_plus_seeds<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut u = rng.random::<f64>() * total;
        // Fall back to the farthest point if rounding walks off the end.
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && u < d {
                pick = Some(i);
                break;
            }
            u -= d;
        }
        let pick = pick.unwrap_or_else(|| {
            (0..points.len())
                .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                .expect("points is non-empty")
        });
        let c = points[pick];
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_with(
        points,
        &KMeansOptions {
            k,
            ..KMeansOptions::default()
        },
        seed,
    )
}

/// k-means++ seeding followed by Lloyd iterations. Empty clusters take the
/// point farthest from its own centroid.
pub fn kmeans_with(points: &[[f64; 2]], options: &KMeansOptions, seed: u64) -> Result<KMeansResult> {
    let k = options.k;
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::validation(None, "cluster points must be finite"));
    }
    let distinct: BTreeSet<[u64; 2]> = points
        .iter()
        .map(|p| [p[0].to_bits(), p[1].to_bits()])
        .collect();
    if distinct.len() < k {
        return Err(Error::Infeasible(format!(
            "{} distinct points cannot form {k} clusters",
            distinct.len()
        )));
    }

    let scale = if options.scale {
        let mut s = [1.0; 2];
        for (d, s) in s.iter_mut().enumerate() {
            let (_, var, _) = mean_variance(points.iter().map(|p| p[d])).expect("points is non-empty");
            if var > 0.0 {
                *s = var.sqrt();
            }
        }
        s
    } else {
        [1.0; 2]
    };
    let work: Vec<[f64; 2]> = points.iter().map(|p| [p[0] / scale[0], p[1] / scale[1]]).collect();

    let mut rng = rng_for(seed, STREAM_KMEANS, 0);
    let mut centroids = plus_plus_seeds(&work, k, &mut rng);
    let mut assignments: Vec<usize> = vec![usize::MAX; work.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        iterations += 1;
        let mut next: Vec<usize> = work.iter().map(|p| nearest_centroid(p, &centroids)).collect();
        let mut counts = vec![0usize; k];
        for &j in &next {
            counts[j] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let far = (0..work.len())
                .filter(|&i| counts[next[i]] > 1)
                .max_by(|&a, &b| {
                    dist2(&work[a], &centroids[next[a]])
                        .total_cmp(&dist2(&work[b], &centroids[next[b]]))
                        .then(b.cmp(&a))
                })
                .expect("k distinct points leave a cluster with two members");
            counts[next[far]] -= 1;
            next[far] = empty;
            counts[empty] = 1;
        }
        let stable = next == assignments;
        assignments = next;
        let updated = centroid_of(&work, &assignments, k);
        let movement = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        let current = inertia(&work, &assignments, &centroids);
        if let Some(&prev) = history.last() {
            debug_assert!(current <= prev * (1.0 + 1e-12) + 1e-12, "inertia rose: {prev} -> {current}");
        }
        history.push(current);
        if stable && movement < options.tol {
            converged = true;
            break;
        }
    }

    Ok(KMeansResult {
        centroids: centroid_of(points, &assignments, k),
        assignments,
        inertia_history: history,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<U> {
    pub cluster_id: usize,
    /// (mean, variance) of the member summaries.
    pub centroid: [f64; 2],
    pub members: Vec<U>,
    /// Fit to the pooled ratings of all members.
    pub fit: FitResult,
}

pub fn cluster_and_fit<U: Ord + Clone>(
    users: &BTreeMap<U, Vec<Rating>>,
    k: usize,
    options: &FitOptions,
    seed: u64,
) -> Result<Vec<ClusterModel<U>>> {
    cluster_and_fit_with(
        users,
        &KMeansOptions {
            k,
            ..KMeansOptions::default()
        },
        options,
        seed,
    )
}

/// Summarizes, clusters and fits each cluster's pooled ratings. Clusters
/// come back in increasing order of centroid mean, numbered from 0.
pub fn cluster_and_fit_with<U: Ord + Clone>(
    users: &BTreeMap<U, Vec<Rating>>,
    kmeans_options: &KMeansOptions,
    fit_options: &FitOptions,
    seed: u64,
) -> Result<Vec<ClusterModel<U>>> {
    if users.is_empty() {
        return Err(Error::EmptyInput("no users to cluster".into()));
    }
    let summaries: Vec<UserSummary<U>> = users
        .iter()
        .map(|(u, r)| summarize_user(u.clone(), r))
        .collect::<Result<_>>()?;
    let points: Vec<[f64; 2]> = summaries.iter().map(UserSummary::point).collect();
    let result = kmeans_with(&points, kmeans_options, seed)?;

    let mut order: Vec<usize> = (0..kmeans_options.k).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (result.centroids[a], result.centroids[b]);
        ca[0].total_cmp(&cb[0]).then(ca[1].total_cmp(&cb[1])).then(a.cmp(&b))
    });
    order
        .into_iter()
        .enumerate()
        .map(|(cluster_id, j)| {
            let members: Vec<U> = summaries
                .iter()
                .zip(&result.assignments)
                .filter(|(_, &a)| a == j)
                .map(|(s, _)| s.user_id.clone())
                .collect();
            let pooled: Vec<Rating> = members.iter().flat_map(|u| users[u].iter().copied()).collect();
            let fit = fit_mixture(&build_histogram(&pooled)?, fit_options, seed)?;
            Ok(ClusterModel {
                cluster_id,
                centroid: result.centroids[j],
                members,
                fit,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PopulationPrior,
    ClusterAssigned,
    Individual,
}

/// Why the current parameters are not what the stage would normally give.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackFlag {
    /// No cluster models were available at the cluster stage.
    NoClusters,
    /// The individual fit failed; earlier parameters are kept.
    FitFailed,
    /// The individual fit ended on a search bound.
    BoundaryFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationState {
    pub stage: Stage,
    pub effective_params: MixtureParams,
    /// Likelihood ratings observed so far, oldest first.
    pub history: Vec<u8>,
    pub m_cluster: usize,
    pub m_individual: usize,
    /// Individual fitting is off unless enabled.
    pub individual_fitting: bool,
    /// Refit the individual model every this many new ratings.
    pub refit_every: usize,
    pub fit_options: FitOptions,
    pub seed: u64,
    pub cluster_id: Option<usize>,
    pub flag: Option<FallbackFlag>,
}

impl PersonalizationState {
    pub fn new(population: MixtureParams) -> Self {
        PersonalizationState {
            stage: Stage::PopulationPrior,
            effective_params: population,
            history: Vec::new(),
            m_cluster: DEFAULT_M_CLUSTER,
            m_individual: DEFAULT_M_INDIVIDUAL,
            individual_fitting: false,
            refit_every: 10,
            fit_options: FitOptions::default(),
            seed: 0,
            cluster_id: None,
            flag: None,
        }
    }

    pub fn with_thresholds(mut self, m_cluster: usize, m_individual: usize) -> Result<Self> {
        if m_cluster == 0 || m_individual < m_cluster {
            return Err(Error::Config(format!(
                "need 1 <= m_cluster <= m_individual, got {m_cluster} and {m_individual}"
            )));
        }
        self.m_cluster = m_cluster;
        self.m_individual = m_individual;
        Ok(self)
    }

    /// Enables individual fits, refitting every `refit_every` ratings.
    pub fn with_individual_fitting(mut self, refit_every: usize, fit_options: FitOptions, seed: u64) -> Self {
        self.individual_fitting = true;
        self.refit_every = refit_every.max(1);
        self.fit_options = FitOptions {
            constrain_mean: false,
            ..fit_options
        };
        self.seed = seed;
        self
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    fn summary(&self) -> [f64; 2] {
        let (mean, variance, _) = mean_variance(self.history.iter().map(|&v| v as f64))
            .expect("called with a non-empty history");
        [mean, variance]
    }
}

/// Records one more rating and moves the user along the stages: population
/// parameters first, the nearest cluster's at `m_cluster` ratings, and, when
/// enabled, an individual fit from `m_individual` ratings on.
pub fn personalize<U>(
    mut state: PersonalizationState,
    new_rating: Rating,
    clusters: &[ClusterModel<U>],
    population: &MixtureParams,
) -> PersonalizationState {
    state.history.push(new_rating.value());
    let n = state.history.len();
    if n < state.m_cluster {
        state.stage = Stage::PopulationPrior;
        state.effective_params = *population;
        state.cluster_id = None;
        state.flag = None;
        return state;
    }

    if n == state.m_cluster || state.stage == Stage::PopulationPrior {
        let point = state.summary();
        let centroids: Vec<[f64; 2]> = clusters.iter().map(|c| c.centroid).collect();
        state.stage = Stage::ClusterAssigned;
        if centroids.is_empty() {
            state.effective_params = *population;
            state.cluster_id = None;
            state.flag = Some(FallbackFlag::NoClusters);
        } else {
            // Ties go to the lowest cluster id, whatever the slice order.
            let mut by_id: Vec<&ClusterModel<U>> = clusters.iter().collect();
            by_id.sort_by_key(|c| c.cluster_id);
            let sorted: Vec<[f64; 2]> = by_id.iter().map(|c| c.centroid).collect();
            let chosen = by_id[nearest_centroid(&point, &sorted)];
            state.effective_params = chosen.fit.params;
            state.cluster_id = Some(chosen.cluster_id);
            state.flag = None;
        }
    }

    let refit_due = n >= state.m_individual && (n - state.m_individual) % state.refit_every == 0;
    if state.individual_fitting && refit_due {
        let fitted = state
            .history
            .iter()
            .map(|&v| Rating::new(v, Phase::Likelihood))
            .collect::<Result<Vec<_>>>()
            .and_then(|r| build_histogram(&r))
            .and_then(|h| fit_mixture(&h, &state.fit_options, state.seed))
            .and_then(|f| f.params.validate().map(|_| f));
        match fitted {
            Ok(fit) => {
                state.stage = Stage::Individual;
                state.effective_params = fit.params;
                state.flag = fit.boundary_hit.then_some(FallbackFlag::BoundaryFit);
            }
            Err(_) => state.flag = Some(FallbackFlag::FitFailed),
        }
    }
    state
}
