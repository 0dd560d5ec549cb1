//! The `explainmix` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cohorts::{cluster_and_fit_with, KMeansOptions};
use crate::error::{Error, Result};
use crate::estimation::{fit_all_strategies, FitOptions};
use crate::io::{
    emit_report, json_bytes, parse_ratings, ratings_csv_bytes, read_json, sha256_hex, write_atomic, ClustersFile,
    ModelFile, OutputBatch, ParamsBlock, Provenance, RatingsRecord, ReportInputs, FORMAT_VERSION,
};
use crate::model::{MixtureParams, Phase, PmfMode, Rating, RatingSampler, StrategyKind};
use crate::seeding::rng_for;
use crate::simulator::cohort::{generate_cohort, Behavior, CohortConfig};
use crate::simulator::correlation::calibrate_correlation;
use crate::simulator::phases::{simulate_phase1, simulate_phase2};
use crate::simulator::policy::{two_phase_recommend, ScoredItem, TwoPhaseConfig};
use crate::simulator::report::strategy_report;
use crate::simulator::zscore_correlation_ratings;

const STREAM_SAMPLE: u64 = 301;

#[derive(Debug, Parser)]
#[command(name = "explainmix", version, about = "Mixture models of explanation-influenced ratings")]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, env = "EXPLAINMIX_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit per-strategy and pooled mixtures to likelihood ratings.
    Fit(FitArgs),
    /// Cluster users by rating mean and variance and fit each cluster.
    Cluster(ClusterArgs),
    /// Draw likelihood ratings from a fitted model.
    Sample(SampleArgs),
    /// Simulate both rating phases for a synthetic cohort.
    Simulate(SimulateArgs),
    /// Find the consumption coupling that gives a target correlation.
    Calibrate(CalibrateArgs),
    /// Pick a slate under a likelihood threshold.
    Recommend(RecommendArgs),
    /// Write per-strategy summaries and fit tables.
    Report(ReportArgs),
    /// Z-scored correlation of paired likelihood and consumption ratings.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PmfArg {
    Truncated,
    Continuous,
}

impl From<PmfArg> for PmfMode {
    fn from(p: PmfArg) -> Self {
        match p {
            PmfArg::Truncated => PmfMode::TruncatedRenormalized,
            PmfArg::Continuous => PmfMode::PaperContinuousBinned,
        }
    }
}

#[derive(Debug, Args)]
struct FitFlags {
    /// Derive alpha from the mean constraint.
    #[arg(long)]
    constrain_mean: bool,
    /// Mean target for the constraint (default: the observed mean).
    #[arg(long, requires = "constrain_mean")]
    mean_target: Option<f64>,
    /// Leave rating 5 out of the loss.
    #[arg(long)]
    exclude_bin5: bool,
    #[arg(long, default_value_t = FitOptions::default().n_starts)]
    starts: usize,
    #[arg(long, value_enum, default_value = "truncated")]
    pmf: PmfArg,
}

impl FitFlags {
    fn options(&self) -> FitOptions {
        FitOptions {
            constrain_mean: self.constrain_mean,
            mean_target: self.mean_target,
            exclude_bin5: self.exclude_bin5,
            n_starts: self.starts,
            pmf_mode: self.pmf.into(),
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    ratings: PathBuf,
    #[arg(long, short, default_value = "model.json")]
    out: PathBuf,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    ratings: PathBuf,
    #[arg(long, short, default_value = "clusters.json")]
    out: PathBuf,
    #[arg(short, default_value_t = crate::cohorts::DEFAULT_K)]
    k: usize,
    /// Z-scale mean and variance before clustering.
    #[arg(long)]
    scale: bool,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Debug, Args)]
struct SampleArgs {
    model: PathBuf,
    /// Ratings per strategy.
    #[arg(long, short)]
    n: usize,
    /// Ratings attributed to each synthetic user.
    #[arg(long, default_value_t = 30)]
    per_user: usize,
    #[arg(long, short, default_value = "ratings.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Cohort configuration (defaults when omitted).
    cohort: Option<PathBuf>,
    /// Directory receiving phase1.csv and phase2.csv.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    cohort: PathBuf,
    #[arg(long, default_value_t = 0.17)]
    target_r: f64,
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
}

#[derive(Debug, Args)]
struct RecommendArgs {
    /// CSV with header `item_id,likelihood,consumption`.
    scores: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long, short)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    epsilon_floor: f64,
    #[arg(long, short, default_value = "slate.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Ratings CSVs (likelihood and consumption records may be split).
    #[arg(required = true)]
    ratings: Vec<PathBuf>,
    /// Fitted model; the likelihood ratings are fitted when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Generating parameters, as a model file or a cohort configuration.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, short, default_value = "report")]
    out: PathBuf,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(required = true)]
    ratings: Vec<PathBuf>,
}

/// Runs the command line on `argv` (program name first) and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Fit(a) => fit(a, seed, out),
        Command::Cluster(a) => cluster(a, seed, out),
        Command::Sample(a) => sample(a, seed, out),
        Command::Simulate(a) => simulate(a, seed, out),
        Command::Calibrate(a) => calibrate(a, seed, out),
        Command::Recommend(a) => recommend(a, out),
        Command::Report(a) => report(a, seed, out),
        Command::Eval(a) => eval(a, out),
    }
}

fn say(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn read_input(path: &Path) -> Result<(Vec<u8>, Vec<RatingsRecord>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = crate::io::read_ratings(bytes.as_slice())?;
    Ok((bytes, records))
}

fn likelihood_pairs(records: &[RatingsRecord]) -> Result<Vec<(StrategyKind, Rating)>> {
    let pairs: Vec<_> = records
        .iter()
        .filter(|r| r.phase() == Phase::Likelihood)
        .map(|r| (r.strategy, r.rating))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no likelihood (phase 1) ratings".into()));
    }
    Ok(pairs)
}

fn fit(a: FitArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let (bytes, records) = read_input(&a.ratings)?;
    let options = a.fit.options();
    let fits = fit_all_strategies(&likelihood_pairs(&records)?, &options, seed)?;
    let model = ModelFile::new(
        &fits,
        Provenance {
            input_sha256: sha256_hex(&bytes),
            seed,
            options,
        },
    );
    write_atomic(&a.out, &json_bytes(&model)?)?;
    for s in &fits.skipped {
        say(out, format!("skipped {}: {}", s.strategy, s.reason))?;
    }
    say(out, format!("wrote {}", a.out.display()))
}

fn users_of(records: &[RatingsRecord]) -> BTreeMap<String, Vec<Rating>> {
    let mut users: BTreeMap<String, Vec<Rating>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.phase() == Phase::Likelihood) {
        users.entry(r.user_id.clone()).or_default().push(r.rating);
    }
    users
}

fn cluster(a: ClusterArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let (bytes, records) = read_input(&a.ratings)?;
    let users = users_of(&records);
    if users.is_empty() {
        return Err(Error::EmptyInput("no likelihood (phase 1) ratings".into()));
    }
    let options = a.fit.options();
    let kmeans = KMeansOptions {
        k: a.k,
        scale: a.scale,
        ..KMeansOptions::default()
    };
    let clusters = cluster_and_fit_with(&users, &kmeans, &options, seed)?;
    let file = ClustersFile {
        version: FORMAT_VERSION.to_string(),
        clusters,
        provenance: Provenance {
            input_sha256: sha256_hex(&bytes),
            seed,
            options,
        },
    };
    write_atomic(&a.out, &json_bytes(&file)?)?;
    for c in &file.clusters {
        say(
            out,
            format!(
                "cluster {}: {} users, mean {:.3}, a {:.3}",
                c.cluster_id,
                c.members.len(),
                c.centroid[0],
                c.fit.params.a()
            ),
        )?;
    }
    Ok(())
}

fn sample(a: SampleArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    if model.per_strategy.is_empty() {
        return Err(Error::validation(None, "model has no per-strategy parameters"));
    }
    let per_user = a.per_user.max(1);
    let mode = model.provenance.options.pmf_mode;
    let mut records = Vec::with_capacity(a.n * model.per_strategy.len());
    let mut index = 0usize;
    for (kind, block) in &model.per_strategy {
        let sampler = RatingSampler::from_params(&block.params, mode)?;
        let mut rng = rng_for(seed, STREAM_SAMPLE, *kind as u64);
        for _ in 0..a.n {
            records.push(RatingsRecord {
                user_id: format!("u{}", index / per_user),
                item_id: format!("i{index}"),
                strategy: *kind,
                rating: sampler.sample(&mut rng),
            });
            index += 1;
        }
    }
    write_atomic(&a.out, &ratings_csv_bytes(&records)?)?;
    say(out, format!("wrote {} ratings to {}", records.len(), a.out.display()))
}

fn load_cohort_config(path: Option<&Path>) -> Result<CohortConfig> {
    let config = match path {
        Some(p) => read_json(p)?,
        None => CohortConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn simulate(a: SimulateArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let config = load_cohort_config(a.cohort.as_deref())?;
    let cohort = generate_cohort(&config, seed)?;
    let p1 = simulate_phase1(&cohort, seed)?;
    let p2 = simulate_phase2(&cohort, &p1, config.per_strategy_pick, seed)?;
    let phase1: Vec<RatingsRecord> = p1
        .iter()
        .map(|r| RatingsRecord {
            user_id: r.user.to_string(),
            item_id: r.item.to_string(),
            strategy: r.strategy,
            rating: r.rating,
        })
        .collect();
    let phase2: Vec<RatingsRecord> = p2
        .iter()
        .map(|r| RatingsRecord {
            user_id: r.user.to_string(),
            item_id: r.item.to_string(),
            strategy: r.strategy,
            rating: r.rating,
        })
        .collect();
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut batch = OutputBatch::new();
    batch.stage(&a.out.join("phase1.csv"), &ratings_csv_bytes(&phase1)?)?;
    batch.stage(&a.out.join("phase2.csv"), &ratings_csv_bytes(&phase2)?)?;
    batch.commit()?;
    say(
        out,
        format!(
            "{} users, {} likelihood and {} consumption ratings in {}",
            cohort.users.len(),
            phase1.len(),
            phase2.len(),
            a.out.display()
        ),
    )
}

fn calibrate(a: CalibrateArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let mut config = load_cohort_config(Some(&a.cohort))?;
    let kappa = calibrate_correlation(&config, a.target_r, a.tol, seed)?;
    config.kappa = kappa;
    write_atomic(&a.cohort, &json_bytes(&config)?)?;
    say(out, kappa)
}

#[derive(Debug, serde::Deserialize)]
struct ScoreRow {
    item_id: String,
    likelihood: f64,
    consumption: f64,
}

fn read_scores(path: &Path) -> Result<Vec<ScoredItem<String>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers()?.clone();
    if header.iter().ne(["item_id", "likelihood", "consumption"]) {
        return Err(Error::validation(Some(1), "header must be `item_id,likelihood,consumption`"));
    }
    let mut items = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed: ScoreRow = row
            .deserialize(Some(&header))
            .map_err(|e| Error::validation(Some(line), e.to_string()))?;
        items.push(ScoredItem {
            item: parsed.item_id,
            likelihood: parsed.likelihood,
            consumption: parsed.consumption,
        });
    }
    Ok(items)
}

fn recommend(a: RecommendArgs, out: &mut dyn Write) -> Result<()> {
    let items = read_scores(&a.scores)?;
    let config = TwoPhaseConfig {
        epsilon: a.epsilon,
        delta: a.delta,
        k: a.k,
        epsilon_floor: a.epsilon_floor,
    };
    let slate = two_phase_recommend(&items, &config)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "item_id", "likelihood", "consumption"])?;
    for (rank, item) in slate.items.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            item.item.clone(),
            item.likelihood.to_string(),
            item.consumption.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&a.out, e.into_error()))?;
    write_atomic(&a.out, &bytes)?;
    say(
        out,
        format!(
            "{} items at threshold {} after {} decrements",
            slate.items.len(),
            slate.epsilon,
            slate.steps
        ),
    )
}

/// Generating parameters from a model file or a per-strategy cohort config.
fn load_reference(path: &Path) -> Result<BTreeMap<StrategyKind, MixtureParams>> {
    if let Ok(model) = ModelFile::load(path) {
        return Ok(model.per_strategy.into_iter().map(|(k, b)| (k, b.params)).collect());
    }
    match load_cohort_config(Some(path))?.behavior {
        Behavior::PerStrategy { params } => Ok(params),
        Behavior::Archetypes { .. } => Err(Error::validation(
            None,
            "reference cohort uses archetypes, which have no per-strategy parameters",
        )),
    }
}

fn report(a: ReportArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    let mut records = Vec::new();
    for path in &a.ratings {
        records.extend(parse_ratings(path)?);
    }
    let (per_strategy, combined, pmf_mode): (BTreeMap<StrategyKind, ParamsBlock>, ParamsBlock, PmfMode) =
        match &a.model {
            Some(path) => {
                let m = ModelFile::load(path)?;
                (m.per_strategy, m.combined, m.provenance.options.pmf_mode)
            }
            None => {
                let options = a.fit.options();
                let fits = fit_all_strategies(&likelihood_pairs(&records)?, &options, seed)?;
                let m = ModelFile::new(
                    &fits,
                    Provenance {
                        input_sha256: String::new(),
                        seed,
                        options,
                    },
                );
                (m.per_strategy, m.combined, options.pmf_mode)
            }
        };
    let clusters = match &a.clusters {
        Some(path) => read_json::<ClustersFile>(path)?.clusters,
        None => Vec::new(),
    };
    let reference = a.reference.as_deref().map(load_reference).transpose()?;

    let split = |phase: Phase| -> Vec<(StrategyKind, Rating)> {
        records
            .iter()
            .filter(|r| r.phase() == phase)
            .map(|r| (r.strategy, r.rating))
            .collect()
    };
    let (l, c) = (split(Phase::Likelihood), split(Phase::Consumption));
    let summaries = strategy_report(&l, &c);
    let mut likelihood: BTreeMap<StrategyKind, Vec<Rating>> = BTreeMap::new();
    for (k, r) in l {
        likelihood.entry(k).or_default().push(r);
    }
    let written = emit_report(
        &ReportInputs {
            fits: &per_strategy,
            combined: &combined,
            summaries: &summaries,
            likelihood: &likelihood,
            clusters: &clusters,
            reference: reference.as_ref(),
            pmf_mode,
        },
        &a.out,
    )?;
    for path in written {
        say(out, format!("wrote {}", path.display()))?;
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut records = Vec::new();
    for path in &a.ratings {
        records.extend(parse_ratings(path)?);
    }
    let mut likelihood: BTreeMap<(&str, &str), Rating> = BTreeMap::new();
    for r in records.iter().filter(|r| r.phase() == Phase::Likelihood) {
        if likelihood.insert((&r.user_id, &r.item_id), r.rating).is_some() {
            return Err(Error::validation(
                None,
                format!("duplicate likelihood rating for user {} item {}", r.user_id, r.item_id),
            ));
        }
    }
    let pairs: Vec<(String, Rating, Rating)> = records
        .iter()
        .filter(|r| r.phase() == Phase::Consumption)
        .filter_map(|r| {
            likelihood
                .get(&(r.user_id.as_str(), r.item_id.as_str()))
                .map(|l| (r.user_id.clone(), *l, r.rating))
        })
        .collect();
    let r = zscore_correlation_ratings(&pairs)?;
    say(out, format!("r = {r:.6} over {} pairs", pairs.len()))
}
