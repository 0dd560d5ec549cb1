//! File formats: the ratings CSV, model and cluster JSON, report CSVs, and
//! all-or-nothing output writing.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohorts::ClusterModel;
use crate::error::{Error, Result};
use crate::estimation::{build_histogram, model_frequencies, FitOptions, FitResult, SkippedStrategy, StrategyFits};
use crate::model::{fraction_above, MixtureParams, Phase, PmfMode, Rating, StrategyKind, N_BINS};
use crate::simulator::report::StrategyRow;

pub const RATINGS_HEADER: [&str; 5] = ["user_id", "item_id", "strategy", "phase", "rating"];
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RatingsRecord {
    pub user_id: String,
    pub item_id: String,
    pub strategy: StrategyKind,
    pub rating: Rating,
}

impl RatingsRecord {
    pub fn phase(&self) -> Phase {
        self.rating.phase()
    }
}

fn parse_record(fields: &csv::StringRecord, line: u64) -> Result<RatingsRecord> {
    let err = |msg: String| Error::validation(Some(line), msg);
    if fields.len() != RATINGS_HEADER.len() {
        return Err(err(format!("expected {} fields, found {}", RATINGS_HEADER.len(), fields.len())));
    }
    let (user_id, item_id) = (&fields[0], &fields[1]);
    if user_id.is_empty() || item_id.is_empty() {
        return Err(err("empty user_id or item_id".into()));
    }
    let strategy: StrategyKind = fields[2]
        .parse()
        .map_err(|_| err(format!("unknown strategy token `{}`", &fields[2])))?;
    let phase = fields[3]
        .parse::<u8>()
        .ok()
        .and_then(Phase::from_code)
        .ok_or_else(|| err(format!("phase must be 1 or 2, found `{}`", &fields[3])))?;
    let value: u8 = fields[4]
        .parse()
        .map_err(|_| err(format!("rating must be an integer in 0..=10, found `{}`", &fields[4])))?;
    let rating = Rating::new(value, phase).map_err(|_| err(format!("rating {value} out of range 0..=10")))?;
    Ok(RatingsRecord {
        user_id: user_id.to_string(),
        item_id: item_id.to_string(),
        strategy,
        rating,
    })
}

/// Reads and validates a ratings CSV. Errors carry the 1-based file line.
pub fn read_ratings<R: Read>(reader: R) -> Result<Vec<RatingsRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = csv.records();
    let header = match rows.next() {
        Some(row) => row?,
        None => return Err(Error::validation(Some(1), "missing header")),
    };
    if header.iter().ne(RATINGS_HEADER) {
        return Err(Error::validation(
            Some(1),
            format!("header must be `{}`", RATINGS_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_record(&row, line)?);
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("ratings file has no data rows".into()));
    }
    Ok(records)
}

pub fn parse_ratings(path: &Path) -> Result<Vec<RatingsRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ratings(file)
}

pub fn write_ratings<W: Write>(writer: W, records: &[RatingsRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(RATINGS_HEADER)?;
    for r in records {
        csv.write_record([
            r.user_id.as_str(),
            r.item_id.as_str(),
            r.strategy.token(),
            &r.phase().code().to_string(),
            &r.rating.value().to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Outputs staged under temporary names next to their targets. Nothing is
/// visible under the final names until `commit`; dropping the batch
/// removes the temporaries.
#[derive(Debug, Default)]
pub struct OutputBatch {
    staged: Vec<(PathBuf, PathBuf)>,
}

impl OutputBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stage(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let name = path
            .file_name()
            .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
        let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
        let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        // Register before writing so a failed write is still cleaned up.
        self.staged.push((tmp.clone(), path.to_path_buf()));
        file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        Ok(())
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let staged = std::mem::take(&mut self.staged);
        let mut written = Vec::new();
        for (i, (tmp, path)) in staged.iter().enumerate() {
            if let Err(e) = fs::rename(tmp, path) {
                for (rest, _) in &staged[i..] {
                    let _ = fs::remove_file(rest);
                }
                return Err(Error::io(path, e));
            }
            written.push(path.clone());
        }
        Ok(written)
    }
}

impl Drop for OutputBatch {
    fn drop(&mut self) {
        for (tmp, _) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut batch = OutputBatch::new();
    batch.stage(path, bytes)?;
    batch.commit().map(|_| ())
}

pub fn ratings_csv_bytes(records: &[RatingsRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_ratings(&mut buf, records)?;
    Ok(buf)
}

fn round_significant(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn round_json(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(|x| round_significant(x, 12)).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_json),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with floats at 12 significant digits and a final newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    let mut out = serde_json::to_vec_pretty(&v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(Error::from)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsBlock {
    pub params: MixtureParams,
    pub rse: f64,
    pub boundary_hit: bool,
}

impl From<&FitResult> for ParamsBlock {
    fn from(f: &FitResult) -> Self {
        ParamsBlock {
            params: f.params,
            rse: f.rse,
            boundary_hit: f.boundary_hit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the input file bytes.
    pub input_sha256: String,
    pub seed: u64,
    pub options: FitOptions,
}

impl Provenance {
    pub fn verify(&self, input: &[u8]) -> Result<()> {
        let digest = sha256_hex(input);
        if digest == self.input_sha256 {
            Ok(())
        } else {
            Err(Error::validation(
                None,
                format!("input digest {digest} does not match recorded {}", self.input_sha256),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub per_strategy: BTreeMap<StrategyKind, ParamsBlock>,
    pub combined: ParamsBlock,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedStrategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<ClusterModel<String>>>,
    pub provenance: Provenance,
}

impl ModelFile {
    pub fn new(fits: &StrategyFits, provenance: Provenance) -> Self {
        ModelFile {
            version: FORMAT_VERSION.to_string(),
            per_strategy: fits.per_strategy.iter().map(|(k, f)| (*k, f.into())).collect(),
            combined: (&fits.combined).into(),
            skipped: fits.skipped.clone(),
            clusters: None,
            provenance,
        }
    }

    /// Reads a model file and checks its parameter blocks.
    pub fn load(path: &Path) -> Result<Self> {
        let model: ModelFile = read_json(path)?;
        if model.version != FORMAT_VERSION {
            return Err(Error::validation(
                None,
                format!("unsupported model version `{}`", model.version),
            ));
        }
        model.combined.params.validate()?;
        for block in model.per_strategy.values() {
            block.params.validate()?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersFile {
    pub version: String,
    pub clusters: Vec<ClusterModel<String>>,
    pub provenance: Provenance,
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

/// Everything a report is built from.
#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub fits: &'a BTreeMap<StrategyKind, ParamsBlock>,
    pub combined: &'a ParamsBlock,
    pub summaries: &'a [StrategyRow],
    /// Likelihood ratings per strategy, for observed bin frequencies.
    pub likelihood: &'a BTreeMap<StrategyKind, Vec<Rating>>,
    pub clusters: &'a [ClusterModel<String>],
    /// Generating parameters to compare the fits against.
    pub reference: Option<&'a BTreeMap<StrategyKind, MixtureParams>>,
    pub pmf_mode: PmfMode,
}

pub const REPORT_SUMMARY: &str = "strategy_summary.csv";
pub const REPORT_PARAMETERS: &str = "fit_parameters.csv";
pub const REPORT_FRACTION: &str = "fraction_above_5.csv";
pub const REPORT_BINS: &str = "bin_frequencies.csv";
pub const REPORT_CLUSTERS: &str = "clusters.csv";
pub const REPORT_DEVIATION: &str = "parameter_deviation.csv";

fn param_cells(p: &MixtureParams) -> Vec<String> {
    vec![f6(p.alpha()), f6(p.mu()), f6(p.sigma()), f6(p.a())]
}

/// Report tables as (file name, bytes), in a fixed order.
pub fn render_report(inputs: &ReportInputs) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut files = Vec::new();

    let opt = |x: Option<f64>| x.map(f6).unwrap_or_default();
    let rows: Vec<Vec<String>> = inputs
        .summaries
        .iter()
        .map(|r| {
            let l = r.likelihood.as_ref();
            let c = r.consumption.as_ref();
            vec![
                r.strategy.token().to_string(),
                l.map(|l| l.n.to_string()).unwrap_or_default(),
                opt(l.map(|l| l.mean)),
                opt(l.map(|l| l.std)),
                opt(l.map(|l| l.fraction_above_5)),
                c.map(|c| c.n.to_string()).unwrap_or_default(),
                opt(c.map(|c| c.mean)),
                opt(c.map(|c| c.std)),
            ]
        })
        .collect();
    files.push((
        REPORT_SUMMARY,
        csv_bytes(
            &[
                "strategy",
                "likelihood_n",
                "likelihood_mean",
                "likelihood_std",
                "likelihood_fraction_above_5",
                "consumption_n",
                "consumption_mean",
                "consumption_std",
            ],
            &rows,
        )?,
    ));

    let labelled: Vec<(String, &ParamsBlock)> = inputs
        .fits
        .iter()
        .map(|(k, b)| (k.token().to_string(), b))
        .chain(std::iter::once(("combined".to_string(), inputs.combined)))
        .collect();
    let rows: Vec<Vec<String>> = labelled
        .iter()
        .map(|(name, b)| {
            let mut row = vec![name.clone()];
            row.extend(param_cells(&b.params));
            row.push(f6(b.rse));
            row.push(b.boundary_hit.to_string());
            row
        })
        .collect();
    files.push((
        REPORT_PARAMETERS,
        csv_bytes(&["strategy", "alpha", "mu", "sigma", "a", "rse", "boundary_hit"], &rows)?,
    ));

    let mut rows = Vec::new();
    for (kind, block) in inputs.fits {
        let observed = inputs.likelihood.get(kind).map(|r| {
            r.iter().filter(|x| x.value() > 5).count() as f64 / r.len() as f64
        });
        rows.push(vec![
            kind.token().to_string(),
            opt(observed),
            f6(fraction_above(&block.params, 5, inputs.pmf_mode)?),
        ]);
    }
    files.push((REPORT_FRACTION, csv_bytes(&["strategy", "observed", "model"], &rows)?));

    let mut rows = Vec::new();
    for (kind, block) in inputs.fits {
        let model = model_frequencies(&block.params, inputs.pmf_mode)?;
        let observed = match inputs.likelihood.get(kind) {
            Some(r) if !r.is_empty() => Some(*build_histogram(r)?.freqs()),
            _ => None,
        };
        for k in 0..N_BINS {
            rows.push(vec![
                kind.token().to_string(),
                k.to_string(),
                opt(observed.map(|o| o[k])),
                f6(model[k]),
            ]);
        }
    }
    files.push((REPORT_BINS, csv_bytes(&["strategy", "rating", "observed", "model"], &rows)?));

    if !inputs.clusters.is_empty() {
        let rows: Vec<Vec<String>> = inputs
            .clusters
            .iter()
            .map(|c| {
                let mut row = vec![
                    c.cluster_id.to_string(),
                    c.members.len().to_string(),
                    f6(c.centroid[0]),
                    f6(c.centroid[1]),
                ];
                row.extend(param_cells(&c.fit.params));
                row.push(f6(c.fit.rse));
                row
            })
            .collect();
        files.push((
            REPORT_CLUSTERS,
            csv_bytes(
                &["cluster_id", "n_members", "centroid_mean", "centroid_variance", "alpha", "mu", "sigma", "a", "rse"],
                &rows,
            )?,
        ));
    }

    if let Some(reference) = inputs.reference {
        let mut rows = Vec::new();
        for (kind, block) in inputs.fits {
            let Some(gen) = reference.get(kind) else {
                continue;
            };
            let pairs = [
                ("alpha", gen.alpha(), block.params.alpha()),
                ("mu", gen.mu(), block.params.mu()),
                ("sigma", gen.sigma(), block.params.sigma()),
                ("a", gen.a(), block.params.a()),
            ];
            for (name, g, f) in pairs {
                rows.push(vec![kind.token().to_string(), name.to_string(), f6(g), f6(f), f6((f - g).abs())]);
            }
        }
        files.push((
            REPORT_DEVIATION,
            csv_bytes(&["strategy", "parameter", "generating", "fitted", "abs_deviation"], &rows)?,
        ));
    }
    Ok(files)
}

/// Writes the report tables into `out_dir`, all or none.
pub fn emit_report(inputs: &ReportInputs, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut batch = OutputBatch::new();
    for (name, bytes) in render_report(inputs)? {
        batch.stage(&out_dir.join(name), &bytes)?;
    }
    batch.commit()
}
