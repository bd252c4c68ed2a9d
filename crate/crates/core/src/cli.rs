//! Run configuration and the subcommands behind the `bookrec` binary.
//!
//! Each command computes all of its outputs in memory and only then writes
//! them, each through a temporary file renamed into place, so a failed run
//! leaves earlier results untouched.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, ReadingsTable, Source, UserId};
use crate::embed::{load_embeddings, EmbedError, EmbeddingStore, FieldSet};
use crate::eval::{
    self, cohort_nrr, collect_cases, evaluate, grid_search, mean_recommend_seconds, split, time_it,
    EvalError, EvalReport, Split, SplitSpec, TimingReport, UserCase, DEFAULT_COHORT_BINS,
};
use crate::genres::{genre_distribution, GenreConfig, GenreError};
use crate::ingest::{self, IngestError, MergePolicy, SourcePaths};
use crate::recsys::{
    bpr_fit, Bpr, BprParams, ClosestItems, LatentModel, MostRead, RandomItems, RecError,
    Recommender,
};
use crate::synth::{self, SynthError, SynthSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Genre(#[from] GenreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Rec(#[from] RecError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("no library loans survived ingest, nothing to evaluate")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    /// Pipeline stage the error came from, used as a prefix in messages.
    pub fn stage(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Ingest(_) | CliError::EmptyDataset => "ingest",
            CliError::Genre(_) => "genres",
            CliError::Embed(_) => "embed",
            CliError::Rec(_) => "recsys",
            CliError::Eval(_) => "eval",
            CliError::Synth(_) => "synth",
            CliError::Io { .. } => "io",
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommenderKind {
    Random,
    MostRead,
    Closest,
    Bpr,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// EMBV1 file for Closest Items.
    pub path: Option<PathBuf>,
    /// Dimension of hashed embeddings used when no file is given.
    pub fallback_dim: Option<usize>,
    /// Metadata fields for hashed embeddings, e.g. `"authors,genres"`.
    pub fields: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub factors: Vec<usize>,
    pub learning_rates: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            factors: vec![10, 20],
            learning_rates: vec![0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub field_sets: Vec<String>,
    /// Directory holding `<field,set>.embv1` files, e.g. `authors,genres.embv1`.
    pub embeddings_dir: Option<PathBuf>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            field_sets: ["title", "authors", "authors,genres", "title,authors,plot,genres,keywords"]
                .map(String::from)
                .to_vec(),
            embeddings_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Raw source tables; `synth` writes here and `ingest` reads from here.
    pub source_dir: PathBuf,
    /// Explicit source table paths, overriding `source_dir`.
    pub sources: Option<SourcePaths>,
    /// Ingested dataset: `catalog.csv`, `genres.csv`, `readings.csv`.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Cut-offs for `sweep`.
    pub k: Vec<usize>,
    /// Cut-off for `evaluate`, `grid`, `ablation` and cohorts.
    pub report_k: usize,
    pub recommenders: Vec<RecommenderKind>,
    pub bct_only: bool,
    /// Also write `timing.csv`; timings are wall-clock and never reproducible.
    pub timing: bool,
    pub cohort_bins: Vec<(usize, usize)>,
    pub merge: MergePolicy,
    pub genres: GenreConfig,
    pub split: SplitSpec,
    pub bpr: BprParams,
    pub embeddings: EmbeddingConfig,
    pub grid: GridConfig,
    pub ablation: AblationConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            source_dir: PathBuf::from("sources"),
            sources: None,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            k: (1..=50).collect(),
            report_k: 20,
            recommenders: vec![
                RecommenderKind::Random,
                RecommenderKind::MostRead,
                RecommenderKind::Closest,
                RecommenderKind::Bpr,
            ],
            bct_only: false,
            timing: false,
            cohort_bins: DEFAULT_COHORT_BINS.to_vec(),
            merge: MergePolicy::default(),
            genres: GenreConfig::default(),
            split: SplitSpec::default(),
            bpr: BprParams::default(),
            embeddings: EmbeddingConfig::default(),
            grid: GridConfig::default(),
            ablation: AblationConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<Vec<usize>>,
    pub bct_only: bool,
    pub embeddings: Option<PathBuf>,
    pub fallback_embed: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.source_dir);
        fix(&mut self.data_dir);
        fix(&mut self.output_dir);
        if let Some(s) = &mut self.sources {
            for p in [
                &mut s.bct_books,
                &mut s.bct_loans,
                &mut s.anobii_items,
                &mut s.anobii_ratings,
                &mut s.anobii_genre_votes,
            ] {
                fix(p);
            }
            if let Some(p) = &mut s.links {
                fix(p);
            }
        }
        for p in [
            self.merge.link_file.as_mut(),
            self.embeddings.path.as_mut(),
            self.ablation.embeddings_dir.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// A seed override reseeds every random component.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
            self.split.seed = seed;
            self.bpr.seed = seed;
            self.synth.seed = seed;
        }
        if let Some(k) = &o.k {
            self.k = k.clone();
            if let [only] = k[..] {
                self.report_k = only;
            }
        }
        self.bct_only |= o.bct_only;
        if let Some(p) = &o.embeddings {
            self.embeddings.path = Some(p.clone());
        }
        if let Some(d) = o.fallback_embed {
            self.embeddings.fallback_dim = Some(d);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k.is_empty() || self.k.contains(&0) || self.report_k == 0 {
            return Err(CliError::Config("k values must be >= 1".into()));
        }
        if self.embeddings.fallback_dim == Some(0) {
            return Err(CliError::Config("fallback embedding dimension must be >= 1".into()));
        }
        self.merge.validate()?;
        self.genres.validate()?;
        self.bpr.validate()?;
        Ok(())
    }

    pub fn source_paths(&self) -> SourcePaths {
        self.sources
            .clone()
            .unwrap_or_else(|| SourcePaths::in_dir(&self.source_dir))
    }

    fn embed_fields(&self) -> Result<FieldSet, CliError> {
        Ok(match &self.embeddings.fields {
            Some(s) => s.parse()?,
            None => FieldSet::authors_genres(),
        })
    }
}

/// Files produced by a command, written together on success.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outputs {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    fn csv(
        &mut self,
        path: PathBuf,
        write: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write(&mut buf).map_err(io_at(&path))?;
        self.add(path, buf);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(p, _)| p.file_name().is_some_and(|f| f == name))
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file through a sibling temporary and a rename.
    pub fn commit(&self) -> Result<(), CliError> {
        for (path, bytes) in &self.files {
            let dir = path.parent().unwrap_or(Path::new("."));
            std::fs::create_dir_all(dir).map_err(io_at(dir))?;
            let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
            let tmp = dir.join(format!(".{name}.tmp"));
            std::fs::write(&tmp, bytes).map_err(io_at(&tmp))?;
            std::fs::rename(&tmp, path).map_err(io_at(path))?;
        }
        Ok(())
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let data = synth::generate(&cfg.synth)?;
    let mut out = Outputs::default();
    for (name, bytes) in data.files().map_err(io_at(&cfg.source_dir))? {
        out.add(cfg.source_dir.join(name), bytes);
    }
    log::info!(
        "synthesized {} users and {} books into {}",
        data.users.len(),
        data.books.len(),
        cfg.source_dir.display()
    );
    Ok(out)
}

/// Writes the dataset even when it has no loans, then reports the empty run
/// as an error.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<(Outputs, Result<(), CliError>), CliError> {
    let (dataset, summary) = ingest::ingest(&cfg.source_paths(), &cfg.merge, &cfg.genres)?;
    let mut out = Outputs::default();
    let dir = &cfg.data_dir;
    out.csv(dir.join("catalog.csv"), |b| ingest::write_catalog(&dataset.catalog, b))?;
    out.csv(dir.join("genres.csv"), |b| ingest::write_genres(&dataset.catalog, b))?;
    out.csv(dir.join("readings.csv"), |b| ingest::write_readings(&dataset, b))?;
    let mut text = String::from("stage,count\n");
    for (stage, n) in summary.rows() {
        log::info!("{stage}: {n}");
        let _ = writeln!(text, "{stage},{n}");
    }
    out.add(dir.join("ingest_summary.csv"), text.into_bytes());
    let status = if summary.bct_users == 0 {
        Err(CliError::EmptyDataset)
    } else {
        Ok(())
    };
    Ok((out, status))
}

/// `(value, fraction)` points of the empirical CDF.
pub fn empirical_cdf(values: &[u32]) -> Vec<(u32, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut points: Vec<(u32, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => points.push((*v, frac)),
        }
    }
    points
}

fn cdf_csv(header: &str, points: &[(u32, f64)]) -> Vec<u8> {
    let mut s = format!("{header},fraction\n");
    for (v, f) in points {
        let _ = writeln!(s, "{v},{f}");
    }
    s.into_bytes()
}

pub fn cmd_characterize(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let ds = ingest::load_dataset(&cfg.data_dir)?;
    let per_user: Vec<u32> = ds
        .readings
        .users()
        .map(|u| ds.readings.user_books(u).len() as u32)
        .filter(|&n| n > 0)
        .collect();
    let per_book: Vec<u32> = ds.readings.book_counts().to_vec();
    let mut out = Outputs::default();
    let dir = &cfg.output_dir;
    out.add(dir.join("cdf_users.csv"), cdf_csv("readings", &empirical_cdf(&per_user)));
    out.add(dir.join("cdf_books.csv"), cdf_csv("readings", &empirical_cdf(&per_book)));
    let mut s = String::from("genre,share\n");
    for (g, share) in genre_distribution(&ds.readings, &ds.catalog) {
        let _ = writeln!(s, "{g},{share}");
    }
    out.add(dir.join("genre_dist.csv"), s.into_bytes());
    Ok(out)
}

/// Dataset, split and the readings BPR and Most Read learn from.
pub struct Prepared {
    pub dataset: Dataset,
    pub split: Split,
    /// Train and validation: books excluded from every candidate set.
    pub known: ReadingsTable,
    pub fit_on: ReadingsTable,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    cfg.validate()?;
    let dataset = ingest::load_dataset(&cfg.data_dir)?;
    let split = split(&dataset.readings, &cfg.split)?;
    let known = split.known();
    let fit_on = if cfg.bct_only {
        let kept = split.train.filter(|r| r.source == Source::BctLoan);
        log::info!(
            "bct-only: training on {} of {} readings ({} dropped as {})",
            kept.len(),
            split.train.len(),
            split.train.len() - kept.len(),
            Source::AnobiiRating.as_str()
        );
        kept
    } else {
        split.train.clone()
    };
    Ok(Prepared {
        dataset,
        split,
        known,
        fit_on,
    })
}

/// Embeddings for Closest Items: the configured file, else hashed fallback.
pub fn embeddings_for(cfg: &RunConfig, dataset: &Dataset) -> Result<EmbeddingStore, CliError> {
    if let Some(path) = &cfg.embeddings.path {
        let loaded = load_embeddings(path, &dataset.catalog)?;
        if !loaded.unknown_ids.is_empty() {
            log::warn!("{} embedding rows name unknown books", loaded.unknown_ids.len());
        }
        return Ok(loaded.store);
    }
    match cfg.embeddings.fallback_dim {
        Some(dim) => Ok(EmbeddingStore::from_catalog_hashed(
            &dataset.catalog,
            cfg.embed_fields()?,
            dim,
            cfg.seed,
        )),
        None => Err(CliError::Config(
            "closest items needs --embeddings or --fallback-embed".into(),
        )),
    }
}

fn bpr_name(cfg: &RunConfig) -> &'static str {
    if cfg.bct_only {
        "bpr_bct_only"
    } else {
        "bpr"
    }
}

/// Rankings of the test users for every configured recommender.
pub struct Evaluated {
    pub runs: Vec<(String, Vec<UserCase>)>,
    pub timings: Vec<TimingReport>,
    pub model: Option<LatentModel>,
}

pub fn run_recommenders(cfg: &RunConfig, p: &Prepared) -> Result<Evaluated, CliError> {
    let kinds: BTreeSet<RecommenderKind> = cfg.recommenders.iter().copied().collect();
    let test_users: Vec<UserId> = p
        .split
        .test
        .users()
        .filter(|&u| !p.split.test.user_books(u).is_empty())
        .collect();
    let mut runs = Vec::new();
    let mut timings = Vec::new();
    let mut model = None;
    let mut record = |name: &str,
                      rec: &dyn Recommender,
                      fit_seconds: Option<f64>|
     -> Result<(), CliError> {
        let cases = collect_cases(rec, &p.split.test)?;
        if cfg.timing {
            timings.push(TimingReport {
                recommender: name.to_owned(),
                fit_seconds,
                recommend_seconds: mean_recommend_seconds(rec, &test_users, cfg.report_k)?,
            });
        }
        runs.push((name.to_owned(), cases));
        Ok(())
    };
    for kind in kinds {
        match kind {
            RecommenderKind::Random => {
                record("random", &RandomItems::new(&p.known, cfg.seed), None)?;
            }
            RecommenderKind::MostRead => {
                let (rec, secs) = time_it(|| MostRead::fit(&p.fit_on, &p.known));
                record("most_read", &rec, Some(secs))?;
            }
            RecommenderKind::Closest => {
                let store = embeddings_for(cfg, &p.dataset)?;
                record("closest", &ClosestItems::new(&p.known, &store)?, None)?;
            }
            RecommenderKind::Bpr => {
                let (fitted, secs) = time_it(|| bpr_fit(&p.fit_on, &cfg.bpr));
                let fitted = fitted?;
                record(bpr_name(cfg), &Bpr::new(&fitted, &p.known), Some(secs))?;
                model = Some(fitted);
            }
        }
    }
    Ok(Evaluated {
        runs,
        timings,
        model,
    })
}

fn reports_at(ev: &Evaluated, ks: &[usize]) -> Result<Vec<(String, EvalReport)>, CliError> {
    let mut rows = Vec::new();
    for (name, cases) in &ev.runs {
        for &k in ks {
            rows.push((name.clone(), evaluate(cases, k)?));
        }
    }
    Ok(rows)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let p = prepare(cfg)?;
    let model = bpr_fit(&p.fit_on, &cfg.bpr)?;
    let mut out = Outputs::default();
    out.csv(cfg.output_dir.join("model.bprv1"), |b| model.write_checkpoint(b))?;
    Ok(out)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let p = prepare(cfg)?;
    let ev = run_recommenders(cfg, &p)?;
    let dir = &cfg.output_dir;
    let mut out = Outputs::default();
    let rows = reports_at(&ev, &[cfg.report_k])?;
    out.csv(dir.join("eval_report.csv"), |b| eval::write_reports(&rows, b))?;
    let mut cohorts = Vec::new();
    for (name, cases) in &ev.runs {
        for row in cohort_nrr(cases, &p.split.train, &cfg.cohort_bins, cfg.report_k) {
            cohorts.push((name.clone(), row));
        }
    }
    cohorts.sort_by_key(|(_, r)| (r.low, r.high));
    out.csv(dir.join("cohorts.csv"), |b| eval::write_cohorts(&cohorts, b))?;
    if cfg.timing {
        out.csv(dir.join("timing.csv"), |b| eval::write_timing(&ev.timings, b))?;
    }
    if let Some(model) = &ev.model {
        out.csv(dir.join("model.bprv1"), |b| model.write_checkpoint(b))?;
    }
    Ok(out)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let p = prepare(cfg)?;
    let ev = run_recommenders(cfg, &p)?;
    let mut ks = cfg.k.clone();
    ks.sort_unstable();
    ks.dedup();
    let rows = reports_at(&ev, &ks)?;
    let mut out = Outputs::default();
    out.csv(cfg.output_dir.join("sweep.csv"), |b| eval::write_reports(&rows, b))?;
    Ok(out)
}

pub fn cmd_grid(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let p = prepare(cfg)?;
    let result = grid_search(
        &p.fit_on,
        &p.split.validation,
        &cfg.grid.factors,
        &cfg.grid.learning_rates,
        cfg.report_k,
        &cfg.bpr,
    )?;
    let mut s = String::from("factors,learning_rate,urr,selected\n");
    for c in &result.cells {
        let selected =
            c.factors == result.best.factors && c.learning_rate == result.best.learning_rate;
        let urr = c.urr.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", c.factors, c.learning_rate, urr, selected);
    }
    log::info!(
        "best cell: factors={} learning_rate={}",
        result.best.factors,
        result.best.learning_rate
    );
    let mut out = Outputs::default();
    out.add(cfg.output_dir.join("grid.csv"), s.into_bytes());
    Ok(out)
}

/// Closest Items per metadata field set at `report_k`. Duplicate field sets
/// are evaluated once; a set with neither a file nor a fallback is skipped.
pub fn cmd_ablation(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let p = prepare(cfg)?;
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for raw in &cfg.ablation.field_sets {
        let fields: FieldSet = raw.parse()?;
        if !seen.insert(fields) {
            continue;
        }
        let file = cfg
            .ablation
            .embeddings_dir
            .as_ref()
            .map(|d| d.join(format!("{fields}.embv1")))
            .filter(|f| f.exists());
        let store = match (file, cfg.embeddings.fallback_dim) {
            (Some(f), _) => load_embeddings(&f, &p.dataset.catalog)?.store,
            (None, Some(dim)) => {
                EmbeddingStore::from_catalog_hashed(&p.dataset.catalog, fields, dim, cfg.seed)
            }
            (None, None) => {
                log::warn!("no embeddings for field set {fields}, skipped");
                continue;
            }
        };
        let rec = ClosestItems::new(&p.known, &store)?;
        let cases = collect_cases(&rec, &p.split.test)?;
        rows.push((fields.to_string(), evaluate(&cases, cfg.report_k)?));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| CliError::Io {
        path: cfg.output_dir.join("ablation.csv"),
        source: io::Error::other(e),
    };
    w.write_record(["field_set", "k", "urr", "nrr", "precision", "recall", "fr"])
        .map_err(to_io)?;
    for (name, r) in &rows {
        w.write_record([
            name.clone(),
            r.k.to_string(),
            r.urr.to_string(),
            r.nrr.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.fr.to_string(),
        ])
        .map_err(to_io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io {
        path: cfg.output_dir.join("ablation.csv"),
        source: io::Error::other(e.to_string()),
    })?;
    let mut out = Outputs::default();
    out.add(cfg.output_dir.join("ablation.csv"), bytes);
    Ok(out)
}

/// Looks a user up by full id, then with each source prefix.
fn resolve_user(dataset: &Dataset, raw: &str) -> Option<u32> {
    dataset.users.get(raw).or_else(|| {
        [ingest::BCT_PREFIX, ingest::ANOBII_PREFIX]
            .iter()
            .find_map(|p| dataset.users.get(&format!("{p}{raw}")))
    })
}

/// Answers `recommend <user> <k>` lines with the recommended book ids,
/// space-separated, using the checkpoint in the output directory.
pub fn cmd_serve<R: BufRead, W: Write>(cfg: &RunConfig, input: R, mut output: W) -> Result<(), CliError> {
    let dataset = ingest::load_dataset(&cfg.data_dir)?;
    let path = cfg.output_dir.join("model.bprv1");
    let text = std::fs::read_to_string(&path).map_err(io_at(&path))?;
    let model = LatentModel::read_checkpoint(&text)?;
    let rec = Bpr::new(&model, &dataset.readings);
    let out_err = |e| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    for line in input.lines() {
        let line = line.map_err(|e| CliError::Io {
            path: PathBuf::from("<stdin>"),
            source: e,
        })?;
        let reply = match line.split_whitespace().collect::<Vec<_>>()[..] {
            [] => continue,
            ["recommend", user, k] => match (resolve_user(&dataset, user), k.parse::<usize>()) {
                (Some(u), Ok(k)) if k >= 1 => match rec.recommend(UserId(u), k) {
                    Ok(books) => books
                        .iter()
                        .filter_map(|&b| dataset.catalog.book(b))
                        .map(|b| b.external_id.as_str())
                        .collect::<Vec<_>>()
                        .join(" "),
                    Err(e) => format!("error: {e}"),
                },
                (None, _) => format!("error: unknown user {user}"),
                _ => format!("error: bad k {k:?}"),
            },
            _ => "error: expected `recommend <user> <k>`".to_owned(),
        };
        writeln!(output, "{reply}").map_err(out_err)?;
        output.flush().map_err(out_err)?;
    }
    Ok(())
}
