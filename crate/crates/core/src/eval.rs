//! Per-user data splits and the ranking KPIs.
//!
//! For a user `u` let `T_u` be the held-out books and `R_u` the first `k`
//! recommendations. Over the `U` users with a non-empty `T_u`:
//!
//! * URR = (1/U) Σ 1[T_u ∩ R_u ≠ ∅]
//! * NRR = (1/U) Σ |T_u ∩ R_u|
//! * P   = (1/U) Σ |T_u ∩ R_u| / |R_u|
//! * R   = (1/U) Σ |T_u ∩ R_u| / |T_u|
//! * FR  = mean 1-based position of the first held-out book in the full ranking
//!
//! FR uses the full ranking and so does not depend on `k`.

use std::io::{self, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{user_source, BookId, Reading, ReadingsTable, Source, UserId};
use crate::recsys::{bpr_fit, Bpr, BprParams, RecError, Recommender};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} has fewer than 2 readings and cannot be split")]
    SplitError(UserId),
    #[error("no user has a non-empty test set")]
    NoEvaluableUsers,
    #[error("held-out book {book} of {user} is missing from its ranking")]
    InvariantViolation { user: UserId, book: BookId },
    #[error("every grid cell diverged")]
    GridError,
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Rec(#[from] RecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Chronological,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub bct_test_frac: f64,
    pub val_frac: f64,
    /// `None` picks chronological when every reading is dated, random otherwise.
    pub mode: Option<SplitMode>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            bct_test_frac: 0.2,
            val_frac: 0.2,
            mode: None,
            seed: 42,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<(), EvalError> {
        for (name, f) in [("bct_test_frac", self.bct_test_frac), ("val_frac", self.val_frac)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(EvalError::InvalidSpec(format!("{name}={f} outside (0, 1)")));
            }
        }
        Ok(())
    }

    fn resolved_mode(&self, readings: &ReadingsTable) -> SplitMode {
        self.mode.unwrap_or_else(|| {
            if readings.readings().iter().all(|r| r.date.is_some()) {
                SplitMode::Chronological
            } else {
                SplitMode::Random
            }
        })
    }
}

// absorbs representation error in products like 0.2 * 15
const ROUNDING_SLACK: f64 = 1e-9;

/// `(train, validation, test)` sizes for a user with `n` readings.
///
/// Test takes `⌈test_frac·n⌉` for library users and nothing for platform
/// users. Validation takes `round(val_frac·m)` of the `m` remaining readings,
/// clamped to `[1, m − 1]` so train is never emptied; with `m = 1` the single
/// reading goes to train.
pub fn partition_sizes(n: usize, has_test: bool, spec: &SplitSpec) -> (usize, usize, usize) {
    let test = if has_test {
        ((spec.bct_test_frac * n as f64) - ROUNDING_SLACK).ceil().max(0.0) as usize
    } else {
        0
    };
    let test = test.min(n.saturating_sub(1));
    let rest = n - test;
    let val = if rest >= 2 {
        ((spec.val_frac * rest as f64) + ROUNDING_SLACK)
            .round()
            .clamp(1.0, (rest - 1) as f64) as usize
    } else {
        0
    };
    (rest - val, val, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: ReadingsTable,
    pub validation: ReadingsTable,
    pub test: ReadingsTable,
}

impl Split {
    /// Books known to be read at test time: train plus validation.
    pub fn known(&self) -> ReadingsTable {
        self.train.union(&self.validation)
    }
}

/// Splits every user's readings into train, validation and test.
///
/// Only users whose readings come from library loans get a test part.
/// Chronological mode holds out the latest readings (undated readings count
/// as oldest, ties by book id); random mode shuffles per user with a seeded
/// generator.
pub fn split(readings: &ReadingsTable, spec: &SplitSpec) -> Result<Split, EvalError> {
    spec.validate()?;
    let mode = spec.resolved_mode(readings);
    let mut parts: [Vec<Reading>; 3] = Default::default();
    for user in readings.users() {
        let mut own: Vec<Reading> = readings.user_readings(user).to_vec();
        if own.is_empty() {
            continue;
        }
        if own.len() < 2 {
            return Err(EvalError::SplitError(user));
        }
        match mode {
            SplitMode::Chronological => own.sort_by_key(|r| (r.date, r.book)),
            SplitMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    spec.seed ^ (u64::from(user.0) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                );
                own.shuffle(&mut rng);
            }
        }
        let has_test = user_source(readings, user) == Some(Source::BctLoan);
        let (train, val, _) = partition_sizes(own.len(), has_test, spec);
        let mut it = own.into_iter();
        parts[0].extend(it.by_ref().take(train));
        parts[1].extend(it.by_ref().take(val));
        parts[2].extend(it);
    }
    let [train, validation, test] = parts;
    let (u, b) = (readings.n_users(), readings.n_books());
    Ok(Split {
        train: ReadingsTable::from_readings(u, b, train),
        validation: ReadingsTable::from_readings(u, b, validation),
        test: ReadingsTable::from_readings(u, b, test),
    })
}

/// Held-out books and full ranking of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserCase {
    pub user: UserId,
    /// Sorted `T_u`.
    pub test: Vec<BookId>,
    pub ranking: Vec<BookId>,
}

impl UserCase {
    pub fn new(user: UserId, mut test: Vec<BookId>, ranking: Vec<BookId>) -> Self {
        test.sort_unstable();
        test.dedup();
        Self { user, test, ranking }
    }

    pub fn recommended(&self, k: usize) -> &[BookId] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    /// `|T_u ∩ R_u|` for the top `k`.
    pub fn hits(&self, k: usize) -> usize {
        self.recommended(k)
            .iter()
            .filter(|b| self.test.binary_search(b).is_ok())
            .count()
    }

    /// 1-based position of the best-ranked held-out book.
    pub fn first_rank(&self) -> Result<usize, EvalError> {
        let mut best = None;
        let mut found = 0;
        for (pos, b) in self.ranking.iter().enumerate() {
            if self.test.binary_search(b).is_ok() {
                best.get_or_insert(pos + 1);
                found += 1;
            }
        }
        if found < self.test.len() {
            let missing = self
                .test
                .iter()
                .find(|b| !self.ranking.contains(b))
                .copied()
                .expect("some held-out book is missing");
            return Err(EvalError::InvariantViolation {
                user: self.user,
                book: missing,
            });
        }
        best.ok_or(EvalError::NoEvaluableUsers)
    }
}

fn evaluable(cases: &[UserCase]) -> Result<Vec<&UserCase>, EvalError> {
    let out: Vec<&UserCase> = cases.iter().filter(|c| !c.test.is_empty()).collect();
    if out.is_empty() {
        return Err(EvalError::NoEvaluableUsers);
    }
    Ok(out)
}

fn mean_over(cases: &[UserCase], term: impl Fn(&UserCase) -> f64) -> Result<f64, EvalError> {
    let users = evaluable(cases)?;
    Ok(users.iter().map(|c| term(c)).sum::<f64>() / users.len() as f64)
}

pub fn urr(cases: &[UserCase], k: usize) -> Result<f64, EvalError> {
    mean_over(cases, |c| if c.hits(k) > 0 { 1.0 } else { 0.0 })
}

pub fn nrr(cases: &[UserCase], k: usize) -> Result<f64, EvalError> {
    mean_over(cases, |c| c.hits(k) as f64)
}

/// Users receiving no recommendation contribute 0.
pub fn precision(cases: &[UserCase], k: usize) -> Result<f64, EvalError> {
    mean_over(cases, |c| {
        let n = c.recommended(k).len();
        if n == 0 {
            log::debug!("{} received no recommendations", c.user);
            0.0
        } else {
            c.hits(k) as f64 / n as f64
        }
    })
}

pub fn recall(cases: &[UserCase], k: usize) -> Result<f64, EvalError> {
    mean_over(cases, |c| c.hits(k) as f64 / c.test.len() as f64)
}

pub fn first_rank(cases: &[UserCase]) -> Result<f64, EvalError> {
    let users = evaluable(cases)?;
    let mut total = 0.0;
    for c in &users {
        total += c.first_rank()? as f64;
    }
    Ok(total / users.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserKpi {
    pub user: UserId,
    pub hits: usize,
    pub first_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    pub urr: f64,
    pub nrr: f64,
    pub precision: f64,
    pub recall: f64,
    pub fr: f64,
    pub per_user: Vec<UserKpi>,
}

pub fn evaluate(cases: &[UserCase], k: usize) -> Result<EvalReport, EvalError> {
    let per_user = evaluable(cases)?
        .into_iter()
        .map(|c| {
            Ok(UserKpi {
                user: c.user,
                hits: c.hits(k),
                first_rank: c.first_rank()?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport {
        k,
        urr: urr(cases, k)?,
        nrr: nrr(cases, k)?,
        precision: precision(cases, k)?,
        recall: recall(cases, k)?,
        fr: first_rank(cases)?,
        per_user,
    })
}

/// Ranks every user with held-out readings in `test`.
pub fn collect_cases(
    recommender: &dyn Recommender,
    test: &ReadingsTable,
) -> Result<Vec<UserCase>, EvalError> {
    test.users()
        .filter(|&u| !test.user_books(u).is_empty())
        .map(|u| {
            Ok(UserCase::new(
                u,
                test.user_books(u).to_vec(),
                recommender.rank(u)?,
            ))
        })
        .collect()
}

pub fn sweep(cases: &[UserCase], ks: &[usize]) -> Result<Vec<EvalReport>, EvalError> {
    ks.iter().map(|&k| evaluate(cases, k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub factors: usize,
    pub learning_rate: f64,
    /// Validation URR, `None` if the fit diverged.
    pub urr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: BprParams,
    pub cells: Vec<GridCell>,
}

/// Fits one model per `(factors, learning_rate)` cell and keeps the one with
/// the highest validation URR at `k`; ties go to fewer factors, then the
/// smaller learning rate.
pub fn grid_search(
    train: &ReadingsTable,
    validation: &ReadingsTable,
    factors: &[usize],
    learning_rates: &[f64],
    k: usize,
    base: &BprParams,
) -> Result<GridResult, EvalError> {
    let mut order: Vec<(usize, f64)> = factors
        .iter()
        .flat_map(|&l| learning_rates.iter().map(move |&lr| (l, lr)))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    order.dedup();
    let mut cells = Vec::with_capacity(order.len());
    let mut best: Option<(f64, BprParams)> = None;
    for (l, lr) in order {
        let params = BprParams {
            factors: l,
            learning_rate: lr,
            ..base.clone()
        };
        let urr_value = match bpr_fit(train, &params) {
            Ok(model) => {
                let rec = Bpr::new(&model, train);
                let cases = collect_cases(&rec, validation)?;
                Some(urr(&cases, k)?)
            }
            Err(RecError::Divergence { epoch }) => {
                log::warn!("grid cell L={l} lr={lr} diverged at epoch {epoch}");
                None
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(v) = urr_value {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, params));
            }
        }
        cells.push(GridCell {
            factors: l,
            learning_rate: lr,
            urr: urr_value,
        });
    }
    let (_, best) = best.ok_or(EvalError::GridError)?;
    Ok(GridResult { best, cells })
}

/// Inclusive bounds on the number of training readings.
pub const DEFAULT_COHORT_BINS: [(usize, usize); 4] = [(0, 7), (8, 10), (11, 16), (17, 100)];

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub low: usize,
    pub high: usize,
    pub users: usize,
    pub nrr: f64,
}

/// NRR at `k` within each bin of users grouped by training-set size. Empty
/// bins are dropped.
pub fn cohort_nrr(
    cases: &[UserCase],
    train: &ReadingsTable,
    bins: &[(usize, usize)],
    k: usize,
) -> Vec<CohortRow> {
    bins.iter()
        .filter_map(|&(low, high)| {
            let members: Vec<UserCase> = cases
                .iter()
                .filter(|c| (low..=high).contains(&train.user_books(c.user).len()))
                .cloned()
                .collect();
            match nrr(&members, k) {
                Ok(v) => Some(CohortRow {
                    low,
                    high,
                    users: members.iter().filter(|c| !c.test.is_empty()).count(),
                    nrr: v,
                }),
                Err(_) => {
                    log::warn!("cohort {low}..={high} is empty, dropped");
                    None
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub recommender: String,
    /// `None` for recommenders without a training phase.
    pub fit_seconds: Option<f64>,
    pub recommend_seconds: f64,
}

/// Runs `f` and returns its output with the elapsed wall-clock seconds.
pub fn time_it<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Mean wall-clock latency of `recommend(u, k)` over `users`.
pub fn mean_recommend_seconds(
    recommender: &dyn Recommender,
    users: &[UserId],
    k: usize,
) -> Result<f64, EvalError> {
    if users.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &u in users {
        let (out, secs) = time_it(|| recommender.recommend(u, k));
        out?;
        total += secs;
    }
    Ok(total / users.len() as f64)
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// `recommender,k,urr,nrr,precision,recall,fr`
pub fn write_reports<W: Write>(rows: &[(String, EvalReport)], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["recommender", "k", "urr", "nrr", "precision", "recall", "fr"])
        .map_err(csv_io)?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.k.to_string(),
            r.urr.to_string(),
            r.nrr.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.fr.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

/// `bin_low,bin_high,recommender,nrr`
pub fn write_cohorts<W: Write>(rows: &[(String, CohortRow)], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_low", "bin_high", "recommender", "nrr"])
        .map_err(csv_io)?;
    for (name, r) in rows {
        w.write_record([r.low.to_string(), r.high.to_string(), name.clone(), r.nrr.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()
}

/// `recommender,fit_s,recommend_s`; an empty `fit_s` means no training phase.
pub fn write_timing<W: Write>(rows: &[TimingReport], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["recommender", "fit_s", "recommend_s"])
        .map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.recommender.clone(),
            r.fit_seconds.map(|s| s.to_string()).unwrap_or_default(),
            r.recommend_seconds.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recsys::MostRead;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> Vec<BookId> {
        v.iter().copied().map(BookId).collect()
    }

    fn case(user: u32, test: &[u32], ranking: &[u32]) -> UserCase {
        UserCase::new(UserId(user), ids(test), ids(ranking))
    }

    #[test]
    fn partition_sizes_for_ten_readings() {
        let spec = SplitSpec::default();
        assert_eq!(partition_sizes(10, true, &spec), (6, 2, 2));
        assert_eq!(partition_sizes(10, false, &spec), (8, 2, 0));
        assert_eq!(partition_sizes(15, true, &spec), (10, 2, 3));
        assert_eq!(partition_sizes(2, true, &spec), (1, 0, 1));
        assert_eq!(partition_sizes(3, true, &spec), (1, 1, 1));
    }

    fn dated(user: u32, book: u32, day: u32, source: Source) -> Reading {
        Reading::new(
            UserId(user),
            BookId(book),
            NaiveDate::from_ymd_opt(2020, 1, day),
            source,
        )
    }

    #[test]
    fn chronological_split_holds_out_latest() {
        let readings: Vec<Reading> = (0..10)
            .map(|b| dated(0, b, 10 - b, Source::BctLoan))
            .chain((0..10).map(|b| dated(1, b, b + 1, Source::AnobiiRating)))
            .collect();
        let table = ReadingsTable::from_readings(2, 10, readings);
        let s = split(&table, &SplitSpec::default()).unwrap();
        // user 0 read book 0 last
        assert_eq!(s.test.user_books(UserId(0)), &ids(&[0, 1])[..]);
        assert_eq!(s.validation.user_books(UserId(0)), &ids(&[2, 3])[..]);
        assert_eq!(s.train.user_books(UserId(0)).len(), 6);
        assert!(s.test.user_books(UserId(1)).is_empty());
        assert_eq!(s.validation.user_books(UserId(1)), &ids(&[8, 9])[..]);
    }

    #[test]
    fn split_rejects_single_reading_users() {
        let table = ReadingsTable::from_readings(1, 2, vec![dated(0, 0, 1, Source::BctLoan)]);
        assert!(matches!(
            split(&table, &SplitSpec::default()),
            Err(EvalError::SplitError(UserId(0)))
        ));
    }

    #[test]
    fn random_split_is_seeded() {
        let readings: Vec<Reading> = (0..20)
            .map(|b| Reading::new(UserId(0), BookId(b), None, Source::BctLoan))
            .collect();
        let table = ReadingsTable::from_readings(1, 20, readings);
        let spec = SplitSpec { seed: 7, ..SplitSpec::default() };
        assert_eq!(split(&table, &spec).unwrap(), split(&table, &spec).unwrap());
        let other = split(&table, &SplitSpec { seed: 8, ..spec }).unwrap();
        assert_eq!(other.test.len(), 4);
    }

    #[test]
    fn kpis_direct_set_arithmetic() {
        // T = {a, b}, R = {a, c}
        let cases = vec![case(0, &[0, 1], &[0, 2, 1])];
        assert_eq!(urr(&cases, 2).unwrap(), 1.0);
        assert_eq!(nrr(&cases, 2).unwrap(), 1.0);
        assert_eq!(precision(&cases, 2).unwrap(), 0.5);
        assert_eq!(recall(&cases, 2).unwrap(), 0.5);
    }

    #[test]
    fn kpis_full_recall() {
        let ranking: Vec<u32> = (0..30).collect();
        let cases = vec![case(0, &[3, 7], &ranking)];
        assert_eq!(nrr(&cases, 20).unwrap(), 2.0);
        assert_eq!(precision(&cases, 20).unwrap(), 0.1);
        assert_eq!(recall(&cases, 20).unwrap(), 1.0);
    }

    #[test]
    fn urr_averages_and_skips_empty_test_sets() {
        let cases = vec![case(0, &[0], &[0, 1]), case(1, &[1], &[0, 1]), case(2, &[], &[0, 1])];
        assert_eq!(urr(&cases, 1).unwrap(), 0.5);
        assert!(matches!(urr(&[case(0, &[], &[0])], 1), Err(EvalError::NoEvaluableUsers)));
    }

    #[test]
    fn first_rank_rules() {
        assert_eq!(case(0, &[0], &[2, 0, 1]).first_rank().unwrap(), 2);
        assert_eq!(case(0, &[0, 1], &[2, 0, 1]).first_rank().unwrap(), 2);
        let cases = vec![case(0, &[1], &[0, 1]), case(1, &[3], &[0, 1, 2, 3])];
        assert_eq!(first_rank(&cases).unwrap(), 3.0);
        assert!(matches!(
            case(0, &[5], &[2, 0, 1]).first_rank(),
            Err(EvalError::InvariantViolation { .. })
        ));
    }

    #[test]
    fn precision_with_empty_recommendations() {
        let cases = vec![case(0, &[1], &[]), case(1, &[1], &[1])];
        assert_eq!(precision(&cases, 5).unwrap(), 0.5);
    }

    #[test]
    fn single_cohort_equals_global_nrr() {
        let cases = vec![case(0, &[0], &[0, 1]), case(1, &[1], &[0, 2, 1])];
        let train = ReadingsTable::from_readings(
            2,
            4,
            vec![
                Reading::new(UserId(0), BookId(3), None, Source::BctLoan),
                Reading::new(UserId(1), BookId(3), None, Source::BctLoan),
            ],
        );
        let rows = cohort_nrr(&cases, &train, &[(0, 100)], 2);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].nrr, nrr(&cases, 2).unwrap());
        assert!(cohort_nrr(&cases, &train, &[(5, 9)], 2).is_empty());
    }

    #[test]
    fn singleton_grid_returns_its_cell() {
        let readings: Vec<Reading> = (0..4)
            .flat_map(|u| (0..4).map(move |b| Reading::new(UserId(u), BookId((u + b) % 8), None, Source::BctLoan)))
            .collect();
        let table = ReadingsTable::from_readings(4, 8, readings);
        let s = split(&table, &SplitSpec::default()).unwrap();
        let base = BprParams { epochs: 2, ..BprParams::default() };
        let out = grid_search(&s.train, &s.validation, &[3], &[0.05], 5, &base).unwrap();
        assert_eq!((out.best.factors, out.best.learning_rate), (3, 0.05));
        assert_eq!(out.cells.len(), 1);
    }

    #[test]
    fn grid_all_diverged() {
        let table = ReadingsTable::from_readings(
            2,
            4,
            vec![
                Reading::new(UserId(0), BookId(0), None, Source::AnobiiRating),
                Reading::new(UserId(0), BookId(1), None, Source::AnobiiRating),
                Reading::new(UserId(1), BookId(2), None, Source::AnobiiRating),
                Reading::new(UserId(1), BookId(1), None, Source::AnobiiRating),
            ],
        );
        let base = BprParams { init_std: 1.0, ..BprParams::default() };
        assert!(matches!(
            grid_search(&table, &table, &[2], &[1e300], 1, &base),
            Err(EvalError::GridError)
        ));
    }

    #[test]
    fn timing_is_finite() {
        let table = ReadingsTable::from_readings(
            1,
            3,
            vec![Reading::new(UserId(0), BookId(0), None, Source::BctLoan)],
        );
        let rec = MostRead::fit(&table, &table);
        let t = mean_recommend_seconds(&rec, &[UserId(0)], 2).unwrap();
        assert!(t.is_finite() && t >= 0.0);
    }

    #[test]
    fn report_csv_layout() {
        let report = evaluate(&[case(0, &[0], &[0, 1])], 1).unwrap();
        let mut buf = Vec::new();
        write_reports(&[("bpr".to_owned(), report)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "recommender,k,urr,nrr,precision,recall,fr\nbpr,1,1,1,1,1,1\n"
        );
    }

    proptest! {
        #[test]
        fn split_partitions_each_user(
            counts in proptest::collection::vec(2usize..30, 1..20),
            sources in proptest::collection::vec(any::<bool>(), 20),
            seed in 0u64..100,
            chronological in any::<bool>(),
        ) {
            let mut readings = Vec::new();
            for (u, &n) in counts.iter().enumerate() {
                let source = if sources[u] { Source::BctLoan } else { Source::AnobiiRating };
                for b in 0..n {
                    let day = ((b * 7 + u) % 28 + 1) as u32;
                    readings.push(dated(u as u32, b as u32, day, source));
                }
            }
            let table = ReadingsTable::from_readings(counts.len(), 30, readings);
            let mode = Some(if chronological { SplitMode::Chronological } else { SplitMode::Random });
            let s = split(&table, &SplitSpec { seed, mode, ..SplitSpec::default() }).unwrap();
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), table.len());
            for u in table.users() {
                let mut all: Vec<BookId> = s.train.user_books(u).iter()
                    .chain(s.validation.user_books(u))
                    .chain(s.test.user_books(u))
                    .copied()
                    .collect();
                all.sort();
                prop_assert_eq!(&all[..], table.user_books(u));
                if !sources[u.index()] {
                    prop_assert!(s.test.user_books(u).is_empty());
                }
                if chronological {
                    let latest_other = s.train.user_readings(u).iter()
                        .chain(s.validation.user_readings(u))
                        .map(|r| r.date)
                        .max();
                    for r in s.test.user_readings(u) {
                        prop_assert!(r.date >= latest_other.unwrap());
                    }
                }
            }
        }

        #[test]
        fn kpis_monotone_in_k(
            tests in proptest::collection::vec(proptest::collection::btree_set(0u32..40, 1..6), 1..12),
            seed in 0u64..1000,
        ) {
            let cases: Vec<UserCase> = tests.iter().enumerate().map(|(u, t)| {
                let mut ranking: Vec<BookId> = (0..40).map(BookId).collect();
                ranking.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + u as u64));
                UserCase::new(UserId(u as u32), t.iter().copied().map(BookId).collect(), ranking)
            }).collect();
            let reports = sweep(&cases, &[1, 5, 10, 20, 40]).unwrap();
            for w in reports.windows(2) {
                prop_assert!(w[1].urr >= w[0].urr);
                prop_assert!(w[1].recall >= w[0].recall);
                prop_assert!(w[1].nrr >= w[0].nrr);
                prop_assert!(w[1].precision * w[1].k as f64 >= w[0].precision * w[0].k as f64 - 1e-12);
                prop_assert_eq!(w[1].fr, w[0].fr);
            }
            for r in &reports {
                prop_assert!((r.precision * r.k as f64 - r.nrr).abs() < 1e-9);
                prop_assert!(r.nrr >= r.urr && r.urr <= 1.0 && r.precision <= 1.0 && r.fr >= 1.0);
            }
        }
    }
}
