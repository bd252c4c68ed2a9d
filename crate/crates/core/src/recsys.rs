//! The four recommenders: random and most-read baselines, content-based
//! Closest Items, and matrix-factorization BPR trained with WARP sampling.
//!
//! Every recommender ranks exactly the books a user has not read yet, where
//! "read" is taken from the `seen` table passed at construction (training
//! plus validation readings at evaluation time). Ties are always broken by
//! ascending [`BookId`].

use std::fmt::Write as _;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BookId, ReadingsTable, UserId};
use crate::embed::EmbeddingStore;

#[derive(Debug, Error)]
pub enum RecError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("{0} has no readings to compare candidates against")]
    ColdStart(UserId),
    #[error("no embedding for {0}")]
    MissingEmbedding(BookId),
    #[error("non-finite latent factor after epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("checkpoint line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait Recommender {
    fn name(&self) -> &str;

    /// All books unread by `user`, best first.
    fn rank(&self, user: UserId) -> Result<Vec<BookId>, RecError>;

    fn recommend(&self, user: UserId, k: usize) -> Result<Vec<BookId>, RecError> {
        let mut ranking = self.rank(user)?;
        ranking.truncate(k);
        Ok(ranking)
    }
}

fn check_user(seen: &ReadingsTable, user: UserId) -> Result<&[BookId], RecError> {
    if user.index() >= seen.n_users() {
        return Err(RecError::UnknownUser(user));
    }
    Ok(seen.user_books(user))
}

/// Books in `0..n_books` not in the sorted `read` list.
pub fn unread_books(read: &[BookId], n_books: usize) -> Vec<BookId> {
    let mut out = Vec::with_capacity(n_books.saturating_sub(read.len()));
    let mut it = read.iter().peekable();
    for b in (0..n_books as u32).map(BookId) {
        if it.peek() == Some(&&b) {
            it.next();
        } else {
            out.push(b);
        }
    }
    out
}

/// Unread books sorted by descending score, ties by ascending id.
pub fn rank_by_scores(scores: &[f64], read: &[BookId]) -> Vec<BookId> {
    let mut books = unread_books(read, scores.len());
    books.sort_by(|a, b| {
        scores[b.index()]
            .total_cmp(&scores[a.index()])
            .then_with(|| a.cmp(b))
    });
    books
}

fn user_stream_seed(seed: u64, user: UserId) -> u64 {
    let mut z = seed ^ (u64::from(user.0) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniformly random order over unread books, reproducible per `(seed, user)`.
pub struct RandomItems<'a> {
    seen: &'a ReadingsTable,
    seed: u64,
}

impl<'a> RandomItems<'a> {
    pub fn new(seen: &'a ReadingsTable, seed: u64) -> Self {
        Self { seen, seed }
    }
}

impl Recommender for RandomItems<'_> {
    fn name(&self) -> &str {
        "random"
    }

    fn rank(&self, user: UserId) -> Result<Vec<BookId>, RecError> {
        let read = check_user(self.seen, user)?;
        let mut books = unread_books(read, self.seen.n_books());
        let mut rng = ChaCha8Rng::seed_from_u64(user_stream_seed(self.seed, user));
        books.shuffle(&mut rng);
        Ok(books)
    }
}

/// Books by descending training read count, the same order for everyone.
pub struct MostRead<'a> {
    seen: &'a ReadingsTable,
    counts: Vec<f64>,
}

impl<'a> MostRead<'a> {
    pub fn fit(train: &ReadingsTable, seen: &'a ReadingsTable) -> Self {
        Self {
            seen,
            counts: train.book_counts().iter().map(|&c| f64::from(c)).collect(),
        }
    }
}

impl Recommender for MostRead<'_> {
    fn name(&self) -> &str {
        "most_read"
    }

    fn rank(&self, user: UserId) -> Result<Vec<BookId>, RecError> {
        let read = check_user(self.seen, user)?;
        Ok(rank_by_scores(&self.counts, read))
    }
}

/// Content-based ranking by mean cosine similarity to the books already read.
pub struct ClosestItems<'a> {
    seen: &'a ReadingsTable,
    vectors: Vec<&'a [f64]>,
    norms: Vec<f64>,
}

impl<'a> ClosestItems<'a> {
    pub fn new(seen: &'a ReadingsTable, embeddings: &'a EmbeddingStore) -> Result<Self, RecError> {
        let vectors = (0..seen.n_books() as u32)
            .map(BookId)
            .map(|b| embeddings.get(b).ok_or(RecError::MissingEmbedding(b)))
            .collect::<Result<Vec<_>, _>>()?;
        let norms = vectors
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            seen,
            vectors,
            norms,
        })
    }

    fn similarity(&self, a: BookId, b: BookId) -> f64 {
        let (na, nb) = (self.norms[a.index()], self.norms[b.index()]);
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self.vectors[a.index()]
            .iter()
            .zip(self.vectors[b.index()])
            .map(|(x, y)| x * y)
            .sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }

    /// Mean similarity of `candidate` to each book in `read`.
    pub fn average_similarity(&self, candidate: BookId, read: &[BookId]) -> f64 {
        let total: f64 = read.iter().map(|&i| self.similarity(candidate, i)).sum();
        total / read.len() as f64
    }
}

impl Recommender for ClosestItems<'_> {
    fn name(&self) -> &str {
        "closest"
    }

    fn rank(&self, user: UserId) -> Result<Vec<BookId>, RecError> {
        let read = check_user(self.seen, user)?;
        if read.is_empty() {
            return Err(RecError::ColdStart(user));
        }
        let mut scores = vec![0.0; self.seen.n_books()];
        for b in unread_books(read, scores.len()) {
            scores[b.index()] = self.average_similarity(b, read);
        }
        Ok(rank_by_scores(&scores, read))
    }
}

/// Update rule for the factor vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain SGD: `θ += η·g`.
    Sgd,
    /// Per-coordinate `θ += η·g / √G` with `G` the running sum of `g²`,
    /// started at 1 so the first step equals plain SGD.
    Adagrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BprParams {
    /// Number of latent factors L.
    pub factors: usize,
    pub learning_rate: f64,
    pub reg_user: f64,
    pub reg_item: f64,
    pub epochs: usize,
    pub warp_max_trials: usize,
    pub init_std: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for BprParams {
    fn default() -> Self {
        Self {
            factors: 20,
            learning_rate: 0.2,
            reg_user: 1e-5,
            reg_item: 1e-5,
            epochs: 30,
            warp_max_trials: 100,
            init_std: 0.01,
            seed: 42,
            optimizer: Optimizer::Adagrad,
        }
    }
}

impl BprParams {
    pub fn validate(&self) -> Result<(), RecError> {
        let bad = |m: &str| Err(RecError::InvalidParams(m.to_owned()));
        if self.factors == 0 {
            return bad("factors must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.reg_user < 0.0 || self.reg_item < 0.0 {
            return bad("regularization must be non-negative");
        }
        if self.warp_max_trials == 0 {
            return bad("warp_max_trials must be positive");
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return bad("init_std must be non-negative");
        }
        Ok(())
    }
}

/// User factors `V` (U×L) and item factors `P` (L×B).
///
/// `P` is stored column-major, so column `i` of `P` (the factors of book `i`)
/// is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    n_users: usize,
    n_books: usize,
    factors: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    pub params: BprParams,
}

impl LatentModel {
    /// Factors drawn from `N(0, init_std²)` with the params' seed.
    pub fn init(n_users: usize, n_books: usize, params: &BprParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let normal = Normal::new(0.0, params.init_std).expect("init_std validated");
        let l = params.factors;
        let user_factors = (0..n_users * l).map(|_| normal.sample(&mut rng)).collect();
        let item_factors = (0..n_books * l).map(|_| normal.sample(&mut rng)).collect();
        Self {
            n_users,
            n_books,
            factors: l,
            user_factors,
            item_factors,
            params: params.clone(),
        }
    }

    pub fn from_factors(
        n_users: usize,
        n_books: usize,
        factors: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
        params: BprParams,
    ) -> Self {
        assert_eq!(user_factors.len(), n_users * factors);
        assert_eq!(item_factors.len(), n_books * factors);
        Self {
            n_users,
            n_books,
            factors,
            user_factors,
            item_factors,
            params,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_books(&self) -> usize {
        self.n_books
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn user(&self, u: UserId) -> &[f64] {
        let l = self.factors;
        &self.user_factors[u.index() * l..(u.index() + 1) * l]
    }

    pub fn item(&self, b: BookId) -> &[f64] {
        let l = self.factors;
        &self.item_factors[b.index() * l..(b.index() + 1) * l]
    }

    /// `f(u, i) = v_u · p_i`.
    pub fn score(&self, u: UserId, b: BookId) -> f64 {
        dot(self.user(u), self.item(b))
    }

    pub fn scores(&self, u: UserId) -> Vec<f64> {
        let v = self.user(u);
        self.item_factors
            .chunks_exact(self.factors)
            .map(|p| dot(v, p))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .all(|x| x.is_finite())
    }

    /// Multiplies `V` by `alpha` and divides `P` by it; scores are unchanged.
    pub fn rescaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.user_factors.iter_mut().for_each(|x| *x *= alpha);
        out.item_factors.iter_mut().for_each(|x| *x /= alpha);
        out
    }

    /// Writes the `#bprv1` checkpoint: header, `U` rows of `V`, then `B`
    /// columns of `P`, tab-separated.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "#bprv1 U={} B={} L={} seed={}",
            self.n_users, self.n_books, self.factors, self.params.seed
        )?;
        let mut line = String::new();
        for row in self
            .user_factors
            .chunks_exact(self.factors)
            .chain(self.item_factors.chunks_exact(self.factors))
        {
            line.clear();
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    line.push('\t');
                }
                write!(line, "{x}").expect("writing to a String");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint(text: &str) -> Result<Self, RecError> {
        let fmt_err = |line: usize, message: String| RecError::Format { line, message };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| fmt_err(1, "empty checkpoint".into()))?;
        let rest = header
            .strip_prefix("#bprv1 ")
            .ok_or_else(|| fmt_err(1, format!("bad header {header:?}")))?;
        let mut dims = [None::<u64>; 4];
        for (key, slot) in ["U", "B", "L", "seed"].iter().zip(dims.iter_mut()) {
            *slot = rest.split_whitespace().find_map(|kv| {
                kv.strip_prefix(key)
                    .and_then(|v| v.strip_prefix('='))
                    .and_then(|v| v.parse().ok())
            });
        }
        let [Some(u), Some(b), Some(l), Some(seed)] = dims else {
            return Err(fmt_err(1, format!("bad header {header:?}")));
        };
        let (u, b, l) = (u as usize, b as usize, l as usize);
        if l == 0 {
            return Err(fmt_err(1, "L must be positive".into()));
        }
        let mut values = Vec::with_capacity((u + b) * l);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if i >= u + b {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(fmt_err(lineno, "unexpected trailing row".into()));
            }
            let row = line
                .split('\t')
                .map(|c| c.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| fmt_err(lineno, "invalid number".into()))?;
            if row.len() != l {
                return Err(fmt_err(lineno, format!("expected {l} values, found {}", row.len())));
            }
            values.extend(row);
        }
        if values.len() != (u + b) * l {
            return Err(fmt_err(u + b + 1, "truncated checkpoint".into()));
        }
        let item_factors = values.split_off(u * l);
        let params = BprParams {
            factors: l,
            seed,
            ..BprParams::default()
        };
        Ok(Self::from_factors(u, b, l, values, item_factors, params))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `p(i >_u j) = σ(f(u,i) − f(u,j))`.
pub fn pair_probability(score_read: f64, score_unread: f64) -> f64 {
    sigmoid(score_read - score_unread)
}

/// Numerically stable `ln σ(x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Per-triple objective `ln σ(v·p_i − v·p_j) − λ_V‖v‖² − λ_P(‖p_i‖² + ‖p_j‖²)`.
pub fn pair_objective(user: &[f64], read: &[f64], unread: &[f64], reg_user: f64, reg_item: f64) -> f64 {
    let x = dot(user, read) - dot(user, unread);
    log_sigmoid(x) - reg_user * dot(user, user) - reg_item * (dot(read, read) + dot(unread, unread))
}

/// Gradient of [`pair_objective`] with respect to `(v, p_i, p_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub user: Vec<f64>,
    pub read: Vec<f64>,
    pub unread: Vec<f64>,
}

/// Analytic gradient of [`pair_objective`]. The likelihood part is scaled
/// by `weight`; the regularization part is not.
pub fn pair_gradient(
    user: &[f64],
    read: &[f64],
    unread: &[f64],
    reg_user: f64,
    reg_item: f64,
    weight: f64,
) -> PairGradient {
    let x = dot(user, read) - dot(user, unread);
    // d/dx ln σ(x) = σ(−x)
    let g = weight * sigmoid(-x);
    PairGradient {
        user: (0..user.len())
            .map(|k| g * (read[k] - unread[k]) - 2.0 * reg_user * user[k])
            .collect(),
        read: (0..user.len())
            .map(|k| g * user[k] - 2.0 * reg_item * read[k])
            .collect(),
        unread: (0..user.len())
            .map(|k| -g * user[k] - 2.0 * reg_item * unread[k])
            .collect(),
    }
}

/// WARP rank transform: with `trials` draws needed to find a violating
/// unread book among `n_unread`, the rank estimate is
/// `r = max(1, ⌊(n_unread − 1) / trials⌋)` and the weight is `Σ_{m=1..r} 1/m`.
pub fn warp_weight(n_unread: usize, trials: usize) -> f64 {
    let r = (n_unread.saturating_sub(1) / trials.max(1)).max(1);
    (1..=r).map(|m| 1.0 / m as f64).sum()
}

/// Squared-gradient sums, laid out like the model's factors.
struct Accumulators {
    user: Vec<f64>,
    item: Vec<f64>,
}

impl Accumulators {
    fn for_model(model: &LatentModel) -> Self {
        Self {
            user: vec![1.0; model.user_factors.len()],
            item: vec![1.0; model.item_factors.len()],
        }
    }
}

/// One ascent step on a `(user, read, unread)` triple; with `acc` the step
/// is Adagrad-scaled.
fn ascend(
    model: &mut LatentModel,
    mut acc: Option<&mut Accumulators>,
    u: UserId,
    i: BookId,
    j: BookId,
    weight: f64,
    eta: f64,
) {
    let grad = pair_gradient(
        model.user(u),
        model.item(i),
        model.item(j),
        model.params.reg_user,
        model.params.reg_item,
        weight,
    );
    let l = model.factors;
    let apply = |slice: &mut [f64], sums: Option<&mut [f64]>, g: &[f64]| match sums {
        Some(sums) => {
            for ((x, s), d) in slice.iter_mut().zip(sums.iter_mut()).zip(g) {
                *s += d * d;
                *x += eta * d / s.sqrt();
            }
        }
        None => slice.iter_mut().zip(g).for_each(|(x, d)| *x += eta * d),
    };
    let (ur, ir, jr) = (
        u.index() * l..(u.index() + 1) * l,
        i.index() * l..(i.index() + 1) * l,
        j.index() * l..(j.index() + 1) * l,
    );
    apply(
        &mut model.user_factors[ur.clone()],
        acc.as_deref_mut().map(|a| &mut a.user[ur]),
        &grad.user,
    );
    apply(
        &mut model.item_factors[ir.clone()],
        acc.as_deref_mut().map(|a| &mut a.item[ir]),
        &grad.read,
    );
    apply(
        &mut model.item_factors[jr.clone()],
        acc.map(|a| &mut a.item[jr]),
        &grad.unread,
    );
}

/// Trains a BPR model with WARP negative sampling for `params.epochs` epochs.
pub fn bpr_fit(train: &ReadingsTable, params: &BprParams) -> Result<LatentModel, RecError> {
    bpr_fit_monitored(train, params, None::<(usize, fn(&LatentModel) -> f64)>)
}

/// Like [`bpr_fit`], optionally early-stopping on a validation score.
///
/// With `monitor = Some((patience, score))`, `score` is evaluated after every
/// epoch (higher is better); training stops once it has not improved for
/// `patience` epochs and the best model seen is returned.
pub fn bpr_fit_monitored<F>(
    train: &ReadingsTable,
    params: &BprParams,
    mut monitor: Option<(usize, F)>,
) -> Result<LatentModel, RecError>
where
    F: FnMut(&LatentModel) -> f64,
{
    params.validate()?;
    let n_books = train.n_books();
    let mut model = LatentModel::init(train.n_users(), n_books, params);
    let mut acc = match params.optimizer {
        Optimizer::Adagrad => Some(Accumulators::for_model(&model)),
        Optimizer::Sgd => None,
    };
    // decorrelate the sampling stream from the initialization stream
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_0f5a_4d1e_u64);

    let mut pairs: Vec<(UserId, BookId)> = Vec::with_capacity(train.len());
    let mut degenerate = 0usize;
    for u in train.users() {
        let read = train.user_books(u);
        if read.len() >= n_books {
            if !read.is_empty() {
                degenerate += 1;
            }
            continue;
        }
        pairs.extend(read.iter().map(|&b| (u, b)));
    }
    if degenerate > 0 {
        log::warn!("skipping {degenerate} users with no unread books");
    }

    let mut best: Option<(f64, LatentModel)> = None;
    let mut stale = 0usize;
    for epoch in 1..=params.epochs {
        pairs.shuffle(&mut rng);
        for &(u, i) in &pairs {
            let read = train.user_books(u);
            let n_unread = n_books - read.len();
            let positive = model.score(u, i);
            for trial in 1..=params.warp_max_trials {
                let j = loop {
                    let j = BookId(rng.random_range(0..n_books as u32));
                    if read.binary_search(&j).is_err() {
                        break j;
                    }
                };
                if model.score(u, j) > positive - 1.0 {
                    let w = warp_weight(n_unread, trial);
                    ascend(&mut model, acc.as_mut(), u, i, j, w, params.learning_rate);
                    break;
                }
            }
        }
        if !model.is_finite() {
            return Err(RecError::Divergence { epoch });
        }
        if let Some((patience, score)) = monitor.as_mut() {
            let s = score(&model);
            log::debug!("epoch {epoch}: validation score {s:.5}");
            match &best {
                Some((b, _)) if s <= *b => {
                    stale += 1;
                    if stale >= *patience {
                        break;
                    }
                }
                _ => {
                    best = Some((s, model.clone()));
                    stale = 0;
                }
            }
        }
    }
    Ok(match best {
        Some((_, m)) => m,
        None => model,
    })
}

/// Ranks unread books by the latent score `v_u · p_i`.
pub struct Bpr<'a> {
    model: &'a LatentModel,
    seen: &'a ReadingsTable,
}

impl<'a> Bpr<'a> {
    pub fn new(model: &'a LatentModel, seen: &'a ReadingsTable) -> Self {
        Self { model, seen }
    }
}

impl Recommender for Bpr<'_> {
    fn name(&self) -> &str {
        "bpr"
    }

    fn rank(&self, user: UserId) -> Result<Vec<BookId>, RecError> {
        let read = check_user(self.seen, user)?;
        if user.index() >= self.model.n_users() {
            return Err(RecError::UnknownUser(user));
        }
        Ok(rank_by_scores(&self.model.scores(user), read))
    }
}
