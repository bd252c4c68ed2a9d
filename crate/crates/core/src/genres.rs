//! Genre vocabulary cleanup and per-book genre distributions.
//!
//! Users vote genres onto books. The raw vote matrix goes through three steps:
//! drop uninformative genres, merge genre pairs when the merge lowers the
//! entropy of the global genre-occurrence distribution, and finally keep the
//! four most-voted genres of each book as a probability distribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BookId, Catalog, GenreShare, ReadingsTable};

pub const MAX_GENRES_PER_BOOK: usize = 4;
const ENTROPY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenreError {
    #[error("genre merge map contains a cycle through {0:?}")]
    CyclicMerge(String),
    #[error("genre {0:?} is both dropped and a merge target")]
    DroppedTarget(String),
}

/// Non-zero vote counts keyed by `(book, genre)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenreVoteMatrix {
    votes: BTreeMap<(BookId, String), u64>,
}

impl GenreVoteMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds votes to a `(book, genre)` cell. Zero votes are ignored.
    pub fn add(&mut self, book: BookId, genre: impl Into<String>, votes: u64) {
        if votes == 0 {
            return;
        }
        *self.votes.entry((book, genre.into())).or_insert(0) += votes;
    }

    pub fn get(&self, book: BookId, genre: &str) -> u64 {
        self.votes
            .get(&(book, genre.to_owned()))
            .copied()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BookId, &str, u64)> {
        self.votes.iter().map(|((b, g), &v)| (*b, g.as_str(), v))
    }

    /// Total votes per genre across all books.
    pub fn occurrences(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for ((_, genre), &v) in &self.votes {
            *out.entry(genre.clone()).or_insert(0) += v;
        }
        out
    }

    /// Shannon entropy (bits) of the normalized genre-occurrence distribution.
    pub fn occurrence_entropy(&self) -> f64 {
        let occ = self.occurrences();
        entropy_bits(occ.values().copied())
    }

    fn merged(&self, from: &str, to: &str) -> Self {
        let mut out = Self::new();
        for ((book, genre), &v) in &self.votes {
            let target = if genre == from { to } else { genre.as_str() };
            out.add(*book, target, v);
        }
        out
    }
}

/// Entropy in bits of the distribution proportional to `counts`.
pub fn entropy_bits(counts: impl IntoIterator<Item = u64>) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Which way a candidate merge has to move the occurrence entropy to be applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyDirection {
    #[default]
    Decrease,
    Increase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenreConfig {
    pub drop_list: BTreeSet<String>,
    /// Candidate merges `[from, to]`, evaluated in order.
    pub merge_map: Vec<(String, String)>,
    pub direction: EntropyDirection,
}

impl Default for GenreConfig {
    fn default() -> Self {
        Self {
            drop_list: ["Fiction and Literature", "Textbooks", "References", "Self Help"]
                .into_iter()
                .map(String::from)
                .collect(),
            merge_map: Vec::new(),
            direction: EntropyDirection::Decrease,
        }
    }
}

impl GenreConfig {
    pub fn validate(&self) -> Result<(), GenreError> {
        let mut edges: HashMap<&str, Vec<&str>> = HashMap::new();
        for (from, to) in &self.merge_map {
            if self.drop_list.contains(to) {
                return Err(GenreError::DroppedTarget(to.clone()));
            }
            edges.entry(from.as_str()).or_default().push(to.as_str());
        }
        // depth-first search for a back edge
        fn visit<'a>(
            node: &'a str,
            edges: &HashMap<&'a str, Vec<&'a str>>,
            state: &mut HashMap<&'a str, u8>,
        ) -> Result<(), String> {
            match state.get(node) {
                Some(1) => return Err(node.to_owned()),
                Some(2) => return Ok(()),
                _ => {}
            }
            state.insert(node, 1);
            for &next in edges.get(node).into_iter().flatten() {
                visit(next, edges, state)?;
            }
            state.insert(node, 2);
            Ok(())
        }
        let mut state = HashMap::new();
        let mut starts: Vec<&str> = edges.keys().copied().collect();
        starts.sort_unstable();
        for start in starts {
            visit(start, &edges, &mut state).map_err(GenreError::CyclicMerge)?;
        }
        Ok(())
    }
}

/// Removes every entry whose genre is in the drop list.
pub fn prune_genres(votes: &GenreVoteMatrix, cfg: &GenreConfig) -> GenreVoteMatrix {
    GenreVoteMatrix {
        votes: votes
            .votes
            .iter()
            .filter(|((_, g), _)| !cfg.drop_list.contains(g))
            .map(|(k, &v)| (k.clone(), v))
            .collect(),
    }
}

/// Applies the configured merges one at a time on the running matrix, keeping
/// a merge only when it strictly moves the occurrence entropy in the
/// configured direction.
pub fn aggregate_genres(votes: &GenreVoteMatrix, cfg: &GenreConfig) -> GenreVoteMatrix {
    let mut current = votes.clone();
    for (from, to) in &cfg.merge_map {
        if from == to {
            continue;
        }
        let before = current.occurrence_entropy();
        let candidate = current.merged(from, to);
        let after = candidate.occurrence_entropy();
        let accept = match cfg.direction {
            EntropyDirection::Decrease => after < before - ENTROPY_TOLERANCE,
            EntropyDirection::Increase => after > before + ENTROPY_TOLERANCE,
        };
        if accept {
            log::debug!("merged genre {from:?} into {to:?}: entropy {before:.6} -> {after:.6}");
            current = candidate;
        }
    }
    current
}

/// Top four genres per book by vote count (ties by genre name), normalized
/// over the kept votes.
pub fn assign_top4(votes: &GenreVoteMatrix) -> BTreeMap<BookId, Vec<GenreShare>> {
    let mut per_book: BTreeMap<BookId, Vec<(&str, u64)>> = BTreeMap::new();
    for (book, genre, v) in votes.iter() {
        per_book.entry(book).or_default().push((genre, v));
    }
    per_book
        .into_iter()
        .map(|(book, mut genres)| {
            genres.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            genres.truncate(MAX_GENRES_PER_BOOK);
            let kept: u64 = genres.iter().map(|g| g.1).sum();
            let shares = genres
                .into_iter()
                .map(|(g, v)| GenreShare::new(g, v as f64 / kept as f64))
                .collect();
            (book, shares)
        })
        .collect()
}

/// Share of each genre in the readings: each reading spreads one unit of mass
/// over the genres of its book. Sorted by share descending, then name.
pub fn genre_distribution(readings: &ReadingsTable, catalog: &Catalog) -> Vec<(String, f64)> {
    if readings.is_empty() {
        return Vec::new();
    }
    let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
    for r in readings.readings() {
        if let Some(book) = catalog.book(r.book) {
            for g in &book.genres {
                *mass.entry(g.genre.as_str()).or_insert(0.0) += g.probability;
            }
        }
    }
    let n = readings.len() as f64;
    let mut out: Vec<(String, f64)> = mass
        .into_iter()
        .map(|(g, m)| (g.to_owned(), m / n))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}
