//! Metadata summaries, embedding storage and cosine similarity.
//!
//! Summaries are embedded by an external sentence encoder and handed over in
//! EMBV1 files:
//!
//! ```text
//! #embv1 dim=4
//! anobii:9	0.1	0.2	0.3	0.4
//! ```
//!
//! [`hash_embed`] is a seeded bag-of-words feature hasher that stands in for
//! the encoder when no file is available.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::domain::{Book, BookId, Catalog};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("all selected metadata fields are empty for book {0}")]
    EmptySummary(String),
    #[error("vector lengths differ: {0} vs {1}")]
    DimError(usize, usize),
    #[error("line {line}: {message}")]
    FormatError { line: usize, message: String },
    #[error("unknown metadata field {0:?}")]
    UnknownField(String),
    #[error("empty metadata field set")]
    EmptyFieldSet,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetadataField {
    Title,
    Authors,
    Plot,
    Genres,
    Keywords,
}

impl MetadataField {
    /// Concatenation order of a summary.
    pub const ALL: [MetadataField; 5] = [
        MetadataField::Title,
        MetadataField::Authors,
        MetadataField::Plot,
        MetadataField::Genres,
        MetadataField::Keywords,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetadataField::Title => "title",
            MetadataField::Authors => "authors",
            MetadataField::Plot => "plot",
            MetadataField::Genres => "genres",
            MetadataField::Keywords => "keywords",
        }
    }
}

impl FromStr for MetadataField {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetadataField::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| EmbedError::UnknownField(s.to_owned()))
    }
}

/// Non-empty subset of metadata fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldSet(u8);

impl FieldSet {
    pub fn new(fields: impl IntoIterator<Item = MetadataField>) -> Result<Self, EmbedError> {
        let bits = fields.into_iter().fold(0u8, |acc, f| acc | f.bit());
        if bits == 0 {
            return Err(EmbedError::EmptyFieldSet);
        }
        Ok(Self(bits))
    }

    /// Authors and genres, the best-performing combination for Closest Items.
    pub fn authors_genres() -> Self {
        Self(MetadataField::Authors.bit() | MetadataField::Genres.bit())
    }

    pub fn contains(self, field: MetadataField) -> bool {
        self.0 & field.bit() != 0
    }

    pub fn is_subset(self, other: FieldSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn fields(self) -> impl Iterator<Item = MetadataField> {
        MetadataField::ALL.into_iter().filter(move |f| self.contains(*f))
    }
}

impl FromStr for FieldSet {
    type Err = EmbedError;

    /// Parses a comma-separated list such as `authors,genres`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(MetadataField::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        FieldSet::new(fields)
    }
}

impl fmt::Display for FieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.fields().map(MetadataField::as_str).collect();
        f.write_str(&names.join(","))
    }
}

/// Concatenates the selected fields of `book` in title, authors, plot,
/// genres, keywords order, separated by `". "`.
pub fn metadata_summary(book: &Book, fields: FieldSet) -> Result<String, EmbedError> {
    let mut parts: Vec<String> = Vec::new();
    for field in fields.fields() {
        let part = match field {
            MetadataField::Title => book.title.trim().to_owned(),
            MetadataField::Authors => join_non_empty(&book.authors),
            MetadataField::Plot => book.plot.as_deref().unwrap_or("").trim().to_owned(),
            MetadataField::Genres => {
                let names: Vec<String> = book.genres.iter().map(|g| g.genre.clone()).collect();
                join_non_empty(&names)
            }
            MetadataField::Keywords => join_non_empty(&book.keywords),
        };
        if !part.is_empty() {
            parts.push(part);
        }
    }
    if parts.is_empty() {
        return Err(EmbedError::EmptySummary(book.external_id.clone()));
    }
    Ok(parts.join(". "))
}

fn join_non_empty(items: &[String]) -> String {
    items
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Cosine similarity, defined as 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimError(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for byte in token.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finalizer
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Seeded signed feature hashing of the lowercased whitespace tokens of
/// `summary`, L2-normalized. Leading and trailing punctuation is trimmed from
/// each token so that `"Eco."` and `"Eco,"` hash alike.
pub fn hash_embed(summary: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    let lower = summary.to_lowercase();
    for token in lower.split_whitespace() {
        let token = token.trim_matches(|c: char| !c.is_alphanumeric());
        if token.is_empty() {
            continue;
        }
        let h = token_hash(token, seed);
        let idx = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Fixed-dimension vectors keyed by book.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: Vec<Option<Vec<f64>>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, n_books: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self {
            dim,
            vectors: vec![None; n_books],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_books(&self) -> usize {
        self.vectors.len()
    }

    pub fn insert(&mut self, book: BookId, vector: Vec<f64>) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimError(self.dim, vector.len()));
        }
        if book.index() >= self.vectors.len() {
            self.vectors.resize(book.index() + 1, None);
        }
        self.vectors[book.index()] = Some(vector);
        Ok(())
    }

    pub fn get(&self, book: BookId) -> Option<&[f64]> {
        self.vectors.get(book.index())?.as_deref()
    }

    pub fn missing(&self) -> impl Iterator<Item = BookId> + '_ {
        self.vectors
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(i, _)| BookId(i as u32))
    }

    /// Embeds every catalog book's summary with [`hash_embed`]. Books whose
    /// summary is empty get the zero vector.
    pub fn from_catalog_hashed(catalog: &Catalog, fields: FieldSet, dim: usize, seed: u64) -> Self {
        let mut store = Self::new(dim, catalog.len());
        for book in catalog.books() {
            let v = match metadata_summary(book, fields) {
                Ok(s) => hash_embed(&s, dim, seed),
                Err(_) => vec![0.0; dim],
            };
            store.vectors[book.id.index()] = Some(v);
        }
        store
    }

    /// Writes the store in EMBV1 format using the catalog's external ids.
    pub fn write<W: Write>(&self, catalog: &Catalog, mut out: W) -> io::Result<()> {
        writeln!(out, "#embv1 dim={}", self.dim)?;
        for (i, v) in self.vectors.iter().enumerate() {
            let (Some(v), Some(book)) = (v, catalog.book(BookId(i as u32))) else {
                continue;
            };
            write!(out, "{}", book.external_id)?;
            for x in v {
                write!(out, "\t{x:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Result of loading an EMBV1 file: the store plus ids not in the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEmbeddings {
    pub store: EmbeddingStore,
    pub unknown_ids: Vec<String>,
}

pub fn load_embeddings(path: &Path, catalog: &Catalog) -> Result<LoadedEmbeddings, EmbedError> {
    let text = fs::read_to_string(path)?;
    parse_embeddings(&text, catalog)
}

pub fn parse_embeddings(text: &str, catalog: &Catalog) -> Result<LoadedEmbeddings, EmbedError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| EmbedError::FormatError {
        line: 1,
        message: "missing #embv1 header".into(),
    })?;
    let dim: usize = header
        .strip_prefix("#embv1 dim=")
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| EmbedError::FormatError {
            line: 1,
            message: format!("bad header {header:?}"),
        })?;
    let mut store = EmbeddingStore::new(dim, catalog.len());
    let mut unknown_ids = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or("").trim();
        let values = cols
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| EmbedError::FormatError {
                        line: lineno,
                        message: format!("invalid component {c:?}"),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(EmbedError::FormatError {
                line: lineno,
                message: format!("expected {dim} components, found {}", values.len()),
            });
        }
        match catalog.lookup(id) {
            Some(book) => store.insert(book, values)?,
            None => unknown_ids.push(id.to_owned()),
        }
    }
    if !unknown_ids.is_empty() {
        log::warn!("skipped {} embeddings for unknown books", unknown_ids.len());
    }
    Ok(LoadedEmbeddings { store, unknown_ids })
}
