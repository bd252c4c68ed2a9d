//! Value types shared across the pipeline.
//!
//! External identifiers (`"bct:12345"`, `"anobii:987"`) are interned to dense
//! indices so the recommenders can work on plain vectors. Once a catalog is
//! finalized the indices are contiguous: books are `0..B`, users are `0..U`.

use std::collections::HashMap;
use std::fmt;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("external id must be non-empty")]
    InvalidId,
}

/// Dense index of a book in the finalized catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BookId(pub u32);

/// Dense index of a user in the finalized readings table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

impl BookId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BookId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "book#{}", self.0)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "user#{}", self.0)
    }
}

/// Bijective map between external string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    index: HashMap<String, u32>,
    names: Vec<String>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `external_id`, allocating the next one on first sight.
    pub fn intern(&mut self, external_id: &str) -> Result<u32, DomainError> {
        if external_id.is_empty() {
            return Err(DomainError::InvalidId);
        }
        if let Some(&idx) = self.index.get(external_id) {
            return Ok(idx);
        }
        let idx = self.names.len() as u32;
        self.names.push(external_id.to_owned());
        self.index.insert(external_id.to_owned(), idx);
        Ok(idx)
    }

    pub fn get(&self, external_id: &str) -> Option<u32> {
        self.index.get(external_id).copied()
    }

    pub fn external(&self, idx: u32) -> Option<&str> {
        self.names.get(idx as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ItemType {
    Monograph,
    Manuscript,
    Other(String),
}

impl ItemType {
    pub fn parse(raw: &str) -> Self {
        match raw.trim().to_lowercase().as_str() {
            "monograph" | "monography" => ItemType::Monograph,
            "manuscript" => ItemType::Manuscript,
            other => ItemType::Other(other.to_owned()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            ItemType::Monograph => "monograph",
            ItemType::Manuscript => "manuscript",
            ItemType::Other(s) => s,
        }
    }
}

/// A genre together with the probability of the book belonging to it.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreShare {
    pub genre: String,
    pub probability: f64,
}

impl GenreShare {
    pub fn new(genre: impl Into<String>, probability: f64) -> Self {
        Self {
            genre: genre.into(),
            probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Book {
    pub id: BookId,
    pub external_id: String,
    pub title: String,
    pub authors: Vec<String>,
    pub item_type: ItemType,
    pub language: String,
    pub plot: Option<String>,
    pub keywords: Vec<String>,
    /// At most four entries, probabilities non-increasing and summing to one.
    pub genres: Vec<GenreShare>,
}

impl Book {
    pub fn new(id: BookId, external_id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id,
            external_id: external_id.into(),
            title: title.into(),
            authors: Vec::new(),
            item_type: ItemType::Monograph,
            language: "it".to_owned(),
            plot: None,
            keywords: Vec::new(),
            genres: Vec::new(),
        }
    }

    /// Checks the genre-list invariants.
    pub fn genres_valid(&self) -> bool {
        if self.genres.len() > 4 {
            return false;
        }
        if self.genres.is_empty() {
            return true;
        }
        let sum: f64 = self.genres.iter().map(|g| g.probability).sum();
        let ordered = self
            .genres
            .windows(2)
            .all(|w| w[0].probability >= w[1].probability);
        ordered && (sum - 1.0).abs() <= 1e-9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    BctLoan,
    AnobiiRating,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::BctLoan => "BCT_LOAN",
            Source::AnobiiRating => "ANOBII_RATING",
        }
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw {
            "BCT_LOAN" => Some(Source::BctLoan),
            "ANOBII_RATING" => Some(Source::AnobiiRating),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reading {
    pub user: UserId,
    pub book: BookId,
    pub date: Option<NaiveDate>,
    pub source: Source,
}

impl Reading {
    pub fn new(user: UserId, book: BookId, date: Option<NaiveDate>, source: Source) -> Self {
        Self {
            user,
            book,
            date,
            source,
        }
    }
}

fn earliest(a: Option<NaiveDate>, b: Option<NaiveDate>) -> Option<NaiveDate> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Deduplicated user→book interactions: the sparse support of the binary
/// interaction matrix.
///
/// Readings are kept sorted by `(user, book)`. A repeated pair collapses into
/// one reading carrying the earliest known date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingsTable {
    n_users: usize,
    n_books: usize,
    readings: Vec<Reading>,
    user_index: Vec<Vec<BookId>>,
    book_counts: Vec<u32>,
}

impl ReadingsTable {
    pub fn empty(n_users: usize, n_books: usize) -> Self {
        Self::from_readings(n_users, n_books, Vec::new())
    }

    /// Builds a table from arbitrary readings, collapsing duplicate pairs.
    ///
    /// Panics if a reading references a user or book outside the declared dimensions.
    pub fn from_readings(
        n_users: usize,
        n_books: usize,
        readings: impl IntoIterator<Item = Reading>,
    ) -> Self {
        let mut all: Vec<Reading> = readings.into_iter().collect();
        for r in &all {
            assert!(
                r.user.index() < n_users && r.book.index() < n_books,
                "reading ({}, {}) outside table dimensions {}x{}",
                r.user,
                r.book,
                n_users,
                n_books
            );
        }
        all.sort_by_key(|r| (r.user, r.book));
        let mut deduped: Vec<Reading> = Vec::with_capacity(all.len());
        for r in all {
            match deduped.last_mut() {
                Some(last) if last.user == r.user && last.book == r.book => {
                    last.date = earliest(last.date, r.date);
                }
                _ => deduped.push(r),
            }
        }
        let (user_index, book_counts) = Self::index(n_users, n_books, &deduped);
        Self {
            n_users,
            n_books,
            readings: deduped,
            user_index,
            book_counts,
        }
    }

    fn index(n_users: usize, n_books: usize, readings: &[Reading]) -> (Vec<Vec<BookId>>, Vec<u32>) {
        let mut user_index = vec![Vec::new(); n_users];
        let mut book_counts = vec![0u32; n_books];
        for r in readings {
            user_index[r.user.index()].push(r.book);
            book_counts[r.book.index()] += 1;
        }
        for books in &mut user_index {
            books.sort_unstable();
        }
        (user_index, book_counts)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_books(&self) -> usize {
        self.n_books
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn readings(&self) -> &[Reading] {
        &self.readings
    }

    /// Readings of one user, sorted by book.
    pub fn user_readings(&self, user: UserId) -> &[Reading] {
        let start = self.readings.partition_point(|r| r.user < user);
        let end = self.readings.partition_point(|r| r.user <= user);
        &self.readings[start..end]
    }

    /// Sorted books read by `user`. Empty for users without readings.
    pub fn user_books(&self, user: UserId) -> &[BookId] {
        self.user_index
            .get(user.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn has_read(&self, user: UserId, book: BookId) -> bool {
        self.user_books(user).binary_search(&book).is_ok()
    }

    pub fn book_count(&self, book: BookId) -> u32 {
        self.book_counts.get(book.index()).copied().unwrap_or(0)
    }

    pub fn book_counts(&self) -> &[u32] {
        &self.book_counts
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.n_users as u32).map(UserId)
    }

    /// Keeps readings matching `keep`; dimensions are unchanged.
    pub fn filter(&self, mut keep: impl FnMut(&Reading) -> bool) -> Self {
        Self::from_readings(
            self.n_users,
            self.n_books,
            self.readings.iter().copied().filter(|r| keep(r)),
        )
    }

    /// Union of two tables over the same dimensions.
    pub fn union(&self, other: &Self) -> Self {
        assert_eq!((self.n_users, self.n_books), (other.n_users, other.n_books));
        Self::from_readings(
            self.n_users,
            self.n_books,
            self.readings.iter().chain(other.readings.iter()).copied(),
        )
    }

    /// Rebuilds the indices from the readings and compares them with the stored ones.
    pub fn is_consistent(&self) -> bool {
        let (users, books) = Self::index(self.n_users, self.n_books, &self.readings);
        let total: usize = self.user_index.iter().map(Vec::len).sum();
        users == self.user_index && books == self.book_counts && total == self.readings.len()
    }
}

/// Finalized books, indexed by dense [`BookId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    books: Vec<Book>,
    ids: Interner,
}

impl Catalog {
    /// Builds a catalog from books in index order; book `i` gets `BookId(i)`.
    pub fn new(books: impl IntoIterator<Item = Book>) -> Result<Self, DomainError> {
        let mut ids = Interner::new();
        let mut out = Vec::new();
        for mut book in books {
            let idx = ids.intern(&book.external_id)?;
            if (idx as usize) < out.len() {
                // repeated external id: keep the first occurrence
                continue;
            }
            book.id = BookId(idx);
            out.push(book);
        }
        Ok(Self { books: out, ids })
    }

    pub fn len(&self) -> usize {
        self.books.len()
    }

    pub fn is_empty(&self) -> bool {
        self.books.is_empty()
    }

    pub fn books(&self) -> &[Book] {
        &self.books
    }

    pub fn book(&self, id: BookId) -> Option<&Book> {
        self.books.get(id.index())
    }

    pub fn lookup(&self, external_id: &str) -> Option<BookId> {
        self.ids.get(external_id).map(BookId)
    }

    pub fn ids(&self) -> impl Iterator<Item = BookId> {
        (0..self.books.len() as u32).map(BookId)
    }

    pub fn books_mut(&mut self) -> &mut [Book] {
        &mut self.books
    }
}

/// Catalog, users and readings of a finalized dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub users: Interner,
    pub readings: ReadingsTable,
}

impl Dataset {
    /// Source of a user's readings. Users are namespaced by source so this is
    /// the source of any one of their readings.
    pub fn user_source(&self, user: UserId) -> Option<Source> {
        user_source(&self.readings, user)
    }
}

pub fn user_source(readings: &ReadingsTable, user: UserId) -> Option<Source> {
    readings.user_readings(user).first().map(|r| r.source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn intern_allocates_sequentially() {
        let mut interner = Interner::new();
        assert_eq!(interner.intern("bct:7"), Ok(0));
        assert_eq!(interner.intern("bct:7"), Ok(0));
        assert_eq!(interner.intern("anobii:7"), Ok(1));
        assert_eq!(interner.external(1), Some("anobii:7"));
        assert_eq!(interner.len(), 2);
    }

    #[test]
    fn intern_rejects_empty() {
        assert_eq!(Interner::new().intern(""), Err(DomainError::InvalidId));
    }

    #[test]
    fn duplicate_readings_collapse_to_earliest_date() {
        let d1 = NaiveDate::from_ymd_opt(2015, 3, 2);
        let d0 = NaiveDate::from_ymd_opt(2014, 1, 1);
        let table = ReadingsTable::from_readings(
            1,
            2,
            vec![
                Reading::new(UserId(0), BookId(1), d1, Source::BctLoan),
                Reading::new(UserId(0), BookId(1), d0, Source::BctLoan),
                Reading::new(UserId(0), BookId(1), None, Source::BctLoan),
            ],
        );
        assert_eq!(table.len(), 1);
        assert_eq!(table.readings()[0].date, d0);
        assert!(table.is_consistent());
    }

    #[test]
    fn genre_invariants() {
        let mut book = Book::new(BookId(0), "bct:1", "x");
        book.genres = vec![GenreShare::new("A", 0.7), GenreShare::new("B", 0.3)];
        assert!(book.genres_valid());
        book.genres.reverse();
        assert!(!book.genres_valid());
    }

    proptest! {
        #[test]
        fn interning_round_trips(ids in proptest::collection::vec("[a-z]{1,4}:[0-9]{1,3}", 0..50)) {
            let mut interner = Interner::new();
            for id in &ids {
                let idx = interner.intern(id).unwrap();
                prop_assert_eq!(interner.external(idx), Some(id.as_str()));
                prop_assert_eq!(interner.get(id), Some(idx));
            }
            let distinct: std::collections::HashSet<_> = ids.iter().collect();
            prop_assert_eq!(interner.len(), distinct.len());
        }

        #[test]
        fn table_dedups_and_stays_consistent(pairs in proptest::collection::vec((0u32..5, 0u32..7), 0..60)) {
            let readings: Vec<_> = pairs
                .iter()
                .map(|&(u, b)| Reading::new(UserId(u), BookId(b), None, Source::BctLoan))
                .collect();
            let table = ReadingsTable::from_readings(5, 7, readings.clone());
            let again = ReadingsTable::from_readings(5, 7, readings.into_iter().chain(table.readings().iter().copied()));
            prop_assert_eq!(table.len(), again.len());
            prop_assert!(table.is_consistent());
            let distinct: std::collections::HashSet<_> = pairs.iter().collect();
            prop_assert_eq!(table.len(), distinct.len());
        }
    }
}
