//! Source-table parsing, filtering, cross-source book matching and the merge
//! into a single catalog and readings table.
//!
//! The library network (BCT) contributes loans and bibliographic records; the
//! social-reading platform (Anobii) contributes ratings, plots, keywords and
//! genre votes. External ids are namespaced by source (`bct:`, `anobii:`) so
//! the two id spaces never collide.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::domain::{
    Book, BookId, Catalog, Dataset, DomainError, GenreShare, Interner, ItemType, Reading,
    ReadingsTable, Source, UserId,
};
use crate::genres::{self, GenreConfig, GenreError, GenreVoteMatrix};

pub const BCT_PREFIX: &str = "bct:";
pub const ANOBII_PREFIX: &str = "anobii:";

/// Fraction of malformed rows above which a table is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: header {found:?} does not match {expected:?}")]
    Schema {
        path: PathBuf,
        expected: Vec<&'static str>,
        found: Vec<String>,
    },
    #[error("{path}: {malformed} of {total} rows are malformed")]
    CorruptInput {
        path: PathBuf,
        malformed: usize,
        total: usize,
    },
    #[error("link file references unknown or conflicting ids: {}", .0.join(", "))]
    LinkError(Vec<String>),
    #[error("invalid merge policy: {0}")]
    Policy(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Genre(#[from] GenreError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    BctBooks,
    BctLoans,
    AnobiiItems,
    AnobiiRatings,
    AnobiiGenreVotes,
    Links,
}

impl Schema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Schema::BctBooks => &["book_id", "title", "authors", "item_type", "language"],
            Schema::BctLoans => &["user_id", "book_id", "date"],
            Schema::AnobiiItems => &["item_id", "title", "authors", "language", "plot", "keywords"],
            Schema::AnobiiRatings => &["user_id", "item_id", "rating", "date"],
            Schema::AnobiiGenreVotes => &["item_id", "genre", "votes"],
            Schema::Links => &["bct_book_id", "anobii_item_id"],
        }
    }
}

/// One well-formed row of a source table.
#[derive(Debug, Clone, PartialEq)]
pub enum RawRow {
    BctBook {
        book_id: String,
        title: String,
        authors: Vec<String>,
        item_type: String,
        language: String,
    },
    Loan {
        user: String,
        book: String,
        date: Option<NaiveDate>,
    },
    AnobiiItem {
        item_id: String,
        title: String,
        authors: Vec<String>,
        language: String,
        plot: Option<String>,
        keywords: Vec<String>,
    },
    Rating {
        user: String,
        item: String,
        rating: u8,
        date: Option<NaiveDate>,
    },
    GenreVote {
        item: String,
        genre: String,
        votes: u64,
    },
    Link {
        bct: String,
        anobii: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub rows: Vec<RawRow>,
    /// `(line number, reason)` of every rejected row.
    pub malformed: Vec<(u64, String)>,
}

impl ParsedTable {
    pub fn total(&self) -> usize {
        self.rows.len() + self.malformed.len()
    }
}

pub fn parse_table(path: &Path, schema: Schema) -> Result<ParsedTable, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_reader(file, schema, path)
}

/// Parses CSV from any reader; `origin` is only used in error messages.
pub fn parse_reader<R: Read>(
    reader: R,
    schema: Schema,
    origin: &Path,
) -> Result<ParsedTable, IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: origin.to_owned(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_owned())
        .collect();
    let expected = schema.columns();
    if header != expected {
        return Err(IngestError::Schema {
            path: origin.to_owned(),
            expected: expected.to_vec(),
            found: header,
        });
    }
    let mut table = ParsedTable {
        rows: Vec::new(),
        malformed: Vec::new(),
    };
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                table.malformed.push((line, e.to_string()));
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != expected.len() {
            table.malformed.push((
                line,
                format!("expected {} fields, found {}", expected.len(), record.len()),
            ));
            continue;
        }
        let fields: Vec<&str> = record.iter().map(str::trim).collect();
        match parse_row(schema, &fields) {
            Ok(row) => table.rows.push(row),
            Err(reason) => table.malformed.push((line, reason)),
        }
    }
    let total = table.total();
    if total > 0 && table.malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(IngestError::CorruptInput {
            path: origin.to_owned(),
            malformed: table.malformed.len(),
            total,
        });
    }
    if !table.malformed.is_empty() {
        log::warn!(
            "{}: {} malformed rows skipped",
            origin.display(),
            table.malformed.len()
        );
    }
    Ok(table)
}

fn parse_date(raw: &str) -> Result<Option<NaiveDate>, String> {
    if raw.is_empty() {
        return Ok(None);
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(Some)
        .map_err(|_| format!("unparseable date {raw:?}"))
}

fn non_empty(raw: &str, what: &str) -> Result<String, String> {
    if raw.is_empty() {
        Err(format!("empty {what}"))
    } else {
        Ok(raw.to_owned())
    }
}

fn split_list(raw: &str) -> Vec<String> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_row(schema: Schema, f: &[&str]) -> Result<RawRow, String> {
    Ok(match schema {
        Schema::BctBooks => RawRow::BctBook {
            book_id: non_empty(f[0], "book_id")?,
            title: f[1].to_owned(),
            authors: split_list(f[2]),
            item_type: f[3].to_owned(),
            language: f[4].to_lowercase(),
        },
        Schema::BctLoans => RawRow::Loan {
            user: non_empty(f[0], "user_id")?,
            book: non_empty(f[1], "book_id")?,
            date: parse_date(f[2])?,
        },
        Schema::AnobiiItems => RawRow::AnobiiItem {
            item_id: non_empty(f[0], "item_id")?,
            title: f[1].to_owned(),
            authors: split_list(f[2]),
            language: f[3].to_lowercase(),
            plot: (!f[4].is_empty()).then(|| f[4].to_owned()),
            keywords: split_list(f[5]),
        },
        Schema::AnobiiRatings => {
            let rating: u8 = f[2]
                .parse()
                .map_err(|_| format!("bad rating {:?}", f[2]))?;
            if !(1..=5).contains(&rating) {
                return Err(format!("rating {rating} outside 1..=5"));
            }
            RawRow::Rating {
                user: non_empty(f[0], "user_id")?,
                item: non_empty(f[1], "item_id")?,
                rating,
                date: parse_date(f[3])?,
            }
        }
        Schema::AnobiiGenreVotes => RawRow::GenreVote {
            item: non_empty(f[0], "item_id")?,
            genre: non_empty(f[1], "genre")?,
            votes: f[2].parse().map_err(|_| format!("bad votes {:?}", f[2]))?,
        },
        Schema::Links => RawRow::Link {
            bct: namespaced(&non_empty(f[0], "bct_book_id")?, BCT_PREFIX),
            anobii: namespaced(&non_empty(f[1], "anobii_item_id")?, ANOBII_PREFIX),
        },
    })
}

/// Adds the source prefix unless it is already present.
pub fn namespaced(raw: &str, prefix: &str) -> String {
    if raw.starts_with(prefix) {
        raw.to_owned()
    } else {
        format!("{prefix}{raw}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergePolicy {
    pub min_rating: u8,
    pub min_user_readings: usize,
    pub min_book_readings: usize,
    pub languages: BTreeSet<String>,
    pub item_types: BTreeSet<String>,
    pub link_file: Option<PathBuf>,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            min_rating: 3,
            min_user_readings: 10,
            min_book_readings: 100,
            languages: BTreeSet::from(["it".to_owned()]),
            item_types: BTreeSet::from(["monograph".to_owned(), "manuscript".to_owned()]),
            link_file: None,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(1..=5).contains(&self.min_rating) {
            return Err(IngestError::Policy(format!(
                "min_rating {} outside 1..=5",
                self.min_rating
            )));
        }
        Ok(())
    }

    fn keeps(&self, book: &Book) -> bool {
        self.item_types.contains(book.item_type.as_str()) && self.languages.contains(&book.language)
    }
}

/// BCT book rows as catalog entries; `id` is the row's position.
pub fn bct_books(rows: &[RawRow]) -> Vec<Book> {
    rows.iter()
        .filter_map(|r| match r {
            RawRow::BctBook {
                book_id,
                title,
                authors,
                item_type,
                language,
            } => Some((book_id, title, authors, item_type, language)),
            _ => None,
        })
        .enumerate()
        .map(|(i, (id, title, authors, item_type, language))| {
            let mut b = Book::new(BookId(i as u32), namespaced(id, BCT_PREFIX), title.clone());
            b.authors = authors.clone();
            b.item_type = ItemType::parse(item_type);
            b.language = language.clone();
            b
        })
        .collect()
}

/// Anobii item rows as catalog entries. Items carry no type column and are
/// treated as monographs.
pub fn anobii_items(rows: &[RawRow]) -> Vec<Book> {
    rows.iter()
        .filter_map(|r| match r {
            RawRow::AnobiiItem {
                item_id,
                title,
                authors,
                language,
                plot,
                keywords,
            } => Some((item_id, title, authors, language, plot, keywords)),
            _ => None,
        })
        .enumerate()
        .map(|(i, (id, title, authors, language, plot, keywords))| {
            let mut b = Book::new(BookId(i as u32), namespaced(id, ANOBII_PREFIX), title.clone());
            b.authors = authors.clone();
            b.language = language.clone();
            b.plot = plot.clone();
            b.keywords = keywords.clone();
            b
        })
        .collect()
}

/// Keeps books whose item type and language are both allowed; ids are
/// renumbered to stay dense.
pub fn filter_catalog(books: Vec<Book>, policy: &MergePolicy) -> Vec<Book> {
    books
        .into_iter()
        .filter(|b| policy.keeps(b))
        .enumerate()
        .map(|(i, mut b)| {
            b.id = BookId(i as u32);
            b
        })
        .collect()
}

/// Lowercase, diacritic-free, punctuation-free form with collapsed whitespace.
pub fn normalize_text(raw: &str) -> String {
    let cleaned: String = raw
        .nfd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `title|first author`, both normalized. `None` when the title is blank.
pub fn match_key(book: &Book) -> Option<String> {
    let title = normalize_text(&book.title);
    if title.is_empty() {
        return None;
    }
    let author = book
        .authors
        .first()
        .map(|a| normalize_text(a))
        .unwrap_or_default();
    Some(format!("{title}|{author}"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    /// BCT book id → Anobii item id, injective.
    pub pairs: BTreeMap<BookId, BookId>,
    /// Keys with more than one candidate on either side.
    pub ambiguous_keys: Vec<String>,
    pub linked: usize,
}

/// Matches BCT books to Anobii items: explicit links first, then exact
/// normalized `title|first author` keys, skipping keys that are ambiguous on
/// either side.
pub fn match_books(
    bct: &[Book],
    anobii: &[Book],
    links: &[(String, String)],
) -> Result<Matching, IngestError> {
    let bct_ids: HashMap<&str, BookId> = bct.iter().map(|b| (b.external_id.as_str(), b.id)).collect();
    let anobii_ids: HashMap<&str, BookId> =
        anobii.iter().map(|b| (b.external_id.as_str(), b.id)).collect();

    let mut matching = Matching::default();
    let mut used_anobii: BTreeSet<BookId> = BTreeSet::new();
    let mut offenders = Vec::new();
    for (b, a) in links {
        match (bct_ids.get(b.as_str()), anobii_ids.get(a.as_str())) {
            (Some(&bi), Some(&ai)) => {
                if matching.pairs.contains_key(&bi) || !used_anobii.insert(ai) {
                    offenders.push(format!("{b}->{a} (duplicate)"));
                } else {
                    matching.pairs.insert(bi, ai);
                }
            }
            (bi, ai) => {
                if bi.is_none() {
                    offenders.push(b.clone());
                }
                if ai.is_none() {
                    offenders.push(a.clone());
                }
            }
        }
    }
    if !offenders.is_empty() {
        return Err(IngestError::LinkError(offenders));
    }
    matching.linked = matching.pairs.len();

    let mut by_key: BTreeMap<String, (Vec<BookId>, Vec<BookId>)> = BTreeMap::new();
    for b in bct.iter().filter(|b| !matching.pairs.contains_key(&b.id)) {
        if let Some(k) = match_key(b) {
            by_key.entry(k).or_default().0.push(b.id);
        }
    }
    for a in anobii.iter().filter(|a| !used_anobii.contains(&a.id)) {
        if let Some(k) = match_key(a) {
            by_key.entry(k).or_default().1.push(a.id);
        }
    }
    for (key, (bs, as_)) in by_key {
        match (bs.as_slice(), as_.as_slice()) {
            ([b], [a]) => {
                matching.pairs.insert(*b, *a);
            }
            (bs, as_) if !bs.is_empty() && !as_.is_empty() => {
                matching.ambiguous_keys.push(key);
            }
            _ => {}
        }
    }
    if !matching.ambiguous_keys.is_empty() {
        log::warn!(
            "{} ambiguous title/author keys left unmatched",
            matching.ambiguous_keys.len()
        );
    }
    Ok(matching)
}

/// Counts at every stage of the merge.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub bct_books_raw: usize,
    pub bct_books_kept: usize,
    pub anobii_items_raw: usize,
    pub anobii_items_kept: usize,
    pub matched_books: usize,
    pub linked_books: usize,
    pub ambiguous_keys: usize,
    pub loans_rows: usize,
    pub loans_malformed: usize,
    pub ratings_rows: usize,
    pub ratings_malformed: usize,
    pub ratings_below_min: usize,
    pub readings_on_matched: usize,
    pub books_after_book_filter: usize,
    pub users_after_user_filter: usize,
    pub bct_users: usize,
    pub anobii_users: usize,
    pub readings_final: usize,
}

impl IngestSummary {
    pub fn rows(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("bct_books_raw", self.bct_books_raw),
            ("bct_books_kept", self.bct_books_kept),
            ("anobii_items_raw", self.anobii_items_raw),
            ("anobii_items_kept", self.anobii_items_kept),
            ("matched_books", self.matched_books),
            ("linked_books", self.linked_books),
            ("ambiguous_keys", self.ambiguous_keys),
            ("loans_rows", self.loans_rows),
            ("loans_malformed", self.loans_malformed),
            ("ratings_rows", self.ratings_rows),
            ("ratings_malformed", self.ratings_malformed),
            ("ratings_below_min", self.ratings_below_min),
            ("readings_on_matched", self.readings_on_matched),
            ("books_after_book_filter", self.books_after_book_filter),
            ("users_after_user_filter", self.users_after_user_filter),
            ("bct_users", self.bct_users),
            ("anobii_users", self.anobii_users),
            ("readings_final", self.readings_final),
        ]
    }
}

/// Joins loans and ratings on matched books, applies the reading-count
/// thresholds (books first, then users, single pass) and densifies ids.
///
/// Merged books keep title, authors, type and language from BCT and take
/// plot, keywords and genres from Anobii. Books and users are numbered in
/// lexicographic order of their external ids.
pub fn build_readings(
    loans: &[RawRow],
    ratings: &[RawRow],
    bct: &[Book],
    anobii: &[Book],
    matching: &Matching,
    policy: &MergePolicy,
) -> (Dataset, IngestSummary) {
    let mut summary = IngestSummary {
        matched_books: matching.pairs.len(),
        linked_books: matching.linked,
        ambiguous_keys: matching.ambiguous_keys.len(),
        ..IngestSummary::default()
    };

    let mut merged: BTreeMap<&str, Book> = BTreeMap::new();
    let mut anobii_to_bct: HashMap<&str, &str> = HashMap::new();
    for (&bi, &ai) in &matching.pairs {
        let (b, a) = (&bct[bi.index()], &anobii[ai.index()]);
        let mut book = b.clone();
        book.plot = a.plot.clone();
        book.keywords = a.keywords.clone();
        book.genres = a.genres.clone();
        merged.insert(b.external_id.as_str(), book);
        anobii_to_bct.insert(a.external_id.as_str(), b.external_id.as_str());
    }

    // (user, book) -> (earliest date, source)
    let mut pairs: BTreeMap<(String, String), (Option<NaiveDate>, Source)> = BTreeMap::new();
    let mut add = |user: String, book: &str, date: Option<NaiveDate>, source: Source| {
        pairs
            .entry((user, book.to_owned()))
            .and_modify(|e| {
                e.0 = match (e.0, date) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                }
            })
            .or_insert((date, source));
    };
    for row in loans {
        if let RawRow::Loan { user, book, date } = row {
            let book = namespaced(book, BCT_PREFIX);
            if let Some((key, _)) = merged.get_key_value(book.as_str()) {
                add(namespaced(user, BCT_PREFIX), key, *date, Source::BctLoan);
            }
        }
    }
    for row in ratings {
        if let RawRow::Rating {
            user,
            item,
            rating,
            date,
        } = row
        {
            if *rating < policy.min_rating {
                summary.ratings_below_min += 1;
                continue;
            }
            let item = namespaced(item, ANOBII_PREFIX);
            if let Some(&book) = anobii_to_bct.get(item.as_str()) {
                add(namespaced(user, ANOBII_PREFIX), book, *date, Source::AnobiiRating);
            }
        }
    }
    summary.readings_on_matched = pairs.len();

    let mut book_counts: HashMap<&str, usize> = HashMap::new();
    for (_, book) in pairs.keys() {
        *book_counts.entry(book.as_str()).or_insert(0) += 1;
    }
    let kept_books: BTreeSet<&str> = merged
        .keys()
        .copied()
        .filter(|b| book_counts.get(b).copied().unwrap_or(0) >= policy.min_book_readings)
        .collect();
    pairs.retain(|(_, b), _| kept_books.contains(b.as_str()));
    summary.books_after_book_filter = kept_books.len();

    let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (u, _) in pairs.keys() {
        *user_counts.entry(u.as_str()).or_insert(0) += 1;
    }
    let kept_users: BTreeSet<String> = user_counts
        .into_iter()
        .filter(|&(_, c)| c >= policy.min_user_readings)
        .map(|(u, _)| u.to_owned())
        .collect();
    pairs.retain(|(u, _), _| kept_users.contains(u));
    summary.users_after_user_filter = kept_users.len();
    summary.bct_users = kept_users.iter().filter(|u| u.starts_with(BCT_PREFIX)).count();
    summary.anobii_users = kept_users.len() - summary.bct_users;

    let catalog = Catalog::new(kept_books.iter().map(|b| merged[b].clone()))
        .expect("merged books carry non-empty external ids");
    let mut users = Interner::new();
    for u in &kept_users {
        users.intern(u).expect("user ids are non-empty");
    }
    let readings: Vec<Reading> = pairs
        .into_iter()
        .map(|((u, b), (date, source))| {
            Reading::new(
                UserId(users.get(&u).expect("kept user")),
                catalog.lookup(&b).expect("kept book"),
                date,
                source,
            )
        })
        .collect();
    let readings = ReadingsTable::from_readings(users.len(), catalog.len(), readings);
    summary.readings_final = readings.len();
    (
        Dataset {
            catalog,
            users,
            readings,
        },
        summary,
    )
}

/// Locations of the source tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePaths {
    pub bct_books: PathBuf,
    pub bct_loans: PathBuf,
    pub anobii_items: PathBuf,
    pub anobii_ratings: PathBuf,
    pub anobii_genre_votes: PathBuf,
    #[serde(default)]
    pub links: Option<PathBuf>,
}

impl SourcePaths {
    /// Conventional file names inside `dir`; `links.csv` is used when present.
    pub fn in_dir(dir: &Path) -> Self {
        let links = dir.join("links.csv");
        Self {
            bct_books: dir.join("bct_books.csv"),
            bct_loans: dir.join("bct_loans.csv"),
            anobii_items: dir.join("anobii_items.csv"),
            anobii_ratings: dir.join("anobii_ratings.csv"),
            anobii_genre_votes: dir.join("anobii_genre_votes.csv"),
            links: links.exists().then_some(links),
        }
    }
}

/// Full merge: parse every table, clean genres, match and join.
pub fn ingest(
    paths: &SourcePaths,
    policy: &MergePolicy,
    genre_cfg: &GenreConfig,
) -> Result<(Dataset, IngestSummary), IngestError> {
    policy.validate()?;
    genre_cfg.validate()?;
    let books_t = parse_table(&paths.bct_books, Schema::BctBooks)?;
    let loans_t = parse_table(&paths.bct_loans, Schema::BctLoans)?;
    let items_t = parse_table(&paths.anobii_items, Schema::AnobiiItems)?;
    let ratings_t = parse_table(&paths.anobii_ratings, Schema::AnobiiRatings)?;
    let votes_t = parse_table(&paths.anobii_genre_votes, Schema::AnobiiGenreVotes)?;
    let link_path = policy.link_file.as_ref().or(paths.links.as_ref());
    let links: Vec<(String, String)> = match link_path {
        Some(p) => parse_table(p, Schema::Links)?
            .rows
            .into_iter()
            .filter_map(|r| match r {
                RawRow::Link { bct, anobii } => Some((bct, anobii)),
                _ => None,
            })
            .collect(),
        None => Vec::new(),
    };

    let bct_all = bct_books(&books_t.rows);
    let anobii_all = anobii_items(&items_t.rows);
    let (bct_raw, anobii_raw) = (bct_all.len(), anobii_all.len());
    let bct = filter_catalog(bct_all, policy);
    let mut anobii = filter_catalog(anobii_all, policy);

    let index: HashMap<String, BookId> =
        anobii.iter().map(|b| (b.external_id.clone(), b.id)).collect();
    let mut votes = GenreVoteMatrix::new();
    for row in &votes_t.rows {
        if let RawRow::GenreVote { item, genre, votes: v } = row {
            if let Some(&id) = index.get(&namespaced(item, ANOBII_PREFIX)) {
                votes.add(id, genre.clone(), *v);
            }
        }
    }
    let votes = genres::aggregate_genres(&genres::prune_genres(&votes, genre_cfg), genre_cfg);
    for (id, shares) in genres::assign_top4(&votes) {
        anobii[id.index()].genres = shares;
    }

    let matching = match_books(&bct, &anobii, &links)?;
    let (dataset, mut summary) =
        build_readings(&loans_t.rows, &ratings_t.rows, &bct, &anobii, &matching, policy);
    summary.bct_books_raw = bct_raw;
    summary.bct_books_kept = bct.len();
    summary.anobii_items_raw = anobii_raw;
    summary.anobii_items_kept = anobii.len();
    summary.loans_rows = loans_t.rows.len();
    summary.loans_malformed = loans_t.malformed.len();
    summary.ratings_rows = ratings_t.rows.len();
    summary.ratings_malformed = ratings_t.malformed.len();
    Ok((dataset, summary))
}

fn io_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_catalog<W: Write>(catalog: &Catalog, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["book_id", "title", "authors", "item_type", "language", "plot", "keywords"])
        .map_err(io_err)?;
    for b in catalog.books() {
        w.write_record([
            b.external_id.as_str(),
            &b.title,
            &b.authors.join(";"),
            b.item_type.as_str(),
            &b.language,
            b.plot.as_deref().unwrap_or(""),
            &b.keywords.join(";"),
        ])
        .map_err(io_err)?;
    }
    w.flush()
}

pub fn write_genres<W: Write>(catalog: &Catalog, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["book_id", "genre", "probability"]).map_err(io_err)?;
    for b in catalog.books() {
        for g in &b.genres {
            w.write_record([b.external_id.as_str(), &g.genre, &g.probability.to_string()])
                .map_err(io_err)?;
        }
    }
    w.flush()
}

pub fn write_readings<W: Write>(dataset: &Dataset, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "book_id", "date", "source"]).map_err(io_err)?;
    for r in dataset.readings.readings() {
        let date = r.date.map(|d| d.to_string()).unwrap_or_default();
        w.write_record([
            dataset.users.external(r.user.0).unwrap_or(""),
            dataset.catalog.book(r.book).map(|b| b.external_id.as_str()).unwrap_or(""),
            &date,
            r.source.as_str(),
        ])
        .map_err(io_err)?;
    }
    w.flush()
}

fn read_csv(path: &Path, header: &[&'static str]) -> Result<Vec<csv::StringRecord>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let csv_err = |source| IngestError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut rdr = csv::Reader::from_reader(file);
    let found: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if found != header {
        return Err(IngestError::Schema {
            path: path.to_owned(),
            expected: header.to_vec(),
            found,
        });
    }
    rdr.records().collect::<Result<Vec<_>, _>>().map_err(csv_err)
}

/// Loads `catalog.csv`, `genres.csv` and `readings.csv` written by an ingest run.
pub fn load_dataset(dir: &Path) -> Result<Dataset, IngestError> {
    let books = read_csv(
        &dir.join("catalog.csv"),
        &["book_id", "title", "authors", "item_type", "language", "plot", "keywords"],
    )?;
    let mut catalog = Catalog::new(books.iter().map(|r| {
        let mut b = Book::new(BookId(0), &r[0], &r[1]);
        b.authors = split_list(&r[2]);
        b.item_type = ItemType::parse(&r[3]);
        b.language = r[4].to_owned();
        b.plot = (!r[5].is_empty()).then(|| r[5].to_owned());
        b.keywords = split_list(&r[6]);
        b
    }))?;
    let genre_path = dir.join("genres.csv");
    if genre_path.exists() {
        for r in read_csv(&genre_path, &["book_id", "genre", "probability"])? {
            let id = catalog
                .lookup(&r[0])
                .ok_or_else(|| IngestError::Format(format!("genres.csv: unknown book {}", &r[0])))?;
            let p: f64 = r[2]
                .parse()
                .map_err(|_| IngestError::Format(format!("genres.csv: bad probability {:?}", &r[2])))?;
            catalog.books_mut()[id.index()]
                .genres
                .push(GenreShare::new(&r[1], p));
        }
    }
    let rows = read_csv(&dir.join("readings.csv"), &["user_id", "book_id", "date", "source"])?;
    let mut users = Interner::new();
    let mut readings = Vec::with_capacity(rows.len());
    for r in rows {
        let user = UserId(users.intern(&r[0])?);
        let book = catalog
            .lookup(&r[1])
            .ok_or_else(|| IngestError::Format(format!("readings.csv: unknown book {}", &r[1])))?;
        let date = parse_date(&r[2]).map_err(IngestError::Format)?;
        let source = Source::parse(&r[3])
            .ok_or_else(|| IngestError::Format(format!("readings.csv: bad source {:?}", &r[3])))?;
        readings.push(Reading::new(user, book, date, source));
    }
    let readings = ReadingsTable::from_readings(users.len(), catalog.len(), readings);
    Ok(Dataset {
        catalog,
        users,
        readings,
    })
}
