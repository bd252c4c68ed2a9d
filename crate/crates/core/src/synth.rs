//! Synthetic source tables with planted reading tastes.
//!
//! Books are laid out in contiguous genre blocks and each author writes a run
//! of consecutive books inside one genre. Every user has a genre mixture
//! `softmax(sharpness · z)` with `z ~ N(0, 1)` per genre; a reading picks a
//! genre from the mixture and then an unread book of that genre with
//! Zipf-like popularity. With `author_driven > 0` heavier readers instead
//! take a share of their readings uniformly from a few favourite authors,
//! growing with the logarithm of their reading count up to `author_driven`
//! for the heaviest.
//!
//! The output has the same shape as the real BCT and Anobii exports, so it
//! goes through [`crate::ingest`] unchanged.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{MergePolicy, Schema};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Distribution of the number of readings per user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountLaw {
    Uniform,
    /// Uniform in log space: many light readers, few heavy ones.
    LogUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub users: usize,
    pub books: usize,
    pub genres: usize,
    pub books_per_author: usize,
    /// Inclusive range of readings per user.
    pub min_readings: usize,
    pub max_readings: usize,
    pub count_law: CountLaw,
    /// Inverse temperature of the genre mixture; `inf` gives one genre per user.
    pub sharpness: f64,
    /// Favourite-author share for the heaviest readers, in `[0, 1]`.
    pub author_driven: f64,
    /// Fraction of users whose readings come from Anobii ratings.
    pub anobii_share: f64,
    /// Exponent of the within-genre popularity law.
    pub popularity_skew: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            users: 1000,
            books: 500,
            genres: 10,
            books_per_author: 5,
            min_readings: 40,
            max_readings: 40,
            count_law: CountLaw::Uniform,
            sharpness: 3.0,
            author_driven: 0.0,
            anobii_share: 0.2,
            popularity_skew: 0.8,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.users == 0 || self.books == 0 || self.genres == 0 || self.books_per_author == 0 {
            return bad("sizes must be positive".into());
        }
        if self.genres > self.books {
            return bad(format!("{} genres for {} books", self.genres, self.books));
        }
        if self.min_readings == 0 || self.min_readings > self.max_readings {
            return bad(format!(
                "reading range {}..={} is empty or starts at 0",
                self.min_readings, self.max_readings
            ));
        }
        if self.max_readings > self.books {
            return bad(format!(
                "{} readings per user exceed {} books",
                self.max_readings, self.books
            ));
        }
        if self.sharpness.is_nan() || self.sharpness < 0.0 {
            return bad(format!("sharpness {} must be >= 0", self.sharpness));
        }
        for (name, v) in [("author_driven", self.author_driven), ("anobii_share", self.anobii_share)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !self.popularity_skew.is_finite() || self.popularity_skew < 0.0 {
            return bad(format!("popularity_skew {} must be >= 0", self.popularity_skew));
        }
        Ok(())
    }

    /// Ingest thresholds that keep every generated user and book.
    pub fn merge_policy(&self) -> MergePolicy {
        MergePolicy {
            min_user_readings: self.min_readings.min(2),
            min_book_readings: 1,
            ..MergePolicy::default()
        }
    }
}

const GENRE_NAMES: [&str; 12] = [
    "Giallo",
    "Fantasy",
    "Storico",
    "Rosa",
    "Fantascienza",
    "Horror",
    "Avventura",
    "Biografia",
    "Saggistica",
    "Umorismo",
    "Poesia",
    "Thriller",
];

const SYLLABLES: [&str; 20] = [
    "ba", "ce", "di", "fo", "gu", "la", "me", "ni", "po", "ru", "sa", "te", "vi", "zo", "ca",
    "de", "fi", "go", "lu", "ma",
];

const TITLE_WORDS: [&str; 40] = [
    "notte", "mare", "vento", "casa", "fiume", "luna", "strada", "giardino", "segreto", "ombra",
    "sole", "porta", "silenzio", "tempo", "citta", "isola", "fuoco", "neve", "voce", "specchio",
    "lettera", "viaggio", "memoria", "ponte", "sogno", "torre", "bosco", "pioggia", "stella",
    "finestra", "inverno", "estate", "collina", "lago", "nebbia", "sentiero", "campana", "cielo",
    "pietra", "radice",
];

pub fn genre_name(g: usize) -> String {
    let base = GENRE_NAMES[g % GENRE_NAMES.len()];
    match g / GENRE_NAMES.len() {
        0 => base.to_owned(),
        n => format!("{base} {}", syllable_word(n, 2)),
    }
}

fn syllable_word(mut n: usize, len: usize) -> String {
    let mut s = String::new();
    for _ in 0..len {
        s.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    s
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

/// Unique two-token name; no token is shared with another author.
pub fn author_name(a: usize) -> String {
    format!(
        "{} {}",
        capitalize(&syllable_word(a, 3)),
        capitalize(&syllable_word(a, 4))
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBook {
    pub id: String,
    pub anobii_id: String,
    pub title: String,
    pub author: usize,
    pub genre: usize,
    /// Unnormalized popularity weight inside its genre.
    pub popularity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUser {
    pub id: String,
    pub anobii: bool,
    pub mixture: Vec<f64>,
    pub author_share: f64,
    pub favourite_authors: Vec<usize>,
    /// Books read, in reading order.
    pub readings: Vec<usize>,
    pub dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub books: Vec<SynthBook>,
    pub users: Vec<SynthUser>,
}

fn softmax(z: &[f64], sharpness: f64) -> Vec<f64> {
    if sharpness.is_infinite() {
        let best = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        return (0..z.len()).map(|g| if g == best { 1.0 } else { 0.0 }).collect();
    }
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| ((x - m) * sharpness).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn pick_weighted(weights: impl Iterator<Item = f64> + Clone, rng: &mut ChaCha8Rng) -> Option<usize> {
    let total: f64 = weights.clone().sum();
    if total <= 0.0 {
        return None;
    }
    let mut x = rng.random::<f64>() * total;
    let mut last = None;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = Some(i);
            if x < w {
                return Some(i);
            }
            x -= w;
        }
    }
    last
}

/// Deterministic generation; the same spec always gives the same data.
pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let genre_of = |b: usize| b * spec.genres / spec.books;
    let mut books = Vec::with_capacity(spec.books);
    let mut genre_books: Vec<Vec<usize>> = vec![Vec::new(); spec.genres];
    let mut author = 0;
    let mut titles = BTreeSet::new();
    for b in 0..spec.books {
        let g = genre_of(b);
        let rank = genre_books[g].len();
        if b > 0 && (genre_of(b - 1) != g || rank.is_multiple_of(spec.books_per_author)) {
            author += 1;
        }
        let title = loop {
            let words: Vec<&str> = TITLE_WORDS.choose_multiple(&mut rng, 3).copied().collect();
            let t = capitalize(&words.join(" "));
            if titles.insert((t.clone(), author)) {
                break t;
            }
        };
        genre_books[g].push(b);
        books.push(SynthBook {
            id: format!("B{b:05}"),
            anobii_id: format!("A{b:05}"),
            title,
            author,
            genre: g,
            popularity: 1.0 / ((rank + 1) as f64).powf(spec.popularity_skew),
        });
    }
    let n_authors = author + 1;
    let mut author_books: Vec<Vec<usize>> = vec![Vec::new(); n_authors];
    for (b, book) in books.iter().enumerate() {
        author_books[book.author].push(b);
    }

    let span = spec.max_readings - spec.min_readings;
    let start = NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date");
    let mut users = Vec::with_capacity(spec.users);
    for u in 0..spec.users {
        let anobii = rng.random::<f64>() < spec.anobii_share;
        let z: Vec<f64> = (0..spec.genres).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mixture = softmax(&z, spec.sharpness);
        let n = match spec.count_law {
            CountLaw::Uniform => rng.random_range(spec.min_readings..=spec.max_readings),
            CountLaw::LogUniform => {
                let (lo, hi) = ((spec.min_readings as f64).ln(), ((spec.max_readings + 1) as f64).ln());
                let n = rng.random_range(lo..=hi).exp().floor() as usize;
                n.clamp(spec.min_readings, spec.max_readings)
            }
        };
        let ramp = if span == 0 {
            1.0
        } else {
            (n as f64 / spec.min_readings as f64).ln()
                / (spec.max_readings as f64 / spec.min_readings as f64).ln()
        };
        let author_share = spec.author_driven * ramp;
        let n_fav = if author_share > 0.0 {
            ((n as f64 * author_share) / spec.books_per_author as f64).ceil() as usize + 1
        } else {
            0
        };
        let mut all_authors: Vec<usize> = (0..n_authors).collect();
        all_authors.shuffle(&mut rng);
        let mut favourite_authors: Vec<usize> = all_authors.into_iter().take(n_fav).collect();
        favourite_authors.sort_unstable();

        let mut read = vec![false; spec.books];
        let mut readings = Vec::with_capacity(n);
        while readings.len() < n {
            let from_author = author_share > 0.0 && rng.random::<f64>() < author_share;
            let mut choice = None;
            if from_author {
                let pool: Vec<usize> = favourite_authors
                    .iter()
                    .flat_map(|&a| author_books[a].iter().copied())
                    .filter(|&b| !read[b])
                    .collect();
                choice = pool.choose(&mut rng).copied();
            }
            if choice.is_none() {
                let open = |g: usize| genre_books[g].iter().any(|&b| !read[b]);
                let g = pick_weighted(
                    mixture.iter().enumerate().map(|(g, &w)| if open(g) { w } else { 0.0 }),
                    &mut rng,
                )
                .or_else(|| (0..spec.genres).find(|&g| open(g)))
                .expect("fewer readings than books");
                let pool = &genre_books[g];
                let i = pick_weighted(
                    pool.iter()
                        .map(|&b| if read[b] { 0.0 } else { books[b].popularity }),
                    &mut rng,
                )
                .expect("open genre has an unread book");
                choice = Some(pool[i]);
            }
            let b = choice.expect("a book was chosen");
            read[b] = true;
            readings.push(b);
        }
        let mut days: Vec<i64> = (0..n).map(|_| rng.random_range(0..4 * 365)).collect();
        days.sort_unstable();
        users.push(SynthUser {
            id: format!("U{u:05}"),
            anobii,
            mixture,
            author_share,
            favourite_authors,
            readings,
            dates: days.into_iter().map(|d| start + Duration::days(d)).collect(),
        });
    }
    Ok(SynthData {
        spec: spec.clone(),
        books,
        users,
    })
}

fn csv_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn table<W: Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_io)?;
    for r in rows {
        w.write_record(&r).map_err(csv_io)?;
    }
    w.flush()
}

/// One generated file: its name and contents.
pub type SynthFile = (&'static str, Vec<u8>);

impl SynthData {
    pub fn plot(&self, b: usize) -> String {
        let book = &self.books[b];
        format!(
            "Un romanzo {} di {}.",
            genre_name(book.genre).to_lowercase(),
            author_name(book.author)
        )
    }

    /// Source tables plus `truth_books.csv` and `truth_users.csv`, in memory.
    pub fn files(&self) -> io::Result<Vec<SynthFile>> {
        let mut files = Vec::new();
        let mut buf = Vec::new();
        table(
            &mut buf,
            Schema::BctBooks.columns(),
            self.books.iter().map(|b| {
                vec![
                    b.id.clone(),
                    b.title.clone(),
                    author_name(b.author),
                    "monograph".into(),
                    "it".into(),
                ]
            }),
        )?;
        files.push(("bct_books.csv", std::mem::take(&mut buf)));
        table(
            &mut buf,
            Schema::AnobiiItems.columns(),
            self.books.iter().enumerate().map(|(i, b)| {
                vec![
                    b.anobii_id.clone(),
                    b.title.clone(),
                    author_name(b.author),
                    "it".into(),
                    self.plot(i),
                    genre_name(b.genre).to_lowercase(),
                ]
            }),
        )?;
        files.push(("anobii_items.csv", std::mem::take(&mut buf)));
        // the own genre dominates; a weaker neighbouring genre keeps the
        // vote distributions from being degenerate
        let g = self.spec.genres;
        table(
            &mut buf,
            Schema::AnobiiGenreVotes.columns(),
            self.books.iter().flat_map(|b| {
                let mut rows = vec![vec![b.anobii_id.clone(), genre_name(b.genre), "8".into()]];
                if g > 1 {
                    rows.push(vec![b.anobii_id.clone(), genre_name((b.genre + 1) % g), "2".into()]);
                }
                rows
            }),
        )?;
        files.push(("anobii_genre_votes.csv", std::mem::take(&mut buf)));
        let readings = |anobii: bool| {
            self.users
                .iter()
                .filter(move |u| u.anobii == anobii)
                .flat_map(|u| u.readings.iter().zip(&u.dates).map(move |(&b, d)| (u, b, d)))
        };
        table(
            &mut buf,
            Schema::BctLoans.columns(),
            readings(false).map(|(u, b, d)| vec![u.id.clone(), self.books[b].id.clone(), d.to_string()]),
        )?;
        files.push(("bct_loans.csv", std::mem::take(&mut buf)));
        table(
            &mut buf,
            Schema::AnobiiRatings.columns(),
            readings(true).map(|(u, b, d)| {
                vec![
                    u.id.clone(),
                    self.books[b].anobii_id.clone(),
                    "4".into(),
                    d.to_string(),
                ]
            }),
        )?;
        files.push(("anobii_ratings.csv", std::mem::take(&mut buf)));
        table(
            &mut buf,
            &["book_id", "author", "genre"],
            self.books
                .iter()
                .map(|b| vec![b.id.clone(), author_name(b.author), genre_name(b.genre)]),
        )?;
        files.push(("truth_books.csv", std::mem::take(&mut buf)));
        table(
            &mut buf,
            &["user_id", "genre", "weight", "author_share"],
            self.users.iter().flat_map(|u| {
                u.mixture.iter().enumerate().map(|(g, w)| {
                    vec![u.id.clone(), genre_name(g), w.to_string(), u.author_share.to_string()]
                })
            }),
        )?;
        files.push(("truth_users.csv", std::mem::take(&mut buf)));
        Ok(files)
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        let io_err = |path: &Path, source| SynthError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, bytes) in self.files().map_err(|e| io_err(dir, e))? {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    /// Share of each genre in one user's readings.
    pub fn genre_shares(&self, user: usize) -> Vec<f64> {
        let u = &self.users[user];
        let mut shares = vec![0.0; self.spec.genres];
        for &b in &u.readings {
            shares[self.books[b].genre] += 1.0;
        }
        shares.iter().map(|c| c / u.readings.len() as f64).collect()
    }
}
