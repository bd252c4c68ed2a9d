//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use bookrec::domain::{BookId, Dataset, Reading, ReadingsTable, Source, UserId};
use bookrec::embed::{EmbeddingStore, FieldSet};
use bookrec::eval::{
    self, collect_cases, cohort_nrr, mean_recommend_seconds, split, SplitMode, SplitSpec,
    UserCase, DEFAULT_COHORT_BINS,
};
use bookrec::genres::GenreConfig;
use bookrec::ingest::{self, SourcePaths};
use bookrec::recsys::{
    bpr_fit, pair_gradient, pair_objective, Bpr, BprParams, ClosestItems, LatentModel, MostRead,
    RandomItems, Recommender,
};
use bookrec::synth::{self, CountLaw, SynthSpec};
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn synth_dataset(spec: &SynthSpec) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    synth::generate(spec).unwrap().write_to(dir.path()).unwrap();
    let (ds, _) = ingest::ingest(
        &SourcePaths::in_dir(dir.path()),
        &spec.merge_policy(),
        &GenreConfig::default(),
    )
    .unwrap();
    ds
}

// ---- brute-force KPI oracle over plain sets ----

struct Oracle {
    urr: f64,
    nrr: f64,
    p: f64,
    r: f64,
    fr: f64,
}

fn oracle(cases: &[(HashSet<u32>, Vec<u32>)], k: usize) -> Oracle {
    let users: Vec<&(HashSet<u32>, Vec<u32>)> = cases.iter().filter(|c| !c.0.is_empty()).collect();
    let n = users.len() as f64;
    let (mut urr, mut nrr, mut p, mut r, mut fr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (test, ranking) in users {
        let recs: HashSet<u32> = ranking.iter().take(k).copied().collect();
        let hits = test.intersection(&recs).count() as f64;
        urr += if hits > 0.0 { 1.0 } else { 0.0 };
        nrr += hits;
        p += if recs.is_empty() { 0.0 } else { hits / recs.len() as f64 };
        r += hits / test.len() as f64;
        fr += (ranking.iter().position(|b| test.contains(b)).unwrap() + 1) as f64;
    }
    Oracle {
        urr: urr / n,
        nrr: nrr / n,
        p: p / n,
        r: r / n,
        fr: fr / n,
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (ReadingsTable, ReadingsTable) {
    let users = rng.random_range(1..=100);
    let books = rng.random_range(10..=200);
    let mut known = Vec::new();
    let mut test = Vec::new();
    for u in 0..users {
        let mut order: Vec<u32> = (0..books).collect();
        order.shuffle(rng);
        let n_known = rng.random_range(1..books as usize / 2);
        let n_test = rng.random_range(0..=5.min(books as usize - n_known));
        for &b in &order[..n_known] {
            known.push(Reading::new(UserId(u), BookId(b), None, Source::BctLoan));
        }
        for &b in &order[n_known..n_known + n_test] {
            test.push(Reading::new(UserId(u), BookId(b), None, Source::BctLoan));
        }
    }
    (
        ReadingsTable::from_readings(users as usize, books as usize, known),
        ReadingsTable::from_readings(users as usize, books as usize, test),
    )
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let (known, test) = random_instance(&mut rng);
        let recs: Vec<Box<dyn Recommender>> = vec![
            Box::new(RandomItems::new(&known, inst)),
            Box::new(MostRead::fit(&known, &known)),
        ];
        for rec in &recs {
            let cases = collect_cases(rec.as_ref(), &test).unwrap();
            if cases.is_empty() {
                continue;
            }
            let plain: Vec<(HashSet<u32>, Vec<u32>)> = cases
                .iter()
                .map(|c| {
                    (
                        c.test.iter().map(|b| b.0).collect(),
                        c.ranking.iter().map(|b| b.0).collect(),
                    )
                })
                .collect();
            for k in [1, 5, 10, 20, 50] {
                let o = oracle(&plain, k);
                let got = eval::evaluate(&cases, k).unwrap();
                for (a, b) in [
                    (got.urr, o.urr),
                    (got.nrr, o.nrr),
                    (got.precision, o.p),
                    (got.recall, o.r),
                    (got.fr, o.fr),
                ] {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-12 && secs < 10.0,
        format!("max |diff| {worst:e}, {secs:.2}s"),
    )
}

// ---- mean-cosine ranking by exhaustive evaluation ----

fn closest_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut users_checked = 0;
    for _ in 0..10 {
        let books = rng.random_range(5..=50usize);
        let users = rng.random_range(1..=20usize);
        let dim = rng.random_range(2..=16usize);
        let vectors: Vec<Vec<f64>> = (0..books)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut store = EmbeddingStore::new(dim, books);
        for (b, v) in vectors.iter().enumerate() {
            store.insert(BookId(b as u32), v.clone()).unwrap();
        }
        let mut readings = Vec::new();
        for u in 0..users {
            let n = rng.random_range(1..books);
            let mut order: Vec<u32> = (0..books as u32).collect();
            order.shuffle(&mut rng);
            for &b in &order[..n] {
                readings.push(Reading::new(UserId(u as u32), BookId(b), None, Source::BctLoan));
            }
        }
        let seen = ReadingsTable::from_readings(users, books, readings);
        let rec = ClosestItems::new(&seen, &store).unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        for u in 0..users {
            let read: Vec<usize> = seen.user_books(UserId(u as u32)).iter().map(|b| b.index()).collect();
            let mut scored: Vec<(f64, usize)> = (0..books)
                .filter(|b| !read.contains(b))
                .map(|b| {
                    let s = read.iter().map(|&i| cos(&vectors[b], &vectors[i])).sum::<f64>()
                        / read.len() as f64;
                    (s, b)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let expected: Vec<u32> = scored.iter().map(|&(_, b)| b as u32).collect();
            let got: Vec<u32> = rec.rank(UserId(u as u32)).unwrap().iter().map(|b| b.0).collect();
            if got != expected {
                // only acceptable where the exhaustive scores tie to rounding
                let score = |b: u32| scored.iter().find(|s| s.1 == b as usize).unwrap().0;
                let consistent = got.len() == expected.len()
                    && got.windows(2).all(|w| score(w[0]) >= score(w[1]) - 1e-12);
                if !consistent {
                    mismatches += 1;
                }
            }
            users_checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && secs < 5.0,
        format!("{users_checked} rankings, {mismatches} mismatches, {secs:.2}s"),
    )
}

// ---- gradient check ----

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let l = rng.random_range(2..=20);
        let lambda = 10f64.powf(rng.random_range(-5.0..-1.0));
        let mut v: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut pi: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut pj: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = pair_gradient(&v, &pi, &pj, lambda, lambda, 1.0);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (which, g) in [(0, &grad.user), (1, &grad.read), (2, &grad.unread)] {
            for c in 0..l {
                let f = |v: &[f64], pi: &[f64], pj: &[f64]| pair_objective(v, pi, pj, lambda, lambda);
                let target = match which {
                    0 => &mut v,
                    1 => &mut pi,
                    _ => &mut pj,
                };
                let orig = target[c];
                target[c] = orig + h;
                let plus = f(&v, &pi, &pj);
                let target = match which {
                    0 => &mut v,
                    1 => &mut pi,
                    _ => &mut pj,
                };
                target[c] = orig - h;
                let minus = f(&v, &pi, &pj);
                let target = match which {
                    0 => &mut v,
                    1 => &mut pi,
                    _ => &mut pj,
                };
                target[c] = orig;
                analytic.push(g[c]);
                numeric.push((plus - minus) / (2.0 * h));
            }
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        worst = worst.max(diff / scale);
    }
    check(worst < 1e-4, format!("max relative error {worst:e}"))
}

// ---- synthetic separations ----

fn cases_for(rec: &dyn Recommender, test: &ReadingsTable) -> Vec<UserCase> {
    collect_cases(rec, test).unwrap()
}

fn urr_at(cases: &[UserCase], k: usize) -> f64 {
    eval::urr(cases, k).unwrap()
}

/// Violations of the k-monotonicity properties over one run.
fn monotonicity_violations(name: &str, cases: &[UserCase]) -> Vec<String> {
    let ks = [1, 5, 10, 20, 50];
    let reports = eval::sweep(cases, &ks).unwrap();
    let mut bad = Vec::new();
    for w in reports.windows(2) {
        if w[1].urr < w[0].urr || w[1].recall < w[0].recall {
            bad.push(format!("{name}: URR/R decrease from k={} to k={}", w[0].k, w[1].k));
        }
    }
    for r in &reports {
        if (r.k as f64 * r.precision - r.nrr).abs() > 1e-9 {
            bad.push(format!("{name}: k*P != NRR at k={}", r.k));
        }
    }
    bad
}

struct Run {
    name: &'static str,
    cases: Vec<UserCase>,
}

struct Separation {
    random: f64,
    most_read: f64,
    closest: f64,
    bpr: f64,
    fit_seconds: f64,
    latency: Vec<(&'static str, f64)>,
    runs: Vec<Run>,
}

fn learning_data() -> Separation {
    let ds = synth_dataset(&SynthSpec::default());
    let s = split(&ds.readings, &SplitSpec::default()).unwrap();
    let known = s.known();
    let start = Instant::now();
    let model = bpr_fit(&s.train, &BprParams::default()).unwrap();
    let fit_seconds = start.elapsed().as_secs_f64();
    let store = EmbeddingStore::from_catalog_hashed(&ds.catalog, FieldSet::authors_genres(), 128, 42);
    let random = RandomItems::new(&known, 42);
    let most_read = MostRead::fit(&s.train, &known);
    let closest = ClosestItems::new(&known, &store).unwrap();
    let bpr = Bpr::new(&model, &known);
    let recs: [(&'static str, &dyn Recommender); 4] = [
        ("random", &random),
        ("most_read", &most_read),
        ("closest", &closest),
        ("bpr", &bpr),
    ];
    let users: Vec<UserId> = s
        .test
        .users()
        .filter(|&u| !s.test.user_books(u).is_empty())
        .collect();
    let mut runs = Vec::new();
    let mut latency = Vec::new();
    for (name, rec) in recs {
        latency.push((name, mean_recommend_seconds(rec, &users, 20).unwrap()));
        runs.push(Run {
            name,
            cases: cases_for(rec, &s.test),
        });
    }
    let at = |i: usize| urr_at(&runs[i].cases, 20);
    Separation {
        random: at(0),
        most_read: at(1),
        closest: at(2),
        bpr: at(3),
        fit_seconds,
        latency,
        runs,
    }
}

fn learning_separation(d: &Separation) -> Outcome {
    check(
        d.bpr >= 3.0 * d.random && d.most_read <= d.bpr && d.fit_seconds < 60.0,
        format!(
            "URR@20 bpr {:.3}, closest {:.3}, random {:.3}, most_read {:.3}; fit {:.2}s",
            d.bpr, d.closest, d.random, d.most_read, d.fit_seconds
        ),
    )
}

fn timing_sanity(d: &Separation) -> Outcome {
    let worst = d.latency.iter().map(|l| l.1).fold(0.0, f64::max);
    let detail: Vec<String> = d
        .latency
        .iter()
        .map(|(n, s)| format!("{n} {:.2}ms", s * 1e3))
        .collect();
    check(
        worst < 0.1 && d.fit_seconds < 120.0,
        format!("recommend {}; bpr fit {:.2}s", detail.join(", "), d.fit_seconds),
    )
}

struct AuthorDriven {
    dataset: Dataset,
    train: ReadingsTable,
    known: ReadingsTable,
    test: ReadingsTable,
    bpr: LatentModel,
}

fn author_driven_data() -> AuthorDriven {
    let spec = SynthSpec {
        users: 3000,
        min_readings: 5,
        max_readings: 60,
        count_law: CountLaw::LogUniform,
        author_driven: 1.0,
        ..SynthSpec::default()
    };
    let dataset = synth_dataset(&spec);
    let s = split(&dataset.readings, &SplitSpec::default()).unwrap();
    let known = s.known();
    let bpr = bpr_fit(&s.train, &BprParams::default()).unwrap();
    AuthorDriven {
        dataset,
        train: s.train,
        known,
        test: s.test,
        bpr,
    }
}

fn cohort_trend(d: &AuthorDriven, runs: &mut Vec<Run>) -> Outcome {
    let store = EmbeddingStore::from_catalog_hashed(
        &d.dataset.catalog,
        "authors".parse().unwrap(),
        128,
        42,
    );
    let closest = cases_for(&ClosestItems::new(&d.known, &store).unwrap(), &d.test);
    let bpr = cases_for(&Bpr::new(&d.bpr, &d.known), &d.test);
    let c = cohort_nrr(&closest, &d.train, &DEFAULT_COHORT_BINS, 20);
    let b = cohort_nrr(&bpr, &d.train, &DEFAULT_COHORT_BINS, 20);
    runs.push(Run { name: "closest_authors", cases: closest });
    runs.push(Run { name: "bpr_author_driven", cases: bpr });
    if c.len() != 4 || b.len() != 4 {
        return Err(format!("expected 4 populated bins, got {} and {}", c.len(), b.len()));
    }
    let gaps: Vec<f64> = c.iter().zip(&b).map(|(x, y)| x.nrr - y.nrr).collect();
    let closest_ok = c.windows(2).all(|w| w[1].nrr >= w[0].nrr);
    let gaps_ok = gaps.windows(2).all(|w| w[1] > w[0]);
    let detail: Vec<String> = c
        .iter()
        .zip(&gaps)
        .map(|(row, g)| format!("[{}-{}] n={} closest {:.3} gap {:+.3}", row.low, row.high, row.users, row.nrr, g))
        .collect();
    check(closest_ok && gaps_ok, detail.join("; "))
}

fn ablation_separation(d: &AuthorDriven, runs: &mut Vec<Run>) -> Outcome {
    let urr_for = |fields: &str| {
        let store = EmbeddingStore::from_catalog_hashed(
            &d.dataset.catalog,
            fields.parse::<FieldSet>().unwrap(),
            128,
            42,
        );
        cases_for(&ClosestItems::new(&d.known, &store).unwrap(), &d.test)
    };
    let best = urr_for("authors,genres");
    let title = urr_for("title");
    let (a, t) = (urr_at(&best, 20), urr_at(&title, 20));
    runs.push(Run { name: "closest_authors_genres", cases: best });
    runs.push(Run { name: "closest_title", cases: title });
    check(a > t, format!("URR@20 authors,genres {a:.3} vs title {t:.3}"))
}

fn monotonicity(runs: &[Run]) -> Outcome {
    let bad: Vec<String> = runs
        .iter()
        .flat_map(|r| monotonicity_violations(r.name, &r.cases))
        .collect();
    if bad.is_empty() {
        Ok(format!("{} runs, k in {{1,5,10,20,50}}", runs.len()))
    } else {
        Err(bad.join("; "))
    }
}

// ---- split partition ----

fn split_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n_books = 300;
    let mut readings = Vec::new();
    let mut anobii = Vec::new();
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    for u in 0..1000u32 {
        let is_anobii = rng.random_bool(0.3);
        anobii.push(is_anobii);
        let source = if is_anobii { Source::AnobiiRating } else { Source::BctLoan };
        let n = rng.random_range(2..=60);
        let mut order: Vec<u32> = (0..n_books).collect();
        order.shuffle(&mut rng);
        for &b in &order[..n] {
            let date = start + chrono::Duration::days(rng.random_range(0..3000));
            readings.push(Reading::new(UserId(u), BookId(b), Some(date), source));
        }
    }
    let table = ReadingsTable::from_readings(1000, n_books as usize, readings);
    let mut problems = Vec::new();
    for mode in [SplitMode::Chronological, SplitMode::Random] {
        let spec = SplitSpec {
            mode: Some(mode),
            seed: 3,
            ..SplitSpec::default()
        };
        let s = split(&table, &spec).unwrap();
        for u in table.users() {
            let parts = [&s.train, &s.validation, &s.test];
            let mut all: Vec<BookId> = parts.iter().flat_map(|p| p.user_books(u).to_vec()).collect();
            let total = all.len();
            all.sort();
            all.dedup();
            if all.len() != total || all != table.user_books(u) {
                problems.push(format!("{u}: not a partition ({mode:?})"));
            }
            if anobii[u.index()] && !s.test.user_books(u).is_empty() {
                problems.push(format!("{u}: Anobii user with a test set"));
            }
            if mode == SplitMode::Chronological {
                let latest_other = s
                    .train
                    .user_readings(u)
                    .iter()
                    .chain(s.validation.user_readings(u))
                    .map(|r| r.date)
                    .max()
                    .flatten();
                if s.test.user_readings(u).iter().any(|r| r.date < latest_other) {
                    problems.push(format!("{u}: test reading older than train/validation"));
                }
            }
        }
    }
    if problems.is_empty() {
        Ok("1000 users, chronological and random modes".into())
    } else {
        Err(format!("{} problems, first: {}", problems.len(), problems[0]))
    }
}

// ---- determinism of every command ----

fn run_cli(dir: &Path, args: &[&str], stdin: Option<&str>) -> Result<Vec<u8>, String> {
    use std::io::Write;
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bookrec"));
    cmd.current_dir(dir)
        .args(["--config", "run.toml"])
        .args(args)
        .env("RUST_LOG", "error")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().map_err(|e| e.to_string())?;
    let mut input = child.stdin.take().unwrap();
    if let Some(text) = stdin {
        input.write_all(text.as_bytes()).map_err(|e| e.to_string())?;
    }
    drop(input);
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

const DETERMINISM_CONFIG: &str = r#"
k = [1, 5, 10, 20]
[merge]
min_user_readings = 2
min_book_readings = 1
[embeddings]
fallback_dim = 64
[bpr]
epochs = 5
[grid]
factors = [5, 10]
learning_rates = [0.1]
[ablation]
field_sets = ["title", "authors,genres", "genres,authors"]
[synth]
users = 150
books = 120
genres = 6
min_readings = 8
max_readings = 30
"#;

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn pipeline_once() -> Result<(Vec<(String, Vec<u8>)>, Vec<u8>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("run.toml"), DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    for cmd in ["synth", "ingest", "characterize", "train", "evaluate", "grid", "sweep", "ablation"] {
        run_cli(dir.path(), &[cmd], None)?;
    }
    let served = run_cli(dir.path(), &["serve"], Some("recommend U00000 5\nrecommend U00003 3\n"))?;
    Ok((snapshot(dir.path()), served))
}

fn determinism() -> Outcome {
    let (a, sa) = pipeline_once()?;
    let (b, sb) = pipeline_once()?;
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        a.len() == b.len() && differing.is_empty() && sa == sb && !sa.is_empty(),
        format!(
            "9 commands, {} files compared{}",
            names.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(", differing: {differing:?}")
            }
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("metric oracle equivalence", metric_oracle()),
        ("closest items exhaustive oracle", closest_oracle()),
        ("bpr gradient check", gradient_check()),
    ];
    let sep = learning_data();
    results.push(("learning separation", learning_separation(&sep)));
    let mut runs = sep.runs;
    let author = author_driven_data();
    results.push(("cohort trend", cohort_trend(&author, &mut runs)));
    results.push(("ablation separation", ablation_separation(&author, &mut runs)));
    results.push(("monotonicity suite", monotonicity(&runs)));
    results.push(("split partition", split_partition()));
    results.push(("determinism", determinism()));
    let timing = Separation {
        runs: Vec::new(),
        latency: sep.latency,
        ..sep
    };
    results.push(("timing sanity", timing_sanity(&timing)));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
