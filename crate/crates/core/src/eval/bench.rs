use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{build_value_index, scan_map, tfidf_map};
use crate::schema::{load_schema, load_snapshot, ContentSnapshot, Schema};
use crate::tagger::{DBTaggerModel, Trainable};

/// Latency distribution of one mapper over a query set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// Wall time of the measured runs, warmup excluded.
    pub wall_ms: f64,
    /// Counted bytes of the structure the mapper reads.
    pub structure_bytes: usize,
    /// Peak resident set size of the process, where the OS reports it.
    pub peak_rss_bytes: Option<usize>,
    pub rows: usize,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<usize> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Times `mapper` once per query per repetition after `warmup` untimed
/// passes over the queries. `structure_bytes` and `rows` are recorded as
/// given.
pub fn bench_latency<Q, R, F>(mut mapper: F, queries: &[Q], repetitions: usize, warmup: usize, structure_bytes: usize, rows: usize) -> BenchReport
where
    F: FnMut(&Q) -> R,
{
    for _ in 0..warmup {
        for q in queries {
            std::hint::black_box(mapper(q));
        }
    }
    let mut samples = Vec::with_capacity(repetitions * queries.len());
    let wall = Instant::now();
    for _ in 0..repetitions {
        for q in queries {
            let t = Instant::now();
            std::hint::black_box(mapper(q));
            samples.push(ms(t.elapsed()));
        }
    }
    let wall_ms = ms(wall.elapsed());
    samples.sort_by(f64::total_cmp);
    BenchReport {
        samples: samples.len(),
        min_ms: samples.first().copied().unwrap_or(0.0),
        median_ms: percentile(&samples, 50.0),
        p95_ms: percentile(&samples, 95.0),
        wall_ms,
        structure_bytes,
        peak_rss_bytes: peak_rss_bytes(),
        rows,
    }
}

/// Movie schema used for generated snapshots.
pub const SYNTHETIC_SCHEMA: &str = r#"{"name":"synthetic","tables":[
  {"name":"movie","kind":"entity","attributes":[{"name":"id","pk":true,"kind":"number"},{"name":"title","kind":"text"},{"name":"year","kind":"number"}]},
  {"name":"people","kind":"entity","attributes":[{"name":"id","pk":true,"kind":"number"},{"name":"name","kind":"text"},{"name":"gender","kind":"text"}]},
  {"name":"cast","kind":"relation","attributes":[{"name":"movie_id","fk":true,"ref":"movie","kind":"number"},{"name":"person_id","fk":true,"ref":"people","kind":"number"},{"name":"role","kind":"text"}]},
  {"name":"written_by","kind":"relation","attributes":[{"name":"movie_id","fk":true,"ref":"movie","kind":"number"},{"name":"person_id","fk":true,"ref":"people","kind":"number"}]}
]}"#;

const WORDS: &[&str] = &[
    "silent", "river", "night", "city", "dark", "star", "golden", "last", "summer", "broken", "iron", "road", "secret", "garden", "winter", "blue",
    "empire", "storm", "lost", "kingdom", "shadow", "heart", "wild", "ocean", "fire", "glass", "paper", "moon", "long", "home",
];
const FIRST: &[&str] = &["anna", "ben", "carla", "david", "elena", "frank", "grace", "henry", "ines", "jack", "kate", "leo", "maria", "noah"];
const LAST: &[&str] = &["adams", "brown", "clark", "diaz", "evans", "fischer", "garcia", "hill", "ito", "jones", "khan", "lopez", "moore", "novak"];

/// A snapshot of the synthetic schema with `rows` rows in total, split
/// evenly over the four tables. The first movie is "A Beautiful Mind" and
/// the first cast role is "John Nash".
pub fn synthetic_snapshot(rows: usize, seed: u64) -> (Schema, ContentSnapshot) {
    let schema = load_schema(SYNTHETIC_SCHEMA).expect("synthetic schema is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = [rows / 4 + usize::from(rows % 4 > 0), rows / 4 + usize::from(rows % 4 > 1), rows / 4 + usize::from(rows % 4 > 2), rows / 4];
    let (n_movies, n_people) = (per[0].max(1), per[1].max(1));
    let mut movie = String::from("id\ttitle\tyear\n");
    for i in 0..per[0] {
        let title = if i == 0 {
            "A Beautiful Mind".to_string()
        } else {
            let n = 1 + i % 3;
            (0..n).map(|_| *WORDS.choose(&mut rng).expect("words")).collect::<Vec<_>>().join(" ")
        };
        movie.push_str(&format!("{i}\t{title}\t{}\n", 1950 + i % 70));
    }
    let mut people = String::from("id\tname\tgender\n");
    for i in 0..per[1] {
        let name = format!("{} {}", FIRST.choose(&mut rng).expect("names"), LAST.choose(&mut rng).expect("names"));
        people.push_str(&format!("{i}\t{name}\t{}\n", if i % 2 == 0 { "female" } else { "male" }));
    }
    let mut cast = String::from("movie_id\tperson_id\trole\n");
    for i in 0..per[2] {
        let role = if i == 0 {
            "John Nash".to_string()
        } else {
            format!("{} {}", FIRST.choose(&mut rng).expect("names"), WORDS.choose(&mut rng).expect("words"))
        };
        cast.push_str(&format!("{}\t{}\t{role}\n", i % n_movies, (i * 7) % n_people));
    }
    let mut written = String::from("movie_id\tperson_id\n");
    for i in 0..per[3] {
        written.push_str(&format!("{}\t{}\n", i % n_movies, (i * 3) % n_people));
    }
    let snapshot = load_snapshot(&schema, [("movie", movie.as_str()), ("people", people.as_str()), ("cast", cast.as_str()), ("written_by", written.as_str())])
        .expect("generated tables match the schema");
    (schema, snapshot)
}

/// A mapper family measured across snapshot sizes.
#[derive(Clone, Copy)]
pub enum ScalingMapper<'a> {
    /// Row-limited substring scan over the snapshot.
    Scan { row_limit: usize },
    /// Lookups in an inverted value index built per snapshot.
    Tfidf,
    /// The neural tagger, which never reads the snapshot.
    Tagger(&'a DBTaggerModel),
}

impl ScalingMapper<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ScalingMapper::Scan { .. } => "scan",
            ScalingMapper::Tfidf => "tfidf",
            ScalingMapper::Tagger(_) => "dbtagger",
        }
    }
}

impl fmt::Debug for ScalingMapper<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub rows: usize,
    pub mapper: String,
    pub report: BenchReport,
}

impl ScalingRow {
    pub const CSV_HEADER: &'static str = "rows,mapper,median_ms,mem_bytes";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.rows, self.mapper, self.report.median_ms, self.report.structure_bytes)
    }
}

/// One report per (row count, mapper), all with the same queries.
pub fn bench_scaling<G>(
    mappers: &[ScalingMapper<'_>],
    mut generator: G,
    row_counts: &[usize],
    queries: &[Vec<String>],
    repetitions: usize,
    warmup: usize,
) -> Vec<ScalingRow>
where
    G: FnMut(usize) -> (Schema, ContentSnapshot),
{
    let mut out = Vec::new();
    for &rows in row_counts {
        let (schema, snapshot) = generator(rows);
        for mapper in mappers {
            let report = match *mapper {
                ScalingMapper::Scan { row_limit } => bench_latency(
                    |q: &Vec<String>| scan_map(&snapshot, &schema, q, row_limit),
                    queries,
                    repetitions,
                    warmup,
                    snapshot.memory_bytes(),
                    rows,
                ),
                ScalingMapper::Tfidf => {
                    let index = build_value_index(&snapshot, &schema);
                    bench_latency(|q: &Vec<String>| tfidf_map(&index, q), queries, repetitions, warmup, index.memory_bytes(), rows)
                }
                ScalingMapper::Tagger(model) => {
                    let bytes = model.parameter_count() * std::mem::size_of::<f64>() + model.embeddings().memory_bytes();
                    bench_latency(|q: &Vec<String>| model.tag_query(q).ok(), queries, repetitions, warmup, bytes, rows)
                }
            };
            out.push(ScalingRow {
                rows,
                mapper: mapper.name().to_string(),
                report,
            });
        }
    }
    out
}
