//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbtagger::baselines::{
    build_value_index, edit_distance_relation_map, normalize, scan_counts, scan_map, tfidf_map, DEFAULT_ROW_LIMIT, MAX_NGRAM,
};
use dbtagger::corpus::{parse_corpus, AnnotatedQuery, Dataset};
use dbtagger::embeddings::{load_embeddings_file, EmbeddingTable};
use dbtagger::eval::{bench_scaling, synthetic_snapshot, ScalingMapper};
use dbtagger::numerics::{finite_diff_check, Coordinates, Matrix};
use dbtagger::schema::{build_schema_graph, derive_schema_tags, load_schema, load_schema_file, load_snapshot, schema_stats, Schema, SchemaGraph};
use dbtagger::tagger::{
    crf_log_partition, load_model, save_model, viterbi_decode, DBTaggerModel, TaskWeights, Trainable, Variant,
};
use dbtagger::training::{ablation_cv, encode_dataset, fit, model_vocabs, primary_accuracy, History, TrainConfig};
use dbtagger::translate::{infer_join_path, MappingSet};

type Outcome = Result<String, String>;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn corpus(rel: &str) -> Dataset {
    parse_corpus(rel, &std::fs::read_to_string(fixture(rel)).expect("fixture corpus")).expect("valid corpus")
}

fn embeddings() -> Arc<EmbeddingTable> {
    Arc::new(load_embeddings_file(&fixture("embeddings_300d.vec"), Some(300)).expect("fixture vectors"))
}

fn imdb_small() -> Schema {
    load_schema_file(&fixture("schemas/imdb_small.json")).expect("fixture schema")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1. CRF log-partition and Viterbi against enumeration.

fn enumerate(k: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out.into_iter().flat_map(|p| (0..k).map(move |t| [p.clone(), vec![t]].concat())).collect();
    }
    out
}

fn path_score(a: &Matrix, g: &Matrix, y: &[usize]) -> f64 {
    let k = g.cols();
    let (start, stop) = (k, k + 1);
    let mut s = a.get(start, y[0]) + a.get(y[y.len() - 1], stop);
    for (i, &t) in y.iter().enumerate() {
        s += g.get(i, t);
        if i > 0 {
            s += a.get(y[i - 1], t);
        }
    }
    s
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let k = rng.random_range(1..=5);
        let n = rng.random_range(1..=6);
        let mut a = Matrix::zeros(k + 2, k + 2);
        for i in 0..k + 2 {
            for j in 0..k + 2 {
                let v = if j == k || i == k + 1 { f64::NEG_INFINITY } else { rng.random_range(-3.0..3.0) };
                a.set(i, j, v);
            }
        }
        let g = Matrix::new(n, k, (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect()).expect("sized");
        let scores: Vec<(f64, Vec<usize>)> = enumerate(k, n).into_iter().map(|y| (path_score(&a, &g, &y), y)).collect();
        let m = scores.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let log_z = m + scores.iter().map(|s| (s.0 - m).exp()).sum::<f64>().ln();
        let got = crf_log_partition(&a, &g).map_err(|e| e.to_string())?;
        worst = worst.max((got - log_z).abs());
        ensure((got - log_z).abs() <= 1e-8, || format!("case {case}: log Z {got} vs {log_z}"))?;
        let (path, best) = viterbi_decode(&a, &g).map_err(|e| e.to_string())?;
        let oracle = scores.iter().max_by(|x, y| x.0.total_cmp(&y.0)).expect("non-empty");
        ensure((best - oracle.0).abs() <= 1e-8 && (path_score(&a, &g, &path) - oracle.0).abs() <= 1e-8, || {
            format!("case {case}: viterbi {path:?} ({best}) vs {:?} ({})", oracle.1, oracle.0)
        })?;
    }
    let el = t.elapsed();
    ensure(el < Duration::from_secs(10), || format!("took {}", secs(el)))?;
    Ok(format!("200 instances, max |log Z error| {worst:.1e}, {}", secs(el)))
}

// 2. Finite-difference gradient check of the full model.

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let d = corpus("imdb_small.tsv");
    let first = &d.queries()[0];
    let q = AnnotatedQuery::new(first.tokens()[..3].to_vec()).map_err(|e| e.to_string())?;
    let config = TrainConfig { dropout: 0.0, ..TrainConfig::default() };
    let model = DBTaggerModel::new(embeddings(), model_vocabs(&d, Some(&imdb_small())).map_err(|e| e.to_string())?, config.model_config())
        .map_err(|e| e.to_string())?;
    let ex = model.encode(&q).map_err(|e| e.to_string())?;
    let (_, analytic) = model.loss_with_grads(&ex, None).map_err(|e| e.to_string())?;
    let mut params: Vec<Matrix> = model.parameters().into_iter().cloned().collect();
    let mut probe = model.clone();
    let report = finite_diff_check(
        |ps| {
            for (dst, src) in probe.parameters_mut().into_iter().zip(ps) {
                dst.clone_from(src);
            }
            probe.loss_with_grads(&ex, None).expect("loss").0
        },
        &mut params,
        &analytic,
        1e-5,
        Coordinates::Sampled { count: 200, seed: 7 },
    )
    .map_err(|e| e.to_string())?;
    let el = t.elapsed();
    ensure(report.checked == 200, || format!("checked {} coordinates", report.checked))?;
    ensure(report.max_relative_error < 1e-4, || format!("max relative error {:.3e} at {:?}", report.max_relative_error, report.worst))?;
    ensure(el < Duration::from_secs(60), || format!("took {}", secs(el)))?;
    Ok(format!("{} parameters, 200 coordinates, max relative error {:.2e}, {}", model.parameter_count(), report.max_relative_error, secs(el)))
}

// 3. Weighted task-loss composition.

fn criterion_3() -> Outcome {
    let d = corpus("imdb_small.tsv");
    let config = TrainConfig { dropout: 0.0, ..TrainConfig::default() };
    let model = DBTaggerModel::new(embeddings(), model_vocabs(&d, None).map_err(|e| e.to_string())?, config.model_config())
        .map_err(|e| e.to_string())?;
    ensure(model.weights().as_array() == [0.1, 0.2, 0.7], || "default weights differ".into())?;
    for (i, q) in d.queries().iter().enumerate() {
        let ex = model.encode(q).map_err(|e| e.to_string())?;
        let [lp, lt, ls] = model.task_losses(&ex, None).map_err(|e| e.to_string())?;
        let total = model.total_loss(q, None).map_err(|e| e.to_string())?;
        let expected = 0.1 * lp + 0.2 * lt + 0.7 * ls;
        ensure(total.to_bits() == expected.to_bits(), || format!("query {i}: {total} vs {expected}"))?;
    }
    Ok(format!("{} queries, bit-identical", d.len()))
}

// 4 and 10 share the trained fixture model.

struct Trained {
    model: DBTaggerModel,
    history: History,
    config: TrainConfig,
}

fn train_fixture() -> Result<Trained, String> {
    let d = corpus("imdb_small.tsv");
    let config = TrainConfig { epochs: 200, ..TrainConfig::default() };
    let (model, history) = fit(embeddings(), Some(&imdb_small()), &d, None, &config).map_err(|e| e.to_string())?;
    Ok(Trained { model, history, config })
}

fn criterion_4(trained: &Trained) -> Outcome {
    let t = Instant::now();
    let emb = embeddings();
    let d = corpus("imdb_small.tsv");
    let nash = corpus("john_nash.tsv");
    let mut singles: Vec<_> = vec![nash.queries()[0].clone()];
    let longest = d.queries().iter().max_by_key(|q| q.len()).expect("queries").clone();
    singles.extend([d.queries()[1].clone(), d.queries()[25].clone(), longest]);
    let single_config = TrainConfig {
        epochs: 500,
        weights: TaskWeights::new(0.0, 0.0, 1.0).map_err(|e| e.to_string())?,
        ..TrainConfig::default()
    };
    for (i, q) in singles.iter().enumerate() {
        let one = Dataset::new("one", vec![q.clone()]).map_err(|e| e.to_string())?;
        let (m, _) = fit(emb.clone(), None, &one, None, &single_config).map_err(|e| e.to_string())?;
        let acc = primary_accuracy(&m, &encode_dataset(&m, &one).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(acc == 1.0, || format!("single query {i} ({} tokens): accuracy {acc}", q.len()))?;
    }
    let ex = encode_dataset(&trained.model, &d).map_err(|e| e.to_string())?;
    let acc = primary_accuracy(&trained.model, &ex).map_err(|e| e.to_string())?;
    ensure(acc >= 0.99, || format!("fixture training accuracy {acc}"))?;
    let short = TrainConfig { epochs: trained.config.switch_epoch, ..trained.config };
    let (_, rerun) = fit(emb, Some(&imdb_small()), &d, None, &short).map_err(|e| e.to_string())?;
    let bits = |h: &History| h.records.iter().map(|r| r.mean_loss.to_bits()).collect::<Vec<_>>();
    ensure(bits(&rerun)[..] == bits(&trained.history)[..short.epochs], || "rerun with the same seed diverged".into())?;
    Ok(format!(
        "{} single queries at 1.0; fixture accuracy {acc:.4} after 200 epochs; seeded rerun identical; {}",
        singles.len(),
        secs(t.elapsed())
    ))
}

// 5. Ablation variants under cross-validation.

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let d = corpus("imdb_small.tsv");
    let config = TrainConfig {
        epochs: 20,
        switch_epoch: 10,
        ..TrainConfig::default()
    };
    let out = ablation_cv(&d, Some(&imdb_small()), embeddings(), &config, 6, &Variant::ALL).map_err(|e| e.to_string())?;
    ensure(out.len() == 5, || format!("{} variants ran", out.len()))?;
    let by: BTreeMap<String, Vec<f64>> = out.iter().map(|(v, s)| (v.to_string(), s.folds.iter().map(|r| r.token_accuracy).collect())).collect();
    let (uni, bi) = (&by["ST_Uni"], &by["ST_Bi"]);
    let wins = bi.iter().zip(uni).filter(|(b, u)| b >= u).count();
    let means: Vec<String> = out.iter().map(|(v, s)| format!("{v} {:.3}", s.mean_accuracy)).collect();
    ensure(wins >= 4, || format!("ST_Bi >= ST_Uni in {wins}/6 folds ({})", means.join(", ")))?;
    Ok(format!("ST_Bi >= ST_Uni in {wins}/6 folds; mean accuracy {}; {}", means.join(", "), secs(t.elapsed())))
}

// 6. Schema tag vocabulary sizes.

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    let mut imdb_warned = false;
    for (name, published) in [("imdb", 31), ("mas", 19), ("yelp", 20)] {
        let s = load_schema_file(&fixture(&format!("schemas/{name}.json"))).map_err(|e| e.to_string())?;
        let st = schema_stats(&s, Some(published));
        let expected = st.total_tables + st.nonpk_fk_attributes + 2;
        ensure(st.derived_tags == expected && derive_schema_tags(&s).len() == expected, || {
            format!("{name}: {} tags, expected {expected}", st.derived_tags)
        })?;
        match st.warning() {
            Some(w) => {
                ensure(st.derived_tags != published && w.contains(&st.derived_tags.to_string()), || format!("{name}: bad warning {w}"))?;
                imdb_warned |= name == "imdb" && st.derived_tags == 33;
            }
            None => ensure(st.derived_tags == published, || format!("{name}: mismatch without warning"))?,
        }
        parts.push(format!("{name} {} (published {published})", st.derived_tags));
    }
    ensure(imdb_warned, || "imdb 33 vs 31 not warned".into())?;
    Ok(format!("{}; differences reported as warnings", parts.join(", ")))
}

// 7. Baseline rules against brute force.

/// Word n-grams of normalized values counted per column, straight from
/// the rows.
fn tf_oracle(columns: &[(&str, Vec<&str>)], phrase: &str) -> Vec<(String, usize)> {
    columns
        .iter()
        .map(|(name, values)| {
            let tf = values
                .iter()
                .map(|v| {
                    let norm = normalize(v);
                    let w: Vec<&str> = norm.split(' ').collect();
                    let mut c = 0;
                    for i in 0..w.len() {
                        for j in i + 1..=w.len().min(i + 3) {
                            c += usize::from(w[i..j].join(" ") == phrase);
                        }
                    }
                    c
                })
                .sum();
            (name.to_string(), tf)
        })
        .collect()
}

fn pick_max(counts: &[(String, usize)]) -> Option<String> {
    let best = counts.iter().map(|c| c.1).max().filter(|&m| m > 0)?;
    counts.iter().filter(|c| c.1 == best).map(|c| c.0.clone()).min()
}

fn lev_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let v = match (a.split_last(), b.split_last()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => (go(ra, rb, memo) + usize::from(x != y)).min(go(ra, b, memo) + 1).min(go(a, rb, memo) + 1),
        };
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut BTreeMap::new())
}

fn criterion_7() -> Outcome {
    let schema = imdb_small();
    let rows = |header: &str, vals: &[&str], cols: usize| -> String {
        let mut s = format!("{header}\n");
        for (i, v) in vals.iter().enumerate() {
            let mut line = vec![i.to_string(); cols - 1];
            line.push(v.to_string());
            s.push_str(&line.join("\t"));
            s.push('\n');
        }
        s
    };
    // tf rule: "Matt Demon" five times in people.name, twice in cast.role;
    // "Ann Lee" twice in each (tie).
    let names = ["Matt Demon", "Matt Demon", "Matt Demon", "Matt Demon", "Matt Demon", "Ann Lee", "Ann Lee"];
    let roles = ["Matt Demon", "Matt Demon", "Ann Lee", "Ann Lee", "The Truman Show"];
    let titles = ["a b c d", "The Truman Show"];
    let people = {
        let mut s = String::from("id\tname\tgender\n");
        for (i, n) in names.iter().enumerate() {
            s.push_str(&format!("{i}\t{n}\tmale\n"));
        }
        s
    };
    let movie = {
        let mut s = String::from("id\ttitle\trelease_year\tgenre\n");
        for (i, t) in titles.iter().enumerate() {
            s.push_str(&format!("{i}\t{t}\t2000\tdrama\n"));
        }
        s
    };
    let cast = rows("id\tmovie_id\tpeople_id\trole", &roles, 4);
    let snap = load_snapshot(&schema, [("movie", movie.as_str()), ("people", people.as_str()), ("cast", cast.as_str())]).map_err(|e| e.to_string())?;
    let index = build_value_index(&snap, &schema);
    let columns: Vec<(&str, Vec<&str>)> = vec![
        ("movie.title", titles.to_vec()),
        ("movie.genre", vec!["drama"; titles.len()]),
        ("people.name", names.to_vec()),
        ("people.gender", vec!["male"; names.len()]),
        ("cast.role", roles.to_vec()),
    ];
    for query in [&["Matt", "Demon"][..], &["Ann", "Lee"], &["The", "Truman", "Show"]] {
        let phrase = normalize(&query.join(" "));
        let expected = pick_max(&tf_oracle(&columns, &phrase));
        let got = tfidf_map(&index, query);
        ensure(got.len() == 1 && (got[0].start, got[0].end) == (0, query.len()), || format!("{query:?}: spans {got:?}"))?;
        ensure(Some(got[0].target.clone()) == expected, || format!("{query:?}: {} vs {expected:?}", got[0].target))?;
    }
    // n-gram limit: the 4-word title is indexed only up to trigrams.
    ensure(index.df("a b c d") == 0 && index.df("a b c") == 1 && index.df("b c d") == 1, || "4-gram indexed".into())?;
    let spans: Vec<(usize, usize)> = tfidf_map(&index, &["a", "b", "c", "d"]).iter().map(|m| (m.start, m.end)).collect();
    ensure(spans == [(0, MAX_NGRAM), (MAX_NGRAM, 4)], || format!("4-word spans {spans:?}"))?;

    // Scan cap: people.name has 2500 matches, movie.title 2100.
    let big_people = {
        let mut s = String::from("id\tname\tgender\n");
        for i in 0..2500 {
            s.push_str(&format!("{i}\tbig fish\tmale\n"));
        }
        s
    };
    let big_movie = {
        let mut s = String::from("id\ttitle\trelease_year\tgenre\n");
        for i in 0..2100 {
            s.push_str(&format!("{i}\tbig fish\t2000\tdrama\n"));
        }
        s
    };
    let big = load_snapshot(&schema, [("movie", big_movie.as_str()), ("people", big_people.as_str())]).map_err(|e| e.to_string())?;
    for (limit, expected) in [(DEFAULT_ROW_LIMIT, "movie.title"), (3000, "people.name"), (2100, "movie.title"), (2101, "people.name")] {
        let brute: Vec<(String, usize)> = vec![("movie.title".into(), 2100usize.min(limit)), ("people.name".into(), 2500usize.min(limit))];
        ensure(pick_max(&brute).as_deref() == Some(expected), || "oracle disagrees with fixture".into())?;
        let counts: BTreeMap<String, usize> = scan_counts(&big, &schema, "fish", limit).into_iter().collect();
        ensure(counts["movie.title"] == brute[0].1 && counts["people.name"] == brute[1].1, || format!("limit {limit}: counts {counts:?}"))?;
        let got = scan_map(&big, &schema, &["fish"], limit);
        ensure(got.len() == 1 && got[0].target == expected, || format!("limit {limit}: {got:?}"))?;
    }

    // Edit distance: brute-force selection over every table and attribute name.
    let candidates: Vec<(String, String)> = schema
        .tables()
        .iter()
        .flat_map(|t| {
            std::iter::once((t.name.clone(), t.name.clone())).chain(t.attributes.iter().map(move |a| (a.name.clone(), format!("{}.{}", t.name, a.name))))
        })
        .collect();
    for (token, max) in [("written", 3), ("written", 2), ("movie", 0), ("Movies", 1), ("director", 2), ("gendr", 1), ("titles", 2), ("id", 0)] {
        let key: Vec<char> = token.to_lowercase().chars().collect();
        let expected = candidates
            .iter()
            .map(|(name, target)| {
                let n: Vec<char> = name.to_lowercase().replace('_', " ").chars().collect();
                (lev_oracle(&key, &n), n.len(), target.clone())
            })
            .filter(|c| c.0 <= max)
            .min()
            .map(|c| c.2);
        let got = edit_distance_relation_map(token, &schema, max).map(|m| m.target);
        ensure(got == expected, || format!("{token} within {max}: {got:?} vs {expected:?}"))?;
    }
    ensure(edit_distance_relation_map("written", &schema, 3).map(|m| (m.target, m.score)) == Some(("written_by".into(), 3.0)), || {
        "written -> written_by at distance 3".into()
    })?;
    ensure(edit_distance_relation_map("director", &schema, 2).is_none(), || "director matched".into())?;
    Ok("tf tie-break, trigram limit, 2000-row cap and edit-distance selection match brute force".into())
}

// 8. Latency scaling with snapshot size.

fn criterion_8(model: &DBTaggerModel) -> Outcome {
    let t = Instant::now();
    let queries: Vec<Vec<String>> = [
        "who acted John Nash in the movie A Beautiful Mind",
        "list the movies where Anna Brown acted as a silent river",
        "which people wrote the movie Golden Night Storm in drama",
    ]
    .iter()
    .map(|q| q.split(' ').map(str::to_string).collect())
    .collect();
    let mappers = [ScalingMapper::Scan { row_limit: DEFAULT_ROW_LIMIT }, ScalingMapper::Tagger(model)];
    let sizes = [1_000, 10_000, 100_000];
    let rows = bench_scaling(&mappers, |n| synthetic_snapshot(n, 0), &sizes, &queries, 5, 1);
    let median = |m: &str| -> Vec<f64> { rows.iter().filter(|r| r.mapper == m).map(|r| r.report.median_ms).collect() };
    let (scan, tagger) = (median("scan"), median("dbtagger"));
    ensure(scan.windows(2).all(|w| w[1] > w[0]), || format!("scan medians not increasing: {scan:?}"))?;
    let (lo, hi) = tagger.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    ensure(hi < 2.0 * lo, || format!("tagger medians vary {:.2}x: {tagger:?}", hi / lo))?;
    let el = t.elapsed();
    ensure(el < Duration::from_secs(300), || format!("took {}", secs(el)))?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    Ok(format!("scan median ms {} ; tagger median ms {} ({:.2}x); {}", fmt(&scan), fmt(&tagger), hi / lo, secs(el)))
}

// 9. Join paths against exhaustive search.

fn random_schema(rng: &mut ChaCha8Rng) -> Schema {
    let n = rng.random_range(1..=8);
    let edges = rng.random_range(0..=12);
    let mut fks: Vec<Vec<String>> = vec![vec![]; n];
    for e in 0..edges {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            fks[a].push(format!(r#"{{"name":"f{e}","fk":true,"ref":"t{b}","kind":"number"}}"#));
        }
    }
    let tables: Vec<String> = (0..n)
        .map(|i| {
            let kind = if rng.random_bool(0.6) { "entity" } else { "relation" };
            let mut attrs = vec![r#"{"name":"id","pk":true,"kind":"number"}"#.to_string()];
            attrs.extend(fks[i].iter().cloned());
            format!(r#"{{"name":"t{i}","kind":"{kind}","attributes":[{}]}}"#, attrs.join(","))
        })
        .collect();
    load_schema(&format!(r#"{{"name":"r","tables":[{}]}}"#, tables.join(","))).expect("valid random schema")
}

/// Minimum edge subsets connecting `required`, by trying every subset;
/// returns the optimum size and the smallest sorted table list among
/// optimal trees.
fn steiner_oracle(g: &SchemaGraph, required: &BTreeSet<String>) -> Option<(usize, Vec<String>)> {
    let edges: Vec<(&str, &str)> = g.edges().collect();
    let start = required.iter().next()?.as_str();
    let mut best: Option<(usize, Vec<String>)> = None;
    for mask in 0u32..(1 << edges.len()) {
        let size = mask.count_ones() as usize;
        if best.as_ref().is_some_and(|b| size > b.0) {
            continue;
        }
        let chosen: Vec<(&str, &str)> = (0..edges.len()).filter(|i| mask >> i & 1 == 1).map(|i| edges[i]).collect();
        let mut seen = BTreeSet::from([start]);
        loop {
            let before = seen.len();
            for &(a, b) in &chosen {
                if seen.contains(a) || seen.contains(b) {
                    seen.insert(a);
                    seen.insert(b);
                }
            }
            if seen.len() == before {
                break;
            }
        }
        let touches_all = chosen.iter().all(|(a, _)| seen.contains(a));
        if !touches_all || !required.iter().all(|r| seen.contains(r.as_str())) {
            continue;
        }
        let tables: Vec<String> = seen.into_iter().map(str::to_string).collect();
        best = match best {
            Some((s, t)) if s < size || (s == size && t <= tables) => Some((s, t)),
            _ => Some((size, tables)),
        };
    }
    best
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut disconnected = 0;
    for case in 0..100 {
        let schema = random_schema(&mut rng);
        let g = build_schema_graph(&schema);
        let n = schema.tables().len();
        let k = rng.random_range(1..=n.min(4));
        let mut required = BTreeSet::new();
        while required.len() < k {
            required.insert(format!("t{}", rng.random_range(0..n)));
        }
        let m = MappingSet { tables: required.clone(), ..MappingSet::default() };
        let oracle = steiner_oracle(&g, &required);
        match (infer_join_path(&g, &schema, &m), oracle) {
            (Ok(p), Some((size, tables))) => {
                let mut got = p.tables.clone();
                got.sort();
                ensure(p.edge_count() == size && got == tables, || format!("case {case}: {:?} vs {size} edges over {tables:?}", p.tables))?;
                ensure(p.joins.iter().all(|j| g.has_edge(&j.parent, &j.table)), || format!("case {case}: join over a non-edge"))?;
            }
            (Err(_), None) => disconnected += 1,
            (got, want) => return Err(format!("case {case}: {got:?} vs {want:?}")),
        }
    }
    Ok(format!("100 random graphs (up to 8 tables), {disconnected} without a join path, all equal to exhaustive search"))
}

// 10. Determinism and round trips.

fn criterion_10(trained: &Trained) -> Outcome {
    let bytes = save_model(&trained.model);
    let back = load_model(&bytes, trained.model.embeddings().clone()).map_err(|e| e.to_string())?;
    ensure(save_model(&back) == bytes, || "model bytes changed on reload".into())?;
    let same = trained.model.parameters().iter().zip(back.parameters()).all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    ensure(same, || "parameters differ after reload".into())?;
    let q: Vec<&str> = "who acted John Nash in the movie A Beautiful Mind".split(' ').collect();
    ensure(trained.model.tag_query(&q).ok() == back.tag_query(&q).ok(), || "reloaded model tags differently".into())?;

    let d = corpus("imdb_small.tsv");
    let c = TrainConfig {
        epochs: 6,
        switch_epoch: 3,
        hidden: 16,
        ..TrainConfig::default()
    };
    let (m1, h1) = fit(embeddings(), None, &d, None, &c).map_err(|e| e.to_string())?;
    let (m2, h2) = fit(embeddings(), None, &d, None, &c).map_err(|e| e.to_string())?;
    ensure(h1.to_csv() == h2.to_csv() && save_model(&m1) == save_model(&m2), || "same seed, different run".into())?;

    let text = d.to_corpus_string();
    let again = parse_corpus("again", &text).map_err(|e| e.to_string())?;
    ensure(again.queries() == d.queries() && again.to_corpus_string() == text, || "corpus round trip changed the data".into())?;
    Ok(format!("model file {} bytes bit-exact; identical histories; corpus round trip exact", bytes.len()))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("criterion {n:>2} PASS  {name}: {detail}");
            true
        }
        Err(why) => {
            println!("criterion {n:>2} FAIL  {name}: {why}");
            false
        }
    }
}

fn main() {
    let total = Instant::now();
    let mut ok = true;
    ok &= run(1, "CRF correctness", criterion_1);
    ok &= run(2, "gradient correctness", criterion_2);
    ok &= run(3, "weighted loss composition", criterion_3);
    let trained = catch_unwind(train_fixture).map_err(|_| "training panicked".to_string()).and_then(|r| r);
    match &trained {
        Ok(t) => {
            ok &= run(4, "memorization", || criterion_4(t));
        }
        Err(e) => {
            ok &= run(4, "memorization", || Err(e.clone()));
        }
    }
    ok &= run(5, "architecture ablation", criterion_5);
    ok &= run(6, "schema tag vocabulary", criterion_6);
    ok &= run(7, "baseline rules", criterion_7);
    match &trained {
        Ok(t) => {
            ok &= run(8, "scaling behaviour", || criterion_8(&t.model));
            ok &= run(9, "join-path optimality", criterion_9);
            ok &= run(10, "determinism and round trips", || criterion_10(t));
        }
        Err(e) => {
            ok &= run(8, "scaling behaviour", || Err(e.clone()));
            ok &= run(9, "join-path optimality", criterion_9);
            ok &= run(10, "determinism and round trips", || Err(e.clone()));
        }
    }
    println!("acceptance finished in {}", secs(total.elapsed()));
    if !ok {
        std::process::exit(1);
    }
}
