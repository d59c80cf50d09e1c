use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dbtagger::baselines::build_value_index;
use dbtagger::corpus::{parse_corpus, Dataset};
use dbtagger::embeddings::{load_embeddings_file, EmbeddingTable};
use dbtagger::eval::{bench_scaling, score, synthetic_snapshot, ScalingMapper, ScalingRow};
use dbtagger::schema::{build_schema_graph, load_schema_file, load_snapshot_dir, schema_stats, Schema};
use dbtagger::tagger::{DBTaggerModel, TaggedQuery, TaggedToken, TaskWeights, Variant};
use dbtagger::training::{ablation_cv, fit, predict_schema_tags, TrainConfig};
use dbtagger::translate::{mappings_from_tags, translate};

#[derive(Parser)]
#[command(name = "dbtagger", version, about = "Map natural-language query keywords to database schema elements")]
struct Cli {
    /// Seed for every random choice (initialization, dropout, shuffling, folds).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output format for machine-readable results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tagger and write the model and its per-epoch history.
    Train(TrainCmd),
    /// Tag queries read one per line, whitespace tokenized.
    Tag(TagCmd),
    /// Score a trained model against an annotated corpus.
    Eval(EvalCmd),
    /// K-fold cross-validation of one or more architecture variants.
    Cv(CvCmd),
    /// Latency and memory of mappers over generated snapshots of growing size.
    Bench(BenchCmd),
    /// Table and tag counts of a schema.
    Stats(StatsCmd),
    /// Build the inverted value index of a snapshot and write it to disk.
    IndexBuild(IndexBuildCmd),
    /// Render SQL skeletons from tagged queries.
    Translate(TranslateCmd),
}

#[derive(Args)]
struct Training {
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    /// Last epoch trained with Adadelta; later epochs use Nadam.
    #[arg(long, default_value_t = 50)]
    switch_epoch: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// POS, TYPE and SCHEMA loss weights.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.7])]
    weights: Vec<f64>,
    /// Stop after this many epochs without a better validation accuracy.
    #[arg(long)]
    patience: Option<usize>,
}

impl Training {
    fn config(&self, seed: u64) -> Result<TrainConfig> {
        let [pos, type_, schema] = self.weights[..] else {
            bail!("--weights takes three comma-separated values, got {}", self.weights.len());
        };
        let w = TaskWeights::new(pos, type_, schema)?;
        let config = TrainConfig {
            epochs: self.epochs,
            switch_epoch: self.switch_epoch,
            batch_size: self.batch_size,
            hidden: self.hidden,
            dropout: self.dropout,
            weights: w,
            seed,
            patience: self.patience,
            ..TrainConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    corpus: PathBuf,
    /// Schema whose derived tags form the SCHEMA vocabulary.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    emb: PathBuf,
    /// Validation corpus used for early stopping and the history.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// History CSV; defaults to the model path with `.history.csv` appended.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    training: Training,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
    /// Embeddings the model was trained with.
    #[arg(long)]
    emb: PathBuf,
}

impl ModelArgs {
    fn load(&self) -> Result<DBTaggerModel> {
        let emb = embeddings(&self.emb)?;
        DBTaggerModel::load(&self.model, emb).with_context(|| format!("loading model {}", self.model.display()))
    }
}

#[derive(Args)]
struct TagCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// Query file; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct CvCmd {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    emb: PathBuf,
    #[arg(long, default_value_t = 6)]
    folds: usize,
    /// Variants to evaluate on the same folds.
    #[arg(long, value_delimiter = ',', default_value = "DBTagger")]
    variants: Vec<Variant>,
    #[command(flatten)]
    training: Training,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MapperName {
    Scan,
    Tfidf,
    Dbtagger,
}

#[derive(Args)]
struct BenchCmd {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    rows: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "scan,tfidf")]
    mappers: Vec<MapperName>,
    /// Required for the dbtagger mapper.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    emb: Option<PathBuf>,
    /// Queries, one per line; a built-in set when absent.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = dbtagger::baselines::DEFAULT_ROW_LIMIT)]
    row_limit: usize,
    /// CSV file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsCmd {
    #[arg(long)]
    schema: PathBuf,
    /// Tag count to compare against, e.g. a published total.
    #[arg(long)]
    expected: Option<usize>,
}

#[derive(Args)]
struct IndexBuildCmd {
    #[arg(long)]
    schema: PathBuf,
    /// Directory holding one `<table>.tsv` per table.
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TranslateCmd {
    #[arg(long)]
    schema: PathBuf,
    /// Annotated corpus whose tags are translated directly.
    #[arg(long, conflicts_with_all = ["model", "input"])]
    tagged: Option<PathBuf>,
    /// Model used to tag raw queries.
    #[arg(long, requires = "emb")]
    model: Option<PathBuf>,
    #[arg(long)]
    emb: Option<PathBuf>,
    /// Raw queries, one per line; standard input when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

const BENCH_QUERIES: &[&str] = &[
    "who acted John Nash in the movie A Beautiful Mind",
    "list the movies where Anna Brown acted as a silent river",
    "which people wrote the movie Golden Night Storm",
    "movies from 1999 with Kate Moore",
];

fn embeddings(path: &Path) -> Result<Arc<EmbeddingTable>> {
    let table = load_embeddings_file(path, None).with_context(|| format!("loading embeddings {}", path.display()))?;
    Ok(Arc::new(table))
}

fn corpus(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path.file_stem().map_or_else(|| "corpus".to_string(), |s| s.to_string_lossy().into_owned());
    parse_corpus(&name, &text).with_context(|| format!("parsing {}", path.display()))
}

fn schema(path: &Path) -> Result<Schema> {
    load_schema_file(path).with_context(|| format!("loading schema {}", path.display()))
}

fn read_queries(path: Option<&Path>) -> Result<Vec<Vec<String>>> {
    let lines: Vec<String> = match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?.lines().map(str::to_string).collect(),
        None => io::stdin().lock().lines().collect::<io::Result<_>>()?,
    };
    Ok(lines
        .iter()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|q| !q.is_empty())
        .collect())
}

fn json_line<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run_train(cmd: &TrainCmd, seed: u64) -> Result<()> {
    let config = cmd.training.config(seed)?;
    let data = corpus(&cmd.corpus)?;
    let val = cmd.val.as_deref().map(corpus).transpose()?;
    let schema = cmd.schema.as_deref().map(schema).transpose()?;
    let (model, history) = fit(embeddings(&cmd.emb)?, schema.as_ref(), &data, val.as_ref(), &config)?;
    model.save(&cmd.out)?;
    let history_path = cmd.history.clone().unwrap_or_else(|| {
        let mut p = cmd.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    fs::write(&history_path, history.to_csv()).with_context(|| format!("writing {}", history_path.display()))?;
    let last = history.records.last().map_or(f64::NAN, |r| r.mean_loss);
    eprintln!(
        "trained {} epochs on {} queries, final mean loss {last:.6}{}",
        history.records.len(),
        data.len(),
        if history.stopped_early { " (stopped early)" } else { "" }
    );
    Ok(())
}

fn run_tag(cmd: &TagCmd, format: Format, out: &mut impl Write) -> Result<()> {
    let model = cmd.model.load()?;
    for (i, q) in read_queries(cmd.input.as_deref())?.iter().enumerate() {
        let tagged = model.tag_query(q)?;
        match format {
            Format::Json => json_line(out, &tagged)?,
            Format::Tsv => {
                if i > 0 {
                    writeln!(out)?;
                }
                for t in &tagged.tokens {
                    writeln!(out, "{}\t{}\t{}\t{}", t.text, t.pos, t.type_tag.as_str(), t.schema_tag)?;
                }
            }
        }
    }
    Ok(())
}

fn run_eval(cmd: &EvalCmd, format: Format, out: &mut impl Write) -> Result<()> {
    let model = cmd.model.load()?;
    let gold = corpus(&cmd.corpus)?;
    let report = score(&predict_schema_tags(&model, &gold)?, &gold)?;
    match format {
        Format::Json => json_line(out, &report),
        Format::Tsv => Ok(writeln!(out, "{report}")?),
    }
}

#[derive(Serialize)]
struct CvRecord<'a> {
    variant: &'a str,
    summary: &'a dbtagger::eval::CvSummary,
}

fn run_cv(cmd: &CvCmd, seed: u64, format: Format, out: &mut impl Write) -> Result<()> {
    let config = cmd.training.config(seed)?;
    let data = corpus(&cmd.corpus)?;
    let schema = cmd.schema.as_deref().map(schema).transpose()?;
    let results = ablation_cv(&data, schema.as_ref(), embeddings(&cmd.emb)?, &config, cmd.folds, &cmd.variants)?;
    if format == Format::Tsv {
        writeln!(out, "variant\tfold\ttoken_accuracy\tmacro_f1\trelation_accuracy\tnonrelation_accuracy")?;
    }
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    for (variant, summary) in &results {
        match format {
            Format::Json => json_line(out, &CvRecord { variant: variant.as_str(), summary })?,
            Format::Tsv => {
                for (i, r) in summary.folds.iter().enumerate() {
                    writeln!(
                        out,
                        "{variant}\t{}\t{:.4}\t{:.4}\t{}\t{}",
                        i + 1,
                        r.token_accuracy,
                        r.macro_f1,
                        opt(r.relation_accuracy),
                        opt(r.nonrelation_accuracy)
                    )?;
                }
                writeln!(
                    out,
                    "{variant}\tmean\t{:.4}\t{:.4}\t{}\t{}",
                    summary.mean_accuracy,
                    summary.mean_macro_f1,
                    opt(summary.mean_relation_accuracy),
                    opt(summary.mean_nonrelation_accuracy)
                )?;
            }
        }
    }
    Ok(())
}

fn run_bench(cmd: &BenchCmd, seed: u64, format: Format, out: &mut impl Write) -> Result<()> {
    let queries = match &cmd.queries {
        Some(p) => read_queries(Some(p))?,
        None => BENCH_QUERIES.iter().map(|q| q.split(' ').map(str::to_string).collect()).collect(),
    };
    let model = if cmd.mappers.contains(&MapperName::Dbtagger) {
        let (Some(model), Some(emb)) = (&cmd.model, &cmd.emb) else {
            bail!("the dbtagger mapper needs --model and --emb");
        };
        Some(ModelArgs { model: model.clone(), emb: emb.clone() }.load()?)
    } else {
        None
    };
    let mappers: Vec<ScalingMapper> = cmd
        .mappers
        .iter()
        .map(|m| match m {
            MapperName::Scan => ScalingMapper::Scan { row_limit: cmd.row_limit },
            MapperName::Tfidf => ScalingMapper::Tfidf,
            MapperName::Dbtagger => ScalingMapper::Tagger(model.as_ref().expect("loaded above")),
        })
        .collect();
    let rows = bench_scaling(&mappers, |n| synthetic_snapshot(n, seed), &cmd.rows, &queries, cmd.repetitions, cmd.warmup);
    let mut text = Vec::new();
    match format {
        Format::Tsv => {
            writeln!(text, "{}", ScalingRow::CSV_HEADER)?;
            for r in &rows {
                writeln!(text, "{}", r.csv_line())?;
            }
        }
        Format::Json => {
            for r in &rows {
                json_line(&mut text, r)?;
            }
        }
    }
    match &cmd.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => out.write_all(&text)?,
    }
    Ok(())
}

fn run_stats(cmd: &StatsCmd, format: Format, out: &mut impl Write) -> Result<()> {
    let stats = schema_stats(&schema(&cmd.schema)?, cmd.expected);
    if let Some(w) = stats.warning() {
        eprintln!("warning: {w}");
    }
    match format {
        Format::Json => json_line(out, &stats),
        Format::Tsv => Ok(writeln!(out, "{stats}")?),
    }
}

fn run_index_build(cmd: &IndexBuildCmd) -> Result<()> {
    let schema = schema(&cmd.schema)?;
    let snapshot = load_snapshot_dir(&schema, &cmd.snapshot).with_context(|| format!("loading snapshot {}", cmd.snapshot.display()))?;
    let index = build_value_index(&snapshot, &schema);
    index.save(&cmd.out)?;
    eprintln!("indexed {} phrases over {} columns ({} bytes)", index.len(), index.columns().len(), index.memory_bytes());
    Ok(())
}

#[derive(Serialize)]
struct Translation {
    sql: String,
    accurate: bool,
}

fn run_translate(cmd: &TranslateCmd, format: Format, out: &mut impl Write) -> Result<()> {
    let schema = schema(&cmd.schema)?;
    let graph = build_schema_graph(&schema);
    let tagged: Vec<TaggedQuery> = match (&cmd.tagged, &cmd.model) {
        (Some(path), _) => corpus(path)?
            .queries()
            .iter()
            .map(|q| {
                TaggedQuery::new(
                    q.tokens()
                        .iter()
                        .map(|t| TaggedToken {
                            text: t.text.clone(),
                            pos: t.pos.clone(),
                            type_tag: t.type_tag,
                            schema_tag: t.schema_tag.clone(),
                        })
                        .collect(),
                )
            })
            .collect(),
        (None, Some(model)) => {
            let emb = cmd.emb.as_ref().expect("required by clap");
            let model = ModelArgs { model: model.clone(), emb: emb.clone() }.load()?;
            read_queries(cmd.input.as_deref())?.iter().map(|q| model.tag_query(q)).collect::<Result<_, _>>()?
        }
        (None, None) => bail!("translate needs --tagged or --model"),
    };
    for q in &tagged {
        let result = match translate(&graph, &schema, &mappings_from_tags(q)) {
            Ok(sql) => Translation {
                accurate: sql != dbtagger::translate::INACCURATE,
                sql,
            },
            Err(e) => Translation {
                sql: format!("INACCURATE: {e}"),
                accurate: false,
            },
        };
        match format {
            Format::Json => json_line(out, &result)?,
            Format::Tsv => writeln!(out, "{}", result.sql)?,
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DBTAG_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("DBTAG_THREADS={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("DBTAG_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    match &cli.command {
        Command::Train(c) => run_train(c, cli.seed)?,
        Command::Tag(c) => run_tag(c, cli.format, &mut out)?,
        Command::Eval(c) => run_eval(c, cli.format, &mut out)?,
        Command::Cv(c) => run_cv(c, cli.seed, cli.format, &mut out)?,
        Command::Bench(c) => run_bench(c, cli.seed, cli.format, &mut out)?,
        Command::Stats(c) => run_stats(c, cli.format, &mut out)?,
        Command::IndexBuild(c) => run_index_build(c)?,
        Command::Translate(c) => run_translate(c, cli.format, &mut out)?,
    }
    out.flush()?;
    Ok(())
}
