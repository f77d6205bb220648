//! Staged command-line pipeline over a workspace directory.
//!
//! Every stage reads the artifacts of earlier stages from the workspace,
//! writes its own artifact atomically and records input and output digests in
//! `run.json`. On success a one-line JSON summary goes to standard output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{build_occurrence_index, build_vocabulary, load_corpus_with_stoplist, parse_corpus, Corpus, Stoplist};
use crate::error::{Error, Result};
use crate::extract::{extract_topics, topic_word_distributions, TopicsFile, TOP_WORDS};
use crate::metrics::{annotation_jsonl, cluster_for_annotation, evaluate, GroundTruthGoals, Report, TopicTextMode, THRESHOLDS};
use crate::model::GoalMatrix;
use crate::providers::{
    augment_document, embed_phrase, embed_tokens, parse_augmented_jsonl, parse_goals_jsonl, summarize_goals,
    write_atomic, write_augmented_jsonl, write_goals_jsonl, CachedEmbedder, DocGoals, Embedder, EmbeddingCache,
    HttpConfig, ProviderSpec, Providers,
};
use crate::train::{build_goal_matrix, build_goal_set, load_checkpoint, save_checkpoint, train_with_goal_matrix, TrainConfig};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const GOAL_TEXT_FILE: &str = "goal.txt";
pub const GOALS_FILE: &str = "goals.jsonl";
pub const AUGMENTED_FILE: &str = "augmented.jsonl";
pub const CACHE_FILE: &str = "embeddings.cache";
pub const GOAL_MATRIX_FILE: &str = "goal_matrix.json";
pub const ANNOTATION_FILE: &str = "annotation.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.json";
pub const TOPICS_FILE: &str = "topics.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "goaltm", version, about = "Goal-driven topic modeling pipeline")]
pub struct Cli {
    /// Training configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "work")]
    pub workspace: PathBuf,
    /// `fixture:<path>` or `http:<base-url>`.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest a corpus and summarize each document's goals.
    Goals(GoalsArgs),
    /// Generate two rephrasings of every relevant document.
    Augment,
    /// Fill the embedding cache for documents, rephrasings and goal phrases.
    Embed,
    /// Cluster goal phrases into the goal matrix.
    ClusterGoals(ClusterArgs),
    /// Optimize the topic matrix.
    Train,
    /// Emit top words and summaries per topic.
    Extract(ExtractArgs),
    /// Score topics against ground-truth goals.
    Eval(EvalArgs),
    /// Collect reports into long-format CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GoalsArgs {
    /// Corpus JSONL with `id`, `text` and optional `tokens` and `relevant`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// The human goal, as free text.
    #[arg(long)]
    pub goal_text: String,
    /// One word per line, applied when a record has no `tokens`.
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Also write an annotation listing with this many clusters.
    #[arg(long)]
    pub annotate: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, default_value_t = TOP_WORDS)]
    pub top_words: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON array of ground-truth goal phrases.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "top-words")]
    pub mode: TopicTextMode,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `report.json` files; the run id is the name of each file's directory.
    pub inputs: Vec<PathBuf>,
    /// Defaults to `report.csv` in the workspace.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingArtifact(_)
        | Error::Validation(_)
        | Error::Parse { .. }
        | Error::Json(_)
        | Error::Domain(_)
        | Error::Corruption(_)
        | Error::Cache(_) => 2,
        Error::Transport(_) | Error::Protocol(_) | Error::Format { .. } => 3,
        Error::Unsupported(_) | Error::NonFinite(_) | Error::Invariant(_) | Error::Io { .. } => 4,
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<Value> {
    let mut config = match &cli.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let ws = Workspace::new(&cli.workspace);
    let ctx = Context {
        ws,
        config,
        provider: cli.provider.clone(),
    };
    match &cli.command {
        Command::Goals(a) => cmd_goals(&ctx, a),
        Command::Augment => cmd_augment(&ctx),
        Command::Embed => cmd_embed(&ctx),
        Command::ClusterGoals(a) => cmd_cluster_goals(&ctx, a),
        Command::Train => cmd_train(&ctx),
        Command::Extract(a) => cmd_extract(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
    }
}

/// Artifact paths of one pipeline run.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        read_file(&self.path(name))
    }

    fn read_text(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        String::from_utf8(read_file(&path)?)
            .map_err(|_| Error::validation(format!("{} is not UTF-8", path.display())))
    }

    fn require(&self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact(path))
        }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One stage's entry in `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_digest: String,
    pub seed: u64,
    pub provider: Option<String>,
    /// Input name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Corruption(format!("{}: {e}", path.display())))
    }
}

struct Context {
    ws: Workspace,
    config: TrainConfig,
    provider: Option<String>,
}

/// Inputs and outputs a stage has touched, for the manifest.
#[derive(Default)]
struct Digests {
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Digests {
    fn input(&mut self, name: impl Into<String>, bytes: &[u8]) {
        self.inputs.insert(name.into(), sha256_hex(bytes));
    }

    fn output(&mut self, name: impl Into<String>, bytes: &[u8]) {
        self.outputs.insert(name.into(), sha256_hex(bytes));
    }
}

impl Context {
    fn providers(&self) -> Result<Providers> {
        let spec = self
            .provider
            .as_deref()
            .ok_or_else(|| Error::validation("this command needs --provider fixture:<path> or http:<url>"))?;
        Providers::from_spec(&spec.parse::<ProviderSpec>()?, HttpConfig::default())
    }

    /// Provider embedder behind the workspace cache; misses are computed but
    /// not written back.
    fn cached_embedder(&self, providers: &Providers, d: &mut Digests) -> Result<CachedEmbedder> {
        let path = self.ws.require(CACHE_FILE)?;
        let bytes = read_file(&path)?;
        d.input(CACHE_FILE, &bytes);
        let cache = EmbeddingCache::from_bytes(&bytes)?;
        CachedEmbedder::new(providers.embedder.clone(), Arc::new(cache))
    }

    fn load_corpus(&self, d: &mut Digests) -> Result<Corpus> {
        let goal_text = self.ws.read_text(GOAL_TEXT_FILE)?;
        let bytes = self.ws.read(CORPUS_FILE)?;
        d.input(GOAL_TEXT_FILE, goal_text.as_bytes());
        d.input(CORPUS_FILE, &bytes);
        parse_corpus(bytes.as_slice(), &goal_text, None).map_err(|e| self.at(CORPUS_FILE, e))
    }

    fn load_goals(&self, d: &mut Digests) -> Result<Vec<DocGoals>> {
        let text = self.ws.read_text(GOALS_FILE)?;
        d.input(GOALS_FILE, text.as_bytes());
        parse_goals_jsonl(&text).map_err(|e| self.at(GOALS_FILE, e))
    }

    /// Relevant documents and their goals.
    fn load_kept(&self, d: &mut Digests) -> Result<(Corpus, crate::train::GoalSet)> {
        // Goals first, so a missing goals artifact is the error reported.
        let goals = self.load_goals(d)?;
        let corpus = self.load_corpus(d)?;
        build_goal_set(&corpus, &goals)
    }

    fn at(&self, name: &str, e: Error) -> Error {
        let path = self.ws.path(name);
        match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
            other => other,
        }
    }

    fn record(&self, stage: &str, d: Digests) -> Result<()> {
        let path = self.ws.path(MANIFEST_FILE);
        let mut manifest = if path.is_file() {
            Manifest::load(&path)?
        } else {
            Manifest::default()
        };
        manifest.stages.insert(
            stage.to_owned(),
            StageRecord {
                config_digest: self.config.digest(),
                seed: self.config.seed,
                provider: self.provider.clone(),
                inputs: d.inputs,
                outputs: d.outputs,
            },
        );
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        self.ws.write(MANIFEST_FILE, text.as_bytes())
    }

    fn emit(&self, stage: &str, name: &str, bytes: &[u8], d: &mut Digests) -> Result<()> {
        self.ws.write(name, bytes)?;
        d.output(name, bytes);
        log::info!("{stage}: wrote {}", self.ws.path(name).display());
        Ok(())
    }
}

fn cmd_goals(ctx: &Context, args: &GoalsArgs) -> Result<Value> {
    let providers = ctx.providers()?;
    let stoplist = args.stoplist.as_ref().map(Stoplist::load).transpose()?;
    let source = read_file(&args.corpus)?;
    let corpus = load_corpus_with_stoplist(&args.corpus, &args.goal_text, stoplist.as_ref())?;
    let mut d = Digests::default();
    d.input(args.corpus.display().to_string(), &source);

    let mut goals = Vec::with_capacity(corpus.len());
    for doc in corpus.documents() {
        goals.push(if doc.relevant {
            summarize_goals(providers.completion.as_ref(), doc, corpus.goal_text())?
        } else {
            DocGoals::irrelevant(&doc.id)
        });
    }
    let relevant = goals.iter().filter(|g| g.relevant).count();
    ctx.emit("goals", CORPUS_FILE, corpus.to_jsonl().as_bytes(), &mut d)?;
    ctx.emit("goals", GOAL_TEXT_FILE, args.goal_text.as_bytes(), &mut d)?;
    ctx.emit("goals", GOALS_FILE, write_goals_jsonl(&goals).as_bytes(), &mut d)?;
    ctx.record("goals", d)?;
    Ok(json!({
        "command": "goals",
        "documents": corpus.len(),
        "relevant": relevant,
        "output": ctx.ws.path(GOALS_FILE),
    }))
}

fn cmd_augment(ctx: &Context) -> Result<Value> {
    let mut d = Digests::default();
    let (kept, _) = ctx.load_kept(&mut d)?;
    let providers = ctx.providers()?;
    let mut pairs = Vec::with_capacity(kept.len());
    let mut skipped = Vec::new();
    for doc in kept.documents() {
        match augment_document(providers.completion.as_ref(), doc) {
            Ok(p) => pairs.push(p),
            Err(e @ Error::Transport(_)) => return Err(e),
            Err(e) => {
                log::warn!("augmentation of {:?} failed, skipped: {e}", doc.id);
                skipped.push(doc.id.clone());
            }
        }
    }
    ctx.emit("augment", AUGMENTED_FILE, write_augmented_jsonl(&pairs).as_bytes(), &mut d)?;
    ctx.record("augment", d)?;
    Ok(json!({
        "command": "augment",
        "pairs": pairs.len(),
        "skipped": skipped,
        "output": ctx.ws.path(AUGMENTED_FILE),
    }))
}

fn cmd_embed(ctx: &Context) -> Result<Value> {
    let mut d = Digests::default();
    let (kept, goal_set) = ctx.load_kept(&mut d)?;
    let text = ctx.ws.read_text(AUGMENTED_FILE)?;
    d.input(AUGMENTED_FILE, text.as_bytes());
    let pairs = parse_augmented_jsonl(&text).map_err(|e| ctx.at(AUGMENTED_FILE, e))?;
    let providers = ctx.providers()?;

    let dim = providers.embedder.dim();
    let cache = EmbeddingCache::open(ctx.ws.path(CACHE_FILE), dim)?;
    let before = cache.len();
    let cache = Arc::new(cache);
    let embedder = CachedEmbedder::new(providers.embedder.clone(), cache.clone())?;
    for doc in kept.documents() {
        embed_tokens(&embedder, &doc.tokens)?;
    }
    for p in &pairs {
        embed_tokens(&embedder, &p.tokens_a)?;
        embed_tokens(&embedder, &p.tokens_b)?;
    }
    for phrase in &goal_set.phrases {
        embed_phrase(&embedder, phrase)?;
    }
    let bytes = cache.to_bytes();
    ctx.emit("embed", CACHE_FILE, &bytes, &mut d)?;
    ctx.record("embed", d)?;
    Ok(json!({
        "command": "embed",
        "entries": cache.len(),
        "added": cache.len() - before,
        "output": ctx.ws.path(CACHE_FILE),
    }))
}

/// On-disk goal matrix.
#[derive(Debug, Serialize, Deserialize)]
struct GoalMatrixRecord {
    k: usize,
    dim: usize,
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    candidates: Vec<String>,
}

pub fn goal_matrix_to_json(goals: &GoalMatrix) -> String {
    let record = GoalMatrixRecord {
        k: goals.k(),
        dim: goals.dim(),
        centroids: goals.centroids().rows().into_iter().map(|r| r.to_vec()).collect(),
        assignments: goals.assignments().to_vec(),
        candidates: goals.candidates().to_vec(),
    };
    let mut s = serde_json::to_string(&record).expect("goal matrix serializes");
    s.push('\n');
    s
}

pub fn goal_matrix_from_json(text: &str) -> Result<GoalMatrix> {
    let r: GoalMatrixRecord = serde_json::from_str(text)?;
    if r.centroids.len() != r.k || r.centroids.iter().any(|row| row.len() != r.dim) {
        return Err(Error::validation(format!("goal matrix rows do not match {}x{}", r.k, r.dim)));
    }
    let flat: Vec<f64> = r.centroids.into_iter().flatten().collect();
    let centroids = ndarray::Array2::from_shape_vec((r.k, r.dim), flat).expect("shape checked");
    GoalMatrix::new(centroids, r.assignments, r.candidates)
}

fn cmd_cluster_goals(ctx: &Context, args: &ClusterArgs) -> Result<Value> {
    let mut d = Digests::default();
    let (_, goal_set) = ctx.load_kept(&mut d)?;
    let providers = ctx.providers()?;
    let embedder = ctx.cached_embedder(&providers, &mut d)?;
    let goals = build_goal_matrix(&goal_set.phrases, ctx.config.k, &embedder, ctx.config.seed)?;
    ctx.emit("cluster-goals", GOAL_MATRIX_FILE, goal_matrix_to_json(&goals).as_bytes(), &mut d)?;
    let mut summary = json!({
        "command": "cluster-goals",
        "k": goals.k(),
        "phrases": goal_set.phrases.len(),
        "output": ctx.ws.path(GOAL_MATRIX_FILE),
    });
    if let Some(n) = args.annotate {
        let clusters = cluster_for_annotation(&goal_set.phrases, n, &embedder, ctx.config.seed)?;
        ctx.emit("cluster-goals", ANNOTATION_FILE, annotation_jsonl(&clusters).as_bytes(), &mut d)?;
        summary["annotation"] = json!(ctx.ws.path(ANNOTATION_FILE));
    }
    ctx.record("cluster-goals", d)?;
    Ok(summary)
}

fn cmd_train(ctx: &Context) -> Result<Value> {
    let mut d = Digests::default();
    let (kept, goal_set) = ctx.load_kept(&mut d)?;
    let text = ctx.ws.read_text(AUGMENTED_FILE)?;
    d.input(AUGMENTED_FILE, text.as_bytes());
    let pairs = parse_augmented_jsonl(&text).map_err(|e| ctx.at(AUGMENTED_FILE, e))?;
    let text = ctx.ws.read_text(GOAL_MATRIX_FILE)?;
    d.input(GOAL_MATRIX_FILE, text.as_bytes());
    let goals = goal_matrix_from_json(&text).map_err(|e| ctx.at(GOAL_MATRIX_FILE, e))?;
    let providers = ctx.providers()?;
    let embedder = ctx.cached_embedder(&providers, &mut d)?;

    let out = train_with_goal_matrix(&kept, &goal_set, &pairs, goals, &ctx.config, &embedder)?;
    let path = ctx.ws.path(CHECKPOINT_FILE);
    save_checkpoint(&out.checkpoint, &path)?;
    d.output(CHECKPOINT_FILE, &out.checkpoint.to_bytes());
    let mut history = serde_json::to_string_pretty(&out.history)?;
    history.push('\n');
    ctx.emit("train", HISTORY_FILE, history.as_bytes(), &mut d)?;
    ctx.record("train", d)?;
    let totals = out.history.totals();
    Ok(json!({
        "command": "train",
        "steps": out.checkpoint.steps,
        "epochs": out.history.epochs,
        "stopped_early": out.history.stopped_early,
        "first_loss": totals.first(),
        "final_loss": totals.last(),
        "output": path,
    }))
}

fn cmd_extract(ctx: &Context, args: &ExtractArgs) -> Result<Value> {
    let mut d = Digests::default();
    let (kept, _) = ctx.load_kept(&mut d)?;
    let bytes = ctx.ws.read(CHECKPOINT_FILE)?;
    d.input(CHECKPOINT_FILE, &bytes);
    let ckpt = load_checkpoint(ctx.ws.path(CHECKPOINT_FILE))?;
    let providers = ctx.providers()?;
    let embedder = ctx.cached_embedder(&providers, &mut d)?;

    let vocab = build_vocabulary(&kept, ctx.config.min_count)?;
    let index = build_occurrence_index(&kept, &vocab);
    let table = topic_word_distributions(&kept, &vocab, &index, &embedder, &ckpt.topics)?;
    let topics = extract_topics(&table, &ckpt.goals, &embedder, args.top_words)?;
    ctx.emit("extract", TOPICS_FILE, topics.to_json().as_bytes(), &mut d)?;
    ctx.record("extract", d)?;
    Ok(json!({
        "command": "extract",
        "topics": topics.topics.len(),
        "vocabulary": vocab.len(),
        "output": ctx.ws.path(TOPICS_FILE),
    }))
}

fn cmd_eval(ctx: &Context, args: &EvalArgs) -> Result<Value> {
    let mut d = Digests::default();
    let topics = TopicsFile::load(ctx.ws.path(TOPICS_FILE))?;
    d.input(TOPICS_FILE, &ctx.ws.read(TOPICS_FILE)?);
    let (kept, _) = ctx.load_kept(&mut d)?;
    let truth = GroundTruthGoals::load(&args.truth)?;
    d.input(args.truth.display().to_string(), &read_file(&args.truth)?);
    let providers = ctx.providers()?;
    let embedder = ctx.cached_embedder(&providers, &mut d)?;

    let thresholds = args.thresholds.clone().unwrap_or_else(|| THRESHOLDS.to_vec());
    let report = evaluate(&topics, &truth, &kept, args.mode, &thresholds, &embedder)?;
    ctx.emit("eval", REPORT_FILE, report.to_json().as_bytes(), &mut d)?;
    ctx.record("eval", d)?;
    Ok(json!({
        "command": "eval",
        "gs": report.metrics.get("gs"),
        "ut": report.metrics.get("ut"),
        "gtr": report.gtr,
        "gcr": report.gcr,
        "output": ctx.ws.path(REPORT_FILE),
    }))
}

/// Run id of a report: the name of its directory, else its file stem.
fn run_id(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Long-format CSV `run,metric,K,value`, one row per metric per report.
pub fn reports_to_csv(reports: &[(String, Report)]) -> String {
    let mut out = String::from("run,metric,K,value\n");
    for (run, report) in reports {
        for (metric, value) in &report.metrics {
            out.push_str(&format!("{},{},{},{}\n", csv_field(run), csv_field(metric), report.k, value));
        }
    }
    out
}

fn cmd_report(ctx: &Context, args: &ReportArgs) -> Result<Value> {
    if args.inputs.is_empty() {
        return Err(Error::validation("report needs at least one report.json input"));
    }
    let mut d = Digests::default();
    let mut reports = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let report = Report::load(path)?;
        d.input(path.display().to_string(), &read_file(path)?);
        reports.push((run_id(path), report));
    }
    let csv = reports_to_csv(&reports);
    let out = args.out.clone().unwrap_or_else(|| ctx.ws.path(REPORT_CSV_FILE));
    write_atomic(&out, csv.as_bytes())?;
    Ok(json!({
        "command": "report",
        "reports": reports.len(),
        "rows": csv.lines().count() - 1,
        "output": out,
    }))
}
