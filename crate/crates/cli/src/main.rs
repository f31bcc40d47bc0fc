mod manifest;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use aspect_core::corpus::{self, CorpusError, Split, TermSource};
use aspect_core::dyclu::{self, ClusterError, DyCluConfig, THETA_MAX};
use aspect_core::embedding::{EmbedError, EmbeddingProvider, EmbeddingProviderConfig, ProviderKind, DEFAULT_DIM};
use aspect_core::eval::{self, EvalError, MatchConfig, Matching, DEFAULT_THRESHOLD};
use aspect_core::llm_gen::{self, ChatConfig, ChatError, GenError, GenerateConfig, HttpChatClient, ResponseCache};
use aspect_core::preference::{self, PreferenceError};
use aspect_core::report::{self, ReportError, ReportInput};

use manifest::{default_manifest_path, RunManifest};

#[derive(Parser)]
#[command(name = "aspect-cluster", version, about = "Aspect-term generation, evaluation and comment clustering")]
struct Cli {
    /// Where to write the run manifest [default: <output>.manifest.json, or stderr]
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check corpus files and print per-language counts
    Validate(ValidateArgs),
    /// Annotate a corpus with aspect terms through a chat-completion service
    Generate(GenerateArgs),
    /// Score predicted against gold aspect terms
    Eval(EvalArgs),
    /// F1 over random subsamples of several sizes (CSV: size,seed,f1)
    Sweep(SweepArgs),
    /// Build preference pairs from human and machine annotations
    Prefs(PrefsArgs),
    /// Cluster comments and optionally score against gold clusters
    Cluster(ClusterArgs),
    /// Render eval or cluster outputs as tables
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum SplitArg {
    Finetune,
    Test,
    Unsplit,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Finetune => Split::Finetune,
            SplitArg::Test => Split::Test,
            SplitArg::Unsplit => Split::Unsplit,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    /// Corpus files (JSONL), one or more
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Split label recorded in the summary
    #[arg(long, value_enum, default_value = "unsplit")]
    split: SplitArg,
    /// Also write the counts as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum EmbedderArg {
    Deterministic,
    Remote,
}

#[derive(Debug, Args, Serialize)]
struct EmbedArgs {
    /// Embedding provider
    #[arg(long, value_enum, default_value = "deterministic")]
    embedder: EmbedderArg,
    /// Remote embedding endpoint
    #[arg(long, env = "ASPECT_EMBED_ENDPOINT")]
    embed_endpoint: Option<String>,
    /// Remote embedding model name
    #[arg(long)]
    embed_model: Option<String>,
    /// Embedding dimension
    #[arg(long, default_value_t = DEFAULT_DIM)]
    embed_dim: usize,
    /// Hash seed for the deterministic embedder
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    /// Texts per remote request
    #[arg(long, default_value_t = 64)]
    embed_batch_size: usize,
    /// Remote request timeout in seconds
    #[arg(long, default_value_t = 30.0)]
    embed_timeout: f64,
    /// Extra attempts on retryable remote failures
    #[arg(long, default_value_t = 2)]
    embed_retries: u32,
}

impl EmbedArgs {
    fn build(&self) -> Result<Box<dyn EmbeddingProvider>, Failure> {
        let timeout = Duration::try_from_secs_f64(self.embed_timeout)
            .map_err(|e| Failure::Validation(format!("--embed-timeout: {e}")))?;
        let cfg = EmbeddingProviderConfig {
            kind: match self.embedder {
                EmbedderArg::Deterministic => ProviderKind::DeterministicLocal,
                EmbedderArg::Remote => ProviderKind::Remote,
            },
            dim: self.embed_dim,
            endpoint: self.embed_endpoint.clone(),
            model_name: self.embed_model.clone(),
            timeout,
            batch_size: self.embed_batch_size,
            seed: self.embed_seed,
            retries: self.embed_retries,
        };
        Ok(cfg.build()?)
    }
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    /// Input corpus (JSONL)
    #[arg(long)]
    corpus: PathBuf,
    /// Output corpus with predicted aspect terms
    #[arg(long)]
    out: PathBuf,
    /// Chat-completion endpoint URL (API key from ASPECT_LLM_API_KEY)
    #[arg(long)]
    endpoint: String,
    /// Model name sent with each request
    #[arg(long)]
    model: String,
    /// Ask for 1 or 2 aspect terms per comment
    #[arg(long)]
    limit_prompt: bool,
    /// Response cache (JSONL); cached responses are replayed without requests
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Requests in flight
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Extra attempts per comment after an unparsable response or a transient failure
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Request timeout in seconds
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Sampling temperature
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Write comments that could not be annotated (JSONL)
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum MatchingArg {
    MaxBipartite,
    Greedy,
}

impl From<MatchingArg> for Matching {
    fn from(m: MatchingArg) -> Matching {
        match m {
            MatchingArg::MaxBipartite => Matching::MaxBipartite,
            MatchingArg::Greedy => Matching::Greedy,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct MatchArgs {
    /// Cosine similarity at or above which two aspect terms match
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Matching strategy
    #[arg(long, value_enum, default_value = "max_bipartite")]
    matching: MatchingArg,
}

impl MatchArgs {
    fn config(&self) -> Result<MatchConfig, Failure> {
        let cfg = MatchConfig { threshold: self.threshold, matching: self.matching.into() };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// Corpus with gold and predicted aspect terms
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    matching: MatchArgs,
    /// Write the report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Include the per-language breakdown
    #[arg(long)]
    per_language: bool,
    /// Include per-comment counts
    #[arg(long)]
    per_comment: bool,
    #[command(flatten)]
    #[serde(flatten)]
    embed: EmbedArgs,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Sample sizes, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Seeds: a list (1,2,3) or an inclusive range (1..10)
    #[arg(long, default_value = "1..10", value_parser = parse_seeds)]
    seeds: SeedList,
    #[command(flatten)]
    #[serde(flatten)]
    matching: MatchArgs,
    /// CSV output [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    embed: EmbedArgs,
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let bad = |e: std::num::ParseIntError| format!("{s:?}: {e}");
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok(SeedList((a..=b).collect()));
    }
    s.split(',').map(|x| x.trim().parse().map_err(bad)).collect::<Result<_, _>>().map(SeedList)
}

#[derive(Debug, Args, Serialize)]
struct PrefsArgs {
    /// Human-annotated corpus (chosen)
    #[arg(long)]
    human: PathBuf,
    /// Machine-annotated corpus with predictions (rejected)
    #[arg(long)]
    machine: PathBuf,
    /// Preference pairs (JSONL)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ClusterArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Concatenate aspect-term embeddings to comment embeddings
    #[arg(long)]
    augment: bool,
    /// Leave out comments without aspect terms
    #[arg(long)]
    trivial_filter: bool,
    /// Use gold instead of predicted aspect terms
    #[arg(long)]
    oracle_cats: bool,
    /// Initial neighbourhood size
    #[arg(long, default_value_t = 10)]
    gamma0: usize,
    /// Neighbourhood growth per iteration
    #[arg(long, default_value_t = 5)]
    delta: usize,
    /// Initial similarity threshold
    #[arg(long, default_value_t = 0.55)]
    theta0: f64,
    #[arg(long, default_value_t = 0.01)]
    k1: f64,
    #[arg(long, default_value_t = 20.0)]
    k2: f64,
    /// Upper bound of the adaptive threshold
    #[arg(long, default_value_t = THETA_MAX)]
    theta_max: f64,
    /// Clusters JSON
    #[arg(long)]
    out: PathBuf,
    /// Compute NMI against gold comment_cluster labels
    #[arg(long)]
    score: bool,
    #[command(flatten)]
    #[serde(flatten)]
    embed: EmbedArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Eval or cluster JSON outputs, optionally labelled as NAME=PATH
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    #[arg(long, value_enum, default_value = "text")]
    format: FormatArg,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed run; maps onto the process exit code.
#[derive(Debug)]
enum Failure {
    /// Bad input data or configuration (exit 1).
    Validation(String),
    /// File system or network trouble (exit 2).
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Io(m) => m,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EmbedError> for Failure {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Transport { .. } | EmbedError::CountMismatch { .. } => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Embed(e) => e.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ClusterError> for Failure {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Embed(e) => e.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<PreferenceError> for Failure {
    fn from(e: PreferenceError) -> Self {
        match e {
            PreferenceError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ChatError> for Failure {
    fn from(e: ChatError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Chat(_) | GenError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn io_context(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, content).map_err(io_context(p)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(content.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    fs::write(path, json + "\n").map_err(io_context(path))
}

fn load(m: &mut RunManifest, path: &Path) -> Result<corpus::Corpus, Failure> {
    m.add_input(path).map_err(io_context(path))?;
    corpus::load_corpus(path).map_err(|e| match e {
        CorpusError::Io(err) => Failure::Io(format!("{}: {err}", path.display())),
        other => Failure::Validation(format!("{}: {other}", path.display())),
    })
}

fn validate(args: &ValidateArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let mut all = BTreeMap::new();
    let mut text = String::new();
    let mut grand_total = 0;
    for path in &args.corpus {
        m.add_input(path).map_err(io_context(path))?;
        let c = corpus::load_corpus_as(path, args.split.into())
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let stats = corpus::split_stats(&c);
        text.push_str(&c.name);
        for (lang, n) in &stats.counts {
            text.push_str(&format!(" {} {n}", lang.code()));
        }
        text.push_str(&format!(" total {}\n", stats.total));
        grand_total += stats.total;
        all.insert(path.display().to_string(), stats);
    }
    if args.corpus.len() > 1 {
        text.push_str(&format!("all total {grand_total}\n"));
    }
    m.note("total", grand_total);
    write_output(None, &text)?;
    if let Some(out) = &args.out {
        write_json(out, &all)?;
        m.add_output(out);
    }
    Ok(())
}

fn generate(args: &GenerateArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let input = load(m, &args.corpus)?;
    let mut chat = ChatConfig::new(&args.endpoint, &args.model);
    chat.api_key = std::env::var(llm_gen::API_KEY_ENV).ok().filter(|k| !k.is_empty());
    chat.timeout_secs = args.timeout;
    chat.temperature = args.temperature;
    let client = HttpChatClient::new(chat).map_err(|e| Failure::Validation(e.to_string()))?;
    let cache = match &args.cache {
        Some(p) => Some(ResponseCache::open(p)?),
        None => None,
    };
    let cfg = GenerateConfig {
        model: args.model.clone(),
        limit_variant: args.limit_prompt,
        retries: args.retries,
        concurrency: args.concurrency,
    };
    let outcome = llm_gen::generate_cats(&input, &client, cache.as_ref(), &cfg)?;
    corpus::write_corpus(&args.out, &outcome.corpus).map_err(io_context(&args.out))?;
    m.add_output(&args.out);
    if let Some(p) = &args.failures {
        let mut w = BufWriter::new(File::create(p).map_err(io_context(p))?);
        for f in &outcome.failures {
            serde_json::to_writer(&mut w, f).map_err(|e| Failure::Io(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        m.add_output(p);
    }
    if !outcome.failures.is_empty() {
        log::warn!("{} comments could not be annotated", outcome.failures.len());
    }
    m.note("annotated", input.len() - outcome.failures.len());
    m.note("failures", outcome.failures.len());
    m.note("cache_hits", outcome.cache_hits);
    m.note("requests", outcome.requests);
    m.note("truncated", &outcome.truncated);
    Ok(())
}

fn eval_cmd(args: &EvalArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let cfg = args.matching.config()?;
    let input = load(m, &args.corpus)?;
    let provider = args.embed.build()?;
    let mut rep = eval::evaluate_corpus(&input, &provider, &cfg)?;
    if !args.per_language {
        rep.per_language.clear();
    }
    if !args.per_comment {
        rep.comments.clear();
    }
    if let Some(p) = &args.report {
        write_json(p, &rep)?;
        m.add_output(p);
    }
    m.note("f1", rep.overall.f1);
    write_output(None, &report::render_match_table(&[(input.name.clone(), rep)]))
}

fn sweep(args: &SweepArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let cfg = args.matching.config()?;
    let input = load(m, &args.corpus)?;
    let provider = args.embed.build()?;
    let points = eval::scale_sweep(&input, &provider, &cfg, &args.sizes, &args.seeds.0)?;
    let mut csv = String::from("size,seed,f1\n");
    for p in &points {
        csv.push_str(&format!("{},{},{}\n", p.size, p.seed, p.f1));
    }
    write_output(args.out.as_deref(), &csv)?;
    if let Some(p) = &args.out {
        m.add_output(p);
    }
    Ok(())
}

fn prefs(args: &PrefsArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let human = load(m, &args.human)?;
    let machine = load(m, &args.machine)?;
    let set = preference::build_preference_set(&human, &machine)?;
    let file = File::create(&args.out).map_err(io_context(&args.out))?;
    preference::write_preferences(BufWriter::new(file), &set.records).map_err(io_context(&args.out))?;
    m.add_output(&args.out);
    m.note("pairs", set.records.len());
    m.note("skipped", set.skipped.len());
    eprintln!("{} preference pairs, {} identical annotations skipped", set.records.len(), set.skipped.len());
    Ok(())
}

fn cluster(args: &ClusterArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let cfg = DyCluConfig {
        gamma0: args.gamma0,
        theta0: args.theta0,
        theta_max: args.theta_max,
        delta: args.delta,
        k1: args.k1,
        k2: args.k2,
        use_cat_augmentation: args.augment,
        trivial_filter: args.trivial_filter,
    };
    cfg.validate()?;
    let input = load(m, &args.corpus)?;
    let provider = args.embed.build()?;
    let source = if args.oracle_cats { TermSource::Gold } else { TermSource::Pred };
    let outcome = if args.score {
        dyclu::cluster_and_score(&input, &provider, &cfg, source)?
    } else {
        dyclu::cluster_corpus(&input, &provider, &cfg, source, false)?
    };
    write_json(&args.out, &outcome)?;
    m.add_output(&args.out);
    m.note("clusters", outcome.clusters.clusters.len());
    m.note("trivial_excluded", outcome.trivial_excluded);
    if let Some(nmi) = outcome.nmi {
        m.note("nmi", nmi);
    }
    write_output(None, &report::render_cluster_table(&[(input.name.clone(), outcome)]))
}

fn report_cmd(args: &ReportArgs, m: &mut RunManifest) -> Result<(), Failure> {
    let mut matches = Vec::new();
    let mut clusters = Vec::new();
    for spec in &args.input {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) if !l.is_empty() => (l.to_string(), PathBuf::from(p)),
            _ => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.clone());
                (stem, p)
            }
        };
        m.add_input(&path).map_err(io_context(&path))?;
        let json = fs::read_to_string(&path).map_err(io_context(&path))?;
        match report::parse_report_input(&json)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?
        {
            ReportInput::Match(r) => matches.push((label, r)),
            ReportInput::Cluster(c) => clusters.push((label, c)),
        }
    }
    if !matches.is_empty() && !clusters.is_empty() {
        return Err(ReportError::SchemaMismatch("cannot mix eval and cluster outputs in one table".into()).into());
    }
    let rendered = match (args.format, matches.is_empty()) {
        (FormatArg::Text, false) => report::render_match_table(&matches),
        (FormatArg::Csv, false) => report::match_table_csv(&matches),
        (FormatArg::Text, true) => report::render_cluster_table(&clusters),
        (FormatArg::Csv, true) => report::cluster_table_csv(&clusters),
    };
    write_output(args.out.as_deref(), &rendered)?;
    if let Some(p) = &args.out {
        m.add_output(p);
    }
    Ok(())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Generate(_) => "generate",
            Command::Eval(_) => "eval",
            Command::Sweep(_) => "sweep",
            Command::Prefs(_) => "prefs",
            Command::Cluster(_) => "cluster",
            Command::Report(_) => "report",
        }
    }

    fn config(&self) -> serde_json::Value {
        let v = match self {
            Command::Validate(a) => serde_json::to_value(a),
            Command::Generate(a) => serde_json::to_value(a),
            Command::Eval(a) => serde_json::to_value(a),
            Command::Sweep(a) => serde_json::to_value(a),
            Command::Prefs(a) => serde_json::to_value(a),
            Command::Cluster(a) => serde_json::to_value(a),
            Command::Report(a) => serde_json::to_value(a),
        };
        v.unwrap_or(serde_json::Value::Null)
    }

    /// The main output file, next to which the manifest goes by default.
    fn primary_output(&self) -> Option<&Path> {
        match self {
            Command::Validate(a) => a.out.as_deref(),
            Command::Generate(a) => Some(&a.out),
            Command::Eval(a) => a.report.as_deref(),
            Command::Sweep(a) => a.out.as_deref(),
            Command::Prefs(a) => Some(&a.out),
            Command::Cluster(a) => Some(&a.out),
            Command::Report(a) => a.out.as_deref(),
        }
    }

    fn run(&self, m: &mut RunManifest) -> Result<(), Failure> {
        match self {
            Command::Validate(a) => validate(a, m),
            Command::Generate(a) => generate(a, m),
            Command::Eval(a) => eval_cmd(a, m),
            Command::Sweep(a) => sweep(a, m),
            Command::Prefs(a) => prefs(a, m),
            Command::Cluster(a) => cluster(a, m),
            Command::Report(a) => report_cmd(a, m),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut m = RunManifest::start(cli.command.name(), cli.command.config());
    let result = cli.command.run(&mut m);
    let code = match &result {
        Ok(()) => 0,
        Err(f) => f.exit_code(),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(f) => f.message().to_string(),
    };
    m.finish(status, code);

    let manifest_path = cli.manifest.clone().or_else(|| cli.command.primary_output().map(default_manifest_path));
    if let Err(e) = m.emit(manifest_path.as_deref()) {
        eprintln!("error: cannot write manifest: {e}");
        if code == 0 {
            return ExitCode::from(2);
        }
    }
    if let Err(f) = result {
        eprintln!("error: {}", f.message());
    }
    ExitCode::from(code as u8)
}
