//! Aspect-term generation through a chat-completion service.
//!
//! Prompts ask for annotations in the form `[ATs: term, term | EP: N]`, where
//! `EP` is the emotional polarity (N, P or C) and `ATs: NA` means no terms.
//! Responses are parsed back into [`Annotation`]s. A response cache keyed by
//! model, prompt and attempt number makes runs replayable without network.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AspectTerm, Comment, Corpus, Language, Polarity, NA};
use crate::embedding::fnv1a64;

pub const PLACEHOLDER: &str = "{comment}";
pub const LIMIT_PHRASE: &str = "1 or 2 aspect terms";
pub const MAX_ANNOTATION_TERMS: usize = 5;

/// Environment variable holding the chat service API key.
pub const API_KEY_ENV: &str = "ASPECT_LLM_API_KEY";

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("template must contain exactly one {PLACEHOLDER} placeholder, found {0}")]
    Placeholder(usize),
    #[error("limit-variant template must ask for \"{LIMIT_PHRASE}\"")]
    MissingLimitPhrase,
    #[error("template language {template} does not match comment language {comment}")]
    LanguageMismatch { template: Language, comment: Language },
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("response cache: {0}")]
    Cache(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no [ATs: … | EP: …] group in response")]
    NoAnnotation,
    #[error("unknown emotional polarity {0:?}")]
    UnknownPolarity(String),
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ChatError {
    #[error("chat transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("chat service rejected credentials (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("chat service quota exceeded (HTTP {status}): {body}")]
    Quota { status: u16, body: String },
    #[error("unexpected chat response: {0}")]
    Protocol(String),
}

impl ChatError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ChatError::Transport { retryable: true, .. })
    }
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

const INTRO_HEAD: &str = "Comment Aspect Terms (ATs) mean the main aspects that the comment expresses opinions on, and Emotional Polarity (EP) means the main emotion of the comment. I need you to help me annotate main ATs for each ";
const INTRO_TAIL: &str = " comment (no more than 5 ATs), when no ATs are detected, label \"NA\". For each comment, annotate EP with Negative (N), Positive (P), and Neutral (C). ";
const CLOSING: &str = "\nAnnotate the following comment \"{comment}\" and return the result as the format of the examples.";
const CLOSING_LIMIT: &str =
    "\nAnnotate the following comment with 1 or 2 aspect terms \"{comment}\" and return the result as the format of the examples.";

const MS_EXAMPLES: &str = "Here shows four annotation examples: Example 1. Bn nak sgt slangor tu bukanya apa..terliur tgk s'gor negeri plg maju hasil negeri billion2 tapi um ... hahaha...ni meols setuju..yelah..selangor kan paling kaya..rizab berbilion billion.. sebab tak dpt nak sakau dr selangor tu yang fed gomen sakit...zaman dedulu masa bn pegang bolehlah sakau sikit [ATs: BN, hasil negara, rizab Selangor, fed gomen | EP: N] Example 2. hahaha...ni meols setuju..yelah..selangor kan paling kaya..rizab berbilion billion.. sebab tak dpt ... kansss..meleleh air liur bn slangor nak merompak duit hasil negeri tapi apakan daya tak dapat.. tapi ada macai desperete dok kait dgn terowong ajaib bagai yg lgsg takde kaitan dgn slangor.. [ATs: rizab selangor, merompak wang | EP: N] Example 3. The best actor goes to... Kesian owner moto. JPJ Dah nampak. takpe kasi chan lepas tu lepas GE claim balik. [ATs: motorcycle owner, JPJ | EP: C] Example 4. Kimarkkkk ko ler jamal tongkol  [ATs: Jamal | EP: N]";

const CN_EXAMPLES: &str = "Here are three annotation examples:\nAnnotate the following comment \"...\" and return the result as the format of the examples. Example 1. 太假了……我家那里几乎每人都中了只是没人统计而已 [ATs: 新冠统计 | EP: N] 2. 刚才浙江日增100万转到这条新闻成2983起，真的是太不要脸了，还零死亡，现在就我们那里殡仪馆死人都全部放在地上，殡仪馆24小时工作。 [ATs: 网络新闻, 浙江新增病例, 死亡率 | EP: N] Example 3. 呵呵。。。。两声应该明白啥意思 [ATs: NA | EP: C]";

const ID_EXAMPLES: &str = "Here shows three annotation examples: Example 1. jumlah nuklir yang dimilik sekutu NATO, China dan Rusia lebih dari cukup untuk bikin bumi kiamat [ATs: NATO, Tiongkok, Rusia, senjata nuklir | EP: N] Example 2. @kampret.strez booster gak ngaruh utk org yg udah kena + di vaksin. itu dari riset empiris dari israel bbrp bulan lalu. gw sih rada skeptis utk ambil booster toh mulai bulan ke 3 antibody udh mulai nurun dan perlu booster lagi dlm 6 bulan.  [ATs: Efek booster, penelitian di Israel | EP: C] Example 3. kalau di Indonesia kebalik yah di beberapa daerah ada yg maksa kapir pake jilbab dgn alasan t0l0l pula macam biar gak digigit nyamuk  [AT: Indonesia, hijab, nyamuk | EP: C]";

const EN_EXAMPLES: &str = "Here shows four annotation examples: Example 1. What it says is that food banks are used to providing support for those in the poorest 10% of the population but now that segment is creeping up so that more people are needing help. [ATs: food bank, poor singaporeans | EP: N] Example 2. Actually, most [people have savings - in the form of CPF]. [ATs: CPF savings | EP: P] Example 3. And yet every 2 or 3 cars on the road is either bmw or merc [ATs: NA | EP: C]";

/// Example responses embedded in the default prompts, by language.
pub const FEW_SHOT_EXAMPLES: &[(Language, &str)] = &[
    (Language::Ms, "[ATs: BN, hasil negara, rizab Selangor, fed gomen | EP: N]"),
    (Language::Ms, "[ATs: rizab selangor, merompak wang | EP: N]"),
    (Language::Ms, "[ATs: motorcycle owner, JPJ | EP: C]"),
    (Language::Ms, "[ATs: Jamal | EP: N]"),
    (Language::Cn, "[ATs: 新冠统计 | EP: N]"),
    (Language::Cn, "[ATs: 网络新闻, 浙江新增病例, 死亡率 | EP: N]"),
    (Language::Cn, "[ATs: NA | EP: C]"),
    (Language::Id, "[ATs: NATO, Tiongkok, Rusia, senjata nuklir | EP: N]"),
    (Language::Id, "[ATs: Efek booster, penelitian di Israel | EP: C]"),
    (Language::Id, "[AT: Indonesia, hijab, nyamuk | EP: C]"),
    (Language::En, "[ATs: food bank, poor singaporeans | EP: N]"),
    (Language::En, "[ATs: CPF savings | EP: P]"),
    (Language::En, "[ATs: NA | EP: C]"),
];

/// Short aspect-term descriptions used to vary instruction prompts. These
/// are locally written stand-ins.
pub const CAT_DESCRIPTIONS: [&str; 30] = [
    "Aspect terms are the main targets a comment expresses opinions about.",
    "An aspect term names the object, person or issue at the centre of the commenter's opinion.",
    "Aspect terms capture what the comment is really about: the focus of its opinion.",
    "Identify the key subjects that the commenter is praising, criticising or discussing.",
    "Aspect terms are short phrases naming the things a comment takes a stance on.",
    "The aspect terms of a comment are the central focuses of the opinion it expresses, explicit or implied.",
    "Pick out the entities or topics that the comment's sentiment is directed at.",
    "An aspect term is the target of an opinion, such as a policy, product, person or event.",
    "Aspect terms summarise the main points of a comment as brief noun phrases.",
    "Find the primary objects of opinion in the comment, even if they are only implied.",
    "Aspect terms are the concrete targets that the writer reacts to.",
    "List the most important things the comment has an opinion about, using short phrases.",
    "Aspect terms describe what the comment is for or against.",
    "An aspect term is a concise label for the subject of a commenter's judgement.",
    "Aspect terms pinpoint the issues a comment raises or evaluates.",
    "Extract the main opinion targets of the comment, at most five of them.",
    "Aspect terms are the core topics a comment expresses feelings or views about.",
    "Name the key aspects of the discussion that the comment focuses its opinion on.",
    "Aspect terms identify who or what the comment is talking about with an attitude.",
    "The aspect terms are the focal points of the opinion expressed in the comment.",
    "Aspect terms are brief phrases for the objects that receive the comment's praise or criticism.",
    "Determine the central targets of opinion within the comment text.",
    "Aspect terms tell a reader which issues the commenter cares about in this comment.",
    "Identify the topics in the comment that carry an explicit or implicit opinion.",
    "Aspect terms are the main aspects of a news story that a reader comments on.",
    "Give short phrases naming the main subjects of the commenter's opinion.",
    "Aspect terms are the key elements the comment evaluates or argues about.",
    "Locate the primary opinion targets expressed in the comment, explicit or implicit.",
    "Aspect terms point to the specific matters a social media comment is opinionated about.",
    "Summarise the comment's opinion targets as a few aspect terms.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub language: Language,
    pub body: String,
    pub limit_variant: bool,
}

impl PromptTemplate {
    pub fn new(language: Language, body: impl Into<String>, limit_variant: bool) -> Result<Self, GenError> {
        let body = body.into();
        let count = body.matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(GenError::Placeholder(count));
        }
        if limit_variant && !body.contains(LIMIT_PHRASE) {
            return Err(GenError::MissingLimitPhrase);
        }
        Ok(PromptTemplate { language, body, limit_variant })
    }

    /// The few-shot annotation prompt for `language`. With `limit_variant`
    /// the closing request asks for 1 or 2 aspect terms.
    pub fn annotation(language: Language, limit_variant: bool) -> Self {
        let examples = match language {
            Language::En => EN_EXAMPLES,
            Language::Cn => CN_EXAMPLES,
            Language::Ms => MS_EXAMPLES,
            Language::Id => ID_EXAMPLES,
        };
        // the English prompt was used with the Malay wording unchanged
        let lang_word = match language {
            Language::En | Language::Ms => "Malay",
            other => other.name(),
        };
        let closing = if limit_variant { CLOSING_LIMIT } else { CLOSING };
        let body = format!("{INTRO_HEAD}{lang_word}{INTRO_TAIL}{examples}{closing}");
        PromptTemplate { language, body, limit_variant }
    }

    /// Instruction-tuning prompt built from one aspect-term description.
    pub fn instruction(language: Language, description: usize, limit_variant: bool) -> Self {
        let desc = CAT_DESCRIPTIONS[description % CAT_DESCRIPTIONS.len()];
        let ask = if limit_variant {
            "Annotate the following comments with 1 or 2 aspect terms: "
        } else {
            "Annotate the aspect terms of the following comment: "
        };
        let body = format!("{desc} If no opinion is expressed, the aspect terms should be \"NA\". {ask}{PLACEHOLDER}");
        PromptTemplate { language, body, limit_variant }
    }

    /// Instruction prompt whose description is picked by hashing `id`.
    pub fn instruction_for_id(language: Language, id: &str, limit_variant: bool) -> Self {
        let idx = (fnv1a64(id.as_bytes()) % CAT_DESCRIPTIONS.len() as u64) as usize;
        Self::instruction(language, idx, limit_variant)
    }

    /// Substitutes `text` for the placeholder, once.
    pub fn render_text(&self, text: &str) -> String {
        let (head, tail) = self.body.split_once(PLACEHOLDER).expect("template validated");
        let mut out = String::with_capacity(head.len() + text.len() + tail.len());
        out.push_str(head);
        out.push_str(text);
        out.push_str(tail);
        out
    }
}

pub fn render_prompt(template: &PromptTemplate, comment: &Comment) -> Result<String, GenError> {
    if template.language != comment.language {
        return Err(GenError::LanguageMismatch { template: template.language, comment: comment.language });
    }
    Ok(template.render_text(&comment.text))
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub cats: Vec<AspectTerm>,
    pub polarity: Polarity,
}

impl Annotation {
    /// `[ATs: a, b | EP: N]`, with `NA` for no terms.
    pub fn format(&self) -> String {
        format!("[ATs: {} | EP: {}]", crate::corpus::join_terms(&self.cats), self.polarity.letter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnnotation {
    pub annotation: Annotation,
    /// More than five terms were returned; the rest were dropped.
    pub truncated: bool,
    /// Repeated terms were dropped.
    pub deduplicated: bool,
}

fn annotation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[\s*ATs?\s*:\s*([^\[\]|]*?)\s*\|\s*EP\s*:\s*([^\[\]|]*?)\s*\]").expect("valid regex")
    })
}

fn term_separator() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r",\s|，|、").expect("valid regex"))
}

/// Parses the last `[ATs: … | EP: …]` group of a response.
///
/// Terms are separated by ", " (or a CJK comma). `NA` means no terms.
/// Never panics, whatever the input.
pub fn parse_annotation(response: &str) -> Result<ParsedAnnotation, ParseError> {
    let caps = annotation_regex().captures_iter(response).last().ok_or(ParseError::NoAnnotation)?;
    let terms_raw = caps.get(1).map_or("", |m| m.as_str()).trim();
    let ep = caps.get(2).map_or("", |m| m.as_str()).trim();
    let polarity = Polarity::from_letter(ep).ok_or_else(|| ParseError::UnknownPolarity(ep.to_string()))?;

    let mut cats = Vec::new();
    let mut seen = HashSet::new();
    let mut deduplicated = false;
    if terms_raw != NA {
        for piece in term_separator().split(terms_raw) {
            let Ok(term) = AspectTerm::new(piece.trim_end_matches(',')) else {
                continue;
            };
            if seen.insert(term.clone()) {
                cats.push(term);
            } else {
                deduplicated = true;
            }
        }
    }
    let truncated = cats.len() > MAX_ANNOTATION_TERMS;
    cats.truncate(MAX_ANNOTATION_TERMS);
    Ok(ParsedAnnotation { annotation: Annotation { cats, polarity }, truncated, deduplicated })
}

// ---------------------------------------------------------------------------
// Chat clients
// ---------------------------------------------------------------------------

/// A chat-completion backend taking one user message.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub temperature: f64,
    pub timeout_secs: f64,
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            temperature: 0.0,
            timeout_secs: 60.0,
        }
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

/// Client for the common JSON chat-completions endpoint shape.
pub struct HttpChatClient {
    config: ChatConfig,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: ChatConfig) -> Result<Self, ChatError> {
        let timeout = Duration::try_from_secs_f64(config.timeout_secs)
            .map_err(|e| ChatError::Protocol(format!("bad timeout: {e}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ChatError::Transport { message: e.to_string(), retryable: false })?;
        Ok(HttpChatClient { config, client })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String, ChatError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: self.config.temperature,
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ChatError::Transport { message: e.to_string(), retryable: true })?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(match status {
                401 | 403 => ChatError::Auth { status, body },
                402 | 429 => ChatError::Quota { status, body },
                s if s >= 500 => ChatError::Transport { message: format!("HTTP {s}: {body}"), retryable: true },
                s => ChatError::Protocol(format!("HTTP {s}: {body}")),
            });
        }
        let parsed: ChatResponse = resp.json().map_err(|e| ChatError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ChatError::Protocol("response has no message content".into()))
    }
}

// ---------------------------------------------------------------------------
// Response cache
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    response: String,
}

/// Append-only JSONL cache of raw responses.
pub struct ResponseCache {
    entries: Mutex<HashMap<String, String>>,
    writer: Option<Mutex<BufWriter<File>>>,
}

impl ResponseCache {
    /// In-memory cache, not persisted.
    pub fn in_memory() -> Self {
        ResponseCache { entries: Mutex::new(HashMap::new()), writer: None }
    }

    /// Opens (or creates) a cache file and loads its entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GenError> {
        let path = path.as_ref();
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line)
                    .map_err(|err| GenError::Cache(format!("line {}: {err}", i + 1)))?;
                entries.insert(e.key, e.response);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ResponseCache { entries: Mutex::new(entries), writer: Some(Mutex::new(BufWriter::new(file))) })
    }

    pub fn key(model: &str, prompt: &str, attempt: u32) -> String {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0]);
        h.update(prompt.as_bytes());
        h.update([0]);
        h.update(attempt.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().expect("cache poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: String, response: String) -> Result<(), GenError> {
        if let Some(w) = &self.writer {
            let mut w = w.lock().expect("cache writer poisoned");
            serde_json::to_writer(&mut *w, &CacheEntry { key: key.clone(), response: response.clone() })
                .map_err(|e| GenError::Cache(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.entries.lock().expect("cache poisoned").insert(key, response);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateConfig {
    /// Model name; part of the cache key.
    pub model: String,
    pub limit_variant: bool,
    /// Extra attempts after an unparsable response or a retryable transport error.
    pub retries: u32,
    /// Maximum requests in flight.
    pub concurrency: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { model: String::new(), limit_variant: false, retries: 2, concurrency: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub id: String,
    pub reason: String,
    pub last_response: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub corpus: Corpus,
    pub failures: Vec<GenerationFailure>,
    /// Responses served from the cache.
    pub cache_hits: usize,
    /// Requests sent to the client.
    pub requests: usize,
    /// Comments whose response listed more than five terms.
    pub truncated: Vec<String>,
}

enum CommentResult {
    Annotated { annotation: Annotation, truncated: bool },
    Failed(GenerationFailure),
}

struct Counters {
    hits: AtomicUsize,
    requests: AtomicUsize,
}

fn annotate_one(
    comment: &Comment,
    template: &PromptTemplate,
    client: &dyn ChatClient,
    cache: Option<&ResponseCache>,
    cfg: &GenerateConfig,
    counters: &Counters,
) -> Result<CommentResult, GenError> {
    let prompt = render_prompt(template, comment)?;
    let mut last_response = None;
    let mut last_reason = String::new();
    for attempt in 0..=cfg.retries {
        let key = ResponseCache::key(&cfg.model, &prompt, attempt);
        let response = match cache.and_then(|c| c.get(&key)) {
            Some(r) => {
                counters.hits.fetch_add(1, Ordering::Relaxed);
                r
            }
            None => {
                counters.requests.fetch_add(1, Ordering::Relaxed);
                match client.complete(&prompt) {
                    Ok(r) => {
                        if let Some(c) = cache {
                            c.insert(key, r.clone())?;
                        }
                        r
                    }
                    Err(e) if e.is_retryable() && attempt < cfg.retries => {
                        log::warn!("comment {}: attempt {} failed: {e}", comment.id, attempt + 1);
                        last_reason = e.to_string();
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };
        match parse_annotation(&response) {
            Ok(parsed) => {
                return Ok(CommentResult::Annotated { annotation: parsed.annotation, truncated: parsed.truncated })
            }
            Err(e) => {
                last_reason = e.to_string();
                last_response = Some(response);
            }
        }
    }
    Ok(CommentResult::Failed(GenerationFailure { id: comment.id.clone(), reason: last_reason, last_response }))
}

/// Annotates every comment of `corpus` with predicted aspect terms and
/// polarity. Unparsable responses (after retries) leave an empty prediction
/// and a failure record; auth, quota and exhausted transport errors abort.
pub fn generate_cats(
    corpus: &Corpus,
    client: &dyn ChatClient,
    cache: Option<&ResponseCache>,
    cfg: &GenerateConfig,
) -> Result<GenerationOutcome, GenError> {
    let templates: HashMap<Language, PromptTemplate> =
        Language::ALL.iter().map(|&l| (l, PromptTemplate::annotation(l, cfg.limit_variant))).collect();
    generate_with_templates(corpus, &templates, client, cache, cfg)
}

pub fn generate_with_templates(
    corpus: &Corpus,
    templates: &HashMap<Language, PromptTemplate>,
    client: &dyn ChatClient,
    cache: Option<&ResponseCache>,
    cfg: &GenerateConfig,
) -> Result<GenerationOutcome, GenError> {
    let n = corpus.len();
    let counters = Counters { hits: AtomicUsize::new(0), requests: AtomicUsize::new(0) };
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<CommentResult, GenError>>>> = Mutex::new((0..n).map(|_| None).collect());
    let workers = cfg.concurrency.clamp(1, n.max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let comment = &corpus.comments[i];
                let r = match templates.get(&comment.language) {
                    Some(t) => annotate_one(comment, t, client, cache, cfg, &counters),
                    None => Err(GenError::Cache(format!("no template for language {}", comment.language))),
                };
                if r.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results poisoned")[i] = Some(r);
            });
        }
    });

    let mut out = corpus.clone();
    let mut failures = Vec::new();
    let mut truncated = Vec::new();
    for (i, r) in results.into_inner().expect("results poisoned").into_iter().enumerate() {
        let c = &mut out.comments[i];
        match r {
            Some(Ok(CommentResult::Annotated { annotation, truncated: t })) => {
                if t {
                    truncated.push(c.id.clone());
                }
                c.pred_cats = Some(annotation.cats);
                c.polarity = Some(annotation.polarity);
            }
            Some(Ok(CommentResult::Failed(f))) => {
                c.pred_cats = Some(Vec::new());
                failures.push(f);
            }
            Some(Err(e)) => return Err(e),
            // skipped after another worker aborted; that error is reported
            None => {}
        }
    }
    Ok(GenerationOutcome {
        corpus: out,
        failures,
        cache_hits: counters.hits.into_inner(),
        requests: counters.requests.into_inner(),
        truncated,
    })
}
