//! Annotated comment corpus: data model, JSONL storage and validation.
//!
//! One comment per line, UTF-8, keys in the order
//! `id, lang, text, gold_cats, pred_cats, polarity, article_cluster, comment_cluster`.
//! Aspect-term lists may be given as the literal string `"NA"`, which is
//! normalized to an empty list on load. Unknown keys are rejected.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Maximum number of gold aspect terms per comment.
pub const MAX_GOLD_TERMS: usize = 5;

/// Sentinel used by annotators and prompts for "no aspect terms".
pub const NA: &str = "NA";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate comment id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: too many aspect terms ({count} > {MAX_GOLD_TERMS})")]
    TooManyAspectTerms { line: usize, count: usize },
    #[error("line {line}: unknown language code {code:?}")]
    UnknownLanguage { line: usize, code: String },
    #[error("line {line}: unknown polarity {value:?}")]
    UnknownPolarity { line: usize, value: String },
    #[error("line {line}: comment text is empty")]
    EmptyText { line: usize },
    #[error("line {line}: invalid aspect term: {reason}")]
    InvalidAspectTerm { line: usize, reason: TermError },
    #[error("line {line}: duplicate aspect term {term:?}")]
    DuplicateAspectTerm { line: usize, term: String },
}

impl CorpusError {
    /// Line number the error refers to, if any (1-based).
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Io(_) => None,
            CorpusError::Malformed { line, .. }
            | CorpusError::DuplicateId { line, .. }
            | CorpusError::TooManyAspectTerms { line, .. }
            | CorpusError::UnknownLanguage { line, .. }
            | CorpusError::UnknownPolarity { line, .. }
            | CorpusError::EmptyText { line }
            | CorpusError::InvalidAspectTerm { line, .. }
            | CorpusError::DuplicateAspectTerm { line, .. } => Some(*line),
        }
    }

    fn at_line(self, n: usize) -> Self {
        match self {
            CorpusError::Malformed { message, .. } => CorpusError::Malformed { line: n, message },
            CorpusError::DuplicateId { id, .. } => CorpusError::DuplicateId { line: n, id },
            CorpusError::TooManyAspectTerms { count, .. } => {
                CorpusError::TooManyAspectTerms { line: n, count }
            }
            CorpusError::UnknownLanguage { code, .. } => CorpusError::UnknownLanguage { line: n, code },
            CorpusError::UnknownPolarity { value, .. } => CorpusError::UnknownPolarity { line: n, value },
            CorpusError::EmptyText { .. } => CorpusError::EmptyText { line: n },
            CorpusError::InvalidAspectTerm { reason, .. } => {
                CorpusError::InvalidAspectTerm { line: n, reason }
            }
            CorpusError::DuplicateAspectTerm { term, .. } => {
                CorpusError::DuplicateAspectTerm { line: n, term }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TermError {
    #[error("aspect term is empty")]
    Empty,
    #[error("\"NA\" is not a term; use an empty list")]
    Sentinel,
}

/// The four comment languages of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "CN")]
    Cn,
    #[serde(rename = "MS")]
    Ms,
    #[serde(rename = "ID")]
    Id,
}

impl Language {
    /// Corpus-table order.
    pub const ALL: [Language; 4] = [Language::En, Language::Cn, Language::Ms, Language::Id];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Cn => "CN",
            Language::Ms => "MS",
            Language::Id => "ID",
        }
    }

    /// English name used inside prompts.
    pub fn name(self) -> &'static str {
        match self {
            Language::En => "English",
            Language::Cn => "Chinese",
            Language::Ms => "Malay",
            Language::Id => "Indonesian",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language code {0:?}")]
pub struct UnknownLanguage(pub String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "EN" => Ok(Language::En),
            "CN" => Ok(Language::Cn),
            "MS" => Ok(Language::Ms),
            "ID" => Ok(Language::Id),
            other => Err(UnknownLanguage(other.to_string())),
        }
    }
}

/// Emotional polarity: negative, positive or neutral ("C").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    N,
    P,
    C,
}

impl Polarity {
    pub fn from_letter(s: &str) -> Option<Self> {
        match s {
            "N" => Some(Polarity::N),
            "P" => Some(Polarity::P),
            "C" => Some(Polarity::C),
            _ => None,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Polarity::N => "N",
            Polarity::P => "P",
            Polarity::C => "C",
        }
    }
}

/// A single comment aspect term: trimmed, non-empty, never `"NA"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct AspectTerm(String);

impl AspectTerm {
    pub fn new(text: &str) -> Result<Self, TermError> {
        let t = text.trim();
        if t.is_empty() {
            return Err(TermError::Empty);
        }
        if t == NA {
            return Err(TermError::Sentinel);
        }
        Ok(AspectTerm(t.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AspectTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for AspectTerm {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Builds a validated term list (no duplicates after trimming).
pub fn term_list<S: AsRef<str>>(items: &[S]) -> Result<Vec<AspectTerm>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let term = AspectTerm::new(item.as_ref())
            .map_err(|reason| CorpusError::InvalidAspectTerm { line: 0, reason })?;
        if !seen.insert(term.clone()) {
            return Err(CorpusError::DuplicateAspectTerm { line: 0, term: term.0 });
        }
        out.push(term);
    }
    Ok(out)
}

/// Joins terms with ", ", or returns `"NA"` for an empty list.
pub fn join_terms(terms: &[AspectTerm]) -> String {
    if terms.is_empty() {
        NA.to_string()
    } else {
        terms.iter().map(AspectTerm::as_str).collect::<Vec<_>>().join(", ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comment {
    pub id: String,
    pub language: Language,
    pub text: String,
    pub gold_cats: Vec<AspectTerm>,
    pub pred_cats: Option<Vec<AspectTerm>>,
    pub polarity: Option<Polarity>,
    pub article_cluster: Option<String>,
    pub comment_cluster: Option<String>,
}

impl Comment {
    /// Minimal comment with gold terms and nothing else.
    pub fn new<S: AsRef<str>>(
        id: impl Into<String>,
        language: Language,
        text: impl Into<String>,
        gold: &[S],
    ) -> Result<Self, CorpusError> {
        let c = Comment {
            id: id.into(),
            language,
            text: text.into(),
            gold_cats: term_list(gold)?,
            pred_cats: None,
            polarity: None,
            article_cluster: None,
            comment_cluster: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_pred<S: AsRef<str>>(mut self, pred: &[S]) -> Result<Self, CorpusError> {
        self.pred_cats = Some(term_list(pred)?);
        Ok(self)
    }

    pub fn with_comment_cluster(mut self, label: impl Into<String>) -> Self {
        self.comment_cluster = Some(label.into());
        self
    }

    /// Checks every per-comment invariant. Line numbers in errors are 0.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { line: 0 });
        }
        if self.gold_cats.len() > MAX_GOLD_TERMS {
            return Err(CorpusError::TooManyAspectTerms { line: 0, count: self.gold_cats.len() });
        }
        check_unique(&self.gold_cats)?;
        if let Some(pred) = &self.pred_cats {
            check_unique(pred)?;
        }
        Ok(())
    }
}

fn check_unique(terms: &[AspectTerm]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for t in terms {
        if !seen.insert(t.as_str()) {
            return Err(CorpusError::DuplicateAspectTerm { line: 0, term: t.0.clone() });
        }
    }
    Ok(())
}

/// Which aspect-term list of a comment to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermSource {
    Gold,
    #[default]
    Pred,
}

impl TermSource {
    /// `None` when predictions are requested but absent.
    pub fn terms(self, c: &Comment) -> Option<&[AspectTerm]> {
        match self {
            TermSource::Gold => Some(&c.gold_cats),
            TermSource::Pred => c.pred_cats.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Finetune,
    Test,
    #[default]
    Unsplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub comments: Vec<Comment>,
}

impl Corpus {
    /// Validates all comments and id uniqueness.
    pub fn new(name: impl Into<String>, split: Split, comments: Vec<Comment>) -> Result<Self, CorpusError> {
        let mut ids = HashSet::new();
        for (i, c) in comments.iter().enumerate() {
            c.validate().map_err(|e| e.at_line(i + 1))?;
            if !ids.insert(c.id.as_str()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: c.id.clone() });
            }
        }
        Ok(Corpus { name: name.into(), split, comments })
    }

    pub fn len(&self) -> usize {
        self.comments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comments.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Comment> {
        self.comments.iter().find(|c| c.id == id)
    }
}

/// Per-language comment counts. All four languages are always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitStats {
    pub counts: BTreeMap<Language, usize>,
    pub total: usize,
}

impl SplitStats {
    pub fn count(&self, lang: Language) -> usize {
        self.counts.get(&lang).copied().unwrap_or(0)
    }
}

pub fn split_stats(corpus: &Corpus) -> SplitStats {
    let mut counts: BTreeMap<Language, usize> = Language::ALL.iter().map(|&l| (l, 0)).collect();
    for c in &corpus.comments {
        *counts.entry(c.language).or_insert(0) += 1;
    }
    let total = counts.values().sum();
    SplitStats { counts, total }
}

// ---------------------------------------------------------------------------
// JSONL records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum TermField {
    List(Vec<String>),
    Sentinel(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    lang: String,
    text: String,
    gold_cats: TermField,
    #[serde(default)]
    pred_cats: Option<TermField>,
    #[serde(default)]
    polarity: Option<String>,
    #[serde(default)]
    article_cluster: Option<String>,
    #[serde(default)]
    comment_cluster: Option<String>,
}

fn terms_from_field(field: TermField) -> Result<Vec<AspectTerm>, CorpusError> {
    match field {
        TermField::List(items) => term_list(&items),
        TermField::Sentinel(s) if s.trim() == NA => Ok(Vec::new()),
        TermField::Sentinel(s) => Err(CorpusError::Malformed {
            line: 0,
            message: format!("aspect-term field must be a list or \"NA\", got {s:?}"),
        }),
    }
}

/// Parses one JSONL record. Line numbers in errors are 0; callers attach them.
pub fn parse_record(line: &str) -> Result<Comment, CorpusError> {
    let rec: Record = serde_json::from_str(line)
        .map_err(|e| CorpusError::Malformed { line: 0, message: e.to_string() })?;
    let language = rec
        .lang
        .parse::<Language>()
        .map_err(|e| CorpusError::UnknownLanguage { line: 0, code: e.0 })?;
    let polarity = match rec.polarity {
        None => None,
        Some(p) => Some(
            Polarity::from_letter(&p).ok_or(CorpusError::UnknownPolarity { line: 0, value: p })?,
        ),
    };
    let comment = Comment {
        id: rec.id,
        language,
        text: rec.text,
        gold_cats: terms_from_field(rec.gold_cats)?,
        pred_cats: rec.pred_cats.map(terms_from_field).transpose()?,
        polarity,
        article_cluster: rec.article_cluster,
        comment_cluster: rec.comment_cluster,
    };
    comment.validate()?;
    Ok(comment)
}

fn to_record(c: &Comment) -> Record {
    let list = |ts: &[AspectTerm]| TermField::List(ts.iter().map(|t| t.0.clone()).collect());
    Record {
        id: c.id.clone(),
        lang: c.language.code().to_string(),
        text: c.text.clone(),
        gold_cats: list(&c.gold_cats),
        pred_cats: c.pred_cats.as_deref().map(list),
        polarity: c.polarity.map(|p| p.letter().to_string()),
        article_cluster: c.article_cluster.clone(),
        comment_cluster: c.comment_cluster.clone(),
    }
}

/// Serializes one comment as a single JSON line (no trailing newline).
pub fn record_line(c: &Comment) -> String {
    serde_json::to_string(&to_record(c)).expect("record serialization is infallible")
}

/// Reads a corpus from any buffered reader. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R, name: &str, split: Split) -> Result<Corpus, CorpusError> {
    let mut comments = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c = parse_record(&line).map_err(|e| e.at_line(n))?;
        if !ids.insert(c.id.clone()) {
            return Err(CorpusError::DuplicateId { line: n, id: c.id });
        }
        comments.push(c);
    }
    Ok(Corpus { name: name.to_string(), split, comments })
}

/// Loads a JSONL corpus; the corpus name is the file stem.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    load_corpus_as(path, Split::Unsplit)
}

pub fn load_corpus_as(path: impl AsRef<Path>, split: Split) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    read_corpus(BufReader::new(File::open(path)?), name, split)
}

pub fn write_corpus_to<W: Write>(mut w: W, corpus: &Corpus) -> std::io::Result<()> {
    for c in &corpus.comments {
        w.write_all(record_line(c).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> std::io::Result<()> {
    write_corpus_to(BufWriter::new(File::create(path)?), corpus)
}
