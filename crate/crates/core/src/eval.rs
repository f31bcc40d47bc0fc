//! Aspect-term generation scoring.
//!
//! A predicted term matches a gold term when the cosine similarity of their
//! embeddings reaches the threshold (0.7 by default). Matches are one-to-one:
//! the matched count of a comment is the size of a maximum bipartite matching
//! over the thresholded similarity graph. Corpus scores are micro-averaged
//! from summed counts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AspectTerm, Corpus, Language, TermSource};
use crate::embedding::{EmbedError, EmbeddingProvider, EmbeddingVector};

pub const DEFAULT_THRESHOLD: f64 = 0.7;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("comment {id:?} has no predicted aspect terms")]
    MissingPredictions { id: String },
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("sample size {size} exceeds corpus size {available}")]
    SizeTooLarge { size: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    #[default]
    MaxBipartite,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub threshold: f64,
    pub matching: Matching,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { threshold: DEFAULT_THRESHOLD, matching: Matching::MaxBipartite }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(EvalError::InvalidThreshold(self.threshold));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Matching on a similarity matrix
// ---------------------------------------------------------------------------

/// Rows are predicted terms, columns gold terms.
pub fn similarity_matrix(pred: &[EmbeddingVector], gold: &[EmbeddingVector]) -> Result<Vec<Vec<f64>>, EmbedError> {
    pred.iter()
        .map(|p| gold.iter().map(|g| crate::embedding::cosine_similarity(p, g)).collect())
        .collect()
}

/// Maximum one-to-one matching over edges with similarity ≥ `threshold`
/// (augmenting paths).
pub fn max_bipartite_matching(sim: &[Vec<f64>], threshold: f64) -> usize {
    let cols = sim.first().map_or(0, Vec::len);
    let adj: Vec<Vec<usize>> = sim
        .iter()
        .map(|row| (0..cols).filter(|&j| row[j] >= threshold).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; cols];
    let mut matched = 0;
    for row in 0..adj.len() {
        let mut visited = vec![false; cols];
        if augment(row, &adj, &mut owner, &mut visited) {
            matched += 1;
        }
    }
    matched
}

fn augment(row: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], visited: &mut [bool]) -> bool {
    for &col in &adj[row] {
        if visited[col] {
            continue;
        }
        visited[col] = true;
        let free = match owner[col] {
            None => true,
            Some(other) => augment(other, adj, owner, visited),
        };
        if free {
            owner[col] = Some(row);
            return true;
        }
    }
    false
}

/// Greedy one-to-one matching: descending similarity, ties by lower
/// predicted index then lower gold index.
pub fn greedy_matching(sim: &[Vec<f64>], threshold: f64) -> usize {
    let mut edges: Vec<(f64, usize, usize)> = sim
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &s)| (s, i, j)))
        .filter(|&(s, _, _)| s >= threshold)
        .collect();
    edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_pred = HashSet::new();
    let mut used_gold = HashSet::new();
    let mut matched = 0;
    for (_, i, j) in edges {
        if !used_pred.contains(&i) && !used_gold.contains(&j) {
            used_pred.insert(i);
            used_gold.insert(j);
            matched += 1;
        }
    }
    matched
}

pub fn matched_count(sim: &[Vec<f64>], cfg: &MatchConfig) -> usize {
    match cfg.matching {
        Matching::MaxBipartite => max_bipartite_matching(sim, cfg.threshold),
        Matching::Greedy => greedy_matching(sim, cfg.threshold),
    }
}

// ---------------------------------------------------------------------------
// Counts and scores
// ---------------------------------------------------------------------------

/// Per-comment or aggregated match counts. Summation is the aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl MatchCounts {
    pub fn new(matched: usize, predicted: usize, gold: usize) -> Self {
        debug_assert!(matched <= predicted.min(gold));
        MatchCounts { matched, predicted, gold }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            matched: self.matched + o.matched,
            predicted: self.predicted + o.predicted,
            gold: self.gold + o.gold,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub matched: usize,
    pub predicted_total: usize,
    pub gold_total: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<MatchCounts> for Scores {
    fn from(c: MatchCounts) -> Self {
        Scores {
            matched: c.matched,
            predicted_total: c.predicted,
            gold_total: c.gold,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

/// How empty predictions line up with empty gold lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrivialConfusion {
    pub both_empty: usize,
    pub pred_empty_only: usize,
    pub gold_empty_only: usize,
    pub both_nonempty: usize,
}

impl TrivialConfusion {
    fn record(&mut self, pred_empty: bool, gold_empty: bool) {
        match (pred_empty, gold_empty) {
            (true, true) => self.both_empty += 1,
            (true, false) => self.pred_empty_only += 1,
            (false, true) => self.gold_empty_only += 1,
            (false, false) => self.both_nonempty += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentCounts {
    pub id: String,
    pub lang: Language,
    #[serde(flatten)]
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    #[serde(flatten)]
    pub overall: Scores,
    pub threshold: f64,
    pub matching: Matching,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_language: BTreeMap<Language, Scores>,
    pub trivial: TrivialConfusion,
    /// Per-comment counts, in corpus order, for macro re-aggregation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comments: Vec<CommentCounts>,
}

impl MatchReport {
    pub fn from_comment_counts(comments: Vec<CommentCounts>, trivial: TrivialConfusion, cfg: &MatchConfig) -> Self {
        let overall: MatchCounts = comments.iter().map(|c| c.counts).sum();
        let mut by_lang: BTreeMap<Language, MatchCounts> = BTreeMap::new();
        for c in &comments {
            *by_lang.entry(c.lang).or_default() += c.counts;
        }
        MatchReport {
            overall: overall.into(),
            threshold: cfg.threshold,
            matching: cfg.matching,
            per_language: by_lang.into_iter().map(|(l, c)| (l, c.into())).collect(),
            trivial,
            comments,
        }
    }

    /// Macro average over comments with non-zero denominators.
    pub fn macro_scores(&self) -> (f64, f64, f64) {
        let ps: Vec<f64> = self.comments.iter().filter(|c| c.counts.predicted > 0).map(|c| c.counts.precision()).collect();
        let rs: Vec<f64> = self.comments.iter().filter(|c| c.counts.gold > 0).map(|c| c.counts.recall()).collect();
        let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
        let (p, r) = (mean(&ps), mean(&rs));
        (p, r, f1_score(p, r))
    }
}

// ---------------------------------------------------------------------------
// Corpus-level evaluation
// ---------------------------------------------------------------------------

/// Embeddings of every distinct term, computed once.
struct TermTable {
    vectors: HashMap<String, EmbeddingVector>,
}

impl TermTable {
    fn build<'a, P, I>(provider: &P, terms: I) -> Result<Self, EmbedError>
    where
        P: EmbeddingProvider + ?Sized,
        I: IntoIterator<Item = &'a AspectTerm>,
    {
        let mut seen = HashSet::new();
        let unique: Vec<&str> = terms.into_iter().map(AspectTerm::as_str).filter(|t| seen.insert(*t)).collect();
        let mut vectors = HashMap::with_capacity(unique.len());
        if !unique.is_empty() {
            for (t, v) in unique.iter().zip(provider.embed_batch(&unique)?) {
                vectors.insert((*t).to_string(), v);
            }
        }
        Ok(TermTable { vectors })
    }

    fn counts(&self, pred: &[AspectTerm], gold: &[AspectTerm], cfg: &MatchConfig) -> Result<MatchCounts, EmbedError> {
        let look = |ts: &[AspectTerm]| -> Vec<EmbeddingVector> {
            ts.iter().map(|t| self.vectors[t.as_str()].clone()).collect()
        };
        let sim = similarity_matrix(&look(pred), &look(gold))?;
        Ok(MatchCounts::new(matched_count(&sim, cfg), pred.len(), gold.len()))
    }
}

/// Matches one comment's predicted terms against its gold terms.
pub fn match_comment<P: EmbeddingProvider + ?Sized>(
    pred: &[AspectTerm],
    gold: &[AspectTerm],
    provider: &P,
    cfg: &MatchConfig,
) -> Result<MatchCounts, EvalError> {
    cfg.validate()?;
    if pred.is_empty() || gold.is_empty() {
        return Ok(MatchCounts::new(0, pred.len(), gold.len()));
    }
    let table = TermTable::build(provider, pred.iter().chain(gold))?;
    Ok(table.counts(pred, gold, cfg)?)
}

fn comment_counts<P: EmbeddingProvider + ?Sized>(
    corpus: &Corpus,
    provider: &P,
    cfg: &MatchConfig,
) -> Result<(Vec<CommentCounts>, TrivialConfusion), EvalError> {
    cfg.validate()?;
    let mut pairs = Vec::with_capacity(corpus.len());
    for c in &corpus.comments {
        let pred = c.pred_cats.as_deref().ok_or_else(|| EvalError::MissingPredictions { id: c.id.clone() })?;
        pairs.push((c, pred));
    }
    let table = TermTable::build(provider, pairs.iter().flat_map(|(c, p)| p.iter().chain(&c.gold_cats)))?;
    let counts: Vec<CommentCounts> = pairs
        .par_iter()
        .map(|(c, pred)| {
            Ok(CommentCounts { id: c.id.clone(), lang: c.language, counts: table.counts(pred, &c.gold_cats, cfg)? })
        })
        .collect::<Result<_, EmbedError>>()?;
    let mut trivial = TrivialConfusion::default();
    for (c, pred) in &pairs {
        trivial.record(pred.is_empty(), c.gold_cats.is_empty());
    }
    Ok((counts, trivial))
}

/// Micro-averaged P/R/F1 over the whole corpus and per language.
pub fn evaluate_corpus<P: EmbeddingProvider + ?Sized>(
    corpus: &Corpus,
    provider: &P,
    cfg: &MatchConfig,
) -> Result<MatchReport, EvalError> {
    let (counts, trivial) = comment_counts(corpus, provider, cfg)?;
    Ok(MatchReport::from_comment_counts(counts, trivial, cfg))
}

/// Number of comments per aspect-term count.
pub fn cat_count_histogram(corpus: &Corpus, source: TermSource) -> Result<BTreeMap<usize, usize>, EvalError> {
    let mut hist = BTreeMap::new();
    for c in &corpus.comments {
        let terms = source.terms(c).ok_or_else(|| EvalError::MissingPredictions { id: c.id.clone() })?;
        *hist.entry(terms.len()).or_insert(0) += 1;
    }
    Ok(hist)
}

/// Number of comments with at most `k` terms.
pub fn cumulative_at_most(hist: &BTreeMap<usize, usize>, k: usize) -> usize {
    hist.range(..=k).map(|(_, n)| n).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub seed: u64,
    pub f1: f64,
}

/// F1 on seeded uniform subsamples (without replacement) of each size.
pub fn scale_sweep<P: EmbeddingProvider + ?Sized>(
    corpus: &Corpus,
    provider: &P,
    cfg: &MatchConfig,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepPoint>, EvalError> {
    let n = corpus.len();
    if let Some(&size) = sizes.iter().find(|&&s| s > n) {
        return Err(EvalError::SizeTooLarge { size, available: n });
    }
    let (counts, _) = comment_counts(corpus, provider, cfg)?;
    Ok(sweep_counts(&counts, sizes, seeds))
}

fn sweep_counts(counts: &[CommentCounts], sizes: &[usize], seeds: &[u64]) -> Vec<SweepPoint> {
    let n = counts.len();
    let mut out = Vec::with_capacity(sizes.len() * seeds.len());
    for &size in sizes {
        for &seed in seeds {
            let total: MatchCounts = if size == n {
                counts.iter().map(|c| c.counts).sum()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                index::sample(&mut rng, n, size).into_iter().map(|i| counts[i].counts).sum()
            };
            out.push(SweepPoint { size, seed, f1: total.f1() });
        }
    }
    out
}

/// Rounds half away from zero at `decimals` places, e.g. 34.55 → 34.6.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    // nudge values that are a representation error below the half
    let scaled = x * scale;
    let nudged = scaled + scaled.signum() * 1e-9;
    nudged.round() / scale
}
