//! Dynamic clustering with an adaptive neighbourhood size and threshold.
//!
//! Every point seeds one candidate cluster. For seed `d_i` the similarities to
//! all points (itself included) are sorted and the top-γ inspected; while the
//! weakest of the top-γ still beats the current threshold θ' and γ < n, the
//! neighbourhood grows by Δ and the threshold is raised to
//! `min(sqrt(k1 * (γ + k2)), θ_max)`. The cluster is every top-γ point whose
//! similarity reaches the final θ'. Clusters are then ranked and a hard
//! partition is read off in rank order for scoring.
//!
//! With CAT augmentation a comment is represented by its text embedding
//! concatenated with the mean of its aspect-term embeddings; comments without
//! aspect terms form the Trivial category and can be filtered out first.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Comment, Corpus, TermSource};
use crate::embedding::{concat_normalize, cosine_similarity, mean_pool, EmbedError, EmbeddingProvider, EmbeddingVector};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("nothing to cluster")]
    EmptyInput,
    #[error("vector {id:?} has dimension {actual}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, actual: usize },
    #[error("similarity between {a:?} and {b:?} is NaN")]
    NanSimilarity { a: String, b: String },
    #[error("duplicate point id {0:?}")]
    DuplicateId(String),
    #[error("invalid clustering configuration: {0}")]
    Config(String),
    #[error("comment {id:?} has no aspect terms to augment with")]
    NoAspectTerms { id: String },
    #[error("comment {id:?} has no predicted aspect terms")]
    MissingPredictions { id: String },
    #[error("no comment carries a gold comment_cluster label")]
    NoGoldLabels,
    #[error("labelings cover different ids")]
    IdMismatch,
    #[error("cannot score an empty labeling")]
    EmptyLabeling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyCluConfig {
    /// Initial neighbourhood size γ.
    pub gamma0: usize,
    /// Initial similarity threshold θ.
    pub theta0: f64,
    /// Ceiling θ_max for the adaptive threshold.
    pub theta_max: f64,
    /// Neighbourhood increment Δ.
    pub delta: usize,
    pub k1: f64,
    pub k2: f64,
    pub use_cat_augmentation: bool,
    pub trivial_filter: bool,
}

pub const THETA_MAX: f64 = 0.9;

impl Default for DyCluConfig {
    fn default() -> Self {
        DyCluConfig {
            gamma0: 10,
            theta0: 0.55,
            theta_max: THETA_MAX,
            delta: 5,
            k1: 0.01,
            k2: 20.0,
            use_cat_augmentation: false,
            trivial_filter: false,
        }
    }
}

impl DyCluConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::Config(m.to_string()));
        if self.gamma0 < 1 {
            return bad("gamma0 must be at least 1");
        }
        if self.delta < 1 {
            return bad("delta must be at least 1");
        }
        if !(self.theta0 > 0.0 && self.theta0 < 1.0) {
            return bad("theta0 must lie in (0, 1)");
        }
        if !(self.theta_max > 0.0 && self.theta_max <= 1.0) {
            return bad("theta_max must lie in (0, 1]");
        }
        if self.theta0 > self.theta_max {
            return bad("theta0 must not exceed theta_max");
        }
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return bad("k1 must be positive");
        }
        if !(self.k2 >= 0.0 && self.k2.is_finite()) {
            return bad("k2 must be non-negative");
        }
        Ok(())
    }

    /// Threshold after growing the neighbourhood to `gamma`.
    pub fn grown_threshold(&self, gamma: usize) -> f64 {
        (self.k1 * (gamma as f64 + self.k2)).sqrt().min(self.theta_max)
    }

    /// Upper bound on growth iterations for a dataset of `n` points.
    pub fn max_iterations(&self, n: usize) -> usize {
        n.saturating_sub(self.gamma0).div_ceil(self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    #[serde(rename = "centroid")]
    pub centroid_id: String,
    /// Members in descending similarity to the centroid; the centroid first.
    #[serde(rename = "members")]
    pub member_ids: Vec<String>,
    /// Similarity of each member to the centroid, aligned with `member_ids`.
    pub similarities: Vec<f64>,
    #[serde(rename = "score")]
    pub ranking_score: f64,
    /// Final adaptive threshold θ' used for this seed.
    pub threshold: f64,
    /// Final neighbourhood size γ.
    pub gamma: usize,
    /// Number of growth iterations taken.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// One cluster per seed, ranked by score (ties: lower centroid id first).
    pub clusters: Vec<Cluster>,
    /// Comment id → index into `clusters` of the highest-ranked cluster holding it.
    pub partition: BTreeMap<String, usize>,
    pub trivial_ids: Vec<String>,
}

impl ClusterSet {
    pub fn empty(trivial_ids: Vec<String>) -> Self {
        ClusterSet { clusters: Vec::new(), partition: BTreeMap::new(), trivial_ids }
    }

    /// Hard clusters in rank order as `(cluster index, assigned ids)`; clusters
    /// whose members were all claimed by higher-ranked ones are omitted.
    pub fn hard_clusters(&self) -> Vec<(usize, Vec<String>)> {
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for cluster_idx in 0..self.clusters.len() {
            for id in &self.clusters[cluster_idx].member_ids {
                if self.partition.get(id) == Some(&cluster_idx) {
                    groups.entry(cluster_idx).or_default().push(id.clone());
                }
            }
        }
        groups.into_iter().collect()
    }
}

/// `|S| × mean similarity to the centroid`.
pub fn ranking_score(similarities: &[f64]) -> f64 {
    if similarities.is_empty() {
        return 0.0;
    }
    let n = similarities.len() as f64;
    let mean = similarities.iter().sum::<f64>() / n;
    n * mean
}

struct Seeded {
    members: Vec<usize>,
    sims: Vec<f64>,
    threshold: f64,
    gamma: usize,
    iterations: usize,
}

fn grow_seed(seed: usize, sims: &[f64], ids: &[&str], cfg: &DyCluConfig) -> Seeded {
    let n = sims.len();
    let mut order: Vec<usize> = (0..n).collect();
    // the seed leads, then descending similarity with ties by id
    order.sort_by(|&a, &b| {
        (b == seed)
            .cmp(&(a == seed))
            .then_with(|| sims[b].total_cmp(&sims[a]))
            .then_with(|| ids[a].cmp(ids[b]))
    });
    let top_last = |gamma: usize| sims[order[gamma.min(n) - 1]];

    let mut gamma = cfg.gamma0;
    let mut threshold = cfg.theta0;
    let mut iterations = 0;
    while top_last(gamma) > threshold && gamma < n {
        gamma = n.min(gamma + cfg.delta);
        threshold = cfg.grown_threshold(gamma);
        iterations += 1;
    }
    let (members, member_sims): (Vec<usize>, Vec<f64>) = order[..gamma.min(n)]
        .iter()
        .filter(|&&j| j == seed || sims[j] >= threshold)
        .map(|&j| (j, sims[j]))
        .unzip();
    Seeded { members, sims: member_sims, threshold, gamma, iterations }
}

/// Runs the dynamic clustering over unit vectors.
pub fn dyclu_cluster<S: AsRef<str> + Sync>(
    points: &[(S, EmbeddingVector)],
    cfg: &DyCluConfig,
) -> Result<ClusterSet, ClusterError> {
    cfg.validate()?;
    let n = points.len();
    if n == 0 {
        return Err(ClusterError::EmptyInput);
    }
    let ids: Vec<&str> = points.iter().map(|(id, _)| id.as_ref()).collect();
    let mut seen = HashSet::with_capacity(n);
    for id in &ids {
        if !seen.insert(*id) {
            return Err(ClusterError::DuplicateId(id.to_string()));
        }
    }
    let dim = points[0].1.dim();
    for (id, v) in points {
        if v.dim() != dim {
            return Err(ClusterError::DimensionMismatch { id: id.as_ref().to_string(), expected: dim, actual: v.dim() });
        }
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| points.iter().map(|(_, v)| cosine_similarity(&points[i].1, v)).collect::<Result<Vec<f64>, _>>())
        .collect::<Result<_, _>>()?;
    for (i, row) in rows.iter().enumerate() {
        if let Some(j) = row.iter().position(|s| s.is_nan()) {
            return Err(ClusterError::NanSimilarity { a: ids[i].to_string(), b: ids[j].to_string() });
        }
    }

    let mut clusters: Vec<Cluster> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = grow_seed(i, &rows[i], &ids, cfg);
            Cluster {
                centroid_id: ids[i].to_string(),
                member_ids: s.members.iter().map(|&j| ids[j].to_string()).collect(),
                ranking_score: ranking_score(&s.sims),
                similarities: s.sims,
                threshold: s.threshold,
                gamma: s.gamma,
                iterations: s.iterations,
            }
        })
        .collect();

    clusters.sort_by(|a, b| {
        b.ranking_score
            .partial_cmp(&a.ranking_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.centroid_id.cmp(&b.centroid_id))
    });

    let mut partition = BTreeMap::new();
    for (idx, c) in clusters.iter().enumerate() {
        for id in &c.member_ids {
            partition.entry(id.clone()).or_insert(idx);
        }
    }
    Ok(ClusterSet { clusters, partition, trivial_ids: Vec::new() })
}

// ---------------------------------------------------------------------------
// NMI
// ---------------------------------------------------------------------------

/// Normalized mutual information with arithmetic-mean normalization and
/// natural-log entropies, over two labelings of the same items.
///
/// Both sides constant gives 1; exactly one side constant gives 0.
pub fn nmi_from_labels<A: Eq + Hash, B: Eq + Hash>(pred: &[A], gold: &[B]) -> Result<f64, ClusterError> {
    if pred.len() != gold.len() {
        return Err(ClusterError::IdMismatch);
    }
    if pred.is_empty() {
        return Err(ClusterError::EmptyLabeling);
    }
    let n = pred.len() as f64;
    let pi = dense(pred);
    let gi = dense(gold);
    let (ku, kv) = (pi.iter().max().unwrap() + 1, gi.iter().max().unwrap() + 1);
    let mut joint = vec![0usize; ku * kv];
    let mut nu = vec![0usize; ku];
    let mut nv = vec![0usize; kv];
    for (&a, &b) in pi.iter().zip(&gi) {
        joint[a * kv + b] += 1;
        nu[a] += 1;
        nv[b] += 1;
    }
    let entropy = |counts: &[usize]| -> f64 {
        counts.iter().filter(|&&c| c > 0).map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        }).sum()
    };
    let hu = entropy(&nu);
    let hv = entropy(&nv);
    if hu == 0.0 && hv == 0.0 {
        return Ok(1.0);
    }
    if hu == 0.0 || hv == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for a in 0..ku {
        for b in 0..kv {
            let c = joint[a * kv + b];
            if c > 0 {
                let c = c as f64;
                mi += (c / n) * (c * n / (nu[a] as f64 * nv[b] as f64)).ln();
            }
        }
    }
    Ok((mi / ((hu + hv) / 2.0)).clamp(0.0, 1.0))
}

fn dense<L: Eq + Hash>(labels: &[L]) -> Vec<usize> {
    let mut map: HashMap<&L, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// NMI between two id → label maps covering the same ids.
pub fn nmi<K, A, B>(pred: &HashMap<K, A>, gold: &HashMap<K, B>) -> Result<f64, ClusterError>
where
    K: Eq + Hash + Ord,
    A: Eq + Hash,
    B: Eq + Hash,
{
    if pred.len() != gold.len() || pred.keys().any(|k| !gold.contains_key(k)) {
        return Err(ClusterError::IdMismatch);
    }
    let mut keys: Vec<&K> = pred.keys().collect();
    keys.sort();
    let p: Vec<&A> = keys.iter().map(|k| &pred[*k]).collect();
    let g: Vec<&B> = keys.iter().map(|k| &gold[*k]).collect();
    nmi_from_labels(&p, &g)
}

// ---------------------------------------------------------------------------
// Comment representations and the end-to-end pipeline
// ---------------------------------------------------------------------------

fn comment_terms(c: &Comment, source: TermSource) -> Result<&[crate::corpus::AspectTerm], ClusterError> {
    source.terms(c).ok_or_else(|| ClusterError::MissingPredictions { id: c.id.clone() })
}

/// Representations for many comments, embedding every text and term once.
pub fn build_representations<P: EmbeddingProvider + ?Sized>(
    comments: &[&Comment],
    provider: &P,
    cfg: &DyCluConfig,
    source: TermSource,
) -> Result<Vec<EmbeddingVector>, ClusterError> {
    if comments.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<&str> = comments.iter().map(|c| c.text.as_str()).collect();
    let text_vecs = provider.embed_batch(&texts)?;
    if !cfg.use_cat_augmentation {
        return Ok(text_vecs);
    }
    let mut unique: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for c in comments {
        let ts = comment_terms(c, source)?;
        if ts.is_empty() {
            return Err(ClusterError::NoAspectTerms { id: c.id.clone() });
        }
        unique.extend(ts.iter().map(|t| t.as_str()).filter(|t| seen.insert(*t)));
    }
    let term_vecs: HashMap<&str, EmbeddingVector> = unique.iter().copied().zip(provider.embed_batch(&unique)?).collect();
    comments
        .iter()
        .zip(text_vecs)
        .map(|(c, tv)| {
            let ts = comment_terms(c, source)?;
            let pooled = mean_pool(ts.iter().map(|t| &term_vecs[t.as_str()]))?;
            Ok(concat_normalize(&tv, &pooled)?)
        })
        .collect()
}

/// Text embedding, or text ⊕ mean aspect-term embedding under augmentation.
pub fn build_representation<P: EmbeddingProvider + ?Sized>(
    comment: &Comment,
    provider: &P,
    cfg: &DyCluConfig,
    source: TermSource,
) -> Result<EmbeddingVector, ClusterError> {
    Ok(build_representations(&[comment], provider, cfg, source)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    #[serde(flatten)]
    pub clusters: ClusterSet,
    /// `None` when nothing was left to score.
    pub nmi: Option<f64>,
    pub trivial_excluded: usize,
    /// Clustered comments without a gold label (not scored).
    pub unlabeled: usize,
    pub scored: usize,
}

/// Filters Trivial comments (if configured), clusters the rest and scores the
/// hard partition against the gold `comment_cluster` labels.
pub fn cluster_and_score<P: EmbeddingProvider + ?Sized>(
    corpus: &Corpus,
    provider: &P,
    cfg: &DyCluConfig,
    source: TermSource,
) -> Result<ClusterOutcome, ClusterError> {
    if !corpus.comments.iter().any(|c| c.comment_cluster.is_some()) {
        return Err(ClusterError::NoGoldLabels);
    }
    cluster_corpus(corpus, provider, cfg, source, true)
}

/// Like [`cluster_and_score`], but NMI is only computed when `score` is set
/// and gold labels are not required otherwise.
pub fn cluster_corpus<P: EmbeddingProvider + ?Sized>(
    corpus: &Corpus,
    provider: &P,
    cfg: &DyCluConfig,
    source: TermSource,
    score: bool,
) -> Result<ClusterOutcome, ClusterError> {
    cfg.validate()?;
    let mut kept: Vec<&Comment> = Vec::new();
    let mut trivial_ids = Vec::new();
    for c in &corpus.comments {
        if cfg.trivial_filter && comment_terms(c, source)?.is_empty() {
            trivial_ids.push(c.id.clone());
        } else {
            kept.push(c);
        }
    }
    let trivial_excluded = trivial_ids.len();
    if kept.is_empty() {
        return Ok(ClusterOutcome {
            clusters: ClusterSet::empty(trivial_ids),
            nmi: None,
            trivial_excluded,
            unlabeled: 0,
            scored: 0,
        });
    }
    let reps = build_representations(&kept, provider, cfg, source)?;
    let points: Vec<(&str, EmbeddingVector)> = kept.iter().map(|c| c.id.as_str()).zip(reps).collect();
    let mut clusters = dyclu_cluster(&points, cfg)?;
    clusters.trivial_ids = trivial_ids;

    let labeled: Vec<&Comment> = kept.iter().copied().filter(|c| c.comment_cluster.is_some()).collect();
    let unlabeled = kept.len() - labeled.len();
    let nmi = if labeled.is_empty() || !score {
        None
    } else {
        let pred: Vec<usize> = labeled.iter().map(|c| clusters.partition[&c.id]).collect();
        let gold: Vec<&str> = labeled.iter().map(|c| c.comment_cluster.as_deref().unwrap()).collect();
        Some(nmi_from_labels(&pred, &gold)?)
    };
    Ok(ClusterOutcome { clusters, nmi, trivial_excluded, unlabeled, scored: labeled.len() })
}
