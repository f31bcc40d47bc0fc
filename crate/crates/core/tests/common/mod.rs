//! Oracles and synthetic fixtures shared by the integration and acceptance tests.
//! Everything here is written independently of the library code it checks.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;

use aspect_core::corpus::{Comment, Corpus, Language, Split};
use aspect_core::embedding::EmbeddingVector;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest one-to-one assignment of rows to columns using only cells at or
/// above `threshold`, by trying every assignment.
pub fn exhaustive_matching(sim: &[Vec<f64>], threshold: f64) -> usize {
    fn go(row: usize, sim: &[Vec<f64>], threshold: f64, used: &mut Vec<bool>) -> usize {
        if row == sim.len() {
            return 0;
        }
        // leave this row unmatched
        let mut best = go(row + 1, sim, threshold, used);
        for col in 0..used.len() {
            if !used[col] && sim[row][col] >= threshold {
                used[col] = true;
                best = best.max(1 + go(row + 1, sim, threshold, used));
                used[col] = false;
            }
        }
        best
    }
    let cols = sim.first().map_or(0, Vec::len);
    go(0, sim, threshold, &mut vec![false; cols])
}

/// Random similarity matrix with entries in [-1, 1]; some values are snapped
/// to a coarse grid so threshold ties occur.
pub fn random_sim_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    let x: f64 = r.random_range(-1.0..=1.0);
                    if r.random_bool(0.3) {
                        (x * 10.0).round() / 10.0
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect()
}

/// NMI with arithmetic-mean normalization computed from a contingency table.
/// Constant-vs-constant is 1, constant-vs-varied is 0.
pub fn contingency_nmi(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let entropy = |m: &BTreeMap<usize, f64>| -> f64 { -m.values().map(|&c| (c / n) * (c / n).ln()).sum::<f64>() };
    let (ha, hb) = (entropy(&rows), entropy(&cols));
    if rows.len() == 1 && cols.len() == 1 {
        return 1.0;
    }
    if rows.len() == 1 || cols.len() == 1 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (&(x, y), &nij) in &table {
        mi += (nij / n) * ((n * nij) / (rows[&x] * cols[&y])).ln();
    }
    mi / ((ha + hb) / 2.0)
}

pub fn random_unit_vector(r: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        if let Ok(u) = EmbeddingVector::normalized(v) {
            return u;
        }
    }
}

/// Two tight, well-separated groups of unit vectors: (id, vector, blob).
pub fn two_blobs(r: &mut ChaCha8Rng, per_blob: usize, dim: usize) -> Vec<(String, EmbeddingVector, usize)> {
    let mut out = Vec::new();
    for blob in 0..2 {
        for i in 0..per_blob {
            let mut v = vec![0.0; dim];
            v[blob] = 1.0;
            for x in v.iter_mut() {
                *x += r.random_range(-0.05..0.05);
            }
            out.push((format!("b{blob}-{i:03}"), EmbeddingVector::normalized(v).unwrap(), blob));
        }
    }
    out
}

const NOISE: &[&str] = &[
    "honestly", "today", "again", "lol", "people", "really", "thing", "same", "news", "just", "think", "know",
    "maybe", "never", "always", "still", "ok", "well", "sure", "what", "why", "how", "yes", "no", "hmm", "wow",
];

const TOPIC: &str = "about the latest report on the city budget";

const CLUSTER_TERMS: &[&[&str]] = &[
    &["bus fares", "public transport", "train delays"],
    &["housing prices", "rental market", "home loans"],
    &["hospital queues", "healthcare costs", "clinic hours"],
    &["school fees", "exam stress", "teacher pay"],
    &["petrol tax", "fuel subsidy", "car permits"],
];

/// Comments that share one topic sentence and differ only by random filler
/// words, so their text says little about their cluster. Each non-trivial
/// comment carries 1 or 2 aspect terms from its cluster's term pool (as gold
/// and predicted terms); about a tenth carry none.
pub fn shared_topic_corpus(seed: u64, per_cluster: usize) -> Corpus {
    let mut r = rng(seed);
    let mut comments = Vec::new();
    for (k, pool) in CLUSTER_TERMS.iter().enumerate() {
        for i in 0..per_cluster {
            let words: Vec<&str> = (0..6).map(|_| *NOISE.choose(&mut r).unwrap()).collect();
            let text = format!("{} {TOPIC} {}", words[..3].join(" "), words[3..].join(" "));
            let terms: Vec<&str> = if r.random_bool(0.1) {
                Vec::new()
            } else {
                let n = r.random_range(1..=2);
                pool.choose_multiple(&mut r, n).copied().collect()
            };
            let c = Comment::new(format!("k{k}-{i:02}"), Language::En, text, &terms)
                .unwrap()
                .with_pred(&terms)
                .unwrap()
                .with_comment_cluster(format!("c{k}"));
            comments.push(c);
        }
    }
    Corpus::new(format!("shared-topic-{seed}"), Split::Test, comments).unwrap()
}

/// Writes `counts[lang]` records per language as a JSONL corpus file.
pub fn write_count_fixture(path: &std::path::Path, counts: &[(Language, usize)]) {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    let mut id = 0;
    for &(lang, n) in counts {
        for _ in 0..n {
            id += 1;
            writeln!(
                f,
                r#"{{"id":"{}-{id}","lang":"{}","text":"comment {id}","gold_cats":["term {id}"],"pred_cats":null,"polarity":null,"article_cluster":null,"comment_cluster":null}}"#,
                lang.code(),
                lang.code()
            )
            .unwrap();
        }
    }
    f.flush().unwrap();
}

/// Sample variance (n − 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}
