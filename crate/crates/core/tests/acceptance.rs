//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use aspect_core::corpus::{load_corpus, split_stats, Comment, Corpus, Language, Polarity, Split, TermSource};
use aspect_core::dyclu::{cluster_and_score, dyclu_cluster, nmi_from_labels, DyCluConfig};
use aspect_core::embedding::{EmbeddingVector, HashingEmbedder};
use aspect_core::eval::{max_bipartite_matching, scale_sweep, MatchConfig, MatchCounts, Matching};
use aspect_core::llm_gen::parse_annotation;
use aspect_core::preference::{dpo_grad, dpo_loss, DpoConfig, PreferenceExample};
use common::{
    contingency_nmi, exhaustive_matching, random_sim_matrix, random_unit_vector, rng, shared_topic_corpus, two_blobs,
    variance, write_count_fixture,
};
use rand::seq::IndexedRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Overall P / R / F1 rows of the reference results table.
const OVERALL_ROWS: [(&str, f64, f64, f64); 9] = [
    ("SeaLion2", 19.5, 39.0, 26.0),
    ("SeaLion2 ft", 21.9, 45.9, 29.7),
    ("SeaLion2 DPO ft", 22.4, 46.6, 30.3),
    ("SeaLion2 DPO ft limit", 22.8, 46.7, 30.6),
    ("SeaLLM2", 7.5, 14.7, 9.9),
    ("SeaLLM2 ft", 23.1, 47.6, 31.1),
    ("SeaLLM2 DPO ft", 26.6, 47.8, 34.2),
    ("SeaLLM2 DPO ft limit", 27.2, 45.7, 34.1),
    ("GPT4", 30.0, 40.9, 34.6),
];

fn round1(x: f64) -> f64 {
    (x * 10.0 + 1e-9).round() / 10.0
}

/// Integer (matched, predicted, gold) whose P and R round to the printed
/// values, closest to them among gold totals up to 6000.
fn counts_for(p: f64, r: f64) -> Option<(usize, usize, usize)> {
    let mut best: Option<((usize, usize, usize), f64)> = None;
    for gold in 1..=6000usize {
        let matched = (r * gold as f64 / 100.0).round() as usize;
        if matched == 0 {
            continue;
        }
        let predicted = (100.0 * matched as f64 / p).round() as usize;
        if predicted < matched {
            continue;
        }
        let (pe, re) = (100.0 * matched as f64 / predicted as f64, 100.0 * matched as f64 / gold as f64);
        if round1(pe) != p || round1(re) != r {
            continue;
        }
        let err = (pe - p).abs() + (re - r).abs();
        if best.is_none_or(|(_, e)| err < e) {
            best = Some(((matched, predicted, gold), err));
        }
    }
    best.map(|(t, _)| t)
}

fn f1_arithmetic() -> Outcome {
    let mut consistent = 0;
    let mut logged = Vec::new();
    for (name, p, r, f1) in OVERALL_ROWS {
        if (2.0 * p * r / (p + r) - f1).abs() > 0.05 {
            logged.push(format!("{name}: printed values disagree"));
            continue;
        }
        let (m, pr, g) = counts_for(p, r).ok_or_else(|| format!("{name}: no count triple"))?;
        let got = 100.0 * MatchCounts::new(m, pr, g).f1();
        ensure((got - f1).abs() <= 0.05, || format!("{name}: counts ({m},{pr},{g}) give F1 {got:.3}, printed {f1}"))?;
        consistent += 1;
    }
    Ok(format!("{consistent}/9 rows reproduced within 0.05; inconsistent: {:?}", logged))
}

fn corpus_table() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let splits = [
        ("finetune", 2357, [(Language::En, 809), (Language::Cn, 693), (Language::Ms, 524), (Language::Id, 331)]),
        ("test", 3000, [(Language::En, 1223), (Language::Cn, 814), (Language::Ms, 576), (Language::Id, 387)]),
    ];
    let mut totals = Vec::new();
    for (name, total, counts) in splits {
        let path = dir.path().join(format!("{name}.jsonl"));
        write_count_fixture(&path, &counts);
        let corpus = load_corpus(&path).map_err(|e| e.to_string())?;
        let stats = split_stats(&corpus);
        ensure(stats.total == total, || format!("{name}: total {} != {total}", stats.total))?;
        for (lang, n) in counts {
            ensure(stats.count(lang) == n, || format!("{name} {lang}: {} != {n}", stats.count(lang)))?;
        }
        totals.push(stats.total);
    }
    Ok(format!("totals {totals:?}"))
}

fn dpo_math() -> Outcome {
    for k in 1..=20 {
        let beta = 0.05 * k as f64;
        let ex = PreferenceExample::new("c", -2.0, -2.0, -0.5, -0.5).map_err(|e| e.to_string())?;
        let loss = dpo_loss(&[ex], &DpoConfig::new(beta).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure((loss - std::f64::consts::LN_2).abs() <= 1e-12, || format!("beta {beta}: loss {loss}"))?;
    }
    let mut r = rng(301);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let beta = r.random_range(0.05..=1.0);
        let cfg = DpoConfig::new(beta).unwrap();
        let mut lp = || r.random_range(-3.0..=0.0);
        let ex = PreferenceExample::new(format!("c{i}"), lp(), lp(), lp(), lp()).unwrap();
        let g = dpo_grad(std::slice::from_ref(&ex), &cfg).unwrap()[0];
        let loss_at = |dp: f64, dr: f64| {
            let m = (ex.logp_policy_preferred + dp - ex.logp_ref_preferred)
                - (ex.logp_policy_rejected + dr - ex.logp_ref_rejected);
            (1.0 + (-beta * m).exp()).ln()
        };
        let fd_p = (loss_at(h, 0.0) - loss_at(-h, 0.0)) / (2.0 * h);
        let fd_r = (loss_at(0.0, h) - loss_at(0.0, -h)) / (2.0 * h);
        for (a, b) in [(g.preferred, fd_p), (g.rejected, fd_r)] {
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
        }
        let shift = r.random_range(-5.0..=0.0);
        let moved = PreferenceExample {
            logp_policy_preferred: ex.logp_policy_preferred + shift,
            logp_policy_rejected: ex.logp_policy_rejected + shift,
            ..ex.clone()
        };
        let (a, b) = (dpo_loss(&[ex], &cfg).unwrap(), dpo_loss(&[moved], &cfg).unwrap());
        ensure((a - b).abs() <= 1e-12, || format!("shift changed loss {a} -> {b}"))?;
    }
    ensure(worst <= 1e-6, || format!("gradient relative error {worst:e}"))?;
    Ok(format!("ln2 for 20 betas; worst FD relative error {worst:.1e} over 1000 examples; shift invariant"))
}

fn matching_oracle() -> Outcome {
    let mut r = rng(401);
    for i in 0..500 {
        let (p, g) = (r.random_range(0..=6), r.random_range(0..=6));
        let sim = random_sim_matrix(&mut r, p, g);
        let t = r.random_range(0.05..=1.0);
        let (a, b) = (max_bipartite_matching(&sim, t), exhaustive_matching(&sim, t));
        ensure(a == b, || format!("instance {i}: {a} vs exhaustive {b}"))?;
    }
    for i in 0..1000 {
        let (p, g) = (r.random_range(0..=6), r.random_range(0..=6));
        let sim = random_sim_matrix(&mut r, p, g);
        let (x, y): (f64, f64) = (r.random_range(0.01..=1.0), r.random_range(0.01..=1.0));
        let (lo, hi) = (x.min(y), x.max(y));
        ensure(max_bipartite_matching(&sim, hi) <= max_bipartite_matching(&sim, lo), || format!("monotonicity {i}"))?;
    }
    Ok("500 oracle instances, 1000 monotonicity instances".into())
}

fn dyclu_properties() -> Outcome {
    let mut r = rng(501);
    let cfg = DyCluConfig::default();
    let mut max_n = 0;
    for case in 0..200 {
        let n: usize = r.random_range(1..=300);
        max_n = max_n.max(n);
        let dim = r.random_range(2..=12);
        let points: Vec<(String, EmbeddingVector)> =
            (0..n).map(|i| (format!("p{i:03}"), random_unit_vector(&mut r, dim))).collect();
        let set = dyclu_cluster(&points, &cfg).map_err(|e| e.to_string())?;
        let bound = n.saturating_sub(cfg.gamma0).div_ceil(cfg.delta);
        for c in &set.clusters {
            ensure(c.iterations <= bound, || format!("case {case}: {} iterations > {bound}", c.iterations))?;
            ensure(c.threshold <= 0.9, || format!("case {case}: threshold {}", c.threshold))?;
            let seed = &points.iter().find(|(id, _)| *id == c.centroid_id).unwrap().1;
            let sims: Vec<f64> = points.iter().map(|(_, v)| dot(seed, v)).collect();
            // members beyond the seed clear the threshold; nobody outside the
            // member set that clears it ranks above the weakest member
            for (id, &s) in c.member_ids.iter().zip(&c.similarities).skip(1) {
                ensure(s >= c.threshold, || format!("case {case}: member {id} below threshold"))?;
            }
            let weakest = c.similarities.iter().skip(1).copied().fold(f64::INFINITY, f64::min);
            let outsiders_above = points
                .iter()
                .zip(&sims)
                .filter(|((id, _), &s)| !c.member_ids.contains(id) && s >= c.threshold && s > weakest + 1e-12)
                .count();
            ensure(c.member_ids.len() == 1 || outsiders_above == 0, || format!("case {case}: skipped a closer point"))?;
        }
    }
    let mut r = rng(502);
    let blobs = two_blobs(&mut r, 30, 16);
    let points: Vec<(String, EmbeddingVector)> = blobs.iter().map(|(id, v, _)| (id.clone(), v.clone())).collect();
    let set = dyclu_cluster(&points, &cfg).map_err(|e| e.to_string())?;
    let pred: Vec<usize> = blobs.iter().map(|(id, _, _)| set.partition[id]).collect();
    let gold: Vec<usize> = blobs.iter().map(|(_, _, b)| *b).collect();
    let nmi = nmi_from_labels(&pred, &gold).map_err(|e| e.to_string())?;
    ensure(nmi == 1.0, || format!("two-blob NMI {nmi}"))?;
    Ok(format!("200 datasets (n up to {max_n}); two-blob NMI {nmi}"))
}

fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

fn augmentation_direction() -> Outcome {
    let provider = HashingEmbedder::new(384, 0).unwrap();
    let plain = DyCluConfig::default();
    let augmented = DyCluConfig { use_cat_augmentation: true, trivial_filter: true, ..DyCluConfig::default() };
    let mut wins = 0;
    let (mut sum_plain, mut sum_aug) = (0.0, 0.0);
    for seed in 0..100 {
        let corpus = shared_topic_corpus(seed, 12);
        let p = cluster_and_score(&corpus, &provider, &plain, TermSource::Pred).map_err(|e| e.to_string())?;
        let a = cluster_and_score(&corpus, &provider, &augmented, TermSource::Pred).map_err(|e| e.to_string())?;
        let (pn, an) = (p.nmi.unwrap_or(0.0), a.nmi.unwrap_or(0.0));
        sum_plain += pn;
        sum_aug += an;
        if an >= pn {
            wins += 1;
        }
    }
    ensure(wins >= 95, || format!("augmented >= plain in only {wins}/100"))?;
    Ok(format!("augmented >= plain in {wins}/100; mean NMI {:.3} vs {:.3}", sum_aug / 100.0, sum_plain / 100.0))
}

fn nmi_checks() -> Outcome {
    let labels = [0, 0, 1, 1, 2, 2, 2];
    let id = nmi_from_labels(&labels, &labels).map_err(|e| e.to_string())?;
    ensure(id == 1.0, || format!("identity {id}"))?;
    let constant = [5; 7];
    let cv = nmi_from_labels(&constant, &labels).map_err(|e| e.to_string())?;
    ensure(cv == 0.0, || format!("constant vs varied {cv}"))?;
    let mut r = rng(701);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(2..=100);
        let (ka, kb) = (r.random_range(1..=8), r.random_range(1..=8));
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| r.random_range(0..kb)).collect();
        let got = nmi_from_labels(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - contingency_nmi(&a, &b)).abs());
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("identity 1, constant 0, max deviation {worst:.1e} over 200 pairs"))
}

const FUZZ_PIECES: &[&str] = &[
    "[", "]", "|", ":", ",", ", ", "ATs", "AT", "EP", "N", "P", "C", "NA", " ", "\n", "，", "、", "food bank", "新冠",
    "x", "[ATs:", "| EP:", "]]", "[[", "EP: N]", "\u{0}", "\u{202e}", "é", "🙂",
];

const VALID: &[&str] = &["[ATs: food bank, poor singaporeans | EP: N]", "[ATs: NA | EP: C]", "[AT: 死亡率、新冠 | EP: P]"];

fn fuzz_input(r: &mut rand_chacha::ChaCha8Rng) -> String {
    if r.random_bool(0.5) {
        // splice random pieces into a valid annotation
        let mut s: Vec<char> = VALID.choose(r).unwrap().chars().collect();
        for _ in 0..r.random_range(0..4) {
            let at = r.random_range(0..=s.len());
            if r.random_bool(0.5) && at < s.len() {
                s.remove(at);
            } else {
                let piece: Vec<char> = FUZZ_PIECES.choose(r).unwrap().chars().collect();
                s.splice(at..at, piece);
            }
        }
        return s.into_iter().collect();
    }
    let len = r.random_range(0..40);
    let mut s = String::new();
    for _ in 0..len {
        if r.random_bool(0.15) {
            s.push(char::from_u32(r.random_range(0..0x11000)).unwrap_or('?'));
        } else {
            s.push_str(FUZZ_PIECES.choose(r).unwrap());
        }
    }
    s
}

fn parser_totality() -> Outcome {
    let mut r = rng(801);
    let mut parsed = 0;
    for i in 0..100_000 {
        let s = fuzz_input(&mut r);
        let res = panic::catch_unwind(AssertUnwindSafe(|| parse_annotation(&s)));
        match res {
            Err(_) => return Err(format!("panic on case {i}: {s:?}")),
            Ok(Ok(a)) => {
                ensure(a.annotation.cats.len() <= 5, || format!("case {i}: {} terms", a.annotation.cats.len()))?;
                parsed += 1;
            }
            Ok(Err(_)) => {}
        }
    }
    let examples: &[(&str, &[&str], Polarity)] = &[
        ("[ATs: food bank, poor singaporeans | EP: N]", &["food bank", "poor singaporeans"], Polarity::N),
        ("[ATs: CPF savings | EP: P]", &["CPF savings"], Polarity::P),
        ("[ATs: NA | EP: C]", &[], Polarity::C),
        ("[ATs: BN, hasil negara, rizab Selangor, fed gomen | EP: N]", &["BN", "hasil negara", "rizab Selangor", "fed gomen"], Polarity::N),
        ("[ATs: rizab selangor, merompak wang | EP: N]", &["rizab selangor", "merompak wang"], Polarity::N),
        ("[ATs: motorcycle owner, JPJ | EP: C]", &["motorcycle owner", "JPJ"], Polarity::C),
        ("[ATs: Jamal | EP: N]", &["Jamal"], Polarity::N),
        ("[ATs: 新冠统计 | EP: N]", &["新冠统计"], Polarity::N),
        ("[ATs: 网络新闻, 浙江新增病例, 死亡率 | EP: N]", &["网络新闻", "浙江新增病例", "死亡率"], Polarity::N),
        ("[ATs: NATO, Tiongkok, Rusia, senjata nuklir | EP: N]", &["NATO", "Tiongkok", "Rusia", "senjata nuklir"], Polarity::N),
        ("[ATs: Efek booster, penelitian di Israel | EP: C]", &["Efek booster", "penelitian di Israel"], Polarity::C),
        ("[AT: Indonesia, hijab, nyamuk | EP: C]", &["Indonesia", "hijab", "nyamuk"], Polarity::C),
    ];
    for (text, want, pol) in examples {
        let a = parse_annotation(text).map_err(|e| format!("{text}: {e}"))?.annotation;
        let got: Vec<&str> = a.cats.iter().map(|t| t.as_str()).collect();
        ensure(got == *want && a.polarity == *pol, || format!("{text}: got {got:?} {:?}", a.polarity))?;
    }
    Ok(format!("100000 fuzz cases ({parsed} parsed), {} prompt examples exact", examples.len()))
}

fn sweep_corpus(n: usize) -> Corpus {
    let mut r = rng(901);
    let vocab = ["rail fares", "rent", "school fees", "clinic", "fuel tax", "wages", "parks", "water bill"];
    let pick = |r: &mut rand_chacha::ChaCha8Rng, k: usize| -> Vec<&str> {
        vocab.choose_multiple(r, k).copied().collect()
    };
    let comments = (0..n)
        .map(|i| {
            let k = r.random_range(1..=3);
            let gold = pick(&mut r, k);
            // predictions keep some gold terms and add others
            let mut pred: Vec<&str> = gold.iter().copied().filter(|_| r.random_bool(0.5)).collect();
            let extra = r.random_range(0..=2);
            for t in pick(&mut r, extra) {
                if !pred.contains(&t) {
                    pred.push(t);
                }
            }
            Comment::new(format!("s{i:03}"), Language::ALL[i % 4], format!("comment {i}"), &gold)
                .unwrap()
                .with_pred(&pred)
                .unwrap()
        })
        .collect();
    Corpus::new("sweep", Split::Test, comments).unwrap()
}

fn sweep_variance() -> Outcome {
    let corpus = sweep_corpus(500);
    let provider = HashingEmbedder::new(384, 0).unwrap();
    let cfg = MatchConfig { threshold: 0.7, matching: Matching::MaxBipartite };
    let seeds: Vec<u64> = (1..=30).collect();
    let points = scale_sweep(&corpus, &provider, &cfg, &[50, 450], &seeds).map_err(|e| e.to_string())?;
    let at = |size| points.iter().filter(|p| p.size == size).map(|p| p.f1).collect::<Vec<f64>>();
    let (small, large) = (variance(&at(50)), variance(&at(450)));
    ensure(large <= small, || format!("variance at 90% {large:e} > at 10% {small:e}"))?;
    Ok(format!("variance 10%: {small:.2e}, 90%: {large:.2e} over {} seeds", seeds.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("F1 arithmetic reproduction", f1_arithmetic),
        ("corpus table totals", corpus_table),
        ("DPO loss and gradients", dpo_math),
        ("matching oracle and monotonicity", matching_oracle),
        ("clustering growth properties", dyclu_properties),
        ("aspect-term augmentation direction", augmentation_direction),
        ("NMI correctness", nmi_checks),
        ("annotation parser totality", parser_totality),
        ("scale sweep variance", sweep_variance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
