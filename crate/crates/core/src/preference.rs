//! Direct preference optimization objective over sequence log-probabilities.
//!
//! For a context `c` with a preferred completion `z` (human aspect terms) and a
//! rejected completion `z'` (machine aspect terms):
//!
//! ```text
//! a    = β · [(log πθ(z|c) − log πτ(z|c)) − (log πθ(z'|c) − log πτ(z'|c))]
//! loss = mean over the batch of −log σ(a)
//! ```
//!
//! πθ is the trainable policy and πτ the frozen reference. Only the two policy
//! log-probabilities receive gradients. No training happens here; the module
//! also exports preference pairs for an external trainer.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{join_terms, Corpus};
use crate::llm_gen::PromptTemplate;

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum PreferenceError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("log-probability {name} = {value} must be finite and ≤ 0")]
    InvalidLogProb { name: &'static str, value: f64 },
    #[error("comment ids differ between corpora: {0}")]
    IdMismatch(String),
    #[error("comment {id:?} has no machine-predicted aspect terms")]
    MissingPredictions { id: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig { beta: DEFAULT_BETA }
    }
}

impl DpoConfig {
    pub fn new(beta: f64) -> Result<Self, PreferenceError> {
        let cfg = DpoConfig { beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PreferenceError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(PreferenceError::InvalidBeta(self.beta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub context_id: String,
    /// Policy log-probability of the preferred output.
    pub logp_policy_preferred: f64,
    /// Reference log-probability of the preferred output.
    pub logp_ref_preferred: f64,
    /// Policy log-probability of the rejected output.
    pub logp_policy_rejected: f64,
    /// Reference log-probability of the rejected output.
    pub logp_ref_rejected: f64,
}

impl PreferenceExample {
    pub fn new(
        context_id: impl Into<String>,
        logp_policy_preferred: f64,
        logp_ref_preferred: f64,
        logp_policy_rejected: f64,
        logp_ref_rejected: f64,
    ) -> Result<Self, PreferenceError> {
        let ex = PreferenceExample {
            context_id: context_id.into(),
            logp_policy_preferred,
            logp_ref_preferred,
            logp_policy_rejected,
            logp_ref_rejected,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<(), PreferenceError> {
        for (name, value) in [
            ("logp_policy_preferred", self.logp_policy_preferred),
            ("logp_ref_preferred", self.logp_ref_preferred),
            ("logp_policy_rejected", self.logp_policy_rejected),
            ("logp_ref_rejected", self.logp_ref_rejected),
        ] {
            if !value.is_finite() || value > 0.0 {
                return Err(PreferenceError::InvalidLogProb { name, value });
            }
        }
        Ok(())
    }

    /// Policy/reference log-ratio gap between preferred and rejected.
    pub fn margin(&self) -> f64 {
        (self.logp_policy_preferred - self.logp_ref_preferred) - (self.logp_policy_rejected - self.logp_ref_rejected)
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−log σ(x)` = `log(1 + e^{−x})`, stable for large |x|.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn check_batch(batch: &[PreferenceExample], cfg: &DpoConfig) -> Result<(), PreferenceError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(PreferenceError::EmptyBatch);
    }
    batch.iter().try_for_each(PreferenceExample::validate)
}

/// Mean DPO loss over the batch (index-ascending summation).
pub fn dpo_loss(batch: &[PreferenceExample], cfg: &DpoConfig) -> Result<f64, PreferenceError> {
    check_batch(batch, cfg)?;
    let mut sum = 0.0;
    for ex in batch {
        sum += neg_log_sigmoid(cfg.beta * ex.margin());
    }
    Ok(sum / batch.len() as f64)
}

/// Gradient of the batch loss with respect to one example's policy log-probs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyGradient {
    pub preferred: f64,
    pub rejected: f64,
}

pub fn dpo_grad(batch: &[PreferenceExample], cfg: &DpoConfig) -> Result<Vec<PolicyGradient>, PreferenceError> {
    check_batch(batch, cfg)?;
    let n = batch.len() as f64;
    Ok(batch
        .iter()
        .map(|ex| {
            // 1 − σ(a) = σ(−a)
            let w = cfg.beta * sigmoid(-cfg.beta * ex.margin()) / n;
            PolicyGradient { preferred: -w, rejected: w }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Preference-pair export
// ---------------------------------------------------------------------------

/// One exported pair, in the shape external DPO trainers read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRecord {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceSet {
    pub records: Vec<PreferenceRecord>,
    /// Ids whose human and machine term sets coincide.
    pub skipped: Vec<String>,
}

/// Pairs human (chosen) with machine (rejected) aspect terms per comment,
/// skipping comments where both sets are equal. Output follows `human` order.
pub fn build_preference_set(human: &Corpus, machine: &Corpus) -> Result<PreferenceSet, PreferenceError> {
    let by_id: HashMap<&str, &crate::corpus::Comment> = machine.comments.iter().map(|c| (c.id.as_str(), c)).collect();
    if by_id.len() != human.len() {
        return Err(PreferenceError::IdMismatch(format!(
            "{} human comments vs {} machine comments",
            human.len(),
            by_id.len()
        )));
    }
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for h in &human.comments {
        let m = by_id
            .get(h.id.as_str())
            .ok_or_else(|| PreferenceError::IdMismatch(format!("{:?} missing from machine corpus", h.id)))?;
        let rejected = m.pred_cats.as_deref().ok_or_else(|| PreferenceError::MissingPredictions { id: h.id.clone() })?;
        let chosen_set: BTreeSet<&str> = h.gold_cats.iter().map(|t| t.as_str()).collect();
        let rejected_set: BTreeSet<&str> = rejected.iter().map(|t| t.as_str()).collect();
        if chosen_set == rejected_set {
            skipped.push(h.id.clone());
            continue;
        }
        let template = PromptTemplate::instruction_for_id(h.language, &h.id, false);
        records.push(PreferenceRecord {
            id: h.id.clone(),
            prompt: template.render_text(&h.text),
            chosen: join_terms(&h.gold_cats),
            rejected: join_terms(rejected),
        });
    }
    Ok(PreferenceSet { records, skipped })
}

pub fn write_preferences<W: Write>(mut w: W, records: &[PreferenceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_preferences<R: BufRead>(r: R) -> Result<Vec<PreferenceRecord>, PreferenceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| PreferenceError::Malformed { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}
