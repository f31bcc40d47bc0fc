//! Comment aspect-term generation, evaluation and aspect-aware comment clustering.

pub mod corpus;
pub mod dyclu;
pub mod embedding;
pub mod eval;
pub mod llm_gen;
pub mod preference;
pub mod report;

pub use corpus::{AspectTerm, Comment, Corpus, Language, Polarity, Split, TermSource};
pub use dyclu::{ClusterOutcome, ClusterSet, DyCluConfig};
pub use embedding::{EmbeddingProvider, EmbeddingProviderConfig, EmbeddingVector, HashingEmbedder};
pub use eval::{MatchConfig, MatchReport, Matching};
