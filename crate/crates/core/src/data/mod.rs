//! Synthetic context-dependent outfit corpus.

pub mod bayes;
pub mod corpus;
pub mod embed;
pub mod generator;
pub mod schema;

pub use bayes::BayesOracle;
pub use corpus::{split_corpus, Corpus, CorpusHeader, SplitInfo};
pub use embed::embed_context;
pub use generator::{generate_outfits, GeneratorConfig, Outfit, TasteMap, DEFAULT_LENGTH_PROBS};
pub use schema::{ContextSchema, FeatureSpec};

#[cfg(test)]
mod tests;
