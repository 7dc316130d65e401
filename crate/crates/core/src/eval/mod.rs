//! Cross-entropy and recall@r under exhaustive masking, plus multi-seed
//! aggregation into comparison tables.

pub mod compare;
pub mod evaluate;
pub mod recall;
pub mod report;

pub use compare::{compare, CompareOutput};
pub use evaluate::{
    check_schema, cross_entropy, default_ranks, evaluate, exhaustive_batches, BayesScorer,
    EvalMetrics, Scorer,
};
pub use recall::{article_rank, check_rank, recall_at_r};
pub use report::{
    relative_improvement, summarize, Comparison, EvalReport, Improvement, RecallSummary, Summary,
};
