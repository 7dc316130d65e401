//! Scores the desk validation split with the generator's exact posterior,
//! with and without access to the context.
//!
//!     cargo run --release --example bayes_floor

use ctxbert::data::{split_corpus, BayesOracle, Corpus, GeneratorConfig};
use ctxbert::eval::{default_ranks, evaluate, BayesScorer};

fn main() -> ctxbert::Result<()> {
    let config = GeneratorConfig::desk(0);
    let corpus = Corpus::generate(&config, 1)?;
    let (_, val) = split_corpus(&corpus, 0.1, 0)?;
    let oracle = BayesOracle::new(&config)?.with_marginal()?;
    let ranks = default_ranks(config.n_articles());
    for use_context in [false, true] {
        let m = evaluate(
            &BayesScorer {
                oracle: &oracle,
                use_context,
            },
            &val.outfits,
            &ranks,
            512,
            1,
        )?;
        let recall: Vec<String> = m
            .recall
            .iter()
            .map(|(k, v)| format!("r@{k} {:.2}%", v * 100.0))
            .collect();
        println!(
            "context {:<5}  cross-entropy {:.4}  {}",
            use_context,
            m.cross_entropy,
            recall.join("  ")
        );
    }
    Ok(())
}
