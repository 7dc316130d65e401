//! Trains all five conditioning methods over several seeds on the desk corpus
//! and prints the comparison table.
//!
//!     cargo run --release --example compare_methods -- 20 1,2,3

use ctxbert::data::{split_corpus, Corpus, GeneratorConfig};
use ctxbert::eval::compare;
use ctxbert::model::{MethodKind, ModelConfig};
use ctxbert::training::TrainConfig;

fn main() -> ctxbert::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let seeds: Vec<u64> = args
        .next()
        .unwrap_or_else(|| "1,2".into())
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| ctxbert::Error::Usage(format!("seed {s:?}: {e}")))
        })
        .collect::<ctxbert::Result<_>>()?;

    let corpus = Corpus::generate(&GeneratorConfig::desk(0), 1)?;
    let (train, val) = split_corpus(&corpus, 0.1, 0)?;
    let mut base = TrainConfig::new(ModelConfig::desk(MethodKind::None), 0);
    base.epochs = epochs;
    let out = compare(
        &MethodKind::ALL,
        &base,
        &seeds,
        &train.outfits,
        &val.outfits,
        None,
        1,
    )?;
    print!("{}", out.comparison.to_table());
    Ok(())
}
