//! Trains one conditioning method on the desk corpus and prints validation
//! metrics after every epoch.
//!
//!     cargo run --release --example train_desk -- gs 20 0.001

use std::time::Instant;

use ctxbert::data::{split_corpus, Corpus, GeneratorConfig};
use ctxbert::model::{MethodKind, ModelConfig};
use ctxbert::training::{train, TrainConfig};

fn main() -> ctxbert::Result<()> {
    let mut args = std::env::args().skip(1);
    let method: MethodKind = args.next().as_deref().unwrap_or("gs").parse()?;
    let epochs: usize = args
        .next()
        .map_or(Ok(20), |s| s.parse())
        .map_err(|e| ctxbert::Error::Usage(format!("{e}")))?;

    let lr: Option<f64> = args
        .next()
        .map(|s| s.parse())
        .transpose()
        .map_err(|e| ctxbert::Error::Usage(format!("{e}")))?;

    let corpus = Corpus::generate(&GeneratorConfig::desk(0), 1)?;
    let (train_set, val_set) = split_corpus(&corpus, 0.1, 0)?;
    let mut config = TrainConfig::new(ModelConfig::desk(method), 1);
    config.epochs = epochs;
    if let Some(lr) = lr {
        config.adam.learning_rate = lr;
    }

    let started = Instant::now();
    let out = train::<f32>(&config, &train_set.outfits, Some(&val_set.outfits), None, 1)?;
    for r in out.records.iter().filter(|r| r.split == "validation") {
        let recall: Vec<String> = r
            .recall
            .iter()
            .map(|(k, v)| format!("r@{k} {:.2}%", v * 100.0))
            .collect();
        println!(
            "epoch {:>2}  loss {:.4}  {}",
            r.epoch,
            r.loss,
            recall.join("  ")
        );
    }
    println!("{method}: {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
