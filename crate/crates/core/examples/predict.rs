//! Trains a [GS] model briefly, then fills the masked slot of one validation
//! outfit under two different customer contexts and compares the model's
//! probabilities with the exact posterior.
//!
//!     cargo run --release --example predict -- 5

use ctxbert::data::{split_corpus, BayesOracle, Corpus, GeneratorConfig};
use ctxbert::model::{MethodKind, ModelConfig, MASK_ID};
use ctxbert::training::{train, TrainConfig};

/// Best `k` articles among those not already in the outfit.
fn top(scores: &[f64], visible: &[usize], k: usize) -> Vec<(usize, f64)> {
    let mut ids: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(a, s)| s.is_finite() && !visible.contains(a))
        .collect();
    ids.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ids.truncate(k);
    ids
}

fn main() -> ctxbert::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let generator = GeneratorConfig::desk(0);
    let corpus = Corpus::generate(&generator, 1)?;
    let (train_set, val) = split_corpus(&corpus, 0.1, 0)?;
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::Gs), 1);
    config.epochs = epochs;
    let model = train::<f32>(&config, &train_set.outfits, None, None, 1)?.model;
    let oracle = BayesOracle::new(&generator)?;

    let outfit = &val.outfits[0];
    let mut items = outfit.items.clone();
    let hidden = items[0];
    items[0] = MASK_ID;
    let visible = &outfit.items[1..];
    println!("visible {visible:?}, hidden {hidden}");

    let other: Vec<usize> = outfit.context.iter().map(|&v| (v + 1) % 8).collect();
    for context in [outfit.context.clone(), other] {
        let logits = model.predict_logits(&items, &context)?;
        let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let exp: Vec<f64> = logits.iter().map(|&v| f64::from(v - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let probs: Vec<f64> = exp.iter().map(|e| e / total).collect();
        let posterior = oracle.predict(visible, Some(&context))?;
        let fmt = |v: Vec<(usize, f64)>| {
            v.iter()
                .map(|(a, s)| format!("{a}:{s:.2}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("context {context:?}");
        println!("  model      {}", fmt(top(&probs, visible, 5)));
        println!("  posterior  {}", fmt(top(&posterior, visible, 5)));
    }
    Ok(())
}
