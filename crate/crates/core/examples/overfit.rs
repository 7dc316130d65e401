//! Memorization check: a small model trained long on a handful of outfits
//! should drive its cross-entropy on those outfits towards zero.
//!
//!     cargo run --release --example overfit -- 50 200

use ctxbert::data::{generate_outfits, GeneratorConfig};
use ctxbert::eval::evaluate;
use ctxbert::model::{MethodKind, ModelConfig};
use ctxbert::training::{train, TrainConfig};

fn main() -> ctxbert::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| {
        a.parse::<f64>()
            .map_err(|e| ctxbert::Error::Usage(e.to_string()))
    });
    let n = args.next().transpose()?.unwrap_or(50.0) as usize;
    let epochs = args.next().transpose()?.unwrap_or(200.0) as usize;
    let lr = args.next().transpose()?;
    let outfits = generate_outfits(
        &GeneratorConfig {
            n_outfits: n,
            ..GeneratorConfig::desk(0)
        },
        1,
    )?;
    let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::None), 0);
    config.batch_size = 4;
    config.model.dropout_p = 0.0;
    config.epochs = epochs;
    if let Some(lr) = lr {
        config.adam.learning_rate = lr;
    }
    let out = train::<f32>(&config, &outfits, None, None, 1)?;
    let last = out.records.last().expect("at least one step");
    let m = evaluate(&out.model, &outfits, &config.recall_ranks, 512, 1)?;
    println!(
        "last step loss {:.4}; eval cross-entropy {:.4}, r@1 {:.2}",
        last.loss, m.cross_entropy, m.recall[0].1
    );
    Ok(())
}
