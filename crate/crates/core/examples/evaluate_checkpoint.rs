//! Evaluates a saved checkpoint on the desk validation split. Without a path,
//! trains a [GS] model for two epochs first and saves it to a temporary
//! directory.
//!
//!     cargo run --release --example evaluate_checkpoint -- runs/gs/model.ckpt

use std::path::PathBuf;

use ctxbert::data::{split_corpus, Corpus, GeneratorConfig};
use ctxbert::eval::{check_schema, default_ranks, EvalReport};
use ctxbert::model::{count_parameters, MethodKind, ModelConfig};
use ctxbert::training::{train_any, TrainConfig, TrainedModel};

fn main() -> ctxbert::Result<()> {
    let generator = GeneratorConfig::desk(0);
    let corpus = Corpus::generate(&generator, 1)?;
    let (train, val) = split_corpus(&corpus, 0.1, 0)?;

    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let dir = std::env::temp_dir().join("ctxbert-evaluate-checkpoint");
            let mut config = TrainConfig::new(ModelConfig::desk(MethodKind::Gs), 1);
            config.epochs = 2;
            train_any(&config, &train.outfits, None, Some(&dir), 1)?;
            dir.join("model.ckpt")
        }
    };

    let model = TrainedModel::load(&path)?;
    check_schema(model.config(), &generator)?;
    let metrics = model.evaluate(&val.outfits, &default_ranks(model.n_articles()), 512, 1)?;
    let report = EvalReport::from_runs(
        model.config().method,
        count_parameters(model.config()),
        &[1],
        &[metrics],
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}
