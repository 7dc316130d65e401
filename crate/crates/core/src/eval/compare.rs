use std::path::Path;

use crate::data::Outfit;
use crate::error::{Error, Result};
use crate::eval::evaluate::EvalMetrics;
use crate::eval::report::{Comparison, EvalReport};
use crate::model::{count_parameters, MethodKind};
use crate::training::{train_any, TrainConfig};

pub struct CompareOutput {
    pub comparison: Comparison,
    /// Final validation metrics of every (method, seed) run, in run order.
    pub runs: Vec<(MethodKind, u64, EvalMetrics)>,
}

/// Trains every method with every seed from `base`, evaluates each run on
/// `validation` and aggregates the runs per method. With `out_dir`, each run
/// gets `<method>/seed-<seed>/` and the tables are written as
/// `comparison.json` and `comparison.txt`.
pub fn compare(
    methods: &[MethodKind],
    base: &TrainConfig,
    seeds: &[u64],
    train: &[Outfit],
    validation: &[Outfit],
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<CompareOutput> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "compare needs at least one method and one seed".into(),
        ));
    }
    let mut reports = Vec::new();
    let mut runs = Vec::new();
    for &method in methods {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut config = base.clone();
            config.model.method = method;
            config.seed = seed;
            let dir = out_dir.map(|d| d.join(method.name()).join(format!("seed-{seed}")));
            let started = std::time::Instant::now();
            let (model, _, last) =
                train_any(&config, train, Some(validation), dir.as_deref(), threads)?;
            let metrics = match last {
                Some(m) => m,
                None => model.evaluate(
                    validation,
                    &config.recall_ranks,
                    config.eval_batch_size,
                    threads,
                )?,
            };
            log::info!(
                "{method} seed {seed}: cross-entropy {:.4} in {:.1}s",
                metrics.cross_entropy,
                started.elapsed().as_secs_f64()
            );
            per_seed.push(metrics.clone());
            runs.push((method, seed, metrics));
        }
        let mut config = base.model.clone();
        config.method = method;
        reports.push(EvalReport::from_runs(
            method,
            count_parameters(&config),
            seeds,
            &per_seed,
        ));
    }
    let comparison = Comparison::new(reports);
    if let Some(dir) = out_dir {
        let json = serde_json::to_string_pretty(&comparison)?;
        let path = dir.join("comparison.json");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("comparison.txt");
        std::fs::write(&path, comparison.to_table()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(CompareOutput { comparison, runs })
}
