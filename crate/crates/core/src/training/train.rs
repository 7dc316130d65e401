use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode};
use crate::data::Outfit;
use crate::error::{Error, Result};
use crate::eval::{article_rank, default_ranks, evaluate, EvalMetrics, Scorer};
use crate::model::{checkpoint, ContextualBert, MaskedBatch, MethodKind, ModelConfig};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;
use crate::training::adam::{Adam, AdamConfig};
use crate::training::masking::mask_outfit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Corpus files, recorded for reproduction; training itself takes outfits.
    pub train_corpus: Option<PathBuf>,
    pub val_corpus: Option<PathBuf>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Float width used for training: 32 or 64.
    pub precision: u32,
    pub eval_batch_size: usize,
    pub recall_ranks: Vec<usize>,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        let ranks = default_ranks(model.n_articles());
        Self {
            model,
            train_corpus: None,
            val_corpus: None,
            adam: AdamConfig::default(),
            batch_size: 128,
            epochs: 20,
            seed,
            checkpoint_every: 0,
            precision: 32,
            eval_batch_size: 512,
            recall_ranks: ranks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.precision != 32 && self.precision != 64 {
            return Err(Error::Config(format!(
                "precision {} is not 32 or 64",
                self.precision
            )));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for &r in &self.recall_ranks {
            crate::eval::check_rank(r, self.model.n_articles())?;
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub recall: Vec<(usize, f64)>,
    pub seed: u64,
    pub method: MethodKind,
}

impl MetricRecord {
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("step".into(), self.step.into());
        map.insert("epoch".into(), self.epoch.into());
        map.insert("split".into(), self.split.into());
        map.insert("loss".into(), self.loss.into());
        for &(r, v) in &self.recall {
            map.insert(format!("r@{r}"), v.into());
        }
        map.insert("seed".into(), self.seed.into());
        map.insert("method".into(), self.method.name().into());
        serde_json::Value::Object(map)
    }
}

pub struct TrainOutput<T: Scalar> {
    pub model: ContextualBert<T>,
    pub records: Vec<MetricRecord>,
    /// Validation metrics after the last epoch, when a validation set is given.
    pub validation: Option<EvalMetrics>,
}

struct MetricsLog {
    writer: Option<BufWriter<File>>,
    path: PathBuf,
}

impl MetricsLog {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let path = dir.map(|d| d.join("metrics.jsonl")).unwrap_or_default();
        let writer = match dir {
            Some(_) => Some(BufWriter::new(
                File::create(&path).map_err(|e| Error::io(&path, e))?,
            )),
            None => None,
        };
        Ok(Self { writer, path })
    }

    fn write(&mut self, record: &MetricRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            writeln!(w, "{}", record.to_json()).map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }
}

/// Batch recall from a `[batch, articles]` logits tensor.
fn batch_recall<T: Scalar>(
    logits: &crate::autograd::Tensor<T>,
    columns: &[usize],
    ranks: &[usize],
) -> Vec<(usize, f64)> {
    let mut hits = vec![0usize; ranks.len()];
    for (r, &col) in columns.iter().enumerate() {
        let row: Vec<f64> = logits.row(r).iter().map(|v| v.to_f64_lossy()).collect();
        let rank = article_rank(&row, col);
        for (h, &k) in hits.iter_mut().zip(ranks) {
            *h += usize::from(rank < k);
        }
    }
    ranks
        .iter()
        .zip(hits)
        .map(|(&k, h)| (k, h as f64 / columns.len() as f64))
        .collect()
}

fn abort<T: Scalar>(
    model: &ContextualBert<T>,
    log: &mut MetricsLog,
    out_dir: Option<&Path>,
    error: Error,
) -> Error {
    let saved = log.flush().and_then(|_| match out_dir {
        Some(dir) => checkpoint::save(model, &dir.join("last-good.ckpt")),
        None => Ok(()),
    });
    match saved {
        Ok(()) => error,
        Err(e) => e,
    }
}

/// Trains a freshly initialized model on `train`.
///
/// Each epoch shuffles the outfits, masks one position per outfit and takes
/// one Adam step per batch. Validation metrics are computed after every
/// epoch. With `out_dir`, the metrics log, periodic checkpoints and the final
/// `model.ckpt` are written there. Everything is a function of the config
/// and the outfits.
///
/// A non-finite loss or gradient aborts the run; the parameters from before
/// that step are saved as `last-good.ckpt`.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    train: &[Outfit],
    validation: Option<&[Outfit]>,
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<TrainOutput<T>> {
    config.validate()?;
    if config.precision != T::BITS {
        return Err(Error::Config(format!(
            "config asks for {}-bit training, called with {}-bit floats",
            config.precision,
            T::BITS
        )));
    }
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut model = ContextualBert::<T>::new(config.model.clone(), config.seed)?;
    let mut adam = Adam::new(config.adam, model.params());
    let mut shuffle = Rng::new(config.seed, Stream::Shuffle);
    let mut masking = Rng::new(config.seed, Stream::Masking);
    let mut dropout = Rng::new(config.seed, Stream::Dropout);
    let mut log = MetricsLog::open(out_dir)?;
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;
    let mut last_validation = None;

    for epoch in 1..=config.epochs {
        shuffle.shuffle(&mut order);
        let examples: Vec<_> = order
            .iter()
            .filter_map(|&i| {
                mask_outfit(&train[i].items, &mut masking).map(|m| (m, &train[i].context))
            })
            .collect();
        for chunk in examples.chunks(config.batch_size) {
            let mut batch = MaskedBatch::new();
            for (m, ctx) in chunk {
                batch.push(&m.input, m.position, ctx, m.target);
            }
            let g = Graph::new();
            let (loss, logits) = model.loss(&g, &batch, Mode::Train, &mut dropout)?;
            let loss_value = loss.item().to_f64_lossy();
            if !loss_value.is_finite() {
                return Err(abort(
                    &model,
                    &mut log,
                    out_dir,
                    Error::NonFinite {
                        tensor: format!("training loss at step {}", step + 1),
                    },
                ));
            }
            let recall = batch_recall(
                &logits.value(),
                &batch.target_columns(),
                &config.recall_ranks,
            );
            let grads = g.backward(loss)?;
            model.params_mut().accumulate(&grads);
            drop(grads);
            if let Err(e) = adam.step(model.params_mut()) {
                return Err(abort(&model, &mut log, out_dir, e));
            }
            step += 1;
            let record = MetricRecord {
                step,
                epoch,
                split: "train",
                loss: loss_value,
                recall,
                seed: config.seed,
                method: config.model.method,
            };
            log.write(&record)?;
            records.push(record);
        }

        if let Some(val) = validation {
            let metrics = evaluate(
                &model,
                val,
                &config.recall_ranks,
                config.eval_batch_size,
                threads,
            )?;
            let record = MetricRecord {
                step,
                epoch,
                split: "validation",
                loss: metrics.cross_entropy,
                recall: metrics.recall.clone(),
                seed: config.seed,
                method: config.model.method,
            };
            log.write(&record)?;
            records.push(record);
            last_validation = Some(metrics);
        }
        log.flush()?;
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                checkpoint::save(&model, &dir.join(format!("epoch-{epoch:03}.ckpt")))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        checkpoint::save(&model, &dir.join("model.ckpt"))?;
    }
    Ok(TrainOutput {
        model,
        records,
        validation: last_validation,
    })
}

/// A trained model at either precision.
pub enum TrainedModel {
    F32(ContextualBert<f32>),
    F64(ContextualBert<f64>),
}

impl TrainedModel {
    pub fn config(&self) -> &ModelConfig {
        match self {
            TrainedModel::F32(m) => m.config(),
            TrainedModel::F64(m) => m.config(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(match checkpoint::stored_bits(&bytes)? {
            64 => TrainedModel::F64(checkpoint::decode_as(&bytes)?),
            _ => TrainedModel::F32(checkpoint::decode_as(&bytes)?),
        })
    }

    pub fn evaluate(
        &self,
        outfits: &[Outfit],
        ranks: &[usize],
        batch: usize,
        threads: usize,
    ) -> Result<EvalMetrics> {
        match self {
            TrainedModel::F32(m) => evaluate(m, outfits, ranks, batch, threads),
            TrainedModel::F64(m) => evaluate(m, outfits, ranks, batch, threads),
        }
    }

    pub fn n_articles(&self) -> usize {
        match self {
            TrainedModel::F32(m) => m.n_articles(),
            TrainedModel::F64(m) => m.n_articles(),
        }
    }
}

/// Trains at the precision named in the config.
pub fn train_any(
    config: &TrainConfig,
    train_set: &[Outfit],
    validation: Option<&[Outfit]>,
    out_dir: Option<&Path>,
    threads: usize,
) -> Result<(TrainedModel, Vec<MetricRecord>, Option<EvalMetrics>)> {
    if config.precision == 64 {
        let out = train::<f64>(config, train_set, validation, out_dir, threads)?;
        Ok((TrainedModel::F64(out.model), out.records, out.validation))
    } else {
        let out = train::<f32>(config, train_set, validation, out_dir, threads)?;
        Ok((TrainedModel::F32(out.model), out.records, out.validation))
    }
}
