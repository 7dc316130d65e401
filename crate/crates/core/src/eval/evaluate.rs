use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode};
use crate::data::{BayesOracle, GeneratorConfig, Outfit};
use crate::error::{Error, Result};
use crate::eval::recall::{article_rank, check_rank};
use crate::model::{ContextualBert, MaskedBatch, ModelConfig, MASK_ID, RESERVED_IDS};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;

/// Anything that scores every article for the masked slot of each set.
pub trait Scorer: Sync {
    fn n_articles(&self) -> usize;

    /// One row of article-column logits (or log-probabilities) per set.
    fn score(&self, batch: &MaskedBatch) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> Scorer for ContextualBert<T> {
    fn n_articles(&self) -> usize {
        self.config().n_articles()
    }

    fn score(&self, batch: &MaskedBatch) -> Result<Vec<Vec<f64>>> {
        let g = Graph::new();
        let mut rng = Rng::new(0, Stream::Dropout);
        let logits = self
            .forward(&g, batch, Mode::Eval, &mut rng)?
            .logits
            .value();
        Ok((0..logits.rows())
            .map(|r| logits.row(r).iter().map(|v| v.to_f64_lossy()).collect())
            .collect())
    }
}

/// The generator's exact posterior, scored as log-probabilities.
pub struct BayesScorer<'a> {
    pub oracle: &'a BayesOracle,
    pub use_context: bool,
}

impl Scorer for BayesScorer<'_> {
    fn n_articles(&self) -> usize {
        self.oracle.config().n_articles()
    }

    fn score(&self, batch: &MaskedBatch) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(batch.len());
        for (b, offset) in batch.offsets().into_iter().enumerate() {
            let set = &batch.items[offset..offset + batch.lengths[b]];
            let visible: Vec<usize> = set.iter().copied().filter(|&id| id != MASK_ID).collect();
            let context = self.use_context.then_some(batch.contexts[b].as_slice());
            let probs = self.oracle.predict(&visible, context)?;
            rows.push(probs.into_iter().map(f64::ln).collect());
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_examples: usize,
    pub cross_entropy: f64,
    /// `(r, fraction of examples with the target in the top r)`.
    pub recall: Vec<(usize, f64)>,
}

impl EvalMetrics {
    pub fn recall_at(&self, r: usize) -> Option<f64> {
        self.recall.iter().find(|(k, _)| *k == r).map(|(_, v)| *v)
    }
}

/// Every outfit masked at every position, in corpus order, cut into batches.
pub fn exhaustive_batches(outfits: &[Outfit], batch_size: usize) -> Vec<MaskedBatch> {
    let mut batches = Vec::new();
    let mut current = MaskedBatch::new();
    let mut items = Vec::new();
    for o in outfits {
        for m in 0..o.items.len() {
            items.clear();
            items.extend_from_slice(&o.items);
            items[m] = MASK_ID;
            current.push(&items, m, &o.context, o.items[m]);
            if current.len() == batch_size.max(1) {
                batches.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// `log sum exp(scores) - scores[target]`.
pub fn cross_entropy(scores: &[f64], target: usize) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    max + z.ln() - scores[target]
}

/// Summed cross-entropy and per-rank hit counts of one batch.
fn batch_totals(
    scores: &[Vec<f64>],
    batch: &MaskedBatch,
    ranks: &[usize],
) -> Result<(f64, Vec<usize>)> {
    let mut ce = 0.0;
    let mut hits = vec![0usize; ranks.len()];
    for (row, &target) in scores.iter().zip(&batch.targets) {
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite {
                tensor: "evaluation scores".into(),
            });
        }
        let col = target - RESERVED_IDS;
        ce += cross_entropy(row, col);
        let rank = article_rank(row, col);
        for (h, &r) in hits.iter_mut().zip(ranks) {
            *h += usize::from(rank < r);
        }
    }
    Ok((ce, hits))
}

/// Mean cross-entropy and recall over exhaustive masking of `outfits`.
/// Batches are spread over `threads` workers and reduced in batch order.
pub fn evaluate<S: Scorer>(
    scorer: &S,
    outfits: &[Outfit],
    ranks: &[usize],
    batch_size: usize,
    threads: usize,
) -> Result<EvalMetrics> {
    for &r in ranks {
        check_rank(r, scorer.n_articles())?;
    }
    let batches = exhaustive_batches(outfits, batch_size);
    if batches.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let threads = threads.clamp(1, batches.len());
    let per_worker = batches.len().div_ceil(threads);
    let mut results: Vec<Result<(f64, Vec<usize>)>> = Vec::with_capacity(batches.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = batches
            .chunks(per_worker)
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|b| batch_totals(&scorer.score(b)?, b, ranks))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            results.extend(h.join().expect("evaluation worker panicked"));
        }
    });

    let n: usize = batches.iter().map(|b| b.len()).sum();
    let mut ce = 0.0;
    let mut hits = vec![0usize; ranks.len()];
    for res in results {
        let (c, h) = res?;
        ce += c;
        hits.iter_mut().zip(h).for_each(|(a, b)| *a += b);
    }
    Ok(EvalMetrics {
        n_examples: n,
        cross_entropy: ce / n as f64,
        recall: ranks
            .iter()
            .zip(hits)
            .map(|(&r, h)| (r, h as f64 / n as f64))
            .collect(),
    })
}

/// Fails unless a model can score outfits drawn from `generator`.
pub fn check_schema(model: &ModelConfig, generator: &GeneratorConfig) -> Result<()> {
    if model.vocab_size != generator.vocab_size {
        return Err(Error::Config(format!(
            "model vocabulary {} differs from corpus vocabulary {}",
            model.vocab_size, generator.vocab_size
        )));
    }
    if model.context != generator.schema {
        return Err(Error::Config(
            "model context schema differs from corpus schema".into(),
        ));
    }
    if model.max_len < generator.max_len() {
        return Err(Error::Config(format!(
            "model accepts sets of up to {} items, corpus has {}",
            model.max_len,
            generator.max_len()
        )));
    }
    Ok(())
}

/// Recall ranks {1, 5, 250} for full-size vocabularies and {1, 5, 50} for
/// small ones.
pub fn default_ranks(n_articles: usize) -> Vec<usize> {
    if n_articles >= 5_000 {
        vec![1, 5, 250]
    } else {
        vec![1, 5, 50.min(n_articles)]
    }
}
