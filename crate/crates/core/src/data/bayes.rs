//! Exact posterior predictive of the generator.
//!
//! Given the context, the items of an outfit are independent draws from the
//! article distribution `q_ctx` conditioned on being distinct. The set
//! probability is therefore `prod_i q_ctx(a_i) / e_L(q_ctx)`, where `e_L` is
//! the elementary symmetric polynomial of degree `L` over all articles, so
//! for a missing item `a` outside the visible set `V`:
//!
//! - with the context, `P(a | V, ctx)` is proportional to `q_ctx(a)`;
//! - without it, `P(a | V)` is proportional to
//!   `sum_ctx q_ctx(a) prod_{v in V} q_ctx(v) / e_{|V|+1}(q_ctx)`,
//!   contexts being uniform a priori.

use crate::data::generator::{GeneratorConfig, TasteMap};
use crate::error::{Error, Result};
use crate::model::RESERVED_IDS;

/// Upper bound on context tuples enumerated by the context-free predictor.
pub const MAX_CONTEXTS: usize = 1 << 16;

/// Elementary symmetric polynomials `e_0..=e_degree` of `values`.
pub fn elementary_symmetric(values: &[f64], degree: usize) -> Vec<f64> {
    let mut e = vec![0.0; degree + 1];
    e[0] = 1.0;
    for &x in values {
        for k in (1..=degree).rev() {
            e[k] += x * e[k - 1];
        }
    }
    e
}

#[derive(Debug, Clone)]
struct Marginal {
    /// `q_ctx` of every context tuple, row-major over the schema.
    probs: Vec<Vec<f64>>,
    log_probs: Vec<Vec<f64>>,
    /// `ln e_L(q_ctx)` for `L = 0..=max_len`.
    log_norm: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct BayesOracle {
    config: GeneratorConfig,
    tastes: TasteMap,
    marginal: Option<Marginal>,
}

impl BayesOracle {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            tastes: TasteMap::new(config),
            marginal: None,
        })
    }

    /// Also prepares the context-free predictor; fails when the schema has
    /// more than [`MAX_CONTEXTS`] value tuples.
    pub fn with_marginal(mut self) -> Result<Self> {
        let cards: Vec<usize> = self
            .config
            .schema
            .features
            .iter()
            .map(|f| f.cardinality)
            .collect();
        let total = cards
            .iter()
            .try_fold(1usize, |acc, &c| {
                acc.checked_mul(c).filter(|&t| t <= MAX_CONTEXTS)
            })
            .ok_or_else(|| Error::Config(format!("more than {MAX_CONTEXTS} context tuples")))?;
        let max_len = self.config.max_len();
        let mut tuple = vec![0usize; cards.len()];
        let mut m = Marginal {
            probs: Vec::with_capacity(total),
            log_probs: Vec::with_capacity(total),
            log_norm: Vec::with_capacity(total),
        };
        for _ in 0..total {
            let q = self.tastes.article_probs(&tuple);
            m.log_norm.push(
                elementary_symmetric(&q, max_len)
                    .iter()
                    .map(|e| e.ln())
                    .collect(),
            );
            m.log_probs.push(q.iter().map(|p| p.ln()).collect());
            m.probs.push(q);
            for (v, &c) in tuple.iter_mut().zip(&cards).rev() {
                *v += 1;
                if *v < c {
                    break;
                }
                *v = 0;
            }
        }
        self.marginal = Some(m);
        Ok(self)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn tastes(&self) -> &TasteMap {
        &self.tastes
    }

    fn check_visible(&self, visible: &[usize]) -> Result<()> {
        for &id in visible {
            if id < RESERVED_IDS || id >= self.config.vocab_size {
                return Err(Error::OutOfVocab {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        if visible.len() + 1 > self.config.max_len() {
            return Err(Error::Data(format!(
                "{} visible items exceed the generator's longest outfit",
                visible.len()
            )));
        }
        Ok(())
    }

    /// Probability of every article (column `j` is id `j + 2`) filling the
    /// missing slot of an outfit whose other items are `visible`. With
    /// `context = None` the context is marginalized out.
    pub fn predict(&self, visible: &[usize], context: Option<&[usize]>) -> Result<Vec<f64>> {
        self.check_visible(visible)?;
        let mut p = match context {
            Some(ctx) => {
                self.config.schema.check_values(ctx)?;
                self.tastes.article_probs(ctx)
            }
            None => self.marginal_probs(visible)?,
        };
        for &id in visible {
            p[id - RESERVED_IDS] = 0.0;
        }
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        Ok(p)
    }

    fn marginal_probs(&self, visible: &[usize]) -> Result<Vec<f64>> {
        let m = self.marginal.as_ref().ok_or_else(|| {
            Error::Usage("context-free prediction needs BayesOracle::with_marginal".into())
        })?;
        let len = visible.len() + 1;
        let log_w: Vec<f64> = m
            .log_probs
            .iter()
            .zip(&m.log_norm)
            .map(|(lq, ln)| visible.iter().map(|&id| lq[id - RESERVED_IDS]).sum::<f64>() - ln[len])
            .collect();
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out = vec![0.0; self.config.n_articles()];
        for (q, lw) in m.probs.iter().zip(&log_w) {
            let w = (lw - max).exp();
            if w == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(q) {
                *o += w * p;
            }
        }
        Ok(out)
    }
}
