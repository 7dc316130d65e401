use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, MASK_ID, RESERVED_IDS};

/// A batch of item sets, each with exactly one position replaced by the
/// mask id, plus their context values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskedBatch {
    /// Item ids of all sets, concatenated.
    pub items: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Masked position within each set.
    pub masked: Vec<usize>,
    /// One value per context feature, per set.
    pub contexts: Vec<Vec<usize>>,
    /// Article hidden behind each mask.
    pub targets: Vec<usize>,
}

impl MaskedBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, items: &[usize], masked: usize, context: &[usize], target: usize) {
        self.items.extend_from_slice(items);
        self.lengths.push(items.len());
        self.masked.push(masked);
        self.contexts.push(context.to_vec());
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Row offset of each set within `items`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.lengths
            .iter()
            .map(|&l| {
                let o = acc;
                acc += l;
                o
            })
            .collect()
    }

    /// Target ids shifted into article-column space.
    pub fn target_columns(&self) -> Vec<usize> {
        self.targets.iter().map(|&t| t - RESERVED_IDS).collect()
    }

    /// Checks lengths, the single-mask rule and id ranges.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let n = self.len();
        if self.masked.len() != n || self.contexts.len() != n || self.targets.len() != n {
            return Err(Error::Data("batch fields have inconsistent lengths".into()));
        }
        if self.lengths.iter().sum::<usize>() != self.items.len() {
            return Err(Error::Data("set lengths do not cover the item list".into()));
        }
        for (s, offset) in self.offsets().into_iter().enumerate() {
            let len = self.lengths[s];
            if len == 0 || len > config.max_len {
                return Err(Error::Data(format!(
                    "set {s} has length {len}, allowed 1..={}",
                    config.max_len
                )));
            }
            let set = &self.items[offset..offset + len];
            let masks = set.iter().filter(|&&id| id == MASK_ID).count();
            if masks != 1 || set.get(self.masked[s]) != Some(&MASK_ID) {
                return Err(Error::Data(format!(
                    "set {s} must contain exactly one mask at position {}, found {masks}",
                    self.masked[s]
                )));
            }
            for &id in set {
                if id >= config.vocab_size {
                    return Err(Error::OutOfVocab {
                        id,
                        vocab: config.vocab_size,
                    });
                }
                if id != MASK_ID && id < RESERVED_IDS {
                    return Err(Error::Data(format!("set {s} contains reserved id {id}")));
                }
            }
            let target = self.targets[s];
            if !(RESERVED_IDS..config.vocab_size).contains(&target) {
                return Err(Error::OutOfVocab {
                    id: target,
                    vocab: config.vocab_size,
                });
            }
            if config.method.uses_context() {
                config.context.check_values(&self.contexts[s])?;
            }
        }
        Ok(())
    }
}
