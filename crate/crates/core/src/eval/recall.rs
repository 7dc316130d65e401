use crate::error::{Error, Result};
use crate::model::RESERVED_IDS;
use crate::scalar::Scalar;

/// Zero-based rank of article column `col` among `scores`: the number of
/// columns scoring higher, plus equal-scoring columns with a smaller index.
pub fn article_rank(scores: &[f64], col: usize) -> usize {
    let s = scores[col];
    scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < col))
        .count()
}

/// Whether `target` is among the `r` highest vocabulary logits. Reserved ids
/// are not ranked; ties go to the smaller id.
pub fn recall_at_r<T: Scalar>(logits: &[T], target: usize, r: usize) -> Result<bool> {
    let n_articles = logits.len().saturating_sub(RESERVED_IDS);
    check_rank(r, n_articles)?;
    if target < RESERVED_IDS || target >= logits.len() {
        return Err(Error::OutOfVocab {
            id: target,
            vocab: logits.len(),
        });
    }
    let scores: Vec<f64> = logits[RESERVED_IDS..]
        .iter()
        .map(|v| v.to_f64_lossy())
        .collect();
    if let Some(j) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            tensor: format!("logit {}", j + RESERVED_IDS),
        });
    }
    Ok(article_rank(&scores, target - RESERVED_IDS) < r)
}

pub fn check_rank(r: usize, n_articles: usize) -> Result<()> {
    if r == 0 || r > n_articles {
        return Err(Error::Config(format!(
            "recall rank {r} outside 1..={n_articles}"
        )));
    }
    Ok(())
}
