use crate::model::MASK_ID;
use crate::rng::Rng;

/// A set with one article hidden behind the mask id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub input: Vec<usize>,
    pub position: usize,
    pub target: usize,
}

/// Masks one uniformly chosen position. Sets shorter than two items have
/// nothing left to condition on and are skipped with a warning.
pub fn mask_outfit(items: &[usize], rng: &mut Rng) -> Option<MaskedExample> {
    if items.len() < 2 {
        log::warn!("skipping outfit of length {}", items.len());
        return None;
    }
    let position = rng.below(items.len());
    let mut input = items.to_vec();
    let target = std::mem::replace(&mut input[position], MASK_ID);
    Some(MaskedExample {
        input,
        position,
        target,
    })
}
