//! Finite-difference check of the full model's parameter gradients.

use crate::autograd::{relative_error, Graph, Mode};
use crate::error::{Error, Result};
use crate::model::batch::MaskedBatch;
use crate::model::config::{MethodKind, ModelConfig, MASK_ID};
use crate::model::encoder::ContextualBert;
use crate::rng::{Rng, Stream};

/// Largest step for full-model checks. With a fourth-order stencil the
/// truncation error stays far below the rounding noise that smaller steps
/// bring to gradients near 1e-6.
pub const MODEL_FD_EPS: f64 = 3e-3;

/// Steps tried per coordinate, as fractions of the base step, until the
/// perturbed passes stay on the same side of every ReLU kink.
const KINK_RETREAT: [f64; 3] = [1.0, 0.1, 0.01];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub worst_relative_error: f64,
    pub worst_tensor: String,
    pub coordinates: usize,
    /// Coordinates left out because every tried step moved a ReLU input
    /// across zero.
    pub skipped_at_kinks: usize,
}

/// Redraws every parameter from `N(0, std^2)`. At the training init scale most
/// gradients sit near rounding noise, which makes relative errors meaningless.
pub fn randomize_parameters(model: &mut ContextualBert<f64>, std: f64, seed: u64) {
    let mut rng = Rng::new(seed, Stream::Other(0x7261));
    for (_, p) in model.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v = std * rng.normal();
        }
    }
}

/// Key biases shift every attention score of a query equally, so softmax
/// cancels them and their exact gradient is zero.
pub fn has_zero_gradient(name: &str) -> bool {
    name.ends_with(".wk.bias") || name.ends_with(".vk.bias")
}

/// Compares backprop against central differences on up to `per_tensor`
/// randomly chosen coordinates of every parameter tensor
/// except those in [`has_zero_gradient`]. Dropout is active
/// with a fixed mask so the stochastic path is covered too.
///
/// Central differences are only valid on one linear piece of every ReLU, so
/// a coordinate whose step flips a ReLU input is retried with smaller steps
/// and skipped (and counted) if every step flips one.
pub fn check_model_gradients(
    model: &ContextualBert<f64>,
    batch: &MaskedBatch,
    per_tensor: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let loss_of = |m: &ContextualBert<f64>| -> Result<(f64, Vec<bool>)> {
        let g = Graph::new();
        let mut rng = Rng::new(seed, Stream::Dropout);
        let loss = m.loss(&g, batch, Mode::Train, &mut rng)?.0.item();
        Ok((loss, g.relu_pattern()))
    };

    let g = Graph::new();
    let mut rng = Rng::new(seed, Stream::Dropout);
    let (loss, _) = model.loss(&g, batch, Mode::Train, &mut rng)?;
    let pattern = g.relu_pattern();
    let grads = g.backward(loss)?;

    let mut work = model.clone();
    let mut pick = Rng::new(seed, Stream::Other(0x6772));
    let mut report = GradCheckReport {
        worst_relative_error: 0.0,
        worst_tensor: String::new(),
        coordinates: 0,
        skipped_at_kinks: 0,
    };
    let ids: Vec<_> = model
        .params()
        .iter()
        .map(|(id, p)| (id, p.name.clone()))
        .collect();
    for (id, name) in ids {
        if has_zero_gradient(&name) {
            continue;
        }
        let numel = model.params().value(id).numel();
        let coords: Vec<usize> = if numel <= per_tensor {
            (0..numel).collect()
        } else {
            (0..per_tensor).map(|_| pick.below(numel)).collect()
        };
        for j in coords {
            let analytic = grads.param(id).map_or(0.0, |t| t.data()[j]);
            let orig = model.params().value(id).data()[j];
            let mut numeric = None;
            for frac in KINK_RETREAT {
                let h = eps * frac;
                let mut same_piece = true;
                let mut at = |k: f64| -> Result<f64> {
                    work.params_mut().value_mut(id).data_mut()[j] = orig + k * h;
                    let (loss, p) = loss_of(&work)?;
                    same_piece &= p == pattern;
                    Ok(loss)
                };
                // Fourth-order central stencil.
                let estimate = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * h);
                work.params_mut().value_mut(id).data_mut()[j] = orig;
                if same_piece {
                    numeric = Some(estimate);
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped_at_kinks += 1;
                continue;
            };
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.worst_relative_error {
                report.worst_relative_error = err;
                report.worst_tensor = name.clone();
            }
        }
    }
    Ok(report)
}

/// Parameter scale for [`desk_suite`]. Wider draws saturate the output
/// softmax at d_model 32 and narrower ones shrink gradients towards the
/// rounding floor of the differences.
pub const DESK_PARAM_STD: f64 = 0.3;

/// Gradient check of every conditioning method on the 2-block desk model at
/// 64-bit, with parameters redrawn from `N(0, 0.5^2)` and a fixed batch of
/// three sets.
pub fn desk_suite(per_tensor: usize, seed: u64) -> Result<Vec<(MethodKind, GradCheckReport)>> {
    let mut out = Vec::new();
    for method in MethodKind::ALL {
        let config = ModelConfig::desk(method);
        let mut model = ContextualBert::<f64>::new(config, seed)?;
        randomize_parameters(&mut model, DESK_PARAM_STD, seed);
        let mut batch = MaskedBatch::new();
        batch.push(&[MASK_ID, 40, 95, 310], 0, &[0, 3, 7], 123);
        batch.push(&[17, 260, MASK_ID, 18, 444, 9], 2, &[5, 5, 1], 499);
        batch.push(
            &[2, MASK_ID, 501, 77, 300, 301, 302, 303],
            1,
            &[7, 0, 2],
            88,
        );
        out.push((
            method,
            check_model_gradients(&model, &batch, per_tensor, MODEL_FD_EPS, seed)?,
        ));
    }
    Ok(out)
}
