//! Central finite-difference verification of analytic gradients.

use std::rc::Rc;

use crate::autograd::attention::AttentionLayout;
use crate::autograd::graph::{Graph, Var};
use crate::autograd::ops::{attention_heads, concat_cols, concat_rows, Mode};
use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

/// Default step for central differences at 64-bit.
pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of a scalar function against central
/// differences in every input coordinate and returns the largest relative
/// error.
pub fn finite_difference_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let graph = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| graph.variable(t.clone())).collect();
    let out = f(&graph, &vars)?;
    let grads = graph.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vs: Vec<_> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vs)?.item())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i].data()[j], numeric));
        }
    }
    Ok(worst)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed, Stream::Other(99));
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("shape matches data")
}

/// Random values bounded away from zero so relu kinks stay out of reach of
/// the finite-difference step.
fn random_off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, seed).map(|v| {
        if v.abs() < 0.1 {
            v.signum() * 0.1 + v
        } else {
            v
        }
    })
}

/// Finite-difference check of every differentiable primitive on fixed random
/// inputs; returns the worst relative error per primitive.
pub fn primitive_suite() -> Result<Vec<(&'static str, f64)>> {
    let w10 = random(&[10], 21);
    let mut out = Vec::new();

    let err = finite_difference_check(
        |_, v| Ok(v[0].linear(&v[1], Some(&v[2]))?.sum()),
        &[random(&[2, 5], 10), random(&[3, 5], 11), random(&[3], 12)],
        DEFAULT_EPS,
    )?;
    out.push(("linear", err));

    // Weighted sums below keep the gradients from being trivially constant.
    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(w10.clone().reshape(&[2, 5]).unwrap());
            Ok(v[0].softmax(1)?.mul(&w)?.sum())
        },
        &[random(&[2, 5], 13)],
        DEFAULT_EPS,
    )?;
    out.push(("softmax", err));

    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(w10.clone().reshape(&[2, 5]).unwrap());
            Ok(v[0]
                .layer_norm(1e-12, Some(&v[1]), Some(&v[2]))?
                .mul(&w)?
                .sum())
        },
        &[random(&[2, 5], 14), random(&[5], 15), random(&[5], 16)],
        DEFAULT_EPS,
    )?;
    out.push(("layer_norm", err));

    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(w10.clone());
            Ok(v[0].relu().mul(&w)?.sum())
        },
        &[random_off_zero(&[10], 17)],
        DEFAULT_EPS,
    )?;
    out.push(("relu", err));

    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(w10.clone());
            let mut rng = Rng::new(3, Stream::Dropout);
            Ok(v[0].dropout(0.3, Mode::Train, &mut rng)?.mul(&w)?.sum())
        },
        &[random(&[10], 18)],
        DEFAULT_EPS,
    )?;
    out.push(("dropout", err));

    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(random(&[4, 2], 30));
            Ok(v[0].gather_rows(&[0, 3, 3, 1])?.mul(&w)?.sum())
        },
        &[random(&[5, 2], 19)],
        DEFAULT_EPS,
    )?;
    out.push(("gather_rows", err));

    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(random(&[2, 5], 31));
            let rows = concat_rows(&[v[0], v[1]])?;
            let cols = concat_cols(&[rows.slice_rows(1, 3)?, v[2]])?;
            Ok(cols.mul(&w)?.sum())
        },
        &[
            random(&[1, 3], 20),
            random(&[2, 3], 22),
            random(&[2, 2], 23),
        ],
        DEFAULT_EPS,
    )?;
    out.push(("concat/slice", err));

    let err = finite_difference_check(
        |_, v| v[0].cross_entropy_with_logits(&[1, 4]),
        &[random(&[2, 5], 24)],
        DEFAULT_EPS,
    )?;
    out.push(("cross_entropy", err));

    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(random(&[5, 2], 32));
            Ok(v[0].matmul(&v[1])?.transpose()?.mul(&w)?.sum())
        },
        &[random(&[2, 3], 25), random(&[3, 5], 26)],
        DEFAULT_EPS,
    )?;
    out.push(("matmul/transpose", err));

    let err = finite_difference_check(
        |_, v| Ok(v[0].add(&v[1])?.scale(0.5).mul(&v[0])?.sum()),
        &[random(&[10], 27), random(&[10], 28)],
        DEFAULT_EPS,
    )?;
    out.push(("add/scale/mul", err));

    let layout = Rc::new(AttentionLayout::sets(&[3, 2]));
    let err = finite_difference_check(
        |g, v| {
            let w = g.constant(random(&[5, 4], 33));
            Ok(attention_heads(&v[0], &v[1], &v[2], layout.clone(), 2)?
                .mul(&w)?
                .sum())
        },
        &[
            random(&[5, 4], 34),
            random(&[5, 4], 35),
            random(&[5, 4], 36),
        ],
        DEFAULT_EPS,
    )?;
    out.push(("attention", err));
    Ok(out)
}
