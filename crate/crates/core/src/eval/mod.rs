//! Evaluation metrics: the classification indicator, adversariality,
//! classification accuracy over sampled views, and reports.

mod montage;
mod report;

pub use montage::{write_montage, MontageTile};
pub use report::{build_report, write_csv, EvalReport, ReportExample, ReportRow, RowKind, Summary};

use crate::classifier::{argmax, CompiledModel};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::scalar::Real;
use crate::transform::{Transform, TransformSampler};

/// Stream tag for held-out transformation samples. Attacks and later
/// evaluations of their output draw from `stream(seed, HOLDOUT_TAG)` so the
/// two see the same views.
pub const HOLDOUT_TAG: &str = "holdout";

/// The held-out sample stream for `seed`.
pub fn holdout_stream(seed: u64) -> StreamRng {
    rng::stream(seed, HOLDOUT_TAG)
}

/// 1 when `image` is classified as `y` (ties go to the lowest class), else 0.
pub fn classify_indicator<S: Real>(
    model: &CompiledModel<S>,
    image: &Tensor<S>,
    y: usize,
) -> Result<u8> {
    if y >= model.class_count() {
        return Err(Error::InvalidClass {
            class: y,
            count: model.class_count(),
        });
    }
    Ok(u8::from(model.predict(image)? == y))
}

/// Draws `n` transformations.
pub fn sample_transforms<S: Real, D: TransformSampler<S>>(
    sampler: &D,
    n: usize,
    rng: &mut StreamRng,
) -> Vec<D::Sample> {
    (0..n).map(|_| sampler.sample(rng)).collect()
}

/// Predicted class of `t(x)` for each transformation, with probabilities.
pub fn view_log_probs<S: Real, T: Transform<S>>(
    model: &CompiledModel<S>,
    x: &Tensor<S>,
    transforms: &[T],
) -> Result<Vec<Tensor<S>>> {
    transforms
        .iter()
        .map(|t| model.log_probs(&t.apply(x)?))
        .collect()
}

/// Fraction of `transforms` under which `x_adv` is classified as `y_adv`.
pub fn adversariality_over<S: Real, T: Transform<S>>(
    model: &CompiledModel<S>,
    x_adv: &Tensor<S>,
    y_adv: usize,
    transforms: &[T],
) -> Result<f64> {
    classification_accuracy_over(model, x_adv, &[y_adv], transforms)
}

/// Fraction of `transforms` under which `x` is classified into `classes`.
pub fn classification_accuracy_over<S: Real, T: Transform<S>>(
    model: &CompiledModel<S>,
    x: &Tensor<S>,
    classes: &[usize],
    transforms: &[T],
) -> Result<f64> {
    if transforms.is_empty() {
        return Err(Error::Empty("transform sample"));
    }
    if classes.is_empty() {
        return Err(Error::Empty("class set"));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= model.class_count()) {
        return Err(Error::InvalidClass {
            class: bad,
            count: model.class_count(),
        });
    }
    let hits = view_log_probs(model, x, transforms)?
        .iter()
        .filter(|lp| classes.contains(&argmax(lp.data())))
        .count();
    Ok(hits as f64 / transforms.len() as f64)
}

/// Probability that `x_adv` is classified as `y_adv` under a transformation
/// drawn from `sampler`, estimated from `n` draws.
pub fn adversariality<S: Real, D: TransformSampler<S>>(
    model: &CompiledModel<S>,
    x_adv: &Tensor<S>,
    y_adv: usize,
    sampler: &D,
    n: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    adversariality_over(model, x_adv, y_adv, &sample_transforms(sampler, n, rng))
}

/// Fraction of `n` sampled views of `x` classified into `true_classes`.
pub fn classification_accuracy<S: Real, D: TransformSampler<S>>(
    model: &CompiledModel<S>,
    x: &Tensor<S>,
    true_classes: &[usize],
    sampler: &D,
    n: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    classification_accuracy_over(model, x, true_classes, &sample_transforms(sampler, n, rng))
}

/// The `k` most probable classes as `(class, probability)`, most probable
/// first; ties keep the lower class first.
pub fn top_k<S: Real>(log_probs: &Tensor<S>, k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..log_probs.len()).collect();
    idx.sort_by(|&a, &b| {
        log_probs.data()[b]
            .partial_cmp(&log_probs.data()[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.into_iter()
        .take(k)
        .map(|c| (c, log_probs.data()[c].to_f64_lossy().exp()))
        .collect()
}
