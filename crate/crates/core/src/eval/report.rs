use std::io::Write;

use super::{holdout_stream, sample_transforms, top_k, view_log_probs};
use crate::classifier::{argmax, CompiledModel};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::transform::TransformSampler;
use crate::transforms2d::perceptual_distance;

/// One attacked example to evaluate.
#[derive(Clone, Debug)]
pub struct ReportExample<S> {
    pub id: String,
    pub original: Tensor<S>,
    pub adversarial: Tensor<S>,
    pub true_classes: Vec<usize>,
    pub target: usize,
    pub lambda: Option<f64>,
    /// Seed of the held-out transformation stream for this example.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Original,
    Adversarial,
}

impl RowKind {
    pub fn name(self) -> &'static str {
        match self {
            RowKind::Original => "original",
            RowKind::Adversarial => "adversarial",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReportRow {
    pub example_id: String,
    pub kind: RowKind,
    pub lambda: Option<f64>,
    pub accuracy: f64,
    pub adversariality: f64,
    /// Views classified as neither a true class nor the target.
    pub neither: f64,
    /// Perceptual ℓ₂ distance to the original divided by the pixel count.
    pub l2_per_pixel: f64,
    /// Five most probable `(class, probability)` pairs per sampled view.
    pub top5: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub accuracy_mean: f64,
    pub accuracy_stdev: f64,
    pub adversariality_mean: f64,
    pub adversariality_stdev: f64,
    pub mean_l2_per_pixel: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub n_samples: usize,
    /// Original and adversarial row for each example, in input order.
    pub rows: Vec<ReportRow>,
    pub original: Summary,
    pub adversarial: Summary,
    /// Adversarial rows' adversariality in ten equal bins over [0, 1].
    pub histogram: [usize; 10],
}

/// Mean and population standard deviation.
fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarise(rows: &[&ReportRow]) -> Summary {
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let adv: Vec<f64> = rows.iter().map(|r| r.adversariality).collect();
    let (accuracy_mean, accuracy_stdev) = mean_stdev(&acc);
    let (adversariality_mean, adversariality_stdev) = mean_stdev(&adv);
    Summary {
        accuracy_mean,
        accuracy_stdev,
        adversariality_mean,
        adversariality_stdev,
        mean_l2_per_pixel: rows.iter().map(|r| r.l2_per_pixel).sum::<f64>() / rows.len() as f64,
    }
}

fn row<S: Real, T: crate::transform::Transform<S>>(
    model: &CompiledModel<S>,
    ex: &ReportExample<S>,
    kind: RowKind,
    transforms: &[T],
) -> Result<ReportRow> {
    let image = match kind {
        RowKind::Original => &ex.original,
        RowKind::Adversarial => &ex.adversarial,
    };
    let views = view_log_probs(model, image, transforms)?;
    let (mut correct, mut adversarial) = (0usize, 0usize);
    for lp in &views {
        let pred = argmax(lp.data());
        if ex.true_classes.contains(&pred) {
            correct += 1;
        } else if pred == ex.target {
            adversarial += 1;
        }
    }
    let n = views.len() as f64;
    let l2_per_pixel = match kind {
        RowKind::Original => 0.0,
        RowKind::Adversarial => {
            let s = image.shape();
            perceptual_distance(&ex.adversarial, &ex.original)? / (s[0] * s[1]) as f64
        }
    };
    Ok(ReportRow {
        example_id: ex.id.clone(),
        kind,
        lambda: ex.lambda,
        accuracy: correct as f64 / n,
        adversariality: adversarial as f64 / n,
        neither: (views.len() - correct - adversarial) as f64 / n,
        l2_per_pixel,
        top5: views.iter().map(|lp| top_k(lp, 5)).collect(),
    })
}

/// Evaluates each example and its original over `n` views drawn from
/// `sampler` with the example's held-out stream.
pub fn build_report<S: Real, D: TransformSampler<S>>(
    examples: &[ReportExample<S>],
    model: &CompiledModel<S>,
    sampler: &D,
    n: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Empty("example list"));
    }
    if n == 0 {
        return Err(Error::Empty("transform sample"));
    }
    let mut rows = Vec::with_capacity(2 * examples.len());
    for ex in examples {
        if ex.true_classes.is_empty() {
            return Err(Error::Empty("true class set"));
        }
        if ex.true_classes.contains(&ex.target) {
            return Err(Error::Config(format!(
                "example {}: target {} is one of its true classes",
                ex.id, ex.target
            )));
        }
        let transforms = sample_transforms(sampler, n, &mut holdout_stream(ex.seed));
        rows.push(row(model, ex, RowKind::Original, &transforms)?);
        rows.push(row(model, ex, RowKind::Adversarial, &transforms)?);
    }
    let of = |k: RowKind| rows.iter().filter(|r| r.kind == k).collect::<Vec<_>>();
    let original = summarise(&of(RowKind::Original));
    let adversarial = summarise(&of(RowKind::Adversarial));
    let mut histogram = [0usize; 10];
    for r in of(RowKind::Adversarial) {
        histogram[((r.adversariality * 10.0) as usize).min(9)] += 1;
    }
    Ok(EvalReport {
        n_samples: n,
        rows,
        original,
        adversarial,
        histogram,
    })
}

/// CSV with columns `example_id,lambda,accuracy,adversariality,l2_per_pixel`.
/// Ids read `<id>-original` / `<id>-adversarial`; original rows leave
/// `lambda` empty.
pub fn write_csv(report: &EvalReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Format {
        path: "report.csv".into(),
        reason: e.to_string(),
    };
    w.write_record([
        "example_id",
        "lambda",
        "accuracy",
        "adversariality",
        "l2_per_pixel",
    ])
    .map_err(to_err)?;
    for r in &report.rows {
        let lambda = match (r.kind, r.lambda) {
            (RowKind::Adversarial, Some(l)) => l.to_string(),
            _ => String::new(),
        };
        w.write_record([
            format!("{}-{}", r.example_id, r.kind.name()),
            lambda,
            r.accuracy.to_string(),
            r.adversariality.to_string(),
            r.l2_per_pixel.to_string(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Format {
        path: "report.csv".into(),
        reason: e.to_string(),
    })
}
