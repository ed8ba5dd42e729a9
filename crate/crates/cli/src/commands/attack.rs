use std::path::Path;

use anyhow::{bail, Context, Result};

use eot_core::classifier::{color_shape_image, CompiledModel, Model};
use eot_core::diffmath::Tensor;
use eot_core::eot::{
    eot_attack, lambda_search, render_distribution, AttackConfig, AttackResult, BatchPolicy,
};
use eot_core::eval::{build_report, holdout_stream, sample_transforms, MontageTile, ReportExample};
use eot_core::imageio::read_image;
use eot_core::rng;
use eot_core::transform::{Transform, TransformSampler};
use eot_core::transforms2d::Dist2D;

use super::eval::{Manifest, ManifestRow};
use super::{datasets, example_seed, load, mesh, targets};

use crate::artifacts::{ensure_dir, write_image_pair, write_report, write_trace};
use crate::config::RunConfig;

struct Example {
    id: String,
    image: Tensor<f64>,
    true_class: usize,
}

fn from_file(cfg: &RunConfig, path: &Path) -> Result<Example> {
    Ok(Example {
        id: "image".into(),
        image: read_image(path)?,
        true_class: cfg
            .data
            .true_class
            .context("data.true_class is required with data.image")?,
    })
}

fn examples_2d(cfg: &RunConfig) -> Result<Vec<Example>> {
    if let Some(p) = &cfg.data.image {
        return Ok(vec![from_file(cfg, p)?]);
    }
    let (_, test) = datasets(cfg, false)?;
    cfg.data
        .test_indices
        .iter()
        .map(|&i| {
            if i >= test.len() {
                bail!("test index {i} is out of range for {} images", test.len());
            }
            let (x, y) = test.get(i);
            Ok(Example {
                id: format!("test{i}"),
                image: x.clone(),
                true_class: y,
            })
        })
        .collect()
}

fn examples_3d(cfg: &RunConfig) -> Result<Vec<Example>> {
    if let Some(p) = &cfg.data.image {
        return Ok(vec![from_file(cfg, p)?]);
    }
    Ok(cfg
        .data
        .objects
        .iter()
        .enumerate()
        .map(|(i, &class)| Example {
            id: format!("object{i}"),
            image: color_shape_image(
                class,
                &mut rng::substream(cfg.seed, "cli.texture", i as u64),
            ),
            true_class: class,
        })
        .collect())
}

/// Up to `views` held-out views of `x` captioned with their predictions.
pub(super) fn montage_tiles<T: Transform<f64>>(
    model: &CompiledModel<f64>,
    x: &Tensor<f64>,
    target: usize,
    transforms: &[T],
    views: usize,
) -> Result<Vec<MontageTile<f64>>> {
    transforms
        .iter()
        .take(views)
        .map(|t| {
            let view = t.apply(x)?;
            let lp = model.log_probs(&view)?;
            let (predicted, logp) =
                lp.data()
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    });
            Ok(MontageTile {
                image: view,
                predicted,
                confidence: logp.exp(),
                highlight: predicted == target,
            })
        })
        .collect()
}

struct Outcome {
    result: AttackResult<f64>,
    below_threshold: Option<bool>,
}

fn attack_all<D: TransformSampler<f64>>(
    cfg: &RunConfig,
    model: &Model<f64>,
    examples: &[Example],
    dist_for: impl FnOnce(&Tensor<f64>) -> Result<D>,
    policy: BatchPolicy,
) -> Result<()> {
    let classes = model.class_count();
    let ys: Vec<usize> = examples.iter().map(|e| e.true_class).collect();
    let targets = targets(cfg, &ys, classes)?;
    let compiled = model.compile()?;
    let out = ensure_dir(&cfg.out)?;
    let mut manifest = Manifest::default();
    let mut report_examples = Vec::new();
    let first = examples.first().context("no examples")?;
    if examples
        .iter()
        .any(|e| e.image.shape() != first.image.shape())
    {
        bail!("all examples of one run must have the same size");
    }
    let dist = dist_for(&first.image)?;
    for (ex, &target) in examples.iter().zip(&targets) {
        let seed = example_seed(cfg.seed, &ex.id);
        let acfg: AttackConfig = cfg.attack_config(seed)?;
        let outcome = if cfg.attack.lambda_search {
            let s = lambda_search(
                &ex.image,
                target,
                &dist,
                model,
                &acfg,
                &cfg.attack.lambda_candidates,
                policy,
            )
            .with_context(|| format!("example {}", ex.id))?;
            Outcome {
                result: s.result,
                below_threshold: Some(s.below_threshold),
            }
        } else {
            Outcome {
                result: eot_attack(&ex.image, target, &dist, model, &acfg, policy)
                    .with_context(|| format!("example {}", ex.id))?,
                below_threshold: None,
            }
        };
        let r = &outcome.result;
        let lambda = r.lambda;
        let dir = ensure_dir(&out.join(&ex.id))?;
        write_image_pair(&ex.image, &dir, "original")?;
        write_image_pair(&r.adversarial, &dir, "adversarial")?;
        write_trace(&r.objective_trace, &dir.join("trace.csv"))?;
        let views = sample_transforms(&dist, cfg.eval.montage_views, &mut holdout_stream(seed));
        if !views.is_empty() {
            let tiles = montage_tiles(
                &compiled,
                &r.adversarial,
                target,
                &views,
                cfg.eval.montage_views,
            )?;
            eot_core::eval::write_montage(&tiles, 4, 3, dir.join("montage.png"))?;
        }
        println!(
            "{}: class {} → target {target}, λ {}, adversariality {:.3}, expected distance {:.4}",
            ex.id, ex.true_class, r.lambda, r.adversariality, r.expected_distance
        );
        manifest.rows.push(ManifestRow {
            id: ex.id.clone(),
            true_class: ex.true_class,
            target,
            lambda: r.lambda,
            seed,
            adversariality: r.adversariality,
            expected_distance: r.expected_distance,
            perturbation_l2: r.perturbation_l2,
            within_epsilon: r.within_epsilon,
            below_threshold: outcome.below_threshold,
        });
        report_examples.push(ReportExample {
            id: ex.id.clone(),
            original: ex.image.clone(),
            adversarial: outcome.result.adversarial,
            true_classes: vec![ex.true_class],
            target,
            lambda: Some(lambda),
            seed,
        });
    }
    manifest.write(&out)?;
    // Same sampler and per-example seeds as the attacks' held-out scoring.
    let n = cfg.attack.holdout_samples.expect("resolved");
    write_report(&build_report(&report_examples, &compiled, &dist, n)?, &out)?;
    Ok(())
}

pub fn run_2d(cfg: &RunConfig) -> Result<()> {
    let model = load(cfg)?;
    let examples = examples_2d(cfg)?;
    attack_all(
        cfg,
        &model,
        &examples,
        |x| {
            let s = x.shape();
            let dist = cfg.dist2d.to_config((s[0], s[1]))?;
            let [h, w, c] = model.input_shape();
            if (h, w, c) != (dist.canvas.0, dist.canvas.1, s[2]) {
                bail!(
                    "model expects [{h}, {w}, {c}] but the 2D distribution produces [{}, {}, {}]",
                    dist.canvas.0,
                    dist.canvas.1,
                    s[2]
                );
            }
            Ok(Dist2D::new(dist, (s[0], s[1]))?)
        },
        BatchPolicy::Fresh,
    )
}

pub fn run_3d(cfg: &RunConfig) -> Result<()> {
    let model = load(cfg)?;
    let examples = examples_3d(cfg)?;
    let mesh = mesh(cfg)?;
    let poses = cfg.pose3d.to_config()?;
    let physical = cfg.physical.as_ref().map(|p| p.to_config()).transpose()?;
    if let Some([h, w]) = cfg.pose3d.render_size {
        let [mh, mw, _] = model.input_shape();
        if (h, w) != (mh, mw) {
            bail!("pose3d.render_size [{h}, {w}] differs from the model input [{mh}, {mw}]");
        }
    }
    attack_all(
        cfg,
        &model,
        &examples,
        |x| {
            Ok(render_distribution(
                x,
                mesh.clone(),
                &poses,
                physical.as_ref(),
                &model,
            )?)
        },
        BatchPolicy::Reuse,
    )
}
