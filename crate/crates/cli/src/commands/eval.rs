use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use eot_core::eval::{
    build_report, holdout_stream, sample_transforms, write_montage, ReportExample,
};
use eot_core::imageio::read_raw;
use eot_core::transform::TransformSampler;
use eot_core::transforms2d::Dist2D;

use super::attack::montage_tiles;
use super::{load, mesh};
use crate::artifacts::{ensure_dir, write_report};
use crate::config::{EvalKind, RunConfig};
use eot_core::eot::render_distribution;

pub const MANIFEST: &str = "examples.csv";

/// One attacked example as recorded by an attack run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub true_class: usize,
    pub target: usize,
    pub lambda: f64,
    pub seed: u64,
    pub adversariality: f64,
    pub expected_distance: f64,
    pub perturbation_l2: f64,
    pub within_epsilon: Option<bool>,
    pub below_threshold: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut w =
            csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let mut r =
            csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let rows = r.deserialize().collect::<Result<Vec<ManifestRow>, _>>()?;
        Ok(Self { rows })
    }
}

fn evaluate<D: TransformSampler<f64>>(
    cfg: &RunConfig,
    examples: &[ReportExample<f64>],
    dist: &D,
) -> Result<()> {
    let model = load(cfg)?.compile()?;
    let n = cfg
        .eval
        .samples
        .unwrap_or(cfg.attack.holdout_samples.expect("resolved"));
    let out = ensure_dir(&cfg.out)?;
    let report = build_report(examples, &model, dist, n)?;
    write_report(&report, &out)?;
    if let Some(ex) = examples.first() {
        let views = sample_transforms(dist, cfg.eval.montage_views, &mut holdout_stream(ex.seed));
        if !views.is_empty() {
            let tiles = montage_tiles(
                &model,
                &ex.adversarial,
                ex.target,
                &views,
                cfg.eval.montage_views,
            )?;
            write_montage(&tiles, 4, 3, out.join("montage.png"))?;
        }
    }
    println!(
        "{} examples: adversariality {:.4} ± {:.4}, accuracy {:.4} ± {:.4}",
        examples.len(),
        report.adversarial.adversariality_mean,
        report.adversarial.adversariality_stdev,
        report.adversarial.accuracy_mean,
        report.adversarial.accuracy_stdev
    );
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let run_dir = cfg.eval.run.as_deref().context("eval.run is required")?;
    let manifest = Manifest::read(run_dir)?;
    let examples = manifest
        .rows
        .iter()
        .map(|r| {
            let dir = run_dir.join(&r.id);
            Ok(ReportExample {
                id: r.id.clone(),
                original: read_raw(dir.join("original.raw"))?,
                adversarial: read_raw(dir.join("adversarial.raw"))?,
                true_classes: vec![r.true_class],
                target: r.target,
                lambda: Some(r.lambda),
                seed: r.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = examples.first().context("the run recorded no examples")?;
    let shape = first.original.shape().to_vec();
    if examples
        .iter()
        .any(|e| e.original.shape() != shape.as_slice())
    {
        bail!("examples differ in size");
    }
    match cfg.eval.kind {
        EvalKind::TwoD => {
            let dist = Dist2D::new(
                cfg.dist2d.to_config((shape[0], shape[1]))?,
                (shape[0], shape[1]),
            )?;
            evaluate(cfg, &examples, &dist)
        }
        EvalKind::ThreeD => {
            let model = load(cfg)?;
            let physical = cfg.physical.as_ref().map(|p| p.to_config()).transpose()?;
            let dist = render_distribution(
                &first.original,
                mesh(cfg)?,
                &cfg.pose3d.to_config()?,
                physical.as_ref(),
                &model,
            )?;
            evaluate(cfg, &examples, &dist)
        }
    }
}
