mod attack;
mod eval;
mod gradcheck;
mod render;
mod train;

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::Rng;

use eot_core::classifier::{color_shapes, ingest_idx, load_model, LabeledDataset, Model};
use eot_core::renderer3d::{load_obj, Mesh};
use eot_core::rng;

use crate::config::{DatasetKind, Mode, RunConfig};

/// Runs the resolved configuration; the configuration is echoed first.
pub fn run(cfg: &RunConfig) -> Result<()> {
    cfg.echo()?;
    let mode = cfg.mode();
    let result = match mode {
        Mode::Train => train::run(cfg),
        Mode::Attack2d => attack::run_2d(cfg),
        Mode::Attack3d => attack::run_3d(cfg),
        Mode::Eval => eval::run(cfg),
        Mode::Render => render::run(cfg),
        Mode::Gradcheck => gradcheck::run(cfg),
    };
    result.with_context(|| format!("{mode} failed"))
}

fn load(cfg: &RunConfig) -> Result<Model<f64>> {
    let path = cfg.model.as_ref().context("no model given")?;
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

/// `(train, test)` splits. Generated splits depend only on the seed, so
/// every mode sees the same images.
fn datasets(
    cfg: &RunConfig,
    need_train: bool,
) -> Result<(Option<LabeledDataset<f64>>, LabeledDataset<f64>)> {
    let d = &cfg.data;
    Ok(match d.dataset {
        DatasetKind::ColorShapes => (
            need_train.then(|| {
                color_shapes(
                    d.color_shapes_train,
                    &mut rng::stream(cfg.seed, "cli.shapes.train"),
                )
            }),
            color_shapes(
                d.color_shapes_test,
                &mut rng::stream(cfg.seed, "cli.shapes.test"),
            ),
        ),
        DatasetKind::Idx => {
            let p = |o: &Option<std::path::PathBuf>| o.clone().context("dataset path missing");
            let train = if need_train {
                Some(
                    ingest_idx(p(&d.train_images)?, p(&d.train_labels)?)
                        .context("training split")?,
                )
            } else {
                None
            };
            let test = ingest_idx(p(&d.test_images)?, p(&d.test_labels)?).context("test split")?;
            (train, test)
        }
    })
}

fn mesh(cfg: &RunConfig) -> Result<Arc<Mesh>> {
    Ok(Arc::new(match &cfg.data.mesh {
        Some(p) => load_obj(p)?,
        None => Mesh::cube(),
    }))
}

/// Target per example: the configured one, or uniform over the other
/// classes from the stream `(seed, "cli.targets")` in example order.
fn targets(cfg: &RunConfig, true_classes: &[usize], classes: usize) -> Result<Vec<usize>> {
    let mut r = rng::stream(cfg.seed, "cli.targets");
    true_classes
        .iter()
        .map(|&y| match cfg.data.target {
            Some(t) if t == y => bail!("target {t} equals the true class"),
            Some(t) if t >= classes => bail!("target {t} is out of range for {classes} classes"),
            Some(t) => Ok(t),
            None => {
                if classes < 2 {
                    bail!("random targets need at least two classes");
                }
                let t = r.random_range(0..classes - 1);
                Ok(if t >= y { t + 1 } else { t })
            }
        })
        .collect()
}

/// Seed for one example's attack and held-out sample.
fn example_seed(root: u64, id: &str) -> u64 {
    rng::stream_seed(root, &format!("cli.example.{id}"))
}
