use std::io::Write;

use anyhow::{bail, Context, Result};

use eot_core::classifier::{save_model, train};

use super::datasets;
use crate::artifacts::ensure_dir;
use crate::config::RunConfig;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let (train_set, test_set) = datasets(cfg, true)?;
    let train_set = train_set.expect("requested");
    let mut tc = cfg.train_config()?;
    if cfg.train.augment {
        let [h, w, _] = train_set.image_shape().context("empty training set")?;
        let dist = cfg.dist2d.to_config((h, w))?;
        if cfg.dist2d.canvas.is_none() {
            bail!("train.augment needs dist2d.canvas");
        }
        tc.augment = Some(dist);
    }
    let trained = train(&train_set, &test_set, &tc)?;
    let dir = ensure_dir(&cfg.out)?;
    save_model(&trained.model, dir.join("model.eotm"))?;
    let mut w = csv::Writer::from_path(dir.join("training.csv")).context("training.csv")?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in trained.epoch_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    let acc = trained.heldout_accuracy.unwrap_or(f64::NAN);
    let mut s = std::fs::File::create(dir.join("summary.txt"))?;
    writeln!(s, "heldout_accuracy={acc}")?;
    writeln!(s, "parameters={}", trained.model.parameter_count())?;
    println!("held-out accuracy {acc:.4} over {} images", test_set.len());
    Ok(())
}
