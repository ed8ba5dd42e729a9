use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use eot_core::diffmath::Tensor;
use eot_core::eval::{write_csv, EvalReport};
use eot_core::imageio::{write_png, write_raw};

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

/// Writes `<stem>.raw` (exact) and `<stem>.png` (8-bit preview).
pub fn write_image_pair(image: &Tensor<f64>, dir: &Path, stem: &str) -> Result<()> {
    write_raw(image, dir.join(format!("{stem}.raw")))?;
    write_png(image, dir.join(format!("{stem}.png")))?;
    Ok(())
}

pub fn write_trace(trace: &[f64], path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["step", "objective"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    let path = dir.join("report.csv");
    let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    write_csv(report, file)?;
    let mut s = fs::File::create(dir.join("summary.txt"))?;
    let (o, a) = (&report.original, &report.adversarial);
    writeln!(s, "samples per example: {}", report.n_samples)?;
    writeln!(
        s,
        "original:    accuracy {:.4} ± {:.4}, adversariality {:.4} ± {:.4}",
        o.accuracy_mean, o.accuracy_stdev, o.adversariality_mean, o.adversariality_stdev
    )?;
    writeln!(
        s,
        "adversarial: accuracy {:.4} ± {:.4}, adversariality {:.4} ± {:.4}, l2 per pixel {:.6}",
        a.accuracy_mean,
        a.accuracy_stdev,
        a.adversariality_mean,
        a.adversariality_stdev,
        a.mean_l2_per_pixel
    )?;
    writeln!(
        s,
        "adversariality histogram (tenths): {:?}",
        report.histogram
    )?;
    Ok(())
}
