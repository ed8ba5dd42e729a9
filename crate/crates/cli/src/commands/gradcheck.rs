use std::io::Write;

use anyhow::{bail, Result};

use eot_core::diffmath::{check_primitive, primitive_cases};
use eot_core::rng;

use crate::artifacts::ensure_dir;
use crate::config::RunConfig;

/// Finite-difference check of every graph primitive; fails if any exceeds
/// the tolerance.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let g = &cfg.gradcheck;
    let out = ensure_dir(&cfg.out)?;
    let mut table = csv::Writer::from_path(out.join("gradcheck.csv"))?;
    table.write_record(["primitive", "max_relative_error", "pass"])?;
    let mut failed = Vec::new();
    let stdout = std::io::stdout();
    let mut o = stdout.lock();
    for (i, case) in primitive_cases().iter().enumerate() {
        let mut r = rng::substream(cfg.seed, "cli.gradcheck", i as u64);
        let err = check_primitive(case, &mut r, g.trials, g.step)?;
        let pass = err < g.tolerance;
        if !pass {
            failed.push(case.name);
        }
        table.write_record([case.name.to_string(), format!("{err:e}"), pass.to_string()])?;
        writeln!(
            o,
            "{:<16} {err:>10.2e}  {}",
            case.name,
            if pass { "pass" } else { "FAIL" }
        )?;
    }
    table.flush()?;
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
