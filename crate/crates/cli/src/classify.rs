//! `boxdiff classify`: rebuild the composite and stage catalog, run the
//! staged two-class experiment against the density the composite induces,
//! and write the separation table.

use std::fs;

use boxdiff_core::adversary::{build_composite, build_stage_catalog};
use boxdiff_core::classify::separation_experiment;

use crate::build::{composite_err, composite_targets};
use crate::config::{broadcast, file_err, join, CliError, Config};
use crate::manifest::Manifest;
use crate::regress::stage_targets;

pub fn run(cfg: &mut Config) -> Result<(), CliError> {
    let mut man = Manifest::new("classify");
    let seed = cfg.seed()?;
    man.set("seed", seed);
    let out = cfg.out_dir();
    cfg.threads()?;
    let targets = composite_targets(cfg, &mut man)?;
    let st = stage_targets(cfg, &mut man, targets.len(), targets[0].grid)?;
    let n_list: Vec<u64> = cfg.take_list_or("n", &[200_000])?;
    man.set("n", join(&n_list));
    cfg.finish()?;

    let composite = build_composite(&targets, seed).map_err(composite_err)?;
    let catalog = build_stage_catalog(&composite, &st).map_err(|e| CliError::Failed(e.to_string()))?;
    let sizes = broadcast(&n_list, catalog.stages.len(), "n")?;
    let report = separation_experiment(&composite.f, &catalog, &sizes, seed)
        .map_err(|e| CliError::Failed(e.to_string()))?;

    fs::create_dir_all(&out).map_err(|e| file_err(&out, e))?;
    let path = out.join("separation.csv");
    fs::write(&path, report.to_csv()).map_err(|e| file_err(&path, e))?;
    man.digest(&out, "separation.csv")?;
    man.write(&out.join("classify.manifest"))?;

    let max_gap = report.stages.iter().map(|s| s.gap).fold(0.0, f64::max);
    let final_cum = report
        .stages
        .last()
        .map_or(0.0, |s| s.cum_misclassified_fraction);
    println!(
        "{} stages; bayes risk {:.6}; largest risk gap {:.6}; {:.4} of {} low-density grid points misclassified at some stage",
        report.stages.len(),
        report.bayes_risk,
        max_gap,
        final_cum,
        report.low_density_points
    );
    println!("separation: {}", path.display());
    Ok(())
}
