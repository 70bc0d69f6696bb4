//! `boxdiff regress`: rebuild the configured composite and stage catalog
//! (both deterministic in the seed), run the staged sampling schedule, and
//! write the trajectory table.

use std::fs;

use boxdiff_core::adversary::{build_composite, build_stage_catalog, StageTargets};
use boxdiff_core::regress::{schedule_runner, Generator, RunnerOptions};

use crate::build::{composite_err, composite_targets};
use crate::config::{broadcast, file_err, join, CliError, Config};
use crate::manifest::Manifest;

/// Stage targets from config, defaulting to the desk schedule: one box for
/// the coarse level, then budget-filled stages, 6/22/26 per level.
pub fn stage_targets(
    cfg: &mut Config,
    man: &mut Manifest,
    levels: usize,
    grid: u32,
) -> Result<StageTargets, CliError> {
    let stock = [6usize, 22, 26];
    let default_per: Vec<usize> = (0..levels).map(|i| stock[i.min(stock.len() - 1)]).collect();
    let per_level = cfg.take_list_or("stages.per_level", &default_per)?;
    // 0 means uncapped; the default caps only the first level at one box.
    let default_caps: Vec<usize> = (0..per_level.len()).map(|i| usize::from(i == 0)).collect();
    let caps = cfg.take_list_or("stages.max_boxes", &default_caps)?;
    if caps.len() != per_level.len() {
        return Err(CliError::Usage(format!(
            "stages.max_boxes: got {} values for {} levels",
            caps.len(),
            per_level.len()
        )));
    }
    let area_budget: f64 = cfg.take_parsed_or("stages.area_budget", 0.025)?;
    let max_piece_side: f64 = cfg.take_parsed_or("stages.max_piece_side", 0.045)?;
    man.set("stages.per_level", join(&per_level));
    man.set("stages.max_boxes", join(&caps));
    man.set("stages.area_budget", area_budget);
    man.set("stages.max_piece_side", max_piece_side);
    Ok(StageTargets {
        per_level,
        max_boxes: caps
            .iter()
            .map(|&c| if c == 0 { None } else { Some(c) })
            .collect(),
        area_budget,
        max_piece_side,
        grid,
    })
}

pub fn run(cfg: &mut Config) -> Result<(), CliError> {
    let mut man = Manifest::new("regress");
    let seed = cfg.seed()?;
    man.set("seed", seed);
    let out = cfg.out_dir();
    cfg.threads()?;
    let targets = composite_targets(cfg, &mut man)?;
    let st = stage_targets(cfg, &mut man, targets.len(), targets[0].grid)?;
    let eps_list: Vec<f64> = cfg.take_list_or("eps", &[0.1])?;
    let confidence: f64 = cfg.take_parsed_or("confidence", 0.9)?;
    let area_floor: f64 = cfg.take_parsed_or("area_floor", 1e-2)?;
    let sample_cap: u64 = cfg.take_parsed_or("sample_cap", 10_000_000)?;
    let strict: bool = cfg.take_parsed_or("strict", false)?;
    let sigma: Option<f64> = cfg.take_parsed("noise")?;
    man.set("eps", join(&eps_list));
    man.set("confidence", confidence);
    man.set("area_floor", area_floor);
    man.set("sample_cap", sample_cap);
    man.set("strict", strict);
    if let Some(s) = sigma {
        man.set("noise", s);
    }
    cfg.finish()?;

    let composite = build_composite(&targets, seed).map_err(composite_err)?;
    let catalog = build_stage_catalog(&composite, &st).map_err(|e| CliError::Failed(e.to_string()))?;
    let eps = broadcast(&eps_list, catalog.stages.len(), "eps")?;
    let options = RunnerOptions {
        area_floor,
        sample_cap,
        strict_bound: strict,
        generator: sigma.map_or(Generator::DeterministicY, Generator::NoisyY),
    };
    let report = schedule_runner(&composite.f, &catalog, &eps, confidence, seed, options)
        .map_err(|e| CliError::Failed(e.to_string()))?;

    fs::create_dir_all(&out).map_err(|e| file_err(&out, e))?;
    let path = out.join("trajectory.csv");
    fs::write(&path, report.to_csv()).map_err(|e| file_err(&path, e))?;
    man.digest(&out, "trajectory.csv")?;
    man.write(&out.join("regress.manifest"))?;

    let flagged = report.rows.iter().filter(|r| !r.flags.is_empty()).count();
    let worst_gap = report
        .rows
        .iter()
        .filter_map(|r| r.max_i_floored)
        .fold(0.0, f64::max);
    let least_bound = report
        .rows
        .iter()
        .filter_map(|r| r.lower_bound)
        .fold(f64::INFINITY, f64::min);
    println!(
        "{} stages; largest audited sampling gap {:.6}; smallest witness lower bound {:.6}; {} flagged rows",
        report.rows.len(),
        worst_gap,
        least_bound,
        flagged
    );
    println!("trajectory: {}", path.display());
    Ok(())
}
