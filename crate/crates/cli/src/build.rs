//! `boxdiff build`: construct the composite for the configured targets and
//! write the function, the merged witness catalog, and a manifest binding
//! them to the parameters.

use std::fs;
use std::io::{self, Write as _};

use boxdiff_core::adversary::{
    build_composite, escalation_preset, sampling_preset, single_preset, write_catalog,
    CatalogEntry, Composite, CompositeError, Lemma21Target, WitnessCatalog,
};
use boxdiff_core::quadsum::l1_norm;
use boxdiff_core::rectfn::write_boxfn;

use crate::config::{file_err, CliError, Config};
use crate::manifest::Manifest;

/// Targets for the configured preset, echoed into the manifest so a rerun
/// from the manifest rebuilds the same composite.
pub fn composite_targets(
    cfg: &mut Config,
    man: &mut Manifest,
) -> Result<Vec<Lemma21Target>, CliError> {
    let preset = cfg.take_or("preset", "sampling");
    let grid: u32 = cfg.take_parsed_or("grid", 64)?;
    let margin: f64 = cfg.take_parsed_or("margin", 1.0 / 64.0)?;
    man.set("preset", &preset);
    man.set("grid", grid);
    man.set("margin", margin);
    let mut targets = match preset.as_str() {
        "single" => vec![single_preset()],
        "escalation" => escalation_preset(),
        "sampling" => sampling_preset(),
        "custom" => custom_targets(cfg, man)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown preset {:?}: expected single, escalation, sampling, or custom",
                other
            )))
        }
    };
    for t in &mut targets {
        t.grid = grid;
        t.margin = margin;
    }
    Ok(targets)
}

fn required_level_value(
    cfg: &mut Config,
    man: &mut Manifest,
    key: &str,
) -> Result<f64, CliError> {
    let value: f64 = cfg
        .take_parsed(key)?
        .ok_or_else(|| CliError::Usage(format!("custom build needs {}", key)))?;
    man.set(key, value);
    Ok(value)
}

fn defaulted_level_value(
    cfg: &mut Config,
    man: &mut Manifest,
    key: &str,
    default: f64,
) -> Result<f64, CliError> {
    let value: f64 = cfg.take_parsed_or(key, default)?;
    man.set(key, value);
    Ok(value)
}

fn custom_targets(cfg: &mut Config, man: &mut Manifest) -> Result<Vec<Lemma21Target>, CliError> {
    let levels: usize = cfg.take_parsed_or("levels", 0)?;
    man.set("levels", levels);
    let mut out = Vec::with_capacity(levels);
    for i in 0..levels {
        let threshold = required_level_value(cfg, man, &format!("level.{}.threshold", i))?;
        let mesh = required_level_value(cfg, man, &format!("level.{}.mesh", i))?;
        let coverage = defaulted_level_value(cfg, man, &format!("level.{}.coverage", i), 0.9)?;
        let epsilon = defaulted_level_value(cfg, man, &format!("level.{}.epsilon", i), 1.0)?;
        out.push(Lemma21Target {
            epsilon,
            threshold,
            mesh,
            coverage,
            ..single_preset()
        });
    }
    Ok(out)
}

/// An empty or misordered level list is the caller's mistake; a level that
/// will not fit its layer cap is an operational failure worth exit 1.
pub fn composite_err(e: CompositeError) -> CliError {
    match &e {
        CompositeError::Level { .. } => CliError::Failed(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

pub fn run(cfg: &mut Config) -> Result<(), CliError> {
    let mut man = Manifest::new("build");
    let seed = cfg.seed()?;
    man.set("seed", seed);
    let out = cfg.out_dir();
    cfg.threads()?;
    let targets = composite_targets(cfg, &mut man)?;
    cfg.finish()?;

    let composite = build_composite(&targets, seed).map_err(composite_err)?;
    let Composite { f, levels } = composite;

    fs::create_dir_all(&out).map_err(|e| file_err(&out, e))?;
    let fn_path = out.join("fn.boxfn");
    let mut w = io::BufWriter::new(fs::File::create(&fn_path).map_err(|e| file_err(&fn_path, e))?);
    write_boxfn(&f, &mut w).map_err(|e| file_err(&fn_path, e))?;
    w.flush().map_err(|e| file_err(&fn_path, e))?;

    for (i, (lv, t)) in levels.iter().zip(&targets).enumerate() {
        let r = &lv.build.report;
        println!(
            "level {}: threshold {}, mesh {}, {} layers, {} kernels, coverage {:.4}{}",
            i,
            t.threshold,
            t.mesh,
            r.layer_count,
            r.kernel_count,
            r.achieved_coverage,
            if r.budget_exhausted {
                " (budget exhausted)"
            } else {
                ""
            }
        );
    }

    let mut merged = WitnessCatalog::default();
    for lv in levels {
        let offset = merged.partitions.len();
        merged.entries.extend(lv.build.catalog.entries.iter().map(|e| CatalogEntry {
            partition: e.partition + offset,
            ..*e
        }));
        merged.partitions.extend(lv.build.catalog.partitions);
    }
    let index = write_catalog(&merged, &out, "catalog").map_err(|e| file_err(&out, e))?;

    man.digest(&out, "fn.boxfn")?;
    man.digest(&out, "catalog.boxcat")?;
    for i in 0..merged.partitions.len() {
        man.digest(&out, &format!("catalog-trees/q{:06}.tree", i))?;
    }
    man.write(&out.join("build.manifest"))?;

    println!(
        "function: {} ({} terms, l1 norm {:.6})",
        fn_path.display(),
        f.terms().len(),
        l1_norm(&f)
    );
    println!(
        "catalog: {} ({} entries, {} partitions)",
        index.display(),
        merged.entries.len(),
        merged.partitions.len()
    );
    Ok(())
}
