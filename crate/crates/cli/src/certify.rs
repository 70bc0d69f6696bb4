//! `boxdiff certify`: re-derive every certified average in a built catalog
//! against the function on disk and write the certificate tables: one CSV
//! row per certified grid point and a key=value summary. Both are pure
//! functions of the artifacts, so `boxdiff verify` can regenerate them byte
//! for byte later.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::thread;

use boxdiff_core::adversary::{read_catalog, CatalogEntry, WitnessCatalog};
use boxdiff_core::hexfloat::format_hex;
use boxdiff_core::quadsum::{integrate, l1_norm};
use boxdiff_core::rectfn::{read_boxfn, WeightedRectFn};
use boxdiff_core::treepart::Partition;

use crate::config::{file_err, CliError, Config};
use crate::manifest::Manifest;

pub struct Artifacts {
    pub f: WeightedRectFn,
    pub catalog: WitnessCatalog,
}

pub fn load_artifacts(dir: &Path) -> Result<Artifacts, CliError> {
    let fn_path = dir.join("fn.boxfn");
    let file = fs::File::open(&fn_path).map_err(|e| file_err(&fn_path, e))?;
    let f = read_boxfn(&mut io::BufReader::new(file))
        .map_err(|e| CliError::Failed(format!("{}: {}", fn_path.display(), e)))?;
    let index = dir.join("catalog.boxcat");
    let catalog = read_catalog(&index)
        .map_err(|e| CliError::Failed(format!("{}: {}", index.display(), e)))?;
    Ok(Artifacts { f, catalog })
}

/// Grid and margin for a certificate: an explicit key wins, then whatever
/// the build recorded, then the stock 64-grid with a one-cell margin.
pub fn grid_and_margin(cfg: &mut Config, dir: &Path) -> Result<(u32, f64), CliError> {
    let mut build_man = Config::load_optional(&dir.join("build.manifest"));
    let mut inherit = |key: &str| match build_man.as_mut() {
        Some(man) => man.take(key),
        None => None,
    };
    let grid = match cfg.take_parsed("grid")? {
        Some(g) => g,
        None => match inherit("grid") {
            Some(raw) => raw.parse::<u32>().map_err(|_| {
                CliError::Failed(format!("build.manifest: unreadable grid {:?}", raw))
            })?,
            None => 64,
        },
    };
    let margin = match cfg.take_parsed("margin")? {
        Some(m) => m,
        None => match inherit("margin") {
            Some(raw) => raw.parse::<f64>().map_err(|_| {
                CliError::Failed(format!("build.manifest: unreadable margin {:?}", raw))
            })?,
            None => 1.0 / 64.0,
        },
    };
    Ok((grid, margin))
}

pub struct LevelStat {
    pub level: usize,
    pub threshold: f64,
    pub coverage: f64,
}

pub struct Certificate {
    pub csv: String,
    pub summary: String,
    pub entries: usize,
    pub points_covered: usize,
    pub inset_points: usize,
    pub levels: Vec<LevelStat>,
}

struct Derived {
    average: f64,
    leaf: usize,
}

/// Locate the entry's point in its partition, insist the witness box is the
/// containing leaf, and re-average the full function over it. The function
/// on disk can only add mass on top of the level the entry came from, so up
/// to rounding the re-derived average still clears the entry's threshold;
/// one part in 1e12 absorbs the rounding.
fn derive_one(f: &WeightedRectFn, parts: &[Partition], e: &CatalogEntry) -> Result<Derived, String> {
    let at = format!("entry at ({}, {})", e.point.x, e.point.y);
    let part = &parts[e.partition];
    let leaf = part.locate(e.point).map_err(|err| format!("{}: {}", at, err))?;
    if part.leaves()[leaf] != e.witness {
        return Err(format!("{}: witness box is not the containing leaf", at));
    }
    let average = integrate(f, &e.witness) / e.witness.area();
    if !(average >= e.certified_threshold * (1.0 - 1e-12)) {
        return Err(format!(
            "{}: average {} misses the certified threshold {}",
            at, average, e.certified_threshold
        ));
    }
    Ok(Derived { average, leaf })
}

fn reaverage(
    f: &WeightedRectFn,
    entries: &[CatalogEntry],
    parts: &[Partition],
    threads: usize,
) -> Result<Vec<Derived>, CliError> {
    let workers = threads.clamp(1, entries.len().max(1));
    let chunk = entries.len().div_ceil(workers);
    let per_chunk: Vec<Vec<Result<Derived, String>>> = thread::scope(|s| {
        let handles: Vec<_> = entries
            .chunks(chunk.max(1))
            .map(|c| s.spawn(move || c.iter().map(|e| derive_one(f, parts, e)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("certificate worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(entries.len());
    for r in per_chunk.into_iter().flatten() {
        out.push(r.map_err(CliError::Mismatch)?);
    }
    Ok(out)
}

/// Map a catalog point coordinate back to its grid index, bit for bit.
fn grid_index(coord: f64, grid: u32) -> Result<usize, CliError> {
    let i = (coord * grid as f64).round() as usize;
    if i as f64 / grid as f64 != coord {
        return Err(CliError::Failed(format!(
            "catalog point {} is not on a {}-grid; pass the grid the build used",
            coord, grid
        )));
    }
    Ok(i)
}

pub fn derive_certificate(
    f: &WeightedRectFn,
    catalog: &WitnessCatalog,
    grid: u32,
    margin: f64,
    threads: usize,
) -> Result<Certificate, CliError> {
    let parts: Vec<Partition> = catalog
        .partitions
        .iter()
        .map(|t| t.leaves())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Failed(format!("catalog partition invalid: {}", e)))?;
    let derived = reaverage(f, &catalog.entries, &parts, threads)?;

    // Inset window: grid points i/g with margin <= i/g <= 1 - margin.
    let gf = grid as f64;
    let i_lo = ((margin * gf).ceil() as usize).max(1);
    let i_hi = ((1.0 - margin) * gf).floor() as usize;
    if i_hi < i_lo {
        return Err(CliError::Usage(
            "margin leaves no grid points to certify".to_string(),
        ));
    }
    let inset_points = (i_hi - i_lo + 1) * (i_hi - i_lo + 1);

    // Best entry per grid point: deepest threshold, then largest average,
    // with index order breaking exact ties so the pick is total.
    let mut best: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut level_points: BTreeMap<usize, std::collections::BTreeSet<(usize, usize)>> =
        BTreeMap::new();
    let mut level_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut level_threshold: BTreeMap<usize, f64> = BTreeMap::new();
    for (k, e) in catalog.entries.iter().enumerate() {
        let ij = (grid_index(e.point.x, grid)?, grid_index(e.point.y, grid)?);
        level_points.entry(e.level).or_default().insert(ij);
        *level_count.entry(e.level).or_default() += 1;
        level_threshold
            .entry(e.level)
            .and_modify(|t| *t = t.min(e.certified_threshold))
            .or_insert(e.certified_threshold);
        match best.entry(ij) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(k);
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                let cur = &catalog.entries[*slot.get()];
                let cur_d = &derived[*slot.get()];
                let beats = e.certified_threshold > cur.certified_threshold
                    || (e.certified_threshold == cur.certified_threshold
                        && derived[k].average > cur_d.average);
                if beats {
                    slot.insert(k);
                }
            }
        }
    }

    let mut csv =
        String::from("i,j,x,y,level,partition,leaf,average,average_hex,catalog_average,threshold\n");
    for (&(i, j), &k) in &best {
        let e = &catalog.entries[k];
        let d = &derived[k];
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            i,
            j,
            e.point.x,
            e.point.y,
            e.level,
            e.partition,
            d.leaf,
            d.average,
            format_hex(d.average),
            e.exact_average,
            e.certified_threshold
        ));
    }

    let norm = l1_norm(f);
    let mut summary_lines: BTreeMap<String, String> = BTreeMap::new();
    let mut put = |k: String, v: String| {
        summary_lines.insert(k, v);
    };
    put("entries".into(), catalog.entries.len().to_string());
    put("grid".into(), grid.to_string());
    put("margin".into(), margin.to_string());
    put("inset_points".into(), inset_points.to_string());
    put("points_covered".into(), best.len().to_string());
    put("l1_norm".into(), norm.to_string());
    put("l1_norm_hex".into(), format_hex(norm));
    put("levels".into(), level_points.len().to_string());

    // Partition norms, grouped by the level whose entries reference them.
    let mut part_level: Vec<Option<usize>> = vec![None; parts.len()];
    for e in &catalog.entries {
        part_level[e.partition] = Some(e.level);
    }
    let mut levels = Vec::new();
    for (&lv, points) in &level_points {
        let coverage = points.len() as f64 / inset_points as f64;
        let max_norm = part_level
            .iter()
            .zip(&parts)
            .filter(|(l, _)| **l == Some(lv))
            .map(|(_, p)| p.norm())
            .fold(0.0, f64::max);
        let partitions = part_level.iter().filter(|l| **l == Some(lv)).count();
        put(format!("level.{}.threshold", lv), level_threshold[&lv].to_string());
        put(format!("level.{}.entries", lv), level_count[&lv].to_string());
        put(format!("level.{}.points", lv), points.len().to_string());
        put(format!("level.{}.coverage", lv), coverage.to_string());
        put(format!("level.{}.max_norm", lv), max_norm.to_string());
        put(format!("level.{}.partitions", lv), partitions.to_string());
        levels.push(LevelStat {
            level: lv,
            threshold: level_threshold[&lv],
            coverage,
        });
    }

    let mut summary = String::new();
    for (k, v) in &summary_lines {
        summary.push_str(k);
        summary.push('=');
        summary.push_str(v);
        summary.push('\n');
    }

    Ok(Certificate {
        csv,
        summary,
        entries: catalog.entries.len(),
        points_covered: best.len(),
        inset_points,
        levels,
    })
}

pub fn run(cfg: &mut Config) -> Result<(), CliError> {
    let out = cfg.out_dir();
    let threads = cfg.threads()?;
    let (grid, margin) = grid_and_margin(cfg, &out)?;
    cfg.finish()?;

    let artifacts = load_artifacts(&out)?;
    let cert = derive_certificate(&artifacts.f, &artifacts.catalog, grid, margin, threads)?;
    let csv_path = out.join("certificate.csv");
    fs::write(&csv_path, &cert.csv).map_err(|e| file_err(&csv_path, e))?;
    let sum_path = out.join("summary.txt");
    fs::write(&sum_path, &cert.summary).map_err(|e| file_err(&sum_path, e))?;

    let mut man = Manifest::new("certify");
    man.set("grid", grid);
    man.set("margin", margin);
    man.digest(&out, "fn.boxfn")?;
    man.digest(&out, "catalog.boxcat")?;
    man.digest(&out, "certificate.csv")?;
    man.digest(&out, "summary.txt")?;
    man.write(&out.join("certify.manifest"))?;

    println!(
        "certified {} entries at {} of {} grid points; tables in {}",
        cert.entries,
        cert.points_covered,
        cert.inset_points,
        out.display()
    );
    for s in &cert.levels {
        println!(
            "level {}: threshold {}, coverage {:.4}",
            s.level, s.threshold, s.coverage
        );
    }
    Ok(())
}
