//! `boxdiff bench`: time indexed against linear-scan integration over a
//! seeded synthetic function, across term counts and query-box areas. The
//! two paths also cross-check each other: their summed results must agree
//! to a relative 1e-12 or the run fails.

use std::fs;

use rand::Rng;

use boxdiff_core::boxgeom::BasicBox;
use boxdiff_core::quadsum::bench_index;
use boxdiff_core::rectfn::{Term, WeightedRectFn};
use boxdiff_core::util::{mix_seed, seeded_stream, streams};

use crate::config::{file_err, join, CliError, Config};
use crate::manifest::Manifest;

fn synthetic_fn(seed: u64, terms: u64) -> Result<WeightedRectFn, CliError> {
    let mut rng = seeded_stream(seed, streams::GEOMETRY);
    let mut out = Vec::with_capacity(terms as usize);
    for _ in 0..terms {
        let w = 0.005 + rng.gen::<f64>() * 0.045;
        let h = 0.005 + rng.gen::<f64>() * 0.045;
        let x = rng.gen::<f64>() * (1.0 - w);
        let y = rng.gen::<f64>() * (1.0 - h);
        out.push(Term {
            rect: BasicBox::half_open(x, x + w, y, y + h),
            weight: 0.25 + rng.gen::<f64>(),
        });
    }
    WeightedRectFn::new(out).map_err(|e| CliError::Failed(e.to_string()))
}

fn query_boxes(seed: u64, area: f64, count: usize) -> Vec<BasicBox> {
    let side = area.sqrt().min(1.0);
    let mut rng = seeded_stream(seed, streams::GEOMETRY);
    (0..count)
        .map(|_| {
            let x = rng.gen::<f64>() * (1.0 - side);
            let y = rng.gen::<f64>() * (1.0 - side);
            BasicBox::half_open(x, (x + side).min(1.0), y, (y + side).min(1.0))
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn run(cfg: &mut Config) -> Result<(), CliError> {
    let mut man = Manifest::new("bench");
    let seed = cfg.seed()?;
    man.set("seed", seed);
    let out = cfg.out_dir();
    cfg.threads()?;
    let terms: Vec<u64> = cfg.take_list_or("terms", &[1_000, 10_000, 100_000])?;
    let areas: Vec<f64> = cfg.take_list_or("areas", &[1.0, 1e-2, 1e-4])?;
    let queries: usize = cfg.take_parsed_or("queries", 64)?;
    let repeats: u32 = cfg.take_parsed_or("repeats", 3)?;
    man.set("terms", join(&terms));
    man.set("areas", join(&areas));
    man.set("queries", queries);
    man.set("repeats", repeats);
    cfg.finish()?;
    if terms.iter().any(|&n| n == 0) || queries == 0 || repeats == 0 {
        return Err(CliError::Usage(
            "terms, queries, and repeats must be positive".to_string(),
        ));
    }
    if areas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(CliError::Usage("areas must lie in (0, 1]".to_string()));
    }

    let mut csv = String::from(
        "terms,area,queries,repeats,indexed_ns,scan_ns,speedup,indexed_sum,scan_sum\n",
    );
    for (ti, &n) in terms.iter().enumerate() {
        // Salts: one per function, then one per (function, area) pair.
        let f = synthetic_fn(mix_seed(seed, ti as u64), n)?;
        for (ai, &area) in areas.iter().enumerate() {
            let pair = terms.len() + ti * areas.len() + ai;
            let qs = query_boxes(mix_seed(seed, pair as u64), area, queries);
            let b = bench_index(&f, &qs, repeats);
            if rel(b.indexed_sum, b.scan_sum) > 1e-12 {
                return Err(CliError::Failed(format!(
                    "index and scan disagree at {} terms, area {}: {} vs {}",
                    n, area, b.indexed_sum, b.scan_sum
                )));
            }
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                n,
                area,
                queries,
                repeats,
                b.indexed_ns,
                b.scan_ns,
                b.speedup(),
                b.indexed_sum,
                b.scan_sum
            ));
            println!(
                "{:>8} terms, area {:>8}: indexed {:>12} ns, scan {:>12} ns, speedup {:>7.1}",
                n,
                area,
                b.indexed_ns,
                b.scan_ns,
                b.speedup()
            );
        }
    }

    fs::create_dir_all(&out).map_err(|e| file_err(&out, e))?;
    let path = out.join("bench.csv");
    fs::write(&path, csv).map_err(|e| file_err(&path, e))?;
    // Timings change run to run, so the table gets no digest.
    man.set("artifact.bench.csv", "volatile");
    man.write(&out.join("bench.manifest"))?;
    println!("table: {}", path.display());
    Ok(())
}
