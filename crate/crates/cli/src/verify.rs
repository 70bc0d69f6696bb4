//! `boxdiff verify`: recheck a run directory bit for bit. Every certified
//! average is re-derived from the function and partition files, the
//! certificate tables are regenerated and byte-compared against what is on
//! disk, and every digest any manifest recorded is recomputed.

use std::fs;

use crate::certify::{derive_certificate, grid_and_margin, load_artifacts};
use crate::config::{file_err, CliError, Config};
use crate::manifest::{digest_lines, sha256_hex};

const MANIFESTS: [&str; 5] = [
    "build.manifest",
    "certify.manifest",
    "regress.manifest",
    "classify.manifest",
    "bench.manifest",
];

pub fn run(cfg: &mut Config) -> Result<(), CliError> {
    let out = cfg.out_dir();
    let threads = cfg.threads()?;

    // The summary records the grid the certificate was cut on; with no
    // certificate yet, fall back the way certify would.
    let sum_path = out.join("summary.txt");
    let (grid, margin) = match Config::load_optional(&sum_path) {
        Some(mut sum) => {
            let grid: u32 = sum.take_parsed("grid")?.ok_or_else(|| {
                CliError::Failed(format!("{}: missing grid", sum_path.display()))
            })?;
            let margin: f64 = sum.take_parsed("margin")?.ok_or_else(|| {
                CliError::Failed(format!("{}: missing margin", sum_path.display()))
            })?;
            (grid, margin)
        }
        None => grid_and_margin(cfg, &out)?,
    };
    cfg.finish()?;

    let artifacts = load_artifacts(&out)?;
    let cert = derive_certificate(&artifacts.f, &artifacts.catalog, grid, margin, threads)?;

    let mut compared = 0usize;
    let csv_path = out.join("certificate.csv");
    if csv_path.exists() {
        let disk = fs::read_to_string(&csv_path).map_err(|e| file_err(&csv_path, e))?;
        if disk != cert.csv {
            return Err(CliError::Mismatch(
                "certificate.csv does not match the function and catalog on disk".to_string(),
            ));
        }
        let disk = fs::read_to_string(&sum_path).map_err(|e| file_err(&sum_path, e))?;
        if disk != cert.summary {
            return Err(CliError::Mismatch(
                "summary.txt does not match the function and catalog on disk".to_string(),
            ));
        }
        compared = 2;
    }

    let mut digests = 0usize;
    for name in MANIFESTS {
        let path = out.join(name);
        if !path.exists() {
            continue;
        }
        for (file, want) in digest_lines(&path)? {
            let got = sha256_hex(&out.join(&file))?;
            if got != want {
                return Err(CliError::Mismatch(format!(
                    "{}: {} lists digest {}, file hashes to {}",
                    file, name, want, got
                )));
            }
            digests += 1;
        }
    }

    println!(
        "ok: {} entries re-derived, {} tables regenerated byte for byte, {} digests match",
        cert.entries, compared, digests
    );
    Ok(())
}
