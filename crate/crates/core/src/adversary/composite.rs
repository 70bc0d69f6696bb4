//! Multi-level composites: a sum of single-level builds with escalating
//! thresholds and shrinking meshes, so the same small function carries a
//! whole sequence of ever-finer partitions with ever-larger certified
//! averages. Also the placement-fidelity experiment, which rebuilds the
//! service geometry with purely random origins and compares the measure
//! it serves against the idealized per-mass rate.

use std::error::Error;
use std::fmt;
use std::ops::Range;

use rand::Rng;

use crate::adversary::lemma21::{build_lemma21, Lemma21Build, Lemma21Error, Lemma21Target};
use crate::boxgeom::{BasicBox, Point2};
use crate::quadsum::integrate;
use crate::rectfn::{Term, WeightedRectFn};
use crate::treepart::SplitTree;
use crate::util::{seeded_stream, streams, NeumaierSum};

#[derive(Debug)]
pub struct CompositeLevel {
    pub build: Lemma21Build,
    /// This level's slice of the composite function's term list.
    pub terms: Range<usize>,
}

#[derive(Debug)]
pub struct Composite {
    /// Sum of the level functions.
    pub f: WeightedRectFn,
    pub levels: Vec<CompositeLevel>,
}

#[derive(Debug)]
pub enum CompositeError {
    NoLevels,
    /// Thresholds must strictly increase level to level (trivial levels
    /// with threshold zero are exempt).
    ThresholdOrder,
    /// Meshes must strictly decrease level to level (same exemption).
    MeshOrder,
    Level { index: usize, source: Lemma21Error },
}

impl fmt::Display for CompositeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompositeError::NoLevels => write!(f, "a composite needs at least one level"),
            CompositeError::ThresholdOrder => {
                write!(f, "level thresholds must strictly increase")
            }
            CompositeError::MeshOrder => write!(f, "level meshes must strictly decrease"),
            CompositeError::Level { index, source } => {
                write!(f, "level {} failed to build: {}", index, source)
            }
        }
    }
}

impl Error for CompositeError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            CompositeError::Level { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Decorrelates the per-level placement streams.
fn level_seed(seed: u64, index: usize) -> u64 {
    crate::util::mix_seed(seed, index as u64)
}

pub fn build_composite(
    targets: &[Lemma21Target],
    seed: u64,
) -> Result<Composite, CompositeError> {
    if targets.is_empty() {
        return Err(CompositeError::NoLevels);
    }
    let mut last: Option<(f64, f64)> = None;
    for t in targets {
        if t.threshold == 0.0 {
            continue;
        }
        if let Some((thr, mesh)) = last {
            if !(t.threshold > thr) {
                return Err(CompositeError::ThresholdOrder);
            }
            if !(t.mesh < mesh) {
                return Err(CompositeError::MeshOrder);
            }
        }
        last = Some((t.threshold, t.mesh));
    }

    let mut levels = Vec::with_capacity(targets.len());
    let mut terms: Vec<Term> = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let mut build = build_lemma21(t, level_seed(seed, i))
            .map_err(|source| CompositeError::Level { index: i, source })?;
        for e in &mut build.catalog.entries {
            e.level = i;
        }
        let start = terms.len();
        terms.extend_from_slice(build.f.terms());
        levels.push(CompositeLevel {
            build,
            terms: start..terms.len(),
        });
    }
    let f = WeightedRectFn::new(terms).expect("level functions were already valid");
    Ok(Composite { f, levels })
}

/// The exhibited partition sequence: every catalog partition, tagged with
/// its level, in level order.
pub fn build_partition_catalog(c: &Composite) -> Vec<(usize, &SplitTree)> {
    let mut out = Vec::new();
    for (i, lv) in c.levels.iter().enumerate() {
        for tree in &lv.build.catalog.partitions {
            out.push((i, tree));
        }
    }
    out
}

/// Single-level workhorse: unit budget, average 4, mesh 0.3 on a 64-grid.
pub fn single_preset() -> Lemma21Target {
    Lemma21Target {
        epsilon: 1.0,
        threshold: 4.0,
        mesh: 0.3,
        coverage: 0.9,
        margin: 1.0 / 64.0,
        grid: 64,
    }
}

/// Three levels with doubling thresholds and shrinking meshes, coverages
/// high enough that the triple intersection keeps most of the grid.
pub fn escalation_preset() -> Vec<Lemma21Target> {
    let base = single_preset();
    [(2.0, 0.3, 0.98), (4.0, 0.15, 0.91), (8.0, 0.08, 0.71)]
        .into_iter()
        .map(|(threshold, mesh, coverage)| Lemma21Target {
            threshold,
            mesh,
            coverage,
            ..base
        })
        .collect()
}

/// Same ladder of thresholds and meshes, but with modest exponents so the
/// blob weights stay small enough for sampling experiments to resolve the
/// certified averages at feasible sample sizes.
pub fn sampling_preset() -> Vec<Lemma21Target> {
    let base = single_preset();
    [
        (2.0, 0.3, 1.0 - (-1.5f64).exp()),
        (4.0, 0.15, 1.0 - (-0.925f64).exp()),
        (8.0, 0.08, 1.0 - (-0.375f64).exp()),
    ]
    .into_iter()
    .map(|(threshold, mesh, coverage)| Lemma21Target {
        threshold,
        mesh,
        coverage,
        ..base
    })
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplificationReport {
    /// Measure served per unit mass, times the threshold: the factor by
    /// which local averages beat the global norm.
    pub amplification: f64,
    /// Fraction of grid points admitting a certified corner box.
    pub served_measure: f64,
    pub mass: f64,
    pub kernel_count: usize,
    /// Idealized factor ln(eta^2 / c) for the parameters used here.
    pub predicted_factor: f64,
}

/// Drops kernels at purely random origins (no ladder) and measures the
/// fraction of grid points admitting a corner box with average at least
/// the threshold, using the raw service test with no edge push. The
/// resulting amplification should land near the idealized factor.
pub fn amplification_experiment(seed: u64, grid: u32) -> AmplificationReport {
    let threshold = 4.0;
    let eta = 0.25;
    let rho = (-10.0f64).exp();
    let s = eta * rho;
    let gamma = threshold / rho;
    let c = rho * eta * eta;
    let kernels = 1600usize;

    let mut rng = seeded_stream(seed, streams::PLACEMENT);
    let origins: Vec<Point2> = (0..kernels)
        .map(|_| {
            let x = rng.gen::<f64>() * (1.0 - eta);
            let y = rng.gen::<f64>() * (1.0 - eta);
            Point2::new(x, y)
        })
        .collect();

    let terms: Vec<Term> = origins
        .iter()
        .map(|o| Term {
            rect: BasicBox::half_open(o.x, o.x + s, o.y, o.y + s),
            weight: gamma,
        })
        .collect();
    let f = WeightedRectFn::new(terms).expect("fixed kernel count");

    let g = grid as usize;
    let gf = grid as f64;
    let mut served = vec![false; g * g];
    let mut checks = Vec::new();
    for o in &origins {
        let gi_min = (o.x * gf).floor() as usize + 1;
        let gi_max = (((o.x + eta) * gf).floor() as usize).min(g);
        for gi in gi_min..=gi_max {
            let xt = gi as f64 / gf - o.x;
            if xt <= 0.0 || xt > eta {
                continue;
            }
            let a = xt.max(s);
            if a * s > c {
                break;
            }
            let gj_min = (o.y * gf).floor() as usize + 1;
            let gj_max = (((o.y + eta) * gf).floor() as usize).min(g);
            for gj in gj_min..=gj_max {
                let yt = gj as f64 / gf - o.y;
                if yt <= 0.0 || yt > eta {
                    continue;
                }
                let b = yt.max(s);
                if a * b > c {
                    if yt >= s {
                        break;
                    }
                    continue;
                }
                let idx = (gj - 1) * g + (gi - 1);
                if !served[idx] {
                    served[idx] = true;
                    if checks.len() < 32 {
                        checks.push(BasicBox::half_open(o.x, o.x + a, o.y, o.y + b));
                    }
                }
            }
        }
    }

    // Spot-check: the counted boxes really do average at least the
    // threshold, up to summation roundoff.
    for w in &checks {
        let avg = integrate(&f, w) / w.area();
        assert!(avg >= threshold * (1.0 - 1e-9));
    }

    let count = served.iter().filter(|&&x| x).count();
    let served_measure = count as f64 / (g * g) as f64;
    let mut mass = NeumaierSum::new();
    for t in f.terms() {
        mass.add(t.weight * t.rect.area());
    }
    AmplificationReport {
        amplification: served_measure * threshold / f.mass(),
        served_measure,
        mass: f.mass(),
        kernel_count: kernels,
        predicted_factor: (eta * eta / c).ln(),
    }
}
