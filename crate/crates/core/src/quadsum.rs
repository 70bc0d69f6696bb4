//! Exact integrals of weighted-rectangle functions over boxes, conditional
//! expectations against a partition, and a Monte Carlo cross-check.
//!
//! Integration is closed form: each term contributes weight times the area
//! of its overlap with the query box. Index cells wholly inside the query
//! are settled by their precomputed mass and only boundary cells expand
//! into term pieces, in a fixed compensated order, so results are fast and
//! bit-reproducible.

use std::error::Error;
use std::fmt;

use crate::boxgeom::{BasicBox, Point2};
use crate::rectfn::{cell_axis_range, cell_box, WeightedRectFn, INDEX_RESOLUTION};
use crate::treepart::{LocateError, Partition};
use crate::util::{seeded_stream, streams, unit_open_closed, NeumaierSum};

/// Integral of f over b. Exact up to rounding in the area products: a cell
/// inside b contributes exactly its stored mass, and a cell cut by b is
/// clipped once, after which the cell's covering weight multiplies the clip
/// area and each partly covering term adds weight times the area of its
/// overlap with the clip. Pieces tile every overlap, so this equals the
/// term-by-term integral up to summation order.
pub fn integrate(f: &WeightedRectFn, b: &BasicBox) -> f64 {
    let g = INDEX_RESOLUTION as f64;
    let terms = f.terms();
    let (x0, x1) = cell_axis_range(b.xlo, b.xhi);
    let (y0, y1) = cell_axis_range(b.ylo, b.yhi);
    let mut sum = NeumaierSum::new();
    for cy in y0..=y1 {
        let y_inside = cy as f64 / g >= b.ylo && (cy + 1) as f64 / g <= b.yhi;
        for cx in x0..=x1 {
            let (partial, cover, mass) = f.cell(cx, cy);
            if y_inside && cx as f64 / g >= b.xlo && (cx + 1) as f64 / g <= b.xhi {
                if mass != 0.0 {
                    sum.add(mass);
                }
                continue;
            }
            if cover == 0.0 && partial.is_empty() {
                continue;
            }
            let clip = match cell_box(cx, cy).intersect(b) {
                Some(clip) => clip,
                None => continue,
            };
            if cover != 0.0 {
                sum.add(cover * clip.area());
            }
            // Branch-free piece areas; for nonempty overlaps the arithmetic
            // is bit-identical to intersect-then-area.
            for &id in partial {
                let t = &terms[id as usize];
                let wx = (t.rect.xhi.min(clip.xhi) - t.rect.xlo.max(clip.xlo)).max(0.0);
                let wy = (t.rect.yhi.min(clip.yhi) - t.rect.ylo.max(clip.ylo)).max(0.0);
                if wx > 0.0 && wy > 0.0 {
                    sum.add(t.weight * (wx * wy));
                }
            }
        }
    }
    sum.value()
}

/// The L1 norm. Weights are nonnegative, so it equals the stored mass.
pub fn l1_norm(f: &WeightedRectFn) -> f64 {
    f.mass()
}

/// Mean of f over b.
pub fn box_average(f: &WeightedRectFn, b: &BasicBox) -> f64 {
    integrate(f, b) / b.area()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CondExpError {
    OutsideDomain,
}

impl fmt::Display for CondExpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CondExpError::OutsideDomain => write!(f, "point outside (0,1]^2"),
        }
    }
}

impl Error for CondExpError {}

impl From<LocateError> for CondExpError {
    fn from(_: LocateError) -> Self {
        CondExpError::OutsideDomain
    }
}

/// Conditional expectation of f given the partition, evaluated at p: the
/// average of f over the leaf containing p.
pub fn cond_exp(f: &WeightedRectFn, q: &Partition, p: Point2) -> Result<f64, CondExpError> {
    let leaf = q.leaf(q.locate(p)?);
    Ok(integrate(f, leaf) / leaf.area())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum McError {
    NoSamples,
    EmptyBox,
}

impl fmt::Display for McError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            McError::NoSamples => write!(f, "sample count must be positive"),
            McError::EmptyBox => write!(f, "query box has zero area"),
        }
    }
}

impl Error for McError {}

/// Plain Monte Carlo estimate of the same integral, for use as an
/// independent check on the closed form. Draws land in the half-open box.
pub fn mc_integrate(
    f: &WeightedRectFn,
    b: &BasicBox,
    samples: u64,
    seed: u64,
) -> Result<McEstimate, McError> {
    if samples == 0 {
        return Err(McError::NoSamples);
    }
    let area = b.area();
    if !(area > 0.0) {
        return Err(McError::EmptyBox);
    }
    let mut rng = seeded_stream(seed, streams::MC_ORACLE);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 1..=samples {
        let p = Point2::new(
            b.xlo + unit_open_closed(&mut rng) * b.width(),
            b.ylo + unit_open_closed(&mut rng) * b.height(),
        );
        let v = f.eval(p);
        let delta = v - mean;
        mean += delta / k as f64;
        m2 += delta * (v - mean);
    }
    let variance = if samples > 1 {
        m2 / (samples - 1) as f64
    } else {
        0.0
    };
    Ok(McEstimate {
        value: area * mean,
        std_error: area * (variance / samples as f64).sqrt(),
        samples,
        seed,
    })
}

/// The same integral by a full pass over every term, bypassing the cell
/// index. Oracle for `integrate` and the slow side of the index benchmark.
pub fn integrate_scan(f: &WeightedRectFn, b: &BasicBox) -> f64 {
    let mut sum = NeumaierSum::new();
    for term in f.terms() {
        if let Some(overlap) = term.rect.intersect(b) {
            sum.add(term.weight * overlap.area());
        }
    }
    sum.value()
}

#[derive(Debug, Clone, Copy)]
pub struct IndexBench {
    pub queries: usize,
    pub repeats: u32,
    pub indexed_ns: u128,
    pub scan_ns: u128,
    /// Sums of all computed integrals on each path; they must agree, and
    /// keeping them forces the timed work to happen.
    pub indexed_sum: f64,
    pub scan_sum: f64,
}

impl IndexBench {
    pub fn speedup(&self) -> f64 {
        self.scan_ns as f64 / self.indexed_ns.max(1) as f64
    }
}

/// Time `integrate` against `integrate_scan` over the same query boxes.
/// Both paths are warmed first so neither pays first-touch costs.
pub fn bench_index(f: &WeightedRectFn, queries: &[BasicBox], repeats: u32) -> IndexBench {
    assert!(repeats >= 1, "need at least one timed pass");
    assert!(!queries.is_empty(), "need at least one query box");
    let warm = queries.len().min(8);
    for b in &queries[..warm] {
        std::hint::black_box(integrate(f, b));
        std::hint::black_box(integrate_scan(f, b));
    }
    let start = std::time::Instant::now();
    let mut indexed = NeumaierSum::new();
    for _ in 0..repeats {
        for b in queries {
            indexed.add(std::hint::black_box(integrate(f, b)));
        }
    }
    let indexed_ns = start.elapsed().as_nanos();
    let start = std::time::Instant::now();
    let mut scan = NeumaierSum::new();
    for _ in 0..repeats {
        for b in queries {
            scan.add(std::hint::black_box(integrate_scan(f, b)));
        }
    }
    let scan_ns = start.elapsed().as_nanos();
    IndexBench {
        queries: queries.len(),
        repeats,
        indexed_ns,
        scan_ns,
        indexed_sum: indexed.value(),
        scan_sum: scan.value(),
    }
}
