//! Exact disjoint rectangle decomposition of a union of boxes.
//!
//! The decomposition is a vertical-slab sweep: x-slabs between consecutive
//! rectangle edges, maximal y-runs of the active rectangles within each
//! slab. Every edge coordinate is reused verbatim, so the union of the
//! pieces equals the input union exactly as a set of points, not just in
//! measure. Tall runs are chopped so pieces stay usable as leaf-sized
//! carve targets.

use crate::boxgeom::BasicBox;

/// Disjoint half-open pieces tiling the union of `rects` exactly.
/// Runs taller than `max_side` are split into equal parts.
pub fn disjoint_cover(rects: &[BasicBox], max_side: f64) -> Vec<BasicBox> {
    assert!(max_side > 0.0);
    let mut xs: Vec<f64> = Vec::with_capacity(rects.len() * 2);
    for r in rects {
        if r.area() > 0.0 {
            xs.push(r.xlo);
            xs.push(r.xhi);
        }
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();

    let mut pieces = Vec::new();
    let mut spans: Vec<(f64, f64)> = Vec::new();
    for w in xs.windows(2) {
        let (xlo, xhi) = (w[0], w[1]);
        // Rectangle edges bound every slab, so an active rectangle spans
        // the whole slab.
        spans.clear();
        for r in rects {
            if r.area() > 0.0 && r.xlo <= xlo && r.xhi >= xhi {
                spans.push((r.ylo, r.yhi));
            }
        }
        if spans.is_empty() {
            continue;
        }
        spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (mut lo, mut hi) = spans[0];
        let mut runs: Vec<(f64, f64)> = Vec::new();
        for &(a, b) in &spans[1..] {
            if a <= hi {
                hi = hi.max(b);
            } else {
                runs.push((lo, hi));
                lo = a;
                hi = b;
            }
        }
        runs.push((lo, hi));
        for (ylo, yhi) in runs {
            let parts = ((yhi - ylo) / max_side).ceil().max(1.0) as usize;
            let step = (yhi - ylo) / parts as f64;
            let mut edge = ylo;
            for i in 0..parts {
                let next = if i + 1 == parts { yhi } else { ylo + step * (i + 1) as f64 };
                if next > edge {
                    pieces.push(BasicBox::half_open(xlo, xhi, edge, next));
                }
                edge = next;
            }
        }
    }
    pieces
}

/// Total area of a disjoint family; exact for `disjoint_cover` output.
pub fn union_area(pieces: &[BasicBox]) -> f64 {
    let mut acc = crate::util::NeumaierSum::new();
    for p in pieces {
        acc.add(p.area());
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxgeom::Point2;
    use crate::util::{seeded_stream, streams};
    use rand::Rng;

    fn covered(rects: &[BasicBox], p: Point2) -> bool {
        rects.iter().any(|r| r.contains(p))
    }

    #[test]
    fn two_overlapping_squares() {
        let a = BasicBox::half_open(0.1, 0.3, 0.1, 0.3);
        let b = BasicBox::half_open(0.2, 0.4, 0.2, 0.4);
        let pieces = disjoint_cover(&[a, b], 1.0);
        // Inclusion-exclusion: 0.04 + 0.04 - 0.01.
        assert!((union_area(&pieces) - 0.07).abs() < 1e-15);
        for (i, p) in pieces.iter().enumerate() {
            for q in &pieces[i + 1..] {
                assert!(!p.overlaps_interior(q));
            }
        }
    }

    #[test]
    fn disjoint_inputs_pass_through_area() {
        let a = BasicBox::half_open(0.0, 0.25, 0.0, 0.25);
        let b = BasicBox::half_open(0.5, 0.75, 0.5, 0.75);
        let pieces = disjoint_cover(&[a, b], 1.0);
        assert!((union_area(&pieces) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn membership_matches_input_union() {
        let mut rng = seeded_stream(5, streams::MC_ORACLE);
        for _ in 0..20 {
            let rects: Vec<BasicBox> = (0..30)
                .map(|_| {
                    let x = rng.gen::<f64>() * 0.9;
                    let y = rng.gen::<f64>() * 0.9;
                    let w = 0.01 + rng.gen::<f64>() * 0.08;
                    let h = 0.01 + rng.gen::<f64>() * 0.08;
                    BasicBox::half_open(x, (x + w).min(1.0), y, (y + h).min(1.0))
                })
                .collect();
            let pieces = disjoint_cover(&rects, 0.05);
            for (i, p) in pieces.iter().enumerate() {
                assert!(p.height() <= 0.05 + 1e-12);
                for q in &pieces[i + 1..] {
                    assert!(!p.overlaps_interior(q));
                }
            }
            for _ in 0..500 {
                let p = Point2::new(rng.gen::<f64>(), rng.gen::<f64>());
                assert_eq!(covered(&rects, p), covered(&pieces, p));
            }
        }
    }

    #[test]
    fn stacked_rectangles_merge_and_chop() {
        // Three abutting intervals form one run, chopped into equal parts.
        let cols: Vec<BasicBox> = (0..3)
            .map(|i| BasicBox::half_open(0.4, 0.42, 0.1 * i as f64, 0.1 * (i + 1) as f64))
            .collect();
        let pieces = disjoint_cover(&cols, 0.08);
        assert!((union_area(&pieces) - 0.02 * 0.3).abs() < 1e-15);
        assert_eq!(pieces.len(), 4); // ceil(0.3 / 0.08)
        assert!(pieces.iter().all(|p| p.height() <= 0.08 + 1e-12));
    }
}
