//! Stage sequences for the sampling experiments: each stage wraps one
//! partition whose leaves isolate the support of the composite (so leaves
//! off the support integrate to exactly zero), carries a family of
//! certified boxes as designated leaves, and names one witness box plus a
//! point inside it where the function vanishes. Thresholds escalate and
//! meshes shrink along the sequence, while box selection greedily spreads
//! the certified boxes across the reference grid so their union grows.
//!
//! Boxes hug the certification hyperbola: at a kernel with sizes (s, c)
//! the corner box (0, a] x (0, b] with a * b = 0.98 c averages at least
//! threshold / 0.98 from the kernel's own blob alone. Sweeping a through
//! a geometric family trades aspect for position, which is what lets
//! later stages claim fresh grid points with the same kernels. A box may
//! not cut through any support piece (that would leak support into the
//! filler leaves), so candidates shrink onto piece edges, or drop out
//! when shrinking would cost the kernel's own blob.

use std::cmp::Reverse;
use std::collections::HashSet;
use std::error::Error;
use std::fmt;

use crate::adversary::cluster::disjoint_cover;
use crate::adversary::composite::Composite;
use crate::boxgeom::{BasicBox, Point2};
use crate::quadsum::integrate;
use crate::rectfn::WeightedRectFn;
use crate::treepart::{build_carved_partition, BuildError, CarveTarget, SplitTree};

#[derive(Clone, Debug)]
pub struct StageTargets {
    /// Stages drawn from each composite level, in level order.
    pub per_level: Vec<usize>,
    /// Per-level cap on boxes per stage; None fills the area budget.
    pub max_boxes: Vec<Option<usize>>,
    /// Total certified box area allowed in one stage.
    pub area_budget: f64,
    /// Side bound for the support cover pieces.
    pub max_piece_side: f64,
    /// Reference grid for the spreading objective.
    pub grid: u32,
}

impl Default for StageTargets {
    fn default() -> Self {
        StageTargets {
            per_level: vec![6, 22, 26],
            max_boxes: vec![Some(1), None, None],
            area_budget: 0.025,
            max_piece_side: 0.045,
            grid: 64,
        }
    }
}

#[derive(Debug)]
pub struct Stage {
    pub level: usize,
    /// Certified average every box in this stage reaches.
    pub threshold: f64,
    /// Diameter bound the stage partition satisfies.
    pub mesh: f64,
    pub tree: SplitTree,
    pub boxes: Vec<BasicBox>,
    /// Exact averages of the composite over each box.
    pub box_averages: Vec<f64>,
    /// Index into `boxes` of the designated witness leaf.
    pub witness: usize,
    /// A point in the witness leaf where the composite vanishes.
    pub witness_point: Point2,
    pub witness_average: f64,
}

#[derive(Debug)]
pub struct StageCatalog {
    pub stages: Vec<Stage>,
    /// Disjoint rectangles tiling the support of the composite.
    pub pieces: Vec<BasicBox>,
    /// Total mass of the composite, i.e. the density normalizer.
    pub mass: f64,
    /// min over levels of gamma / mass; above 1 means the support is
    /// denser than the uniform background everywhere.
    pub density_floor: f64,
    pub grid: u32,
    /// Fraction of off-support grid points claimed by boxes whose average
    /// beats the mass (the ones a density comparison decides upward).
    pub claimed_fraction: f64,
}

#[derive(Debug)]
pub enum StageError {
    BadTargets(&'static str),
    /// No certified box could be selected for this stage.
    NoBoxes { stage: usize },
    /// The witness leaf contains no point where the composite vanishes.
    NoWitnessPoint { stage: usize },
    Carve(BuildError),
    /// Box eviction kept recurring while carving this stage.
    Unstable { stage: usize },
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::BadTargets(what) => write!(f, "invalid stage targets: {}", what),
            StageError::NoBoxes { stage } => {
                write!(f, "stage {} found no certified box to select", stage)
            }
            StageError::NoWitnessPoint { stage } => {
                write!(f, "stage {} has no vanishing point in its witness leaf", stage)
            }
            StageError::Carve(e) => write!(f, "stage partition failed to build: {}", e),
            StageError::Unstable { stage } => {
                write!(f, "stage {} kept evicting boxes while carving", stage)
            }
        }
    }
}

impl Error for StageError {}

/// Uniform bucket index over the support pieces.
struct PieceIndex {
    g: usize,
    cells: Vec<Vec<u32>>,
}

impl PieceIndex {
    fn new(pieces: &[BasicBox]) -> Self {
        let g = 64usize;
        let mut cells = vec![Vec::new(); g * g];
        for (i, p) in pieces.iter().enumerate() {
            let (x0, x1) = Self::axis(p.xlo, p.xhi, g);
            let (y0, y1) = Self::axis(p.ylo, p.yhi, g);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    cells[cy * g + cx].push(i as u32);
                }
            }
        }
        PieceIndex { g, cells }
    }

    fn axis(lo: f64, hi: f64, g: usize) -> (usize, usize) {
        let a = ((lo * g as f64).floor().max(0.0) as usize).min(g - 1);
        let b = ((hi * g as f64).ceil().max(1.0) as usize - 1).min(g - 1);
        (a, b.max(a))
    }

    fn query(&self, rect: &BasicBox, out: &mut Vec<u32>) {
        out.clear();
        let (x0, x1) = Self::axis(rect.xlo, rect.xhi, self.g);
        let (y0, y1) = Self::axis(rect.ylo, rect.yhi, self.g);
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                out.extend_from_slice(&self.cells[cy * self.g + cx]);
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

struct Candidate {
    kernel: usize,
    rect: BasicBox,
    avg: f64,
    area: f64,
}

/// Shrink the corner box onto piece edges until no support piece is cut,
/// then certify its exact average. Shrinking below the kernel's own blob
/// is refused, as is poking outside the unit square.
fn fit_box(
    f: &WeightedRectFn,
    pieces: &[BasicBox],
    index: &PieceIndex,
    scratch: &mut Vec<u32>,
    origin: Point2,
    a: f64,
    b: f64,
    blob_side: f64,
    threshold: f64,
) -> Option<(BasicBox, f64)> {
    let mut xhi = origin.x + a;
    let mut yhi = origin.y + b;
    if xhi > 1.0 || yhi > 1.0 {
        return None;
    }
    for _ in 0..64 {
        let rect = BasicBox::half_open(origin.x, xhi, origin.y, yhi);
        index.query(&rect, scratch);
        let partial = scratch
            .iter()
            .map(|&pi| &pieces[pi as usize])
            .find(|p| p.overlaps_interior(&rect) && !rect.covers(p));
        let Some(p) = partial else {
            let avg = integrate(f, &rect) / rect.area();
            return (avg >= threshold).then_some((rect, avg));
        };
        if p.xlo > origin.x + blob_side {
            xhi = p.xlo;
        } else if p.ylo > origin.y + blob_side {
            yhi = p.ylo;
        } else {
            return None;
        }
    }
    None
}

fn level_candidates(
    c: &Composite,
    level: usize,
    pieces: &[BasicBox],
    index: &PieceIndex,
) -> Vec<Candidate> {
    let b = &c.levels[level].build;
    if b.target.threshold == 0.0 {
        return Vec::new();
    }
    let sz = b.sizing;
    let prod = 0.98 * sz.c;
    let a_min = 1.06 * sz.s;
    let a_max = 0.925 * sz.eta;
    let mut out = Vec::new();
    let mut scratch = Vec::new();
    for (k, pl) in b.placements.iter().enumerate() {
        let mut a = a_min;
        while a <= a_max {
            if let Some((rect, avg)) = fit_box(
                &c.f,
                pieces,
                index,
                &mut scratch,
                pl.origin,
                a,
                prod / a,
                sz.s,
                b.target.threshold,
            ) {
                out.push(Candidate {
                    kernel: k,
                    rect,
                    avg,
                    area: rect.area(),
                });
            }
            a *= 1.25;
        }
    }
    out
}

/// Grid points (i/g, j/g), i, j in 1..=g, lying in the rectangle.
fn grid_points_in(rect: &BasicBox, g: usize, mut visit: impl FnMut(usize, usize, Point2)) {
    let gf = g as f64;
    let i_min = ((rect.xlo * gf).floor() as isize + 1).max(1) as usize;
    let i_max = ((rect.xhi * gf).floor() as isize).min(g as isize).max(0) as usize;
    let j_min = ((rect.ylo * gf).floor() as isize + 1).max(1) as usize;
    let j_max = ((rect.yhi * gf).floor() as isize).min(g as isize).max(0) as usize;
    for j in j_min..=j_max {
        for i in i_min..=i_max {
            let p = Point2::new(i as f64 / gf, j as f64 / gf);
            if rect.contains(p) {
                visit(i, j, p);
            }
        }
    }
}

/// Fractions scanned for a vanishing point before falling back to a
/// lattice sweep; chosen to dodge the corner blob quickly.
const POINT_SCAN: [(f64, f64); 7] = [
    (0.78, 0.78),
    (0.9, 0.62),
    (0.62, 0.9),
    (0.85, 0.85),
    (0.95, 0.45),
    (0.45, 0.95),
    (0.7, 0.7),
];

fn vanishing_point(f: &WeightedRectFn, rect: &BasicBox) -> Option<Point2> {
    let probe = |tx: f64, ty: f64| {
        Point2::new(
            rect.xlo + tx * rect.width(),
            rect.ylo + ty * rect.height(),
        )
    };
    for (tx, ty) in POINT_SCAN {
        let p = probe(tx, ty);
        if rect.contains(p) && f.eval(p) == 0.0 {
            return Some(p);
        }
    }
    for j in 1..32usize {
        for i in 1..32usize {
            let p = probe(i as f64 / 32.5, j as f64 / 32.5);
            if rect.contains(p) && f.eval(p) == 0.0 {
                return Some(p);
            }
        }
    }
    None
}

pub fn build_stage_catalog(
    c: &Composite,
    targets: &StageTargets,
) -> Result<StageCatalog, StageError> {
    if targets.per_level.len() != c.levels.len() {
        return Err(StageError::BadTargets(
            "per_level must name one stage count per composite level",
        ));
    }
    if targets.max_boxes.len() != c.levels.len() {
        return Err(StageError::BadTargets(
            "max_boxes must name one cap per composite level",
        ));
    }
    if !(targets.area_budget > 0.0 && targets.area_budget.is_finite()) {
        return Err(StageError::BadTargets("area budget must be positive"));
    }
    if !(targets.max_piece_side > 0.0 && targets.max_piece_side.is_finite()) {
        return Err(StageError::BadTargets("piece side must be positive"));
    }
    if targets.grid < 2 {
        return Err(StageError::BadTargets("grid must be at least 2"));
    }

    let mass = c.f.mass();
    let blobs: Vec<BasicBox> = c.f.terms().iter().map(|t| t.rect).collect();
    let pieces = disjoint_cover(&blobs, targets.max_piece_side);
    let index = PieceIndex::new(&pieces);
    let density_floor = c
        .levels
        .iter()
        .filter(|lv| lv.build.target.threshold > 0.0)
        .map(|lv| lv.build.sizing.gamma / mass)
        .fold(f64::INFINITY, f64::min);

    let candidates: Vec<Vec<Candidate>> = (0..c.levels.len())
        .map(|lv| level_candidates(c, lv, &pieces, &index))
        .collect();

    let g = targets.grid as usize;
    let gf = g as f64;
    let mut claimed = vec![false; (g + 1) * (g + 1)];
    let mut off_support = 0usize;
    for j in 1..=g {
        for i in 1..=g {
            let p = Point2::new(i as f64 / gf, j as f64 / gf);
            if c.f.eval(p) < mass {
                off_support += 1;
            }
        }
    }

    let mut stages = Vec::new();
    let mut used_kernels: Vec<HashSet<usize>> = vec![HashSet::new(); c.levels.len()];
    for (lv, &count) in targets.per_level.iter().enumerate() {
        let mesh = c.levels[lv].build.target.mesh;
        let threshold = c.levels[lv].build.target.threshold;
        for _ in 0..count {
            let stage_idx = stages.len();
            let cands = &candidates[lv];
            if cands.is_empty() {
                return Err(StageError::NoBoxes { stage: stage_idx });
            }

            let mut value = vec![0usize; cands.len()];
            for (ci, cand) in cands.iter().enumerate() {
                let mut v = 0usize;
                grid_points_in(&cand.rect, g, |i, j, p| {
                    if !claimed[j * (g + 1) + i] && c.f.eval(p) < mass {
                        v += 1;
                    }
                });
                value[ci] = v;
            }
            let mut order: Vec<usize> = (0..cands.len()).collect();
            order.sort_by_key(|&ci| {
                (
                    Reverse(value[ci]),
                    used_kernels[lv].contains(&cands[ci].kernel),
                    cands[ci].kernel,
                    ci,
                )
            });

            // One box per kernel per stage, pairwise disjoint, inside the
            // area budget.
            let cap = targets.max_boxes[lv].unwrap_or(usize::MAX);
            let mut chosen: Vec<usize> = Vec::new();
            let mut area_sum = 0.0;
            let mut stage_kernels = HashSet::new();
            for &ci in &order {
                if chosen.len() >= cap {
                    break;
                }
                let cand = &cands[ci];
                if stage_kernels.contains(&cand.kernel) {
                    continue;
                }
                if area_sum + cand.area > targets.area_budget {
                    continue;
                }
                if chosen
                    .iter()
                    .any(|&cj| cands[cj].rect.overlaps_interior(&cand.rect))
                {
                    continue;
                }
                chosen.push(ci);
                stage_kernels.insert(cand.kernel);
                area_sum += cand.area;
            }

            // Carve; if any box gets evicted, drop it and re-carve, since
            // pieces it had absorbed must come back as targets.
            let mut built = None;
            for _attempt in 0..4 {
                if chosen.is_empty() {
                    return Err(StageError::NoBoxes { stage: stage_idx });
                }
                let mut carve: Vec<CarveTarget> = chosen
                    .iter()
                    .map(|&ci| CarveTarget {
                        rect: cands[ci].rect,
                        splittable: false,
                    })
                    .collect();
                for p in &pieces {
                    if !chosen.iter().any(|&ci| cands[ci].rect.covers(p)) {
                        carve.push(CarveTarget {
                            rect: *p,
                            splittable: true,
                        });
                    }
                }
                let out = build_carved_partition(&carve, Some(mesh))
                    .map_err(StageError::Carve)?;
                if out.evicted.is_empty() {
                    built = Some(out);
                    break;
                }
                let evicted: HashSet<usize> = out.evicted.into_iter().collect();
                chosen = chosen
                    .iter()
                    .enumerate()
                    .filter(|(pos, _)| !evicted.contains(pos))
                    .map(|(_, &ci)| ci)
                    .collect();
            }
            let Some(built) = built else {
                return Err(StageError::Unstable { stage: stage_idx });
            };

            for &ci in &chosen {
                used_kernels[lv].insert(cands[ci].kernel);
                if cands[ci].avg > mass {
                    grid_points_in(&cands[ci].rect, g, |i, j, p| {
                        if c.f.eval(p) < mass {
                            claimed[j * (g + 1) + i] = true;
                        }
                    });
                }
            }

            let witness_pos = chosen
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| cands[a].area.total_cmp(&cands[b].area))
                .map(|(pos, _)| pos)
                .unwrap();
            let witness_rect = cands[chosen[witness_pos]].rect;
            let witness_point = vanishing_point(&c.f, &witness_rect)
                .ok_or(StageError::NoWitnessPoint { stage: stage_idx })?;

            stages.push(Stage {
                level: lv,
                threshold,
                mesh,
                tree: built.tree,
                boxes: chosen.iter().map(|&ci| cands[ci].rect).collect(),
                box_averages: chosen.iter().map(|&ci| cands[ci].avg).collect(),
                witness: witness_pos,
                witness_point,
                witness_average: cands[chosen[witness_pos]].avg,
            });
        }
    }

    let claimed_count = claimed.iter().filter(|&&x| x).count();
    Ok(StageCatalog {
        stages,
        pieces,
        mass,
        density_floor,
        grid: targets.grid,
        claimed_fraction: claimed_count as f64 / off_support.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::composite::build_composite;
    use crate::adversary::lemma21::Lemma21Target;

    fn quick_composite() -> Composite {
        // Unit budgets keep the exponents around 1-2, so the blobs are
        // small enough to carry a certified box family.
        let base = Lemma21Target {
            epsilon: 1.0,
            threshold: 1.0,
            mesh: 0.3,
            coverage: 0.6,
            margin: 1.0 / 16.0,
            grid: 16,
        };
        let ts = [
            base,
            Lemma21Target {
                threshold: 2.0,
                mesh: 0.25,
                ..base
            },
        ];
        build_composite(&ts, 17).unwrap()
    }

    fn quick_targets() -> StageTargets {
        StageTargets {
            per_level: vec![2, 2],
            max_boxes: vec![Some(1), None],
            area_budget: 0.05,
            max_piece_side: 0.045,
            grid: 16,
        }
    }

    #[test]
    fn rejects_mismatched_targets() {
        let c = quick_composite();
        let mut t = quick_targets();
        t.per_level = vec![2];
        assert!(matches!(
            build_stage_catalog(&c, &t),
            Err(StageError::BadTargets(_))
        ));
        let mut t = quick_targets();
        t.area_budget = 0.0;
        assert!(matches!(
            build_stage_catalog(&c, &t),
            Err(StageError::BadTargets(_))
        ));
    }

    #[test]
    fn stages_certify_isolate_and_escalate() {
        let c = quick_composite();
        let cat = build_stage_catalog(&c, &quick_targets()).unwrap();
        assert_eq!(cat.stages.len(), 4);
        assert!(cat.mass > 0.0);
        assert!(cat.claimed_fraction >= 0.0 && cat.claimed_fraction <= 1.0);

        for p in &cat.pieces {
            assert!(p.area() > 0.0);
        }
        for (i, a) in cat.pieces.iter().enumerate() {
            for b in cat.pieces.iter().skip(i + 1) {
                assert!(!a.overlaps_interior(b));
            }
        }

        let mut last_threshold = 0.0;
        let mut last_mesh = f64::INFINITY;
        for st in &cat.stages {
            assert!(st.threshold >= last_threshold);
            assert!(st.mesh <= last_mesh);
            last_threshold = st.threshold;
            last_mesh = st.mesh;

            assert!(st.tree.validate().passed());
            let q = st.tree.leaves().unwrap();
            assert!(q.norm() < st.mesh);

            let budget: f64 = st.boxes.iter().map(|b| b.area()).sum();
            assert!(budget <= 0.05 + 1e-12);
            for (i, a) in st.boxes.iter().enumerate() {
                for b in st.boxes.iter().skip(i + 1) {
                    assert!(!a.overlaps_interior(b));
                }
            }

            for (b, &avg) in st.boxes.iter().zip(&st.box_averages) {
                assert!(avg >= st.threshold);
                assert!(q.leaves().iter().any(|l| l == b));
                let again = integrate(&c.f, b) / b.area();
                assert_eq!(again, avg);
            }

            let wb = &st.boxes[st.witness];
            assert!(wb.contains(st.witness_point));
            assert_eq!(c.f.eval(st.witness_point), 0.0);
            assert_eq!(st.witness_average, st.box_averages[st.witness]);

            // Leaves carrying any mass are certified boxes or lie inside
            // the support cover.
            for leaf in q.leaves() {
                let v = integrate(&c.f, leaf);
                if v != 0.0 && !st.boxes.iter().any(|b| b == leaf) {
                    assert!(
                        cat.pieces.iter().any(|p| p.covers(leaf)),
                        "leaf {:?} carries mass outside boxes and support",
                        leaf
                    );
                }
            }
        }

        // The two single-box stages pick distinct kernels.
        assert!(cat.stages[0].boxes[0] != cat.stages[1].boxes[0]);
    }

    #[test]
    fn stage_count_zero_for_a_level_is_allowed() {
        let c = quick_composite();
        let mut t = quick_targets();
        t.per_level = vec![0, 1];
        let cat = build_stage_catalog(&c, &t).unwrap();
        assert_eq!(cat.stages.len(), 1);
        assert_eq!(cat.stages[0].level, 1);
    }
}
