//! Rooted binary trees of axis-parallel splits and their leaf partitions.
//!
//! A tree node either has a split (axis + threshold) and two children, or is
//! terminal. Leaves are canonical half-open boxes, so a split at t sends
//! points with coordinate <= t left and > t right, and the leaf partition
//! tiles (0,1]^2 exactly with no tolerance games.

use std::error::Error;
use std::fmt;
use std::io::{self, BufRead, Write};

use crate::boxgeom::{BasicBox, Point2};
use crate::hexfloat::{format_hex, parse_hex};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    fn letter(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub axis: Axis,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeNode {
    pub id: u32,
    pub split: Option<Split>,
    pub left: Option<u32>,
    pub right: Option<u32>,
}

/// Nodes are kept sorted by id; ids strictly increase from parent to child.
#[derive(Clone, Debug)]
pub struct SplitTree {
    pub nodes: Vec<TreeNode>,
    pub root: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeError {
    Empty,
    DuplicateId(u32),
    UnknownChild { parent: u32, child: u32 },
    ChildIdNotIncreasing { parent: u32, child: u32 },
    HalfSplit { node: u32 },
    MultipleParents { child: u32 },
    NoRoot,
    MultipleRoots { first: u32, second: u32 },
    Unreachable { node: u32 },
    ThresholdOutsideBox { node: u32, threshold: f64 },
    NonFiniteThreshold { node: u32 },
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::Empty => write!(f, "tree has no nodes"),
            TreeError::DuplicateId(id) => write!(f, "duplicate node id {}", id),
            TreeError::UnknownChild { parent, child } => {
                write!(f, "node {} references missing child {}", parent, child)
            }
            TreeError::ChildIdNotIncreasing { parent, child } => write!(
                f,
                "ids must strictly increase: node {} has child {}",
                parent, child
            ),
            TreeError::HalfSplit { node } => write!(
                f,
                "node {} must have a split with both children or neither",
                node
            ),
            TreeError::MultipleParents { child } => {
                write!(f, "node {} has more than one parent", child)
            }
            TreeError::NoRoot => write!(f, "no root: every node is somebody's child"),
            TreeError::MultipleRoots { first, second } => {
                write!(f, "multiple roots: {} and {}", first, second)
            }
            TreeError::Unreachable { node } => write!(f, "node {} unreachable from root", node),
            TreeError::ThresholdOutsideBox { node, threshold } => write!(
                f,
                "node {} threshold {} not strictly inside its box extent",
                node, threshold
            ),
            TreeError::NonFiniteThreshold { node } => {
                write!(f, "node {} has a non-finite threshold", node)
            }
        }
    }
}

impl Error for TreeError {}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub failures: Vec<TreeError>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Flat node layout used by Partition::locate. `axis` 2 marks a terminal
/// node whose `left` field is the leaf index.
#[derive(Clone, Copy, Debug)]
struct FlatNode {
    threshold: f64,
    left: u32,
    right: u32,
    axis: u8,
}

#[derive(Clone, Debug)]
pub struct Partition {
    pub source: u64,
    leaves: Vec<BasicBox>,
    flat: Vec<FlatNode>,
    flat_root: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocateError {
    OutsideDomain,
}

impl fmt::Display for LocateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocateError::OutsideDomain => write!(f, "point outside (0,1]^2"),
        }
    }
}

impl Error for LocateError {}

impl SplitTree {
    pub fn node(&self, id: u32) -> Option<&TreeNode> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    /// Check every structural invariant; failures are collected, not thrown.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.nodes.is_empty() {
            report.failures.push(TreeError::Empty);
            return report;
        }
        for w in self.nodes.windows(2) {
            if w[0].id >= w[1].id {
                report.failures.push(TreeError::DuplicateId(w[1].id));
            }
        }
        let mut parent_count = vec![0u8; self.nodes.len()];
        for n in &self.nodes {
            match (n.split, n.left, n.right) {
                (Some(_), Some(_), Some(_)) | (None, None, None) => {}
                _ => report.failures.push(TreeError::HalfSplit { node: n.id }),
            }
            for child in [n.left, n.right].into_iter().flatten() {
                if child <= n.id {
                    report
                        .failures
                        .push(TreeError::ChildIdNotIncreasing {
                            parent: n.id,
                            child,
                        });
                }
                match self.nodes.binary_search_by_key(&child, |m| m.id) {
                    Ok(ci) => {
                        parent_count[ci] += 1;
                        if parent_count[ci] > 1 {
                            report.failures.push(TreeError::MultipleParents { child });
                        }
                    }
                    Err(_) => report.failures.push(TreeError::UnknownChild {
                        parent: n.id,
                        child,
                    }),
                }
            }
        }
        match self.nodes.binary_search_by_key(&self.root, |n| n.id) {
            Ok(ri) => {
                if parent_count[ri] != 0 {
                    report.failures.push(TreeError::MultipleParents { child: self.root });
                }
            }
            Err(_) => report.failures.push(TreeError::NoRoot),
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != self.root && parent_count[i] == 0 {
                report.failures.push(TreeError::Unreachable { node: n.id });
            }
        }
        // Threshold placement needs the geometry; reuse the leaf walk and
        // absorb its first error if the structure allowed a walk at all.
        if report.passed() {
            if let Err(e) = self.leaves() {
                report.failures.push(e);
            }
        }
        report
    }

    /// Derive the leaf partition by intersecting split half-planes from the
    /// root down. Fails on any structural or threshold violation.
    pub fn leaves(&self) -> Result<Partition, TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Empty);
        }
        let mut leaves = Vec::new();
        let mut flat = Vec::with_capacity(self.nodes.len());
        let flat_root = self.walk(self.root, BasicBox::unit(), &mut leaves, &mut flat, 0)?;
        Ok(Partition {
            source: 0,
            leaves,
            flat,
            flat_root,
        })
    }

    fn walk(
        &self,
        id: u32,
        region: BasicBox,
        leaves: &mut Vec<BasicBox>,
        flat: &mut Vec<FlatNode>,
        depth: u32,
    ) -> Result<u32, TreeError> {
        if depth > 4096 {
            return Err(TreeError::Unreachable { node: id }); // cycle guard
        }
        let n = self.node(id).ok_or(TreeError::UnknownChild {
            parent: id,
            child: id,
        })?;
        let slot = flat.len() as u32;
        flat.push(FlatNode {
            threshold: 0.0,
            left: 0,
            right: 0,
            axis: 2,
        });
        match (n.split, n.left, n.right) {
            (None, None, None) => {
                flat[slot as usize].left = leaves.len() as u32;
                leaves.push(region);
                Ok(slot)
            }
            (Some(split), Some(l), Some(r)) => {
                if l <= id || r <= id {
                    return Err(TreeError::ChildIdNotIncreasing {
                        parent: id,
                        child: l.min(r),
                    });
                }
                if !split.threshold.is_finite() {
                    return Err(TreeError::NonFiniteThreshold { node: id });
                }
                let (lo, hi) = match split.axis {
                    Axis::X => (region.xlo, region.xhi),
                    Axis::Y => (region.ylo, region.yhi),
                };
                if !(split.threshold > lo && split.threshold < hi) {
                    return Err(TreeError::ThresholdOutsideBox {
                        node: id,
                        threshold: split.threshold,
                    });
                }
                let (left_region, right_region) = match split.axis {
                    Axis::X => (
                        BasicBox::half_open(region.xlo, split.threshold, region.ylo, region.yhi),
                        BasicBox::half_open(split.threshold, region.xhi, region.ylo, region.yhi),
                    ),
                    Axis::Y => (
                        BasicBox::half_open(region.xlo, region.xhi, region.ylo, split.threshold),
                        BasicBox::half_open(region.xlo, region.xhi, split.threshold, region.yhi),
                    ),
                };
                let li = self.walk(l, left_region, leaves, flat, depth + 1)?;
                let ri = self.walk(r, right_region, leaves, flat, depth + 1)?;
                flat[slot as usize] = FlatNode {
                    threshold: split.threshold,
                    left: li,
                    right: ri,
                    axis: match split.axis {
                        Axis::X => 0,
                        Axis::Y => 1,
                    },
                };
                Ok(slot)
            }
            _ => Err(TreeError::HalfSplit { node: id }),
        }
    }
}

impl Partition {
    pub fn leaves(&self) -> &[BasicBox] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaf(&self, i: usize) -> &BasicBox {
        &self.leaves[i]
    }

    /// Index of the unique leaf containing p under the half-open convention.
    pub fn locate(&self, p: Point2) -> Result<usize, LocateError> {
        if !(p.x > 0.0 && p.x <= 1.0 && p.y > 0.0 && p.y <= 1.0) {
            return Err(LocateError::OutsideDomain);
        }
        let mut at = self.flat_root as usize;
        loop {
            let n = self.flat[at];
            match n.axis {
                0 => at = if p.x <= n.threshold { n.left } else { n.right } as usize,
                1 => at = if p.y <= n.threshold { n.left } else { n.right } as usize,
                _ => return Ok(n.left as usize),
            }
        }
    }

    /// Maximum leaf diameter (the partition's mesh).
    pub fn norm(&self) -> f64 {
        self.leaves
            .iter()
            .map(|b| b.diameter())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Construction: carve out designated boxes, then refine to a mesh.

#[derive(Clone, Copy, Debug)]
pub struct CarveTarget {
    pub rect: BasicBox,
    /// Splittable targets may be cut through (each side stays a target);
    /// unsplittable ones are evicted instead when a chosen cut stabs them.
    pub splittable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuildError {
    DegenerateTarget,
    TargetOutsideDomain,
    BadMesh,
    OverlappingRigidTargets { a: usize, b: usize },
}

impl fmt::Display for BuildError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildError::DegenerateTarget => write!(f, "target box has empty interior"),
            BuildError::TargetOutsideDomain => write!(f, "target box must lie inside (0,1]^2"),
            BuildError::BadMesh => write!(f, "mesh must be positive and at most sqrt(2)"),
            BuildError::OverlappingRigidTargets { a, b } => {
                write!(f, "unsplittable targets {} and {} overlap", a, b)
            }
        }
    }
}

impl Error for BuildError {}

#[derive(Debug)]
pub struct CarvedBuild {
    pub tree: SplitTree,
    /// Indices of unsplittable targets that could not be kept as leaves.
    pub evicted: Vec<usize>,
    pub target_exceeds_mesh: bool,
}

struct Carver {
    nodes: Vec<TreeNode>,
    mesh: Option<f64>,
    evicted: Vec<usize>,
}

#[derive(Clone, Copy)]
struct Active {
    rect: BasicBox,
    splittable: bool,
    origin: usize, // index into the caller's target list
}

impl Carver {
    fn fresh(&mut self) -> u32 {
        let id = self.nodes.len() as u32 + 1;
        self.nodes.push(TreeNode {
            id,
            split: None,
            left: None,
            right: None,
        });
        id
    }

    fn set_split(&mut self, id: u32, axis: Axis, threshold: f64, left: u32, right: u32) {
        let n = &mut self.nodes[(id - 1) as usize];
        n.split = Some(Split { axis, threshold });
        n.left = Some(left);
        n.right = Some(right);
    }

    /// Split `region` at threshold on axis; returns (node_id, left, right).
    fn cut(&mut self, id: u32, region: BasicBox, axis: Axis, t: f64) -> (BasicBox, u32, BasicBox, u32) {
        let (a, b) = match axis {
            Axis::X => (
                BasicBox::half_open(region.xlo, t, region.ylo, region.yhi),
                BasicBox::half_open(t, region.xhi, region.ylo, region.yhi),
            ),
            Axis::Y => (
                BasicBox::half_open(region.xlo, region.xhi, region.ylo, t),
                BasicBox::half_open(region.xlo, region.xhi, t, region.yhi),
            ),
        };
        let l = self.fresh();
        let r = self.fresh();
        self.set_split(id, axis, t, l, r);
        (a, l, b, r)
    }

    fn refine(&mut self, id: u32, region: BasicBox) {
        if let Some(mesh) = self.mesh {
            if region.diameter() >= mesh {
                let (axis, t) = if region.width() >= region.height() {
                    (Axis::X, region.xlo + region.width() / 2.0)
                } else {
                    (Axis::Y, region.ylo + region.height() / 2.0)
                };
                // Guard against zero-width pathologies from rounding.
                if t > match axis {
                    Axis::X => region.xlo,
                    Axis::Y => region.ylo,
                } && t < match axis {
                    Axis::X => region.xhi,
                    Axis::Y => region.yhi,
                } {
                    let (a, l, b, r) = self.cut(id, region, axis, t);
                    self.refine(l, a);
                    self.refine(r, b);
                }
            }
        }
    }

    fn carve(&mut self, id: u32, region: BasicBox, mut targets: Vec<Active>) {
        if targets.is_empty() {
            self.refine(id, region);
            return;
        }
        if targets.len() == 1 {
            let t = targets[0];
            // Peel one differing edge at a time; at most four cuts.
            if t.rect.xlo > region.xlo {
                let (a, l, b, r) = self.cut(id, region, Axis::X, t.rect.xlo);
                self.refine(l, a);
                self.carve(r, b, targets);
            } else if t.rect.xhi < region.xhi {
                let (a, l, b, r) = self.cut(id, region, Axis::X, t.rect.xhi);
                self.carve(l, a, targets);
                self.refine(r, b);
            } else if t.rect.ylo > region.ylo {
                let (a, l, b, r) = self.cut(id, region, Axis::Y, t.rect.ylo);
                self.refine(l, a);
                self.carve(r, b, targets);
            } else if t.rect.yhi < region.yhi {
                let (a, l, b, r) = self.cut(id, region, Axis::Y, t.rect.yhi);
                self.carve(l, a, targets);
                self.refine(r, b);
            }
            // Region equals the target: leave it terminal.
            return;
        }

        let choice = best_cut(&region, &targets);
        let (axis, t) = match choice {
            Some(c) => c,
            None => {
                // No admissible cut; should not happen with disjoint rigid
                // targets, but fail soft: evict everything unsplittable.
                for tg in &targets {
                    if !tg.splittable {
                        self.evicted.push(tg.origin);
                    }
                }
                self.refine(id, region);
                return;
            }
        };

        let mut left = Vec::new();
        let mut right = Vec::new();
        for tg in targets.drain(..) {
            let (lo, hi) = match axis {
                Axis::X => (tg.rect.xlo, tg.rect.xhi),
                Axis::Y => (tg.rect.ylo, tg.rect.yhi),
            };
            if hi <= t {
                left.push(tg);
            } else if lo >= t {
                right.push(tg);
            } else if tg.splittable {
                let (ra, rb) = match axis {
                    Axis::X => (
                        BasicBox::half_open(tg.rect.xlo, t, tg.rect.ylo, tg.rect.yhi),
                        BasicBox::half_open(t, tg.rect.xhi, tg.rect.ylo, tg.rect.yhi),
                    ),
                    Axis::Y => (
                        BasicBox::half_open(tg.rect.xlo, tg.rect.xhi, tg.rect.ylo, t),
                        BasicBox::half_open(tg.rect.xlo, tg.rect.xhi, t, tg.rect.yhi),
                    ),
                };
                left.push(Active { rect: ra, ..tg });
                right.push(Active { rect: rb, ..tg });
            } else {
                self.evicted.push(tg.origin);
            }
        }
        let (a, l, b, r) = self.cut(id, region, axis, t);
        self.carve(l, a, left);
        self.carve(r, b, right);
    }
}

/// Pick the cut that stabs the fewest unsplittable targets, breaking ties by
/// how evenly it separates the remaining ones. Returns None when no target
/// edge lies strictly inside the region.
fn best_cut(region: &BasicBox, targets: &[Active]) -> Option<(Axis, f64)> {
    let mut best: Option<((Axis, f64), (usize, usize))> = None;
    for axis in [Axis::X, Axis::Y] {
        let (rlo, rhi) = match axis {
            Axis::X => (region.xlo, region.xhi),
            Axis::Y => (region.ylo, region.yhi),
        };
        let mut los: Vec<f64> = Vec::with_capacity(targets.len());
        let mut his: Vec<f64> = Vec::with_capacity(targets.len());
        let mut rigid_los: Vec<f64> = Vec::new();
        let mut rigid_his: Vec<f64> = Vec::new();
        for tg in targets {
            let (lo, hi) = match axis {
                Axis::X => (tg.rect.xlo, tg.rect.xhi),
                Axis::Y => (tg.rect.ylo, tg.rect.yhi),
            };
            los.push(lo);
            his.push(hi);
            if !tg.splittable {
                rigid_los.push(lo);
                rigid_his.push(hi);
            }
        }
        los.sort_unstable_by(f64::total_cmp);
        his.sort_unstable_by(f64::total_cmp);
        rigid_los.sort_unstable_by(f64::total_cmp);
        rigid_his.sort_unstable_by(f64::total_cmp);

        let mut candidates: Vec<f64> = los.iter().chain(his.iter()).copied().collect();
        candidates.sort_unstable_by(f64::total_cmp);
        candidates.dedup();
        for &t in &candidates {
            if !(t > rlo && t < rhi) {
                continue;
            }
            // #stabbed = #(lo < t) - #(hi <= t)
            let lo_lt = lower_bound(&los, t);
            let hi_le = upper_bound(&his, t);
            let rigid_stab = lower_bound(&rigid_los, t) - upper_bound(&rigid_his, t);
            let left_count = hi_le;
            let right_count = targets.len() - lo_lt;
            let balance = left_count.max(right_count);
            let key = ((axis, t), (rigid_stab, balance));
            match &best {
                None => best = Some(key),
                Some((_, (bs, bb))) => {
                    if rigid_stab < *bs || (rigid_stab == *bs && balance < *bb) {
                        best = Some(key);
                    }
                }
            }
        }
    }
    best.map(|(c, _)| c)
}

fn lower_bound(xs: &[f64], t: f64) -> usize {
    xs.partition_point(|&x| x < t)
}

fn upper_bound(xs: &[f64], t: f64) -> usize {
    xs.partition_point(|&x| x <= t)
}

/// Carve every target out as a leaf (evicting unsplittable ones a chosen cut
/// would stab), then dyadically refine all other leaves below `mesh`.
pub fn build_carved_partition(
    targets: &[CarveTarget],
    mesh: Option<f64>,
) -> Result<CarvedBuild, BuildError> {
    if let Some(m) = mesh {
        if !(m > 0.0 && m.is_finite()) {
            return Err(BuildError::BadMesh);
        }
    }
    let domain = BasicBox::unit();
    for t in targets {
        if t.rect.area() <= 0.0 {
            return Err(BuildError::DegenerateTarget);
        }
        if !domain.covers(&t.rect) {
            return Err(BuildError::TargetOutsideDomain);
        }
    }
    let mut carver = Carver {
        nodes: Vec::new(),
        mesh,
        evicted: Vec::new(),
    };
    let root = carver.fresh();
    let active: Vec<Active> = targets
        .iter()
        .enumerate()
        .map(|(i, t)| Active {
            rect: t.rect,
            splittable: t.splittable,
            origin: i,
        })
        .collect();
    carver.carve(root, domain, active);
    carver.evicted.sort_unstable();
    carver.evicted.dedup();
    let target_exceeds_mesh = match mesh {
        Some(m) => targets
            .iter()
            .enumerate()
            .any(|(i, t)| !carver.evicted.contains(&i) && t.rect.diameter() >= m),
        None => false,
    };
    Ok(CarvedBuild {
        tree: SplitTree {
            nodes: carver.nodes,
            root,
        },
        evicted: carver.evicted,
        target_exceeds_mesh,
    })
}

#[derive(Debug)]
pub struct EnclosingBuild {
    pub tree: SplitTree,
    pub target_exceeds_mesh: bool,
}

/// A fine partition with `target` as one leaf exactly and all other leaves
/// of diameter < mesh. When the target itself is wider than the mesh the
/// build still succeeds and says so.
pub fn build_enclosing_partition(
    target: BasicBox,
    mesh: f64,
) -> Result<EnclosingBuild, BuildError> {
    if !(mesh > 0.0) || !mesh.is_finite() {
        return Err(BuildError::BadMesh);
    }
    let built = build_carved_partition(
        &[CarveTarget {
            rect: target,
            splittable: false,
        }],
        Some(mesh),
    )?;
    debug_assert!(built.evicted.is_empty());
    Ok(EnclosingBuild {
        tree: built.tree,
        target_exceeds_mesh: built.target_exceeds_mesh,
    })
}

/// A seeded random partition with the requested leaf count, for property
/// suites and benchmarks. Always splits the widest remaining leaf across
/// its longer side, somewhere in the middle half, so leaves stay fat and
/// comfortably above rounding scale.
pub fn random_partition_tree(seed: u64, leaves: usize) -> SplitTree {
    use crate::util::{seeded_stream, streams};
    use rand::Rng;

    let mut rng = seeded_stream(seed, streams::GEOMETRY);
    let mut nodes = vec![TreeNode {
        id: 1,
        split: None,
        left: None,
        right: None,
    }];
    let mut regions: Vec<(u32, BasicBox)> = vec![(1, BasicBox::unit())];
    while regions.len() < leaves.max(1) {
        let mut pick = 0;
        for i in 1..regions.len() {
            if regions[i].1.area() > regions[pick].1.area() {
                pick = i;
            }
        }
        let (id, region) = regions.swap_remove(pick);
        let frac = 0.25 + 0.5 * rng.gen::<f64>();
        let (axis, lo, hi) = if region.width() >= region.height() {
            (Axis::X, region.xlo, region.xhi)
        } else {
            (Axis::Y, region.ylo, region.yhi)
        };
        let t = lo + frac * (hi - lo);
        if !(t > lo && t < hi) {
            regions.push((id, region));
            break;
        }
        let l = nodes.len() as u32 + 1;
        let r = l + 1;
        let slot = nodes
            .binary_search_by_key(&id, |n| n.id)
            .expect("region ids come from this vector");
        nodes[slot].split = Some(Split { axis, threshold: t });
        nodes[slot].left = Some(l);
        nodes[slot].right = Some(r);
        for child in [l, r] {
            nodes.push(TreeNode {
                id: child,
                split: None,
                left: None,
                right: None,
            });
        }
        let (a, b) = match axis {
            Axis::X => (
                BasicBox::half_open(region.xlo, t, region.ylo, region.yhi),
                BasicBox::half_open(t, region.xhi, region.ylo, region.yhi),
            ),
            Axis::Y => (
                BasicBox::half_open(region.xlo, region.xhi, region.ylo, t),
                BasicBox::half_open(region.xlo, region.xhi, t, region.yhi),
            ),
        };
        regions.push((l, a));
        regions.push((r, b));
    }
    SplitTree { nodes, root: 1 }
}

// ---------------------------------------------------------------------------
// Serialization: versioned line format, one node per line.

#[derive(Debug)]
pub enum TreeReadError {
    Io(io::Error),
    BadHeader(String),
    BadLine { line: usize, what: String },
    Structure(TreeError),
}

impl fmt::Display for TreeReadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeReadError::Io(e) => write!(f, "read failed: {}", e),
            TreeReadError::BadHeader(h) => write!(f, "expected BOXTREE 1 header, got {:?}", h),
            TreeReadError::BadLine { line, what } => write!(f, "line {}: {}", line, what),
            TreeReadError::Structure(e) => write!(f, "invalid tree: {}", e),
        }
    }
}

impl Error for TreeReadError {}

impl From<io::Error> for TreeReadError {
    fn from(e: io::Error) -> Self {
        TreeReadError::Io(e)
    }
}

/// `id axis threshold left right`, `-` for absent fields, thresholds in
/// hex-float. Nodes appear in increasing id order; the root is the unique
/// node no other node references.
pub fn write_tree(t: &SplitTree, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "BOXTREE 1")?;
    for n in &t.nodes {
        match (n.split, n.left, n.right) {
            (Some(s), Some(l), Some(r)) => writeln!(
                out,
                "{} {} {} {} {}",
                n.id,
                s.axis.letter(),
                format_hex(s.threshold),
                l,
                r
            )?,
            _ => writeln!(out, "{} - - - -", n.id)?,
        }
    }
    Ok(())
}

pub fn read_tree(input: &mut impl BufRead) -> Result<SplitTree, TreeReadError> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| TreeReadError::BadHeader(String::new()))?;
    let header = header?;
    if header.trim() != "BOXTREE 1" {
        return Err(TreeReadError::BadHeader(header));
    }
    let mut nodes = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(TreeReadError::BadLine {
                line: lineno,
                what: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let id: u32 = fields[0].parse().map_err(|_| TreeReadError::BadLine {
            line: lineno,
            what: "unreadable node id".into(),
        })?;
        let node = if fields[1] == "-" {
            if fields[2] != "-" || fields[3] != "-" || fields[4] != "-" {
                return Err(TreeReadError::BadLine {
                    line: lineno,
                    what: "terminal node must have all fields absent".into(),
                });
            }
            TreeNode {
                id,
                split: None,
                left: None,
                right: None,
            }
        } else {
            let axis = match fields[1] {
                "x" => Axis::X,
                "y" => Axis::Y,
                other => {
                    return Err(TreeReadError::BadLine {
                        line: lineno,
                        what: format!("unknown axis {:?}", other),
                    })
                }
            };
            let threshold = parse_hex(fields[2]).map_err(|e| TreeReadError::BadLine {
                line: lineno,
                what: e.to_string(),
            })?;
            let left: u32 = fields[3].parse().map_err(|_| TreeReadError::BadLine {
                line: lineno,
                what: "unreadable left child".into(),
            })?;
            let right: u32 = fields[4].parse().map_err(|_| TreeReadError::BadLine {
                line: lineno,
                what: "unreadable right child".into(),
            })?;
            TreeNode {
                id,
                split: Some(Split { axis, threshold }),
                left: Some(left),
                right: Some(right),
            }
        };
        nodes.push(node);
    }
    nodes.sort_by_key(|n| n.id);
    // Root = the node that is nobody's child.
    let mut is_child = std::collections::HashSet::new();
    for n in &nodes {
        for c in [n.left, n.right].into_iter().flatten() {
            is_child.insert(c);
        }
    }
    let mut root = None;
    for n in &nodes {
        if !is_child.contains(&n.id) {
            match root {
                None => root = Some(n.id),
                Some(first) => {
                    return Err(TreeReadError::Structure(TreeError::MultipleRoots {
                        first,
                        second: n.id,
                    }))
                }
            }
        }
    }
    let root = root.ok_or(TreeReadError::Structure(TreeError::NoRoot))?;
    Ok(SplitTree { nodes, root })
}
