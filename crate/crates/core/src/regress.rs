//! Learning samples and the leaf estimators they feed.
//!
//! The generative model throughout: X uniform on the open-closed unit
//! square and Y = f(X) for a weighted-rectangle f (a noisy variant exists
//! for exploration). Against a fixed partition two estimators sit side by
//! side: the population one, which is just the leaf average of f, and the
//! empirical one, the mean of the sampled y's in the leaf. `decompose`
//! splits the pointwise error at a query into the sampling gap between
//! the two estimators (term i) and the resolution gap between the leaf
//! average and f itself (term ii); the observable error is at least
//! ii - i. `schedule_runner` walks a stage catalog, sizes each stage's
//! sample so term i is uniformly small on every leaf large enough to
//! audit, and records both terms at the stage witness, where term ii is
//! certified large: estimators accurate in the mean whose pointwise error
//! at the witness never closes.

use std::error::Error;
use std::fmt;

use crate::adversary::StageCatalog;
use crate::boxgeom::{BasicBox, Point2};
use crate::quadsum::{cond_exp, integrate, CondExpError};
use crate::rectfn::WeightedRectFn;
use crate::treepart::{Axis, Partition, SplitTree, TreeError};
use crate::util::{seeded_stream, streams, unit_open_closed, NeumaierSum};

/// How y is produced from a drawn x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Generator {
    /// y = f(x) exactly. Every certified claim uses this form.
    DeterministicY,
    /// y = f(x) plus zero-mean noise with the given standard deviation.
    NoisyY(f64),
    /// y is a class label in {1, 2} attached by the two-class sampler,
    /// not a function of x alone. Produced by `classify::labeled_sample`.
    Labeled,
}

#[derive(Clone, Debug)]
pub struct LearnSample {
    pub pairs: Vec<(Point2, f64)>,
    pub seed: u64,
    pub generator: Generator,
}

/// Draw n i.i.d. pairs. Coordinates come from the sampling stream and
/// noise from the label stream, so the x's of a given seed do not depend
/// on the generator.
pub fn sample(f: &WeightedRectFn, n: u64, seed: u64, generator: Generator) -> LearnSample {
    assert!(n >= 1, "sample size must be positive");
    assert!(
        generator != Generator::Labeled,
        "labeled samples come from the two-class sampler"
    );
    if let Generator::NoisyY(sigma) = generator {
        assert!(
            sigma.is_finite() && sigma >= 0.0,
            "noise scale must be a nonnegative real"
        );
    }
    let mut xs = seeded_stream(seed, streams::SAMPLING);
    let mut labels = seeded_stream(seed, streams::LABELS);
    let mut pairs = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let p = Point2::new(unit_open_closed(&mut xs), unit_open_closed(&mut xs));
        let y = match generator {
            Generator::DeterministicY => f.eval(p),
            Generator::NoisyY(sigma) => f.eval(p) + noise(&mut labels, sigma),
            Generator::Labeled => unreachable!(),
        };
        pairs.push((p, y));
    }
    LearnSample {
        pairs,
        seed,
        generator,
    }
}

/// Uniform on [-sigma*sqrt(3), sigma*sqrt(3)]: mean zero, standard
/// deviation sigma, and bounded, which keeps the deviation bounds of the
/// runner meaningful under noise too.
fn noise(rng: &mut impl rand::Rng, sigma: f64) -> f64 {
    sigma * 3f64.sqrt() * (2.0 * rng.gen::<f64>() - 1.0)
}

/// The regression function itself: with X uniform and Y = f(X), the
/// conditional mean of Y at p is f(p).
pub fn h_true(f: &WeightedRectFn, p: Point2) -> f64 {
    f.eval(p)
}

/// Population estimator: the average of f over the leaf containing p.
/// This IS the conditional expectation against the partition, so it is
/// implemented as that call and the two can never drift apart.
pub fn h_pop(f: &WeightedRectFn, q: &Partition, p: Point2) -> Result<f64, CondExpError> {
    cond_exp(f, q, p)
}

/// Empirical estimator: mean of the sampled y's in the leaf containing p,
/// and 0 when the leaf holds no sample points. The zero is structural,
/// not an error; reports flag such leaves.
pub fn h_emp(sample: &LearnSample, q: &Partition, p: Point2) -> f64 {
    leaf_mean(sample, q, p).0
}

fn leaf_mean(sample: &LearnSample, q: &Partition, p: Point2) -> (f64, u64) {
    let leaf = q.leaf(q.locate(p).expect("query point inside (0,1]^2"));
    let mut sum = NeumaierSum::new();
    let mut count = 0u64;
    for &(x, y) in &sample.pairs {
        if leaf.contains(x) {
            sum.add(y);
            count += 1;
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (sum.value() / count as f64, count)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LeafEstimate {
    pub leaf: BasicBox,
    pub count: u64,
    pub empirical_mean: f64,
    pub population_mean: f64,
    /// |empirical - population|; for an empty leaf this is simply the
    /// population mean, see the flag.
    pub deviation: f64,
    pub empty_leaf: bool,
}

#[derive(Clone, Debug)]
pub struct EstimatorReport {
    pub partition_id: usize,
    pub n: u64,
    pub leaves: Vec<LeafEstimate>,
}

/// Both estimators on every leaf of q, over the whole sample at once.
pub fn estimator_report(
    f: &WeightedRectFn,
    q: &Partition,
    sample: &LearnSample,
    partition_id: usize,
) -> EstimatorReport {
    let mut counts = vec![0u64; q.len()];
    let mut sums = vec![NeumaierSum::new(); q.len()];
    for &(x, y) in &sample.pairs {
        let i = q.locate(x).expect("sample points inside (0,1]^2");
        counts[i] += 1;
        sums[i].add(y);
    }
    let leaves = (0..q.len())
        .map(|i| {
            let leaf = *q.leaf(i);
            let population_mean = integrate(f, &leaf) / leaf.area();
            let empirical_mean = if counts[i] == 0 {
                0.0
            } else {
                sums[i].value() / counts[i] as f64
            };
            LeafEstimate {
                leaf,
                count: counts[i],
                empirical_mean,
                population_mean,
                deviation: (empirical_mean - population_mean).abs(),
                empty_leaf: counts[i] == 0,
            }
        })
        .collect();
    EstimatorReport {
        partition_id,
        n: sample.pairs.len() as u64,
        leaves,
    }
}

/// The two-term error split at one query point. `i` is the sampling gap
/// |h_emp - h_pop|, `ii` the resolution gap |h_pop - h_true|, and the
/// triangle inequality makes max(ii - i, 0) a certified lower bound on
/// the observable error |h_emp - h_true|.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition {
    pub i: f64,
    pub ii: f64,
    pub lower_bound: f64,
}

pub fn decompose(
    sample: &LearnSample,
    f: &WeightedRectFn,
    q: &Partition,
    p: Point2,
) -> Result<Decomposition, CondExpError> {
    let he = h_emp(sample, q, p);
    let hp = h_pop(f, q, p)?;
    let ht = h_true(f, p);
    let i = (he - hp).abs();
    let ii = (hp - ht).abs();
    // The triangle inequality is an equality whenever h_emp lies between
    // h_pop and h_true, and there rounding can push ii - i one ulp past
    // the observable gap. Clamping keeps the certificate valid; in real
    // arithmetic the clamp never binds.
    let lower_bound = (ii - i).max(0.0).min((he - ht).abs());
    debug_assert!((he - ht).abs() >= lower_bound);
    Ok(Decomposition { i, ii, lower_bound })
}

#[derive(Debug)]
pub enum RegressError {
    BadEps(&'static str),
    BadConfidence(f64),
    LengthMismatch { stages: usize, eps: usize },
    BadOptions(&'static str),
    BadCatalog(&'static str),
    Tree(TreeError),
    BadMap(&'static str),
}

impl fmt::Display for RegressError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressError::BadEps(msg) => write!(f, "bad tolerance sequence: {}", msg),
            RegressError::BadConfidence(c) => {
                write!(f, "confidence {} not strictly between 0 and 1", c)
            }
            RegressError::LengthMismatch { stages, eps } => write!(
                f,
                "catalog has {} stages but {} tolerances were given",
                stages, eps
            ),
            RegressError::BadOptions(msg) => write!(f, "bad runner options: {}", msg),
            RegressError::BadCatalog(msg) => write!(f, "bad stage catalog: {}", msg),
            RegressError::Tree(e) => write!(f, "stage partition invalid: {}", e),
            RegressError::BadMap(msg) => write!(f, "bad coordinate map: {}", msg),
        }
    }
}

impl Error for RegressError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            RegressError::Tree(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunnerOptions {
    /// Leaves at least this big are audited for term i at every stage.
    pub area_floor: f64,
    /// Largest sample any one stage may draw.
    pub sample_cap: u64,
    /// Refuse stages whose required size exceeds the cap instead of
    /// drawing the cap and flagging the row.
    pub strict_bound: bool,
    pub generator: Generator,
}

impl Default for RunnerOptions {
    fn default() -> Self {
        RunnerOptions {
            area_floor: 1e-2,
            sample_cap: 10_000_000,
            strict_bound: false,
            generator: Generator::DeterministicY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageFlag {
    /// The required size exceeded the cap; the stage ran at the cap, so
    /// its deviation guarantee is weaker than requested.
    Capped,
    /// The required size exceeded the cap under strict bounds; nothing
    /// was drawn and the row reports only the requirement.
    SkippedInfeasible,
    /// The witness leaf caught no sample points.
    EmptyWitness,
}

impl fmt::Display for StageFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageFlag::Capped => write!(f, "capped"),
            StageFlag::SkippedInfeasible => write!(f, "skipped_infeasible"),
            StageFlag::EmptyWitness => write!(f, "empty_witness"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryRow {
    pub stage: usize,
    /// One partition per stage; the id repeats the stage index so rows
    /// join against the catalog without further bookkeeping.
    pub partition_id: usize,
    /// Samples actually drawn; 0 for a skipped stage.
    pub n: u64,
    /// The distribution-free requirement before any capping.
    pub bound_n: f64,
    pub eps: f64,
    pub max_i_floored: Option<f64>,
    pub witness_ii: Option<f64>,
    pub witness_i: Option<f64>,
    pub lower_bound: Option<f64>,
    pub flags: Vec<StageFlag>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryReport {
    pub rows: Vec<TrajectoryRow>,
    pub confidence: f64,
    pub area_floor: f64,
}

impl TrajectoryReport {
    /// Skipped stages report their infeasible requirement in the N column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stage,partition_id,N,eps,max_I_floored,witness_II,witness_I,lower_bound,flags\n",
        );
        for r in &self.rows {
            let n = if r.flags.contains(&StageFlag::SkippedInfeasible) {
                format!("{:.0}", r.bound_n.ceil())
            } else {
                r.n.to_string()
            };
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let flags = r
                .flags
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.stage,
                r.partition_id,
                n,
                r.eps,
                opt(r.max_i_floored),
                opt(r.witness_ii),
                opt(r.witness_i),
                opt(r.lower_bound),
                flags
            ));
        }
        out
    }
}

/// Sample size making every audited leaf mean delta-accurate with failure
/// budget alpha. Conditional on the count m landing in a leaf, the y's
/// there are i.i.d. with range [0, range], so a bounded-difference bound
/// controls the mean once m >= N*lam/2, and a multiplicative lower tail
/// keeps m above that. Splitting alpha over the audited leaves and the
/// two events per leaf gives
///   N >= range^2 ln(4L/alpha) / (lam delta^2)  and  N >= 8 ln(4L/alpha) / lam.
fn required_n(range: f64, lam: f64, delta: f64, audited: usize, alpha: f64) -> f64 {
    let log = (4.0 * audited.max(1) as f64 / alpha).ln();
    let mean_term = if range > 0.0 {
        range * range * log / (lam * delta * delta)
    } else {
        0.0
    };
    let count_term = 8.0 * log / lam;
    mean_term.max(count_term)
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    crate::util::mix_seed(seed, stage as u64)
}

/// Walk the catalog's stages in order. Each stage sizes its own fresh
/// sample from the deviation bound (tolerance eps[n] on every leaf with
/// area at or above the floor, half the certified threshold at the
/// witness leaf), draws it from a per-stage seed, and reports the largest
/// audited sampling gap next to both error terms at the witness. The
/// per-stage seed derivation makes stage k's row invariant to how many
/// stages precede it.
pub fn schedule_runner(
    f: &WeightedRectFn,
    catalog: &StageCatalog,
    eps: &[f64],
    confidence: f64,
    seed: u64,
    options: RunnerOptions,
) -> Result<TrajectoryReport, RegressError> {
    if catalog.stages.is_empty() {
        return Err(RegressError::BadCatalog("catalog has no stages"));
    }
    if eps.len() != catalog.stages.len() {
        return Err(RegressError::LengthMismatch {
            stages: catalog.stages.len(),
            eps: eps.len(),
        });
    }
    let mut total = NeumaierSum::new();
    for &e in eps {
        if !e.is_finite() || e <= 0.0 {
            return Err(RegressError::BadEps("tolerances must be positive reals"));
        }
        total.add(e);
    }
    if !total.value().is_finite() {
        return Err(RegressError::BadEps("tolerances must have a finite sum"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(RegressError::BadConfidence(confidence));
    }
    if !(options.area_floor > 0.0) {
        return Err(RegressError::BadOptions("area floor must be positive"));
    }
    if options.sample_cap == 0 {
        return Err(RegressError::BadOptions("sample cap must be positive"));
    }
    if options.generator == Generator::Labeled {
        return Err(RegressError::BadOptions(
            "the runner estimates regression functions, not labels",
        ));
    }
    let range = f.stacked_weight_bound();
    let alpha = (1.0 - confidence) / catalog.stages.len() as f64;
    let mut rows = Vec::with_capacity(catalog.stages.len());
    for (si, stage) in catalog.stages.iter().enumerate() {
        let partition = stage.tree.leaves().map_err(RegressError::Tree)?;
        let witness = partition
            .locate(stage.witness_point)
            .map_err(|_| RegressError::BadCatalog("witness point outside the domain"))?;
        let floored: Vec<usize> = (0..partition.len())
            .filter(|&i| partition.leaf(i).area() >= options.area_floor)
            .collect();
        let witness_delta = if stage.threshold > 0.0 {
            0.5 * stage.threshold
        } else {
            eps[si]
        };
        let mut audited: Vec<(usize, f64)> = floored.iter().map(|&i| (i, eps[si])).collect();
        audited.push((witness, witness_delta));
        let distinct = {
            let mut ids: Vec<usize> = audited.iter().map(|&(i, _)| i).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        };
        let bound_n = audited
            .iter()
            .map(|&(i, d)| required_n(range, partition.leaf(i).area(), d, distinct, alpha))
            .fold(1.0f64, f64::max);
        let mut flags = Vec::new();
        let n_draw = if bound_n <= options.sample_cap as f64 {
            bound_n.ceil() as u64
        } else if options.strict_bound {
            flags.push(StageFlag::SkippedInfeasible);
            rows.push(TrajectoryRow {
                stage: si,
                partition_id: si,
                n: 0,
                bound_n,
                eps: eps[si],
                max_i_floored: None,
                witness_ii: None,
                witness_i: None,
                lower_bound: None,
                flags,
            });
            continue;
        } else {
            flags.push(StageFlag::Capped);
            options.sample_cap
        };
        let mut counts = vec![0u64; partition.len()];
        let mut sums = vec![NeumaierSum::new(); partition.len()];
        let mut xs = seeded_stream(stage_seed(seed, si), streams::SAMPLING);
        let mut labels = seeded_stream(stage_seed(seed, si), streams::LABELS);
        for _ in 0..n_draw {
            let p = Point2::new(unit_open_closed(&mut xs), unit_open_closed(&mut xs));
            let y = match options.generator {
                Generator::DeterministicY => f.eval(p),
                Generator::NoisyY(sigma) => f.eval(p) + noise(&mut labels, sigma),
                Generator::Labeled => unreachable!("rejected above"),
            };
            let leaf = partition.locate(p).expect("draws stay inside (0,1]^2");
            counts[leaf] += 1;
            sums[leaf].add(y);
        }
        let emp = |i: usize| {
            if counts[i] == 0 {
                0.0
            } else {
                sums[i].value() / counts[i] as f64
            }
        };
        let pop = |i: usize| {
            let b = partition.leaf(i);
            integrate(f, b) / b.area()
        };
        let max_i_floored = floored
            .iter()
            .map(|&i| (emp(i) - pop(i)).abs())
            .fold(0.0f64, f64::max);
        let we = emp(witness);
        let wp = pop(witness);
        let wt = h_true(f, stage.witness_point);
        let witness_ii = (wp - wt).abs();
        let witness_i = (we - wp).abs();
        let lower_bound = (witness_ii - witness_i).max(0.0);
        if counts[witness] == 0 {
            flags.push(StageFlag::EmptyWitness);
        }
        rows.push(TrajectoryRow {
            stage: si,
            partition_id: si,
            n: n_draw,
            bound_n,
            eps: eps[si],
            max_i_floored: Some(max_i_floored),
            witness_ii: Some(witness_ii),
            witness_i: Some(witness_i),
            lower_bound: Some(lower_bound),
            flags,
        });
    }
    Ok(TrajectoryReport {
        rows,
        confidence,
        area_floor: options.area_floor,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct EquivarianceReport {
    pub queries: usize,
    pub mismatches: usize,
}

/// The empirical estimator sees only coordinate order: mapping the sample,
/// the split thresholds and the query through the same pair of strictly
/// increasing maps must reproduce every estimator value exactly, because
/// leaf membership is decided by comparisons the maps preserve.
///
/// Monotonicity is vetted on the finite coordinate set the check actually
/// touches (sample, thresholds, queries, plus a fixed lattice), so a map
/// that misorders any decisive pair is rejected rather than silently
/// compared.
pub fn equivariance_check(
    sample: &LearnSample,
    tree: &SplitTree,
    map_x: &dyn Fn(f64) -> f64,
    map_y: &dyn Fn(f64) -> f64,
    queries: &[Point2],
) -> Result<EquivarianceReport, RegressError> {
    let q = tree.leaves().map_err(RegressError::Tree)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(p, _) in &sample.pairs {
        xs.push(p.x);
        ys.push(p.y);
    }
    for p in queries {
        xs.push(p.x);
        ys.push(p.y);
    }
    for n in &tree.nodes {
        if let Some(s) = n.split {
            match s.axis {
                Axis::X => xs.push(s.threshold),
                Axis::Y => ys.push(s.threshold),
            }
        }
    }
    for k in 0..=32 {
        let t = k as f64 / 32.0;
        xs.push(t);
        ys.push(t);
    }
    validate_increasing(&mut xs, map_x)?;
    validate_increasing(&mut ys, map_y)?;
    let map_point = |p: Point2| -> Result<Point2, RegressError> {
        let (mx, my) = (map_x(p.x), map_y(p.y));
        if !(mx > 0.0 && mx <= 1.0 && my > 0.0 && my <= 1.0) {
            return Err(RegressError::BadMap(
                "map must keep data coordinates inside (0,1]",
            ));
        }
        Ok(Point2::new(mx, my))
    };
    let mut nodes = tree.nodes.clone();
    for n in &mut nodes {
        if let Some(s) = &mut n.split {
            s.threshold = match s.axis {
                Axis::X => map_x(s.threshold),
                Axis::Y => map_y(s.threshold),
            };
            if !(s.threshold > 0.0 && s.threshold < 1.0) {
                return Err(RegressError::BadMap(
                    "map must keep split thresholds strictly inside (0,1)",
                ));
            }
        }
    }
    let mapped_tree = SplitTree {
        nodes,
        root: tree.root,
    };
    let mq = mapped_tree.leaves().map_err(RegressError::Tree)?;
    let mut mapped_pairs = Vec::with_capacity(sample.pairs.len());
    for &(p, y) in &sample.pairs {
        mapped_pairs.push((map_point(p)?, y));
    }
    let mapped_sample = LearnSample {
        pairs: mapped_pairs,
        seed: sample.seed,
        generator: sample.generator,
    };
    let mut mismatches = 0;
    for &p in queries {
        let a = h_emp(sample, &q, p);
        let b = h_emp(&mapped_sample, &mq, map_point(p)?);
        if a.to_bits() != b.to_bits() {
            mismatches += 1;
        }
    }
    Ok(EquivarianceReport {
        queries: queries.len(),
        mismatches,
    })
}

fn validate_increasing(coords: &mut Vec<f64>, map: &dyn Fn(f64) -> f64) -> Result<(), RegressError> {
    coords.sort_by(f64::total_cmp);
    coords.dedup();
    let mut prev = f64::NEG_INFINITY;
    for &t in coords.iter() {
        let m = map(t);
        if !m.is_finite() {
            return Err(RegressError::BadMap("map produced a non-finite value"));
        }
        if m <= prev {
            return Err(RegressError::BadMap("map must be strictly increasing"));
        }
        prev = m;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct ProjectionLeaf {
    pub leaf: BasicBox,
    /// integrate(f, leaf) minus population mean times area; an algebraic
    /// zero up to rounding in the division.
    pub exact_defect: f64,
    pub exact_ok: bool,
    /// Mean over the whole sample of (y - population mean at x) on the
    /// leaf's indicator, which has expectation exactly zero.
    pub stat_mean: f64,
    pub stat_se: f64,
    pub stat_ok: bool,
}

#[derive(Clone, Debug)]
pub struct ProjectionReport {
    pub leaves: Vec<ProjectionLeaf>,
    pub exact_ok: bool,
    pub stat_ok: bool,
}

/// Residuals against the population estimator are orthogonal to every
/// leaf indicator: exactly, as an identity of the leaf average, and
/// empirically at four standard errors on the given sample.
pub fn projection_check(
    f: &WeightedRectFn,
    q: &Partition,
    sample: &LearnSample,
) -> ProjectionReport {
    debug_assert!(
        matches!(sample.generator, Generator::DeterministicY),
        "the projection identity is stated for deterministic labels"
    );
    let n = sample.pairs.len() as f64;
    let pops: Vec<f64> = (0..q.len())
        .map(|i| {
            let b = q.leaf(i);
            integrate(f, b) / b.area()
        })
        .collect();
    let mut sums = vec![NeumaierSum::new(); q.len()];
    let mut squares = vec![NeumaierSum::new(); q.len()];
    for &(x, y) in &sample.pairs {
        let i = q.locate(x).expect("sample points inside (0,1]^2");
        let r = y - pops[i];
        sums[i].add(r);
        squares[i].add(r * r);
    }
    let leaves: Vec<ProjectionLeaf> = (0..q.len())
        .map(|i| {
            let leaf = *q.leaf(i);
            let mass = integrate(f, &leaf);
            let exact_defect = mass - pops[i] * leaf.area();
            let exact_ok = exact_defect.abs() <= 1e-12 * mass.abs();
            let stat_mean = sums[i].value() / n;
            let var = (squares[i].value() / n - stat_mean * stat_mean).max(0.0);
            let stat_se = (var / n).sqrt();
            let stat_ok = stat_mean == 0.0 || stat_mean.abs() <= 4.0 * stat_se;
            ProjectionLeaf {
                leaf,
                exact_defect,
                exact_ok,
                stat_mean,
                stat_se,
                stat_ok,
            }
        })
        .collect();
    ProjectionReport {
        exact_ok: leaves.iter().all(|l| l.exact_ok),
        stat_ok: leaves.iter().all(|l| l.stat_ok),
        leaves,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{Stage, StageCatalog};
    use crate::rectfn::Term;
    use crate::treepart::{Split, TreeNode};
    use crate::util::comp_sum;
    use rand::Rng;

    fn term(x0: f64, x1: f64, y0: f64, y1: f64, w: f64) -> Term {
        Term {
            rect: BasicBox::half_open(x0, x1, y0, y1),
            weight: w,
        }
    }

    fn two_term_fn() -> WeightedRectFn {
        WeightedRectFn::new(vec![
            term(0.0, 0.6, 0.0, 0.6, 2.0),
            term(0.25, 0.75, 0.25, 0.75, 1.0),
        ])
        .unwrap()
    }

    fn leafnode(id: u32) -> TreeNode {
        TreeNode {
            id,
            split: None,
            left: None,
            right: None,
        }
    }

    fn quadrant_tree() -> SplitTree {
        SplitTree {
            nodes: vec![
                TreeNode {
                    id: 0,
                    split: Some(Split {
                        axis: Axis::X,
                        threshold: 0.5,
                    }),
                    left: Some(1),
                    right: Some(2),
                },
                TreeNode {
                    id: 1,
                    split: Some(Split {
                        axis: Axis::Y,
                        threshold: 0.5,
                    }),
                    left: Some(3),
                    right: Some(4),
                },
                TreeNode {
                    id: 2,
                    split: Some(Split {
                        axis: Axis::Y,
                        threshold: 0.5,
                    }),
                    left: Some(5),
                    right: Some(6),
                },
                leafnode(3),
                leafnode(4),
                leafnode(5),
                leafnode(6),
            ],
            root: 0,
        }
    }

    fn hand_sample(pairs: Vec<(Point2, f64)>) -> LearnSample {
        LearnSample {
            pairs,
            seed: 0,
            generator: Generator::DeterministicY,
        }
    }

    /// One quadrant-partition stage whose witness leaf is the upper-right
    /// quadrant; threshold 0 means "nothing certified".
    fn one_stage(threshold: f64, witness_average: f64) -> Stage {
        Stage {
            level: 0,
            threshold,
            mesh: 1.5,
            tree: quadrant_tree(),
            boxes: vec![BasicBox::half_open(0.5, 1.0, 0.5, 1.0)],
            box_averages: vec![witness_average],
            witness: 0,
            witness_point: Point2::new(0.8, 0.8),
            witness_average,
        }
    }

    fn toy_catalog(stages: Vec<Stage>, mass: f64) -> StageCatalog {
        StageCatalog {
            stages,
            pieces: Vec::new(),
            mass,
            density_floor: f64::INFINITY,
            grid: 4,
            claimed_fraction: 0.0,
        }
    }

    #[test]
    fn samples_reproduce_and_match_the_function() {
        let f = two_term_fn();
        let a = sample(&f, 3, 9, Generator::DeterministicY);
        let b = sample(&f, 3, 9, Generator::DeterministicY);
        assert_eq!(a.pairs.len(), 3);
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(pa.0.x.to_bits(), pb.0.x.to_bits());
            assert_eq!(pa.0.y.to_bits(), pb.0.y.to_bits());
            assert_eq!(pa.1.to_bits(), pb.1.to_bits());
        }
        for &(p, y) in &a.pairs {
            assert!(p.x > 0.0 && p.x <= 1.0 && p.y > 0.0 && p.y <= 1.0);
            assert_eq!(y.to_bits(), f.eval(p).to_bits());
        }
    }

    #[test]
    fn sample_mean_sits_on_the_mass() {
        let f = two_term_fn();
        let s = sample(&f, 200_000, 11, Generator::DeterministicY);
        let n = s.pairs.len() as f64;
        let mean = comp_sum(s.pairs.iter().map(|&(_, y)| y)) / n;
        let var = comp_sum(s.pairs.iter().map(|&(_, y)| (y - mean) * (y - mean))) / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - f.mass()).abs() <= 4.0 * se,
            "mean {} vs mass {} at se {}",
            mean,
            f.mass(),
            se
        );
    }

    #[test]
    fn noise_is_centered_and_bounded() {
        let f = two_term_fn();
        let sigma = 0.5;
        let s = sample(&f, 100_000, 13, Generator::NoisyY(sigma));
        let lim = sigma * 3f64.sqrt();
        let mean = comp_sum(s.pairs.iter().map(|&(p, y)| {
            let r = y - f.eval(p);
            assert!(r.abs() <= lim);
            r
        })) / s.pairs.len() as f64;
        let se = sigma / (s.pairs.len() as f64).sqrt();
        assert!(mean.abs() <= 4.0 * se, "residual mean {}", mean);
        // Same seed, same x's: the generator only changes the labels.
        let d = sample(&f, 100, 13, Generator::DeterministicY);
        let noisy = sample(&f, 100, 13, Generator::NoisyY(sigma));
        for (a, b) in d.pairs.iter().zip(&noisy.pairs) {
            assert_eq!(a.0.x.to_bits(), b.0.x.to_bits());
            assert_eq!(a.0.y.to_bits(), b.0.y.to_bits());
        }
    }

    #[test]
    fn pointwise_truth_sums_stacked_weights() {
        let f = WeightedRectFn::new(vec![
            term(0.1, 0.3, 0.1, 0.3, 4.0),
            term(0.5, 0.9, 0.5, 0.9, 1.0),
            term(0.6, 0.95, 0.6, 0.95, 2.0),
        ])
        .unwrap();
        assert_eq!(h_true(&f, Point2::new(0.97, 0.97)), 0.0);
        assert_eq!(h_true(&f, Point2::new(0.2, 0.2)), 4.0);
        assert_eq!(h_true(&f, Point2::new(0.7, 0.7)), 3.0);
    }

    #[test]
    fn population_estimator_is_the_conditional_expectation_bitwise() {
        let f = two_term_fn();
        let q = quadrant_tree().leaves().unwrap();
        let mut rng = seeded_stream(5, streams::REPLICATION);
        for _ in 0..1000 {
            let p = Point2::new(unit_open_closed(&mut rng), unit_open_closed(&mut rng));
            let a = h_pop(&f, &q, p).unwrap();
            let b = cond_exp(&f, &q, p).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn leaf_means_follow_the_indicator_convention() {
        let q = quadrant_tree().leaves().unwrap();
        let s = hand_sample(vec![
            (Point2::new(0.2, 0.2), 1.0),
            (Point2::new(0.8, 0.8), 3.0),
        ]);
        assert_eq!(h_emp(&s, &q, Point2::new(0.1, 0.1)), 1.0);
        assert_eq!(h_emp(&s, &q, Point2::new(0.9, 0.1)), 0.0);
        let dup = hand_sample(vec![
            (Point2::new(0.2, 0.2), 1.0),
            (Point2::new(0.2, 0.2), 2.0),
        ]);
        assert_eq!(h_emp(&dup, &q, Point2::new(0.3, 0.3)), 1.5);
    }

    #[test]
    fn estimator_report_counts_and_flags_every_leaf() {
        let f = two_term_fn();
        let q = quadrant_tree().leaves().unwrap();
        let s = sample(&f, 200, 17, Generator::DeterministicY);
        let rep = estimator_report(&f, &q, &s, 7);
        assert_eq!(rep.partition_id, 7);
        assert_eq!(rep.n, 200);
        assert_eq!(rep.leaves.len(), q.len());
        let mut total = 0;
        for (i, le) in rep.leaves.iter().enumerate() {
            assert_eq!(le.leaf, *q.leaf(i));
            let inside: Vec<f64> = s
                .pairs
                .iter()
                .filter(|(x, _)| le.leaf.contains(*x))
                .map(|&(_, y)| y)
                .collect();
            assert_eq!(le.count as usize, inside.len());
            assert_eq!(le.empty_leaf, inside.is_empty());
            let want = if inside.is_empty() {
                0.0
            } else {
                comp_sum(inside.iter().copied()) / inside.len() as f64
            };
            assert_eq!(le.empirical_mean.to_bits(), want.to_bits());
            let pop = integrate(&f, &le.leaf) / le.leaf.area();
            assert_eq!(le.population_mean.to_bits(), pop.to_bits());
            assert_eq!(le.deviation, (le.empirical_mean - pop).abs());
            total += le.count;
        }
        assert_eq!(total, 200);
    }

    #[test]
    fn decomposition_reproduces_the_worked_arithmetic() {
        // Empirical 5, population 3, truth 1 at the query.
        let f = WeightedRectFn::new(vec![
            term(0.0, 1.0, 0.0, 1.0, 1.0),
            term(0.0, 0.5, 0.0, 1.0, 4.0),
        ])
        .unwrap();
        let one_leaf = SplitTree {
            nodes: vec![leafnode(0)],
            root: 0,
        };
        let q = one_leaf.leaves().unwrap();
        let s = hand_sample(vec![(Point2::new(0.1, 0.1), 5.0)]);
        let d = decompose(&s, &f, &q, Point2::new(0.75, 0.5)).unwrap();
        assert_eq!((d.i, d.ii, d.lower_bound), (2.0, 2.0, 0.0));
        // Empty leaf against population 4 and truth 0.
        let f2 = WeightedRectFn::new(vec![term(0.0, 0.25, 0.0, 0.25, 16.0)]).unwrap();
        let q2 = quadrant_tree().leaves().unwrap();
        let s2 = hand_sample(vec![(Point2::new(0.8, 0.8), 0.0)]);
        let d2 = decompose(&s2, &f2, &q2, Point2::new(0.4, 0.4)).unwrap();
        assert_eq!((d2.i, d2.ii, d2.lower_bound), (4.0, 4.0, 0.0));
    }

    #[test]
    fn random_configurations_respect_the_lower_bound() {
        let q = quadrant_tree().leaves().unwrap();
        let mut rng = seeded_stream(77, streams::REPLICATION);
        for case in 0..1000 {
            let mut terms = Vec::new();
            for _ in 0..rng.gen_range(1..=3) {
                let x0 = 0.8 * rng.gen::<f64>();
                let y0 = 0.8 * rng.gen::<f64>();
                let w = 0.05 + 0.15 * rng.gen::<f64>();
                let h = 0.05 + 0.15 * rng.gen::<f64>();
                terms.push(term(x0, x0 + w, y0, y0 + h, 5.0 * rng.gen::<f64>()));
            }
            let f = WeightedRectFn::new(terms).unwrap();
            let s = sample(&f, 1 + rng.gen_range(0..40), case, Generator::DeterministicY);
            let p = Point2::new(unit_open_closed(&mut rng), unit_open_closed(&mut rng));
            let d = decompose(&s, &f, &q, p).unwrap();
            let he = h_emp(&s, &q, p);
            let hp = cond_exp(&f, &q, p).unwrap();
            let ht = f.eval(p);
            assert_eq!(d.i, (he - hp).abs());
            assert_eq!(d.ii, (hp - ht).abs());
            let raw = (d.ii - d.i).max(0.0);
            assert_eq!(d.lower_bound, raw.min((he - ht).abs()));
            // The clamp absorbs at most one rounding step at equality.
            assert!(raw - d.lower_bound <= 1e-12 * raw.max(1.0));
            assert!((he - ht).abs() >= d.lower_bound);
        }
    }

    #[test]
    fn runner_zero_function_runs_clean() {
        let f = WeightedRectFn::empty();
        let catalog = toy_catalog(vec![one_stage(0.0, 0.0)], 0.0);
        let t = schedule_runner(&f, &catalog, &[0.1], 0.9, 3, RunnerOptions::default()).unwrap();
        assert_eq!(t.rows.len(), 1);
        let row = &t.rows[0];
        assert!(row.flags.is_empty());
        assert!(row.n >= 1);
        assert_eq!(row.max_i_floored, Some(0.0));
        assert_eq!(row.witness_ii, Some(0.0));
        assert_eq!(row.witness_i, Some(0.0));
        assert_eq!(row.lower_bound, Some(0.0));
        let csv = t.to_csv();
        assert!(csv.starts_with(
            "stage,partition_id,N,eps,max_I_floored,witness_II,witness_I,lower_bound,flags\n"
        ));
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 9);
    }

    #[test]
    fn runner_bound_grows_as_the_tolerance_shrinks() {
        let f = two_term_fn();
        let catalog = toy_catalog(
            vec![one_stage(0.08, 0.08), one_stage(0.08, 0.08), one_stage(0.08, 0.08)],
            f.mass(),
        );
        let t = schedule_runner(
            &f,
            &catalog,
            &[0.4, 0.2, 0.1],
            0.9,
            3,
            RunnerOptions::default(),
        )
        .unwrap();
        assert!(t.rows[0].bound_n <= t.rows[1].bound_n);
        assert!(t.rows[1].bound_n <= t.rows[2].bound_n);
    }

    #[test]
    fn runner_caps_or_skips_infeasible_stages() {
        let f = two_term_fn();
        let catalog = toy_catalog(vec![one_stage(0.08, 0.08)], f.mass());
        let tight = RunnerOptions {
            sample_cap: 50,
            ..RunnerOptions::default()
        };
        let capped = schedule_runner(&f, &catalog, &[0.35], 0.9, 3, tight).unwrap();
        assert_eq!(capped.rows[0].n, 50);
        assert!(capped.rows[0].bound_n > 50.0);
        assert_eq!(capped.rows[0].flags, vec![StageFlag::Capped]);
        assert!(capped.rows[0].witness_i.is_some());
        assert!(capped.to_csv().contains("capped"));
        let strict = RunnerOptions {
            sample_cap: 50,
            strict_bound: true,
            ..RunnerOptions::default()
        };
        let skipped = schedule_runner(&f, &catalog, &[0.35], 0.9, 3, strict).unwrap();
        assert_eq!(skipped.rows[0].n, 0);
        assert_eq!(skipped.rows[0].flags, vec![StageFlag::SkippedInfeasible]);
        assert!(skipped.rows[0].witness_i.is_none());
        let csv = skipped.to_csv();
        assert!(csv.contains("skipped_infeasible"));
        // The infeasible requirement lands in the N column.
        let n_field = csv.lines().nth(1).unwrap().split(',').nth(2).unwrap();
        assert_eq!(n_field, format!("{:.0}", skipped.rows[0].bound_n.ceil()));
    }

    #[test]
    fn runner_rejects_bad_arguments() {
        let f = two_term_fn();
        let catalog = toy_catalog(vec![one_stage(0.08, 0.08)], f.mass());
        let opts = RunnerOptions::default();
        assert!(matches!(
            schedule_runner(&f, &catalog, &[0.1, 0.2], 0.9, 3, opts),
            Err(RegressError::LengthMismatch { .. })
        ));
        assert!(matches!(
            schedule_runner(&f, &catalog, &[0.0], 0.9, 3, opts),
            Err(RegressError::BadEps(_))
        ));
        assert!(matches!(
            schedule_runner(&f, &catalog, &[0.1], 1.0, 3, opts),
            Err(RegressError::BadConfidence(_))
        ));
        assert!(matches!(
            schedule_runner(&f, &toy_catalog(Vec::new(), 0.0), &[], 0.9, 3, opts),
            Err(RegressError::BadCatalog(_))
        ));
        let bad = RunnerOptions {
            area_floor: 0.0,
            ..RunnerOptions::default()
        };
        assert!(matches!(
            schedule_runner(&f, &catalog, &[0.1], 0.9, 3, bad),
            Err(RegressError::BadOptions(_))
        ));
    }

    #[test]
    fn deviation_bound_holds_across_replications() {
        // One term of weight 2: range 2, witness leaf average 0.08 with a
        // vanishing point, so the witness tolerance is 0.04.
        let f = WeightedRectFn::new(vec![term(0.0, 0.6, 0.0, 0.6, 2.0)]).unwrap();
        let catalog = toy_catalog(vec![one_stage(0.08, 0.08)], f.mass());
        let options = RunnerOptions {
            area_floor: 1e-3,
            ..RunnerOptions::default()
        };
        let leaf = BasicBox::half_open(0.5, 1.0, 0.5, 1.0);
        let avg = integrate(&f, &leaf) / leaf.area();
        for rep in 0..20 {
            let t = schedule_runner(&f, &catalog, &[0.35], 0.9, 1000 + rep, options).unwrap();
            let row = &t.rows[0];
            assert!(row.flags.is_empty(), "rep {} flags {:?}", rep, row.flags);
            assert!(row.max_i_floored.unwrap() <= 0.35, "rep {}", rep);
            assert_eq!(row.witness_ii.unwrap().to_bits(), avg.to_bits());
            assert!(row.witness_i.unwrap() <= 0.04, "rep {}", rep);
            assert!(row.lower_bound.unwrap() >= 0.039, "rep {}", rep);
        }
    }

    #[test]
    fn estimator_sees_only_coordinate_order() {
        let f = two_term_fn();
        let tree = quadrant_tree();
        let s = sample(&f, 100, 21, Generator::DeterministicY);
        let mut rng = seeded_stream(23, streams::REPLICATION);
        let queries: Vec<Point2> = (0..1000)
            .map(|_| Point2::new(unit_open_closed(&mut rng), unit_open_closed(&mut rng)))
            .collect();
        let id = |t: f64| t;
        let r = equivariance_check(&s, &tree, &id, &id, &queries).unwrap();
        assert_eq!((r.queries, r.mismatches), (1000, 0));
        let cube = |t: f64| t * t * t;
        let squash = |t: f64| t / (1.0 + t);
        let r2 = equivariance_check(&s, &tree, &cube, &squash, &queries).unwrap();
        assert_eq!((r2.queries, r2.mismatches), (1000, 0));
        let down = |t: f64| -t;
        assert!(matches!(
            equivariance_check(&s, &tree, &down, &id, &queries),
            Err(RegressError::BadMap(_))
        ));
    }

    #[test]
    fn residuals_are_orthogonal_to_leaf_indicators() {
        let q = quadrant_tree().leaves().unwrap();
        let c = WeightedRectFn::new(vec![term(0.0, 1.0, 0.0, 1.0, 2.5)]).unwrap();
        let s = sample(&c, 500, 31, Generator::DeterministicY);
        let r = projection_check(&c, &q, &s);
        assert!(r.exact_ok && r.stat_ok);
        for l in &r.leaves {
            assert_eq!(l.exact_defect, 0.0);
            assert_eq!(l.stat_mean, 0.0);
        }
        let f = two_term_fn();
        let s2 = sample(&f, 100_000, 33, Generator::DeterministicY);
        let r2 = projection_check(&f, &q, &s2);
        assert!(r2.exact_ok, "defects {:?}", r2.leaves);
        assert!(r2.stat_ok, "stat {:?}", r2.leaves);
    }
}
