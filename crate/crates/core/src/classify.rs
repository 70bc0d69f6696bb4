//! The two-class problem driven by a constructed density.
//!
//! A fair coin picks the class; class 1 draws X from the construction
//! scaled to unit mass, class 2 from the uniform distribution. The Bayes
//! rule thresholds the density at 1 and the tree rule takes per-leaf
//! sample majorities. Risks are computed exactly from the rectangle
//! geometry, so the separation the experiments exhibit, risk gaps
//! shrinking while a fixed fraction of low-density points keeps getting
//! misclassified somewhere, carries no test-set noise.

use std::error::Error;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::StageCatalog;
use crate::boxgeom::{BasicBox, Point2};
use crate::quadsum::{integrate, McEstimate};
use crate::rectfn::{Term, WeightedRectFn};
use crate::regress::{Generator, LearnSample};
use crate::treepart::{Partition, TreeError};
use crate::util::{comp_sum, mix_seed, seeded_stream, streams, unit_open_closed, NeumaierSum};

/// The generative model: class priors are exactly 1/2 each, class 1 has
/// X-density `density1`, class 2 is uniform.
#[derive(Clone, Debug)]
pub struct ClassSetup {
    /// The construction scaled to exact unit mass.
    pub density1: WeightedRectFn,
    pub prior: f64,
}

#[derive(Debug)]
pub enum ClassifyError {
    ZeroFunction,
    LengthMismatch { leaves: usize, decisions: usize },
    BadDecision { leaf: usize, value: u8 },
    BadSampleSizes(&'static str),
    Tree(TreeError),
}

impl fmt::Display for ClassifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifyError::ZeroFunction => {
                write!(f, "class-1 density needs positive mass")
            }
            ClassifyError::LengthMismatch { leaves, decisions } => write!(
                f,
                "one decision per leaf: {} leaves, {} decisions",
                leaves, decisions
            ),
            ClassifyError::BadDecision { leaf, value } => {
                write!(f, "leaf {} decided {}, not 1 or 2", leaf, value)
            }
            ClassifyError::BadSampleSizes(msg) => write!(f, "bad sample sizes: {}", msg),
            ClassifyError::Tree(e) => write!(f, "stage partition invalid: {}", e),
        }
    }
}

impl Error for ClassifyError {
    fn source(&self) -> Option<&(dyn Error + 'static)> {
        match self {
            ClassifyError::Tree(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TreeError> for ClassifyError {
    fn from(e: TreeError) -> Self {
        ClassifyError::Tree(e)
    }
}

/// Scale f to unit mass. Weights are divided by the exact mass, so the
/// rescaled function keeps every box-average ratio of the original.
pub fn make_setup(f: &WeightedRectFn) -> Result<ClassSetup, ClassifyError> {
    let mass = f.mass();
    if !(mass > 0.0) {
        return Err(ClassifyError::ZeroFunction);
    }
    let terms: Vec<Term> = f
        .terms()
        .iter()
        .map(|t| Term {
            rect: t.rect,
            weight: t.weight / mass,
        })
        .collect();
    let density1 = WeightedRectFn::new(terms).expect("rescaling keeps weights finite nonnegative");
    debug_assert!((density1.mass() - 1.0).abs() <= 1e-12);
    Ok(ClassSetup {
        density1,
        prior: 0.5,
    })
}

/// Decide 1 exactly where the class-1 density strictly exceeds 1 (the
/// uniform class-2 density). Ties go to 2.
pub fn bayes_rule(setup: &ClassSetup, p: Point2) -> u8 {
    if setup.density1.eval(p) > 1.0 {
        1
    } else {
        2
    }
}

/// Draws X with density exactly `density1` by picking a term with
/// probability proportional to its mass and then a uniform point inside
/// its rectangle; the overlap-stacked density falls out of the mixture
/// with no rejection loop.
struct Class1Sampler {
    rects: Vec<BasicBox>,
    /// Cumulative term masses; the last entry is the total.
    cum: Vec<f64>,
}

impl Class1Sampler {
    fn new(density1: &WeightedRectFn) -> Self {
        let mut cum = Vec::with_capacity(density1.terms().len());
        let mut acc = NeumaierSum::new();
        let mut rects = Vec::with_capacity(density1.terms().len());
        for t in density1.terms() {
            acc.add(t.weight * t.rect.area());
            cum.push(acc.value());
            rects.push(t.rect);
        }
        Self { rects, cum }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Point2 {
        let total = *self.cum.last().expect("positive mass implies terms");
        let u = rng.gen::<f64>() * total;
        let k = self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1);
        let r = &self.rects[k];
        // The min keeps rounding from pushing the point past the closed
        // edge of the half-open rectangle.
        Point2::new(
            (r.xlo + unit_open_closed(rng) * r.width()).min(r.xhi),
            (r.ylo + unit_open_closed(rng) * r.height()).min(r.yhi),
        )
    }
}

fn draw_labeled(sampler: &Class1Sampler, class1: bool, positions: &mut ChaCha8Rng) -> (Point2, u8) {
    if class1 {
        (sampler.draw(positions), 1)
    } else {
        (
            Point2::new(unit_open_closed(positions), unit_open_closed(positions)),
            2,
        )
    }
}

/// Draw n labeled pairs from the two-class model. Labels are 1.0 / 2.0 in
/// the y slot; coordinates come from the sampling stream and the class
/// coins from the label stream.
pub fn labeled_sample(setup: &ClassSetup, n: u64, seed: u64) -> LearnSample {
    assert!(n >= 1, "sample size must be positive");
    let sampler = Class1Sampler::new(&setup.density1);
    let mut positions = seeded_stream(seed, streams::SAMPLING);
    let mut coins = seeded_stream(seed, streams::LABELS);
    let mut pairs = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let class1 = coins.gen::<bool>();
        let (p, label) = draw_labeled(&sampler, class1, &mut positions);
        pairs.push((p, label as f64));
    }
    LearnSample {
        pairs,
        seed,
        generator: Generator::Labeled,
    }
}

/// Per-leaf sample majority at the query point: 1 when class-1 points
/// strictly outnumber class-2 points in the leaf; ties and empty leaves
/// go to 2.
pub fn tree_rule(sample: &LearnSample, q: &Partition, p: Point2) -> u8 {
    let leaf = q.leaf(q.locate(p).expect("query point inside (0,1]^2"));
    let mut ones = 0u64;
    let mut twos = 0u64;
    for &(x, y) in &sample.pairs {
        if leaf.contains(x) {
            debug_assert!(y == 1.0 || y == 2.0, "labels must be 1 or 2");
            if y == 1.0 {
                ones += 1;
            } else {
                twos += 1;
            }
        }
    }
    if ones > twos {
        1
    } else {
        2
    }
}

/// The whole decision vector of `tree_rule` in one pass over the sample.
pub fn leaf_decisions(sample: &LearnSample, q: &Partition) -> Vec<u8> {
    let mut ones = vec![0u64; q.len()];
    let mut twos = vec![0u64; q.len()];
    for &(x, y) in &sample.pairs {
        debug_assert!(y == 1.0 || y == 2.0, "labels must be 1 or 2");
        let i = q.locate(x).expect("sample points inside (0,1]^2");
        if y == 1.0 {
            ones[i] += 1;
        } else {
            twos[i] += 1;
        }
    }
    majority_decisions(&ones, &twos)
}

fn majority_decisions(ones: &[u64], twos: &[u64]) -> Vec<u8> {
    ones.iter()
        .zip(twos)
        .map(|(&a, &b)| if a > b { 1 } else { 2 })
        .collect()
}

/// The infinite-data limit of `tree_rule`: in a leaf, expected class-1
/// weight is proportional to the density integral and class-2 weight to
/// the area, so the majority comparison becomes integral > area. That is
/// the leafwise Bayes decision (average density > 1) stated without the
/// division.
pub fn leafwise_bayes(setup: &ClassSetup, q: &Partition) -> Vec<u8> {
    q.leaves()
        .iter()
        .map(|leaf| {
            if integrate(&setup.density1, leaf) > leaf.area() {
                1
            } else {
                2
            }
        })
        .collect()
}

fn check_decisions(q: &Partition, decisions: &[u8]) -> Result<(), ClassifyError> {
    if decisions.len() != q.len() {
        return Err(ClassifyError::LengthMismatch {
            leaves: q.len(),
            decisions: decisions.len(),
        });
    }
    for (leaf, &d) in decisions.iter().enumerate() {
        if d != 1 && d != 2 {
            return Err(ClassifyError::BadDecision { leaf, value: d });
        }
    }
    Ok(())
}

/// Expected 0-1 loss of a leaf-decision rule, exactly: a leaf decided 2
/// errs on the class-1 mass inside it, a leaf decided 1 errs on the
/// class-2 (uniform) mass, each class weighted by its 1/2 prior.
pub fn exact_risk(
    setup: &ClassSetup,
    q: &Partition,
    decisions: &[u8],
) -> Result<f64, ClassifyError> {
    check_decisions(q, decisions)?;
    let mut acc = NeumaierSum::new();
    for (leaf, &d) in q.leaves().iter().zip(decisions) {
        if d == 1 {
            acc.add(leaf.area());
        } else {
            acc.add(integrate(&setup.density1, leaf));
        }
    }
    Ok(0.5 * acc.value())
}

/// Risk of the Bayes rule with an explicit error bound.
#[derive(Clone, Copy, Debug)]
pub struct BayesRisk {
    pub value: f64,
    /// Always 0: a finite term family makes the sweep exact.
    pub error_bound: f64,
}

/// ½ ∫ min(density1, 1), swept exactly over the arrangement of term
/// edges. Inside one x-slab of the arrangement the density depends on y
/// alone, and inside one y-cell of the slab it is constant, so the
/// integral is a finite sum of exact products and the error bound is 0.
pub fn bayes_risk(setup: &ClassSetup) -> BayesRisk {
    let terms = setup.density1.terms();
    let mut xs: Vec<f64> = Vec::with_capacity(2 * terms.len() + 2);
    xs.push(0.0);
    xs.push(1.0);
    for t in terms {
        xs.push(t.rect.xlo);
        xs.push(t.rect.xhi);
    }
    xs.sort_unstable_by(f64::total_cmp);
    xs.dedup();
    let mut acc = NeumaierSum::new();
    let mut slab: Vec<(f64, f64, f64)> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if !(x1 > x0) {
            continue;
        }
        // Within the slab no term edge intervenes, so extent comparisons
        // against the slab endpoints decide coverage; edge-line overlap
        // has measure zero either way.
        slab.clear();
        ys.clear();
        ys.push(0.0);
        ys.push(1.0);
        for t in terms {
            if t.rect.xlo <= x0 && t.rect.xhi >= x1 {
                slab.push((t.rect.ylo, t.rect.yhi, t.weight));
                ys.push(t.rect.ylo);
                ys.push(t.rect.yhi);
            }
        }
        ys.sort_unstable_by(f64::total_cmp);
        ys.dedup();
        for v in ys.windows(2) {
            let (y0, y1) = (v[0], v[1]);
            if !(y1 > y0) {
                continue;
            }
            let stacked = comp_sum(
                slab.iter()
                    .filter(|&&(lo, hi, _)| lo <= y0 && hi >= y1)
                    .map(|&(_, _, w)| w),
            );
            acc.add(stacked.min(1.0) * (x1 - x0) * (y1 - y0));
        }
    }
    BayesRisk {
        value: 0.5 * acc.value(),
        error_bound: 0.0,
    }
}

/// Monte Carlo risk of a leaf-decision rule: draw labeled pairs and count
/// disagreements. Diagnostic oracle for `exact_risk`, never part of a
/// certified claim.
pub fn mc_risk(
    setup: &ClassSetup,
    q: &Partition,
    decisions: &[u8],
    n: u64,
    seed: u64,
) -> Result<McEstimate, ClassifyError> {
    assert!(n >= 2, "need at least two samples for a standard error");
    check_decisions(q, decisions)?;
    let sampler = Class1Sampler::new(&setup.density1);
    let mut rng = seeded_stream(seed, streams::MC_ORACLE);
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    for i in 0..n {
        let class1 = rng.gen::<bool>();
        let (p, label) = draw_labeled(&sampler, class1, &mut rng);
        let leaf = q.locate(p).expect("draws stay inside (0,1]^2");
        let loss = if decisions[leaf] == label { 0.0 } else { 1.0 };
        let k = (i + 1) as f64;
        let d = loss - mean;
        mean += d / k;
        m2 += d * (loss - mean);
    }
    let var = m2 / (n as f64 - 1.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
        samples: n,
        seed,
    })
}

#[derive(Clone, Debug)]
pub struct RuleReport {
    pub partition_id: usize,
    /// Decision per leaf, 1 or 2.
    pub decisions: Vec<u8>,
    pub risk: f64,
    /// Grid measure of points with density1 < 1 where this rule and the
    /// Bayes rule disagree (each grid point carries 1/grid² of area).
    pub disagreement_measure: f64,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: usize,
    pub n: u64,
    pub rule: RuleReport,
    /// Exact risk minus the Bayes risk; never negative.
    pub gap: f64,
    /// Fraction of low-density grid points misclassified at this or any
    /// earlier stage.
    pub cum_misclassified_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct SeparationReport {
    pub stages: Vec<StageOutcome>,
    pub bayes_risk: f64,
    pub grid: u32,
    /// Number of certification grid points with density1 < 1.
    pub low_density_points: usize,
}

impl SeparationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stage,N,risk,bayes_risk,gap,disagreement_measure,cum_misclassified_fraction\n",
        );
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.stage,
                s.n,
                s.rule.risk,
                self.bayes_risk,
                s.gap,
                s.rule.disagreement_measure,
                s.cum_misclassified_fraction
            ));
        }
        out
    }
}

/// Train the majority rule on each stage partition with its own fresh
/// sample and measure both sides of the separation: the exact risk gap to
/// Bayes, and which low-density grid points the rule calls class 1 (the
/// Bayes rule never does, so those are pointwise errors). The cumulative
/// fraction tracks grid points misclassified at any stage so far.
pub fn separation_experiment(
    f: &WeightedRectFn,
    catalog: &StageCatalog,
    sizes: &[u64],
    seed: u64,
) -> Result<SeparationReport, ClassifyError> {
    let setup = make_setup(f)?;
    if sizes.len() != catalog.stages.len() {
        return Err(ClassifyError::BadSampleSizes("one size per stage"));
    }
    if sizes.iter().any(|&n| n == 0) {
        return Err(ClassifyError::BadSampleSizes("sizes must be positive"));
    }
    let bayes = bayes_risk(&setup);
    let g = catalog.grid as usize;
    let mut low: Vec<Point2> = Vec::new();
    for i in 1..=g {
        for j in 1..=g {
            let p = Point2::new(i as f64 / g as f64, j as f64 / g as f64);
            if setup.density1.eval(p) < 1.0 {
                low.push(p);
            }
        }
    }
    let mut ever_missed = vec![false; low.len()];
    let sampler = Class1Sampler::new(&setup.density1);
    let mut stages = Vec::with_capacity(catalog.stages.len());
    for (si, stage) in catalog.stages.iter().enumerate() {
        let q = stage.tree.leaves()?;
        let mut ones = vec![0u64; q.len()];
        let mut twos = vec![0u64; q.len()];
        let mut positions = seeded_stream(mix_seed(seed, si as u64), streams::SAMPLING);
        let mut coins = seeded_stream(mix_seed(seed, si as u64), streams::LABELS);
        for _ in 0..sizes[si] {
            let class1 = coins.gen::<bool>();
            let (p, label) = draw_labeled(&sampler, class1, &mut positions);
            let i = q.locate(p).expect("draws stay inside (0,1]^2");
            if label == 1 {
                ones[i] += 1;
            } else {
                twos[i] += 1;
            }
        }
        let decisions = majority_decisions(&ones, &twos);
        let risk = exact_risk(&setup, &q, &decisions)?;
        debug_assert!((0.0..=0.5 + 1e-12).contains(&risk));
        let mut missed = 0usize;
        for (k, &p) in low.iter().enumerate() {
            let i = q.locate(p).expect("grid points inside (0,1]^2");
            if decisions[i] == 1 {
                missed += 1;
                ever_missed[k] = true;
            }
        }
        let cum = ever_missed.iter().filter(|&&m| m).count() as f64 / low.len().max(1) as f64;
        stages.push(StageOutcome {
            stage: si,
            n: sizes[si],
            rule: RuleReport {
                partition_id: si,
                decisions,
                risk,
                disagreement_measure: missed as f64 / (g * g) as f64,
            },
            gap: risk - bayes.value,
            cum_misclassified_fraction: cum,
        });
    }
    Ok(SeparationReport {
        stages,
        bayes_risk: bayes.value,
        grid: catalog.grid,
        low_density_points: low.len(),
    })
}
