//! The construction side of the lab: kernel geometry and parameter
//! schedules, layered placements whose corner boxes certify large local
//! averages, multi-level composites, and the partition catalogs that
//! exhibit fine-mesh trees with certified-large leaf averages.
//!
//! A kernel is one placed copy of the construction unit inside an
//! eta-sided square: either the two-arm set (an L of oblong rectangles
//! hugging the local axes) or a single square blob in the corner. Corner
//! boxes (0,a]x(0,b] in local coordinates see average gamma*s^2/(ab) from
//! a blob, so every point with max(x,s)*max(y,s) small admits a certified
//! box; stacking seeded layers of kernels drives the measure of such
//! points toward 1 while the total mass stays under any given budget.

mod cluster;
mod composite;
mod lemma21;
mod stages;

pub use cluster::{disjoint_cover, union_area};
pub use composite::{
    amplification_experiment, build_composite, build_partition_catalog, escalation_preset,
    sampling_preset, single_preset, AmplificationReport, Composite, CompositeError, CompositeLevel,
};
pub use lemma21::{
    build_lemma21, read_catalog, write_catalog, BuildReport, CatalogEntry, CatalogReadError,
    Lemma21Build, Lemma21Error, Lemma21Target, Sizing, WitnessCatalog,
};
pub use stages::{build_stage_catalog, Stage, StageCatalog, StageError, StageTargets};

use std::error::Error;
use std::fmt;

use crate::boxgeom::{BasicBox, Point2};
use crate::rectfn::{Term, WeightedRectFn};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelShape {
    TwoArm,
    Blob,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub shape: KernelShape,
    /// Mass scale of the two-arm set; its arm width is beta/eta.
    pub beta: f64,
    /// Side of the placed square.
    pub eta: f64,
    /// Height of the kernel.
    pub gamma: f64,
    /// Blob side, used only by the blob shape.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelError {
    ScheduleTooEarly { n: u64 },
    BadParams(&'static str),
    UnsupportedShape,
    DegenerateQuery,
    OutsideRegion,
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelError::ScheduleTooEarly { n } => write!(
                f,
                "schedule needs n >= 8: at n = {} the square side 1/ln n is at least 1/2",
                n
            ),
            KernelError::BadParams(what) => write!(f, "invalid kernel parameters: {}", what),
            KernelError::UnsupportedShape => {
                write!(f, "closed-form region area applies to the two-arm shape only")
            }
            KernelError::DegenerateQuery => {
                write!(f, "query point lies on a local axis of the placed kernel")
            }
            KernelError::OutsideRegion => write!(f, "point outside the placed divergence region"),
        }
    }
}

impl Error for KernelError {}

impl KernelParams {
    pub fn two_arm(beta: f64, eta: f64, gamma: f64) -> Result<Self, KernelError> {
        let p = KernelParams {
            shape: KernelShape::TwoArm,
            beta,
            eta,
            gamma,
            s: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn blob(s: f64, eta: f64, gamma: f64) -> Result<Self, KernelError> {
        let p = KernelParams {
            shape: KernelShape::Blob,
            beta: gamma * s * s,
            eta,
            gamma,
            s,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), KernelError> {
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(KernelError::BadParams("eta must lie in (0, 1/2)"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(KernelError::BadParams("gamma must be positive"));
        }
        match self.shape {
            KernelShape::TwoArm => {
                if !(self.beta > 0.0) {
                    return Err(KernelError::BadParams("beta must be positive"));
                }
                // Arm width w = beta/eta has to fit inside the square.
                if self.beta / self.eta > self.eta {
                    return Err(KernelError::BadParams("arm width beta/eta exceeds eta"));
                }
            }
            KernelShape::Blob => {
                if !(self.s > 0.0 && self.s <= self.eta) {
                    return Err(KernelError::BadParams("blob side must lie in (0, eta]"));
                }
            }
        }
        Ok(())
    }

    /// Arm width of the two-arm shape.
    pub fn arm_width(&self) -> f64 {
        self.beta / self.eta
    }
}

/// One kernel placed with its local origin (the corner the boxes anchor to)
/// at `origin`; the placed square is [origin, origin + eta]^2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelPlacement {
    pub params: KernelParams,
    pub origin: Point2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WitnessBox {
    pub rect: BasicBox,
    pub average: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeResult {
    pub best_endpoint_average: f64,
    pub unconstrained_average: f64,
}

/// The n-th parameter set of the diverging family: mass scale 1/(n ln^2 n),
/// square side 1/ln n, height sqrt(ln n). The identity eta^2/beta = n holds
/// exactly in this parametrization.
pub fn schedule(n: u64) -> Result<KernelParams, KernelError> {
    if n < 8 {
        return Err(KernelError::ScheduleTooEarly { n });
    }
    let ln = (n as f64).ln();
    KernelParams::two_arm(1.0 / (n as f64 * ln * ln), 1.0 / ln, ln.sqrt())
}

/// The kernel as a weighted-rectangle function in local coordinates
/// translated to `origin`. The two-arm shape emits two disjoint rectangles
/// (the vertical arm and the rest of the horizontal arm) so the overlap
/// square near the corner is not double-counted; the blob emits one square.
pub fn make_kernel(k: &KernelPlacement) -> WeightedRectFn {
    let p = &k.params;
    let (ox, oy) = (k.origin.x, k.origin.y);
    let terms = match p.shape {
        KernelShape::TwoArm => {
            let w = p.arm_width();
            vec![
                Term {
                    rect: BasicBox::half_open(ox, ox + w, oy, oy + p.eta),
                    weight: p.gamma,
                },
                Term {
                    rect: BasicBox::half_open(ox + w, ox + p.eta, oy, oy + w),
                    weight: p.gamma,
                },
            ]
        }
        KernelShape::Blob => vec![Term {
            rect: BasicBox::half_open(ox, ox + p.s, oy, oy + p.s),
            weight: p.gamma,
        }],
    };
    WeightedRectFn::new(terms).expect("kernel terms are valid by construction")
}

/// Exact mass of one kernel.
pub fn kernel_mass(p: &KernelParams) -> f64 {
    match p.shape {
        KernelShape::TwoArm => {
            let w = p.arm_width();
            p.gamma * (w * p.eta + (p.eta - w) * w)
        }
        KernelShape::Blob => p.gamma * p.s * p.s,
    }
}

/// Area of the divergence region {xy <= beta} within the placed square:
/// every point of it admits a corner box with average >= gamma/2. Closed
/// form beta*(1 + ln(eta^2/beta)).
pub fn region_area(p: &KernelParams) -> Result<f64, KernelError> {
    match p.shape {
        KernelShape::TwoArm => Ok(p.beta * (1.0 + (p.eta * p.eta / p.beta).ln())),
        KernelShape::Blob => Err(KernelError::UnsupportedShape),
    }
}

/// The corner-anchored box (0,a]x(0,b] in local coordinates with the best
/// exact kernel average among such boxes containing p. None when p is
/// outside the placed square.
pub fn witness_box(k: &KernelPlacement, p: Point2) -> Result<Option<WitnessBox>, KernelError> {
    let params = &k.params;
    let x = p.x - k.origin.x;
    let y = p.y - k.origin.y;
    if x < 0.0 || y < 0.0 || x > params.eta || y > params.eta {
        return Ok(None);
    }
    if x == 0.0 || y == 0.0 {
        return Err(KernelError::DegenerateQuery);
    }
    let (a, b, average) = match params.shape {
        KernelShape::TwoArm => {
            let w = params.arm_width();
            let a = x.max(w);
            let b = y.max(w);
            (a, b, params.gamma * w * (a + b - w) / (a * b))
        }
        KernelShape::Blob => {
            let a = x.max(params.s);
            let b = y.max(params.s);
            (a, b, params.gamma * params.s * params.s / (a * b))
        }
    };
    Ok(Some(WitnessBox {
        rect: BasicBox::half_open(k.origin.x, k.origin.x + a, k.origin.y, k.origin.y + b),
        average,
    }))
}

/// Exact average of a two-arm kernel over the local corner box (0,a]x(0,b].
fn two_arm_corner_average(p: &KernelParams, a: f64, b: f64) -> f64 {
    let w = p.arm_width();
    let vertical = w.min(a) * p.eta.min(b);
    let horizontal = (p.eta.min(a) - w).max(0.0) * w.min(b);
    p.gamma * (vertical + horizontal) / (a * b)
}

/// Averages over corner boxes whose outer vertex sits on the hyperbola
/// xy = beta, restricted to boxes containing p: the two endpoint choices
/// a = x and a = beta/y, reported against the unconstrained optimum of
/// witness_box. Diagnostic for the mid-region behavior of vertex-pinned
/// boxes, where the best endpoint average dips well below gamma/2.
pub fn hyperbola_vertex_probe(
    k: &KernelPlacement,
    p: Point2,
) -> Result<ProbeResult, KernelError> {
    let params = &k.params;
    if params.shape != KernelShape::TwoArm {
        return Err(KernelError::UnsupportedShape);
    }
    let x = p.x - k.origin.x;
    let y = p.y - k.origin.y;
    if x <= 0.0 || y <= 0.0 || x > params.eta || y > params.eta || x * y > params.beta {
        return Err(KernelError::OutsideRegion);
    }
    let beta = params.beta;
    let lo = x;
    let hi = beta / y;
    let at = |a: f64| two_arm_corner_average(params, a, beta / a);
    let best_endpoint_average = at(lo).max(at(hi));
    let unconstrained = witness_box(k, p)?.expect("p inside the placed square");
    Ok(ProbeResult {
        best_endpoint_average,
        unconstrained_average: unconstrained.average,
    })
}

/// (1 - alpha) * background + alpha * f as one weighted-rectangle function.
pub fn mix(background: &WeightedRectFn, f: &WeightedRectFn, alpha: f64) -> WeightedRectFn {
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0,1]");
    let bg = background
        .scaled(1.0 - alpha)
        .expect("finite nonnegative factor");
    let fg = f.scaled(alpha).expect("finite nonnegative factor");
    bg.concat(&fg).expect("term count stays within index range")
}
