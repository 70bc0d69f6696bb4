//! Axis-parallel rectangle geometry on the closed unit square.
//!
//! A `BasicBox` is an interval product with per-edge open/closed flags. The
//! flags matter for membership and for intersecting open covers; Lebesgue
//! quantities (area, integrals) ignore them.

use std::error::Error;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_unit_square(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && (0.0..=1.0).contains(&self.x)
            && (0.0..=1.0).contains(&self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoxError {
    NonFinite,
    Unordered,
    OutsideSquare,
}

impl fmt::Display for BoxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoxError::NonFinite => write!(f, "box bounds must be finite"),
            BoxError::Unordered => write!(f, "box bounds must satisfy lo <= hi on both axes"),
            BoxError::OutsideSquare => write!(f, "box must be contained in the unit square"),
        }
    }
}

impl Error for BoxError {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasicBox {
    pub xlo: f64,
    pub xhi: f64,
    pub ylo: f64,
    pub yhi: f64,
    pub xlo_closed: bool,
    pub xhi_closed: bool,
    pub ylo_closed: bool,
    pub yhi_closed: bool,
}

impl BasicBox {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        xlo: f64,
        xhi: f64,
        ylo: f64,
        yhi: f64,
        xlo_closed: bool,
        xhi_closed: bool,
        ylo_closed: bool,
        yhi_closed: bool,
    ) -> Result<Self, BoxError> {
        if !(xlo.is_finite() && xhi.is_finite() && ylo.is_finite() && yhi.is_finite()) {
            return Err(BoxError::NonFinite);
        }
        if xlo > xhi || ylo > yhi {
            return Err(BoxError::Unordered);
        }
        if xlo < 0.0 || xhi > 1.0 || ylo < 0.0 || yhi > 1.0 {
            return Err(BoxError::OutsideSquare);
        }
        Ok(Self {
            xlo,
            xhi,
            ylo,
            yhi,
            xlo_closed,
            xhi_closed,
            ylo_closed,
            yhi_closed,
        })
    }

    /// Canonical half-open form (lo, hi] x (lo, hi]; the shape of every
    /// partition leaf, so leaves tile without overlap on shared edges.
    pub fn half_open(xlo: f64, xhi: f64, ylo: f64, yhi: f64) -> Self {
        Self::new(xlo, xhi, ylo, yhi, false, true, false, true)
            .expect("invalid half-open box bounds")
    }

    /// The whole coordinate domain (0, 1] x (0, 1].
    pub fn unit() -> Self {
        Self::half_open(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.xhi - self.xlo
    }

    pub fn height(&self) -> f64 {
        self.yhi - self.ylo
    }

    /// Lebesgue measure; boundary flags are irrelevant to it.
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Euclidean diameter, i.e. the diagonal length.
    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point2) -> bool {
        let x_lo_ok = if self.xlo_closed { p.x >= self.xlo } else { p.x > self.xlo };
        let x_hi_ok = if self.xhi_closed { p.x <= self.xhi } else { p.x < self.xhi };
        let y_lo_ok = if self.ylo_closed { p.y >= self.ylo } else { p.y > self.ylo };
        let y_hi_ok = if self.yhi_closed { p.y <= self.yhi } else { p.y < self.yhi };
        x_lo_ok && x_hi_ok && y_lo_ok && y_hi_ok
    }

    /// Intersection with flag inheritance: each bound of the result comes
    /// from whichever input binds it, and a tied bound is closed only when
    /// both inputs are. Returns None when the result has empty interior and
    /// no shared closed edge.
    pub fn intersect(&self, other: &BasicBox) -> Option<BasicBox> {
        fn lo(a: f64, ac: bool, b: f64, bc: bool) -> (f64, bool) {
            if a > b {
                (a, ac)
            } else if b > a {
                (b, bc)
            } else {
                (a, ac && bc)
            }
        }
        fn hi(a: f64, ac: bool, b: f64, bc: bool) -> (f64, bool) {
            if a < b {
                (a, ac)
            } else if b < a {
                (b, bc)
            } else {
                (a, ac && bc)
            }
        }
        let (xlo, xlo_closed) = lo(self.xlo, self.xlo_closed, other.xlo, other.xlo_closed);
        let (xhi, xhi_closed) = hi(self.xhi, self.xhi_closed, other.xhi, other.xhi_closed);
        let (ylo, ylo_closed) = lo(self.ylo, self.ylo_closed, other.ylo, other.ylo_closed);
        let (yhi, yhi_closed) = hi(self.yhi, self.yhi_closed, other.yhi, other.yhi_closed);
        let x_ok = xlo < xhi || (xlo == xhi && xlo_closed && xhi_closed);
        let y_ok = ylo < yhi || (ylo == yhi && ylo_closed && yhi_closed);
        if !(x_ok && y_ok) {
            return None;
        }
        Some(BasicBox {
            xlo,
            xhi,
            ylo,
            yhi,
            xlo_closed,
            xhi_closed,
            ylo_closed,
            yhi_closed,
        })
    }

    /// True when every point of `inner` lies in `self`.
    pub fn covers(&self, inner: &BasicBox) -> bool {
        let xlo_ok = self.xlo < inner.xlo
            || (self.xlo == inner.xlo && (self.xlo_closed || !inner.xlo_closed));
        let xhi_ok = self.xhi > inner.xhi
            || (self.xhi == inner.xhi && (self.xhi_closed || !inner.xhi_closed));
        let ylo_ok = self.ylo < inner.ylo
            || (self.ylo == inner.ylo && (self.ylo_closed || !inner.ylo_closed));
        let yhi_ok = self.yhi > inner.yhi
            || (self.yhi == inner.yhi && (self.yhi_closed || !inner.yhi_closed));
        xlo_ok && xhi_ok && ylo_ok && yhi_ok
    }

    /// Overlap of the closures, ignoring flags. Cheaper than `intersect`
    /// when only positive-area overlap matters.
    pub fn overlaps_interior(&self, other: &BasicBox) -> bool {
        self.xlo < other.xhi && other.xlo < self.xhi && self.ylo < other.yhi && other.ylo < self.yhi
    }
}
