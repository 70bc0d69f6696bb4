//! Finite sums of weighted rectangle indicators with a uniform-grid index.
//!
//! The represented function is the pointwise SUM of `weight * I_rect`; two
//! overlapping terms stack. All constructions, estimands and densities in
//! the crate are values of this type. Rectangles are canonical half-open
//! (lo, hi] boxes so that pointwise evaluation is unambiguous on edges.

use std::error::Error;
use std::fmt;
use std::io::{self, BufRead, Write};

use crate::boxgeom::{BasicBox, Point2};
use crate::hexfloat::{format_hex, parse_hex, ParseHexError};
use crate::util::NeumaierSum;

/// Cells per axis of the spatial index. Rectangle populations here are
/// near-uniform at every scale, so a flat grid beats trees and stays easy
/// to audit against a linear scan.
pub const INDEX_RESOLUTION: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub rect: BasicBox,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RectFnError {
    NegativeWeight { term: usize },
    NonFiniteWeight { term: usize },
    TooManyTerms,
}

impl fmt::Display for RectFnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RectFnError::NegativeWeight { term } => {
                write!(f, "term {} has negative weight", term)
            }
            RectFnError::NonFiniteWeight { term } => {
                write!(f, "term {} has non-finite weight", term)
            }
            RectFnError::TooManyTerms => write!(f, "term count exceeds u32 index range"),
        }
    }
}

impl Error for RectFnError {}

#[derive(Clone)]
pub struct WeightedRectFn {
    terms: Vec<Term>,
    cells: Vec<Vec<u32>>,
    // Per-cell split for the integrator: ids of terms that only partly
    // cover the cell, the total weight of terms covering it outright, and
    // the exact mass inside the cell. A query box settles interior cells
    // with `cell_mass` and expands just the cells its boundary cuts.
    cell_partial: Vec<Vec<u32>>,
    cell_cover: Vec<f64>,
    cell_mass: Vec<f64>,
    mass: f64,
}

pub(crate) fn cell_axis_range(lo: f64, hi: f64) -> (usize, usize) {
    let g = INDEX_RESOLUTION as f64;
    let last = INDEX_RESOLUTION - 1;
    let a = ((lo * g).floor() as isize).clamp(0, last as isize) as usize;
    let b = ((hi * g).floor() as isize).clamp(a as isize, last as isize) as usize;
    (a, b)
}

fn cell_of(p: Point2) -> usize {
    let g = INDEX_RESOLUTION as f64;
    let last = INDEX_RESOLUTION - 1;
    let cx = ((p.x * g).floor() as isize).clamp(0, last as isize) as usize;
    let cy = ((p.y * g).floor() as isize).clamp(0, last as isize) as usize;
    cy * INDEX_RESOLUTION + cx
}

/// The half-open box of index cell (cx, cy). The grid side is a power of
/// two, so the corners are exact.
pub(crate) fn cell_box(cx: usize, cy: usize) -> BasicBox {
    let g = INDEX_RESOLUTION as f64;
    BasicBox::half_open(
        cx as f64 / g,
        (cx + 1) as f64 / g,
        cy as f64 / g,
        (cy + 1) as f64 / g,
    )
}

impl WeightedRectFn {
    pub fn new(terms: Vec<Term>) -> Result<Self, RectFnError> {
        if terms.len() > u32::MAX as usize {
            return Err(RectFnError::TooManyTerms);
        }
        for (i, t) in terms.iter().enumerate() {
            if !t.weight.is_finite() {
                return Err(RectFnError::NonFiniteWeight { term: i });
            }
            if t.weight < 0.0 {
                return Err(RectFnError::NegativeWeight { term: i });
            }
        }
        let mut cells = vec![Vec::new(); INDEX_RESOLUTION * INDEX_RESOLUTION];
        for (i, t) in terms.iter().enumerate() {
            let (x0, x1) = cell_axis_range(t.rect.xlo, t.rect.xhi);
            let (y0, y1) = cell_axis_range(t.rect.ylo, t.rect.yhi);
            for cy in y0..=y1 {
                for cx in x0..=x1 {
                    cells[cy * INDEX_RESOLUTION + cx].push(i as u32);
                }
            }
        }
        let n_cells = INDEX_RESOLUTION * INDEX_RESOLUTION;
        let mut cell_partial = vec![Vec::new(); n_cells];
        let mut cell_cover = vec![0.0; n_cells];
        let mut cell_mass = vec![0.0; n_cells];
        for (c, ids) in cells.iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let cell = cell_box(c % INDEX_RESOLUTION, c / INDEX_RESOLUTION);
            let mut cover = NeumaierSum::new();
            let mut s = NeumaierSum::new();
            for &id in ids {
                let t = &terms[id as usize];
                if t.rect.xlo <= cell.xlo
                    && t.rect.xhi >= cell.xhi
                    && t.rect.ylo <= cell.ylo
                    && t.rect.yhi >= cell.yhi
                {
                    cover.add(t.weight);
                    s.add(t.weight * cell.area());
                } else if let Some(piece) = t.rect.intersect(&cell) {
                    cell_partial[c].push(id);
                    s.add(t.weight * piece.area());
                }
            }
            cell_cover[c] = cover.value();
            cell_mass[c] = s.value();
        }
        let mut mass = NeumaierSum::new();
        for t in &terms {
            mass.add(t.weight * t.rect.area());
        }
        Ok(Self {
            terms,
            cells,
            cell_partial,
            cell_cover,
            cell_mass,
            mass: mass.value(),
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new()).unwrap()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Exact total mass, compensated and accumulated in term order.
    /// Equals the L1 norm because weights are nonnegative.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Pointwise value: the sum of weights of terms containing `p`,
    /// accumulated in term-id order.
    pub fn eval(&self, p: Point2) -> f64 {
        let mut sum = 0.0;
        for &id in &self.cells[cell_of(p)] {
            let t = &self.terms[id as usize];
            if t.rect.contains(p) {
                sum += t.weight;
            }
        }
        sum
    }

    /// Ids of all terms that might intersect `b`, sorted and deduplicated.
    /// The caller still intersects exactly; the index only prunes.
    pub fn candidates(&self, b: &BasicBox) -> Vec<u32> {
        let (x0, x1) = cell_axis_range(b.xlo, b.xhi);
        let (y0, y1) = cell_axis_range(b.ylo, b.yhi);
        let mut ids = Vec::new();
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                ids.extend_from_slice(&self.cells[cy * INDEX_RESOLUTION + cx]);
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Integration view of one index cell: ids of terms that partly cover
    /// it, the total weight covering it outright, and the exact mass of the
    /// function inside it, all precomputed at construction.
    pub(crate) fn cell(&self, cx: usize, cy: usize) -> (&[u32], f64, f64) {
        let c = cy * INDEX_RESOLUTION + cx;
        (&self.cell_partial[c], self.cell_cover[c], self.cell_mass[c])
    }

    /// Upper bound on the pointwise supremum: the largest per-cell sum of
    /// weights of terms touching that cell. Terms sharing a cell need not
    /// share a point, so this can overshoot, never undershoot.
    pub fn stacked_weight_bound(&self) -> f64 {
        let mut best = 0.0f64;
        for cell in &self.cells {
            let s: f64 = cell.iter().map(|&id| self.terms[id as usize].weight).sum();
            best = best.max(s);
        }
        best
    }

    /// Same function with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, RectFnError> {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                rect: t.rect,
                weight: t.weight * factor,
            })
            .collect();
        Self::new(terms)
    }

    /// Pointwise sum of two functions: term concatenation, `self` first.
    pub fn concat(&self, other: &Self) -> Result<Self, RectFnError> {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self::new(terms)
    }
}

// The index is derived data; keep Debug output readable.
impl fmt::Debug for WeightedRectFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightedRectFn")
            .field("terms", &self.terms.len())
            .field("mass", &self.mass)
            .finish()
    }
}

#[derive(Debug)]
pub enum BoxFnReadError {
    Io(io::Error),
    BadHeader(String),
    BadTermCount,
    BadLine { line: usize, what: String },
    BadFloat { line: usize, err: ParseHexError },
    MassMismatch { stated: f64, computed: f64 },
    Invalid(RectFnError),
}

impl fmt::Display for BoxFnReadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoxFnReadError::Io(e) => write!(f, "read failed: {}", e),
            BoxFnReadError::BadHeader(h) => write!(f, "expected BOXFN 1 header, got {:?}", h),
            BoxFnReadError::BadTermCount => write!(f, "unreadable term count"),
            BoxFnReadError::BadLine { line, what } => {
                write!(f, "line {}: {}", line, what)
            }
            BoxFnReadError::BadFloat { line, err } => write!(f, "line {}: {}", line, err),
            BoxFnReadError::MassMismatch { stated, computed } => write!(
                f,
                "stated mass {:e} does not match recomputed mass {:e}",
                stated, computed
            ),
            BoxFnReadError::Invalid(e) => write!(f, "invalid function: {}", e),
        }
    }
}

impl Error for BoxFnReadError {}

impl From<io::Error> for BoxFnReadError {
    fn from(e: io::Error) -> Self {
        BoxFnReadError::Io(e)
    }
}

/// Write the `BOXFN 1` format: a version line, a `count mass` line, then one
/// `xlo xhi ylo yhi weight` line per term, all reals in hex-float.
pub fn write_boxfn(f: &WeightedRectFn, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "BOXFN 1")?;
    writeln!(out, "{} {}", f.terms().len(), format_hex(f.mass()))?;
    for t in f.terms() {
        writeln!(
            out,
            "{} {} {} {} {}",
            format_hex(t.rect.xlo),
            format_hex(t.rect.xhi),
            format_hex(t.rect.ylo),
            format_hex(t.rect.yhi),
            format_hex(t.weight),
        )?;
    }
    Ok(())
}

/// Read `BOXFN 1`, recompute the mass in term order and require it to match
/// the header bit for bit. Terms are reconstructed as half-open boxes.
pub fn read_boxfn(input: &mut impl BufRead) -> Result<WeightedRectFn, BoxFnReadError> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| BoxFnReadError::BadHeader(String::new()))??;
    if header.trim() != "BOXFN 1" {
        return Err(BoxFnReadError::BadHeader(header));
    }
    let meta = lines.next().ok_or(BoxFnReadError::BadTermCount)??;
    let mut it = meta.split_whitespace();
    let count: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(BoxFnReadError::BadTermCount)?;
    let stated_mass = parse_hex(it.next().ok_or(BoxFnReadError::BadTermCount)?)
        .map_err(|err| BoxFnReadError::BadFloat { line: 2, err })?;

    let mut terms = Vec::with_capacity(count);
    for i in 0..count {
        let lineno = i + 3;
        let line = lines
            .next()
            .ok_or_else(|| BoxFnReadError::BadLine {
                line: lineno,
                what: "missing term line".into(),
            })??;
        let mut fields = line.split_whitespace();
        let mut next = |what: &str| -> Result<f64, BoxFnReadError> {
            let s = fields.next().ok_or_else(|| BoxFnReadError::BadLine {
                line: lineno,
                what: format!("missing field {}", what),
            })?;
            parse_hex(s).map_err(|err| BoxFnReadError::BadFloat { line: lineno, err })
        };
        let xlo = next("xlo")?;
        let xhi = next("xhi")?;
        let ylo = next("ylo")?;
        let yhi = next("yhi")?;
        let weight = next("weight")?;
        let rect = BasicBox::new(xlo, xhi, ylo, yhi, false, true, false, true).map_err(|e| {
            BoxFnReadError::BadLine {
                line: lineno,
                what: e.to_string(),
            }
        })?;
        terms.push(Term { rect, weight });
    }
    let f = WeightedRectFn::new(terms).map_err(BoxFnReadError::Invalid)?;
    if f.mass().to_bits() != stated_mass.to_bits() {
        return Err(BoxFnReadError::MassMismatch {
            stated: stated_mass,
            computed: f.mass(),
        });
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_stream;
    use rand::Rng;

    fn random_fn(n: usize, seed: u64) -> WeightedRectFn {
        let mut rng = seeded_stream(seed, 90);
        let mut terms = Vec::with_capacity(n);
        for _ in 0..n {
            let x0: f64 = rng.gen();
            let y0: f64 = rng.gen();
            let w = (1.0 - x0) * rng.gen::<f64>() * 0.2;
            let h = (1.0 - y0) * rng.gen::<f64>() * 0.2;
            terms.push(Term {
                rect: BasicBox::half_open(x0, x0 + w, y0, y0 + h),
                weight: rng.gen::<f64>() * 3.0,
            });
        }
        WeightedRectFn::new(terms).unwrap()
    }

    #[test]
    fn rejects_negative_weights() {
        let t = Term {
            rect: BasicBox::unit(),
            weight: -1.0,
        };
        assert!(matches!(
            WeightedRectFn::new(vec![t]),
            Err(RectFnError::NegativeWeight { term: 0 })
        ));
    }

    #[test]
    fn eval_sums_overlapping_terms() {
        let f = WeightedRectFn::new(vec![
            Term {
                rect: BasicBox::half_open(0.0, 0.6, 0.0, 1.0),
                weight: 1.0,
            },
            Term {
                rect: BasicBox::half_open(0.4, 1.0, 0.0, 1.0),
                weight: 2.0,
            },
        ])
        .unwrap();
        assert_eq!(f.eval(Point2::new(0.2, 0.5)), 1.0);
        assert_eq!(f.eval(Point2::new(0.5, 0.5)), 3.0);
        assert_eq!(f.eval(Point2::new(0.8, 0.5)), 2.0);
        assert_eq!(f.eval(Point2::new(0.6, 0.5)), 3.0); // closed upper edge
    }

    #[test]
    fn candidates_match_linear_scan() {
        let f = random_fn(2000, 5);
        let mut rng = seeded_stream(6, 91);
        for _ in 0..500 {
            let x0: f64 = rng.gen();
            let y0: f64 = rng.gen();
            let b = BasicBox::half_open(
                x0,
                (x0 + rng.gen::<f64>() * 0.3).min(1.0),
                y0,
                (y0 + rng.gen::<f64>() * 0.3).min(1.0),
            );
            let cand = f.candidates(&b);
            // Every term with a real intersection must be among candidates.
            for (i, t) in f.terms().iter().enumerate() {
                if t.rect.overlaps_interior(&b) {
                    assert!(
                        cand.binary_search(&(i as u32)).is_ok(),
                        "index missed term {} for box {:?}",
                        i,
                        b
                    );
                }
            }
        }
    }

    #[test]
    fn eval_matches_linear_scan() {
        let f = random_fn(3000, 7);
        let mut rng = seeded_stream(8, 92);
        for _ in 0..2000 {
            let p = Point2::new(rng.gen(), rng.gen());
            let direct: f64 = f
                .terms()
                .iter()
                .filter(|t| t.rect.contains(p))
                .map(|t| t.weight)
                .sum();
            assert_eq!(f.eval(p), direct);
        }
    }

    #[test]
    fn scaled_mass_scales() {
        let f = random_fn(100, 9);
        let g = f.scaled(0.5).unwrap();
        assert!((g.mass() - 0.5 * f.mass()).abs() <= 1e-12 * f.mass());
    }

    #[test]
    fn boxfn_roundtrip_bit_exact() {
        let f = random_fn(500, 11);
        let mut buf = Vec::new();
        write_boxfn(&f, &mut buf).unwrap();
        let g = read_boxfn(&mut buf.as_slice()).unwrap();
        assert_eq!(f.terms().len(), g.terms().len());
        assert_eq!(f.mass().to_bits(), g.mass().to_bits());
        for (a, b) in f.terms().iter().zip(g.terms()) {
            assert_eq!(a.rect.xlo.to_bits(), b.rect.xlo.to_bits());
            assert_eq!(a.rect.xhi.to_bits(), b.rect.xhi.to_bits());
            assert_eq!(a.rect.ylo.to_bits(), b.rect.ylo.to_bits());
            assert_eq!(a.rect.yhi.to_bits(), b.rect.yhi.to_bits());
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
    }

    #[test]
    fn boxfn_detects_tampered_mass() {
        let f = random_fn(50, 13);
        let mut buf = Vec::new();
        write_boxfn(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let tampered = lines[2].replacen("0x", "0x1", 1);
        lines[2] = &tampered;
        let joined = lines.join("\n");
        let err = read_boxfn(&mut joined.as_bytes());
        assert!(err.is_err());
    }
}
