//! Points and closed arcs of the circle `R/Z`.
//!
//! Arcs are stored as a left endpoint plus a length in `(0, 1]`; a length of
//! exactly one is the full circle. All comparisons between endpoints use an
//! absolute tolerance, [`ARC_TOL`] unless a caller passes its own.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// Default absolute tolerance for endpoint comparisons.
pub const ARC_TOL: f64 = 1e-12;

/// Reduce a real number into `[0, 1)`.
#[inline]
pub fn reduce(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Representative of `x` in `[-1/2, 1/2)`.
#[inline]
pub fn centered(x: f64) -> f64 {
    if (-0.5..0.5).contains(&x) {
        return x;
    }
    let r = reduce(x + 0.5) - 0.5;
    if r < -0.5 {
        r + 1.0
    } else {
        r
    }
}

/// A point of the circle, always reduced into `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub fn new(x: f64) -> Angle {
        Angle(reduce(x))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Signed displacement from `self` to `other`, in `[-1/2, 1/2)`.
    pub fn displacement(self, other: Angle) -> f64 {
        centered(other.0 - self.0)
    }

    /// Circle distance, in `[0, 1/2]`.
    pub fn distance(self, other: Angle) -> f64 {
        self.displacement(other).abs()
    }

    pub fn shifted(self, dx: f64) -> Angle {
        Angle::new(self.0 + dx)
    }
}

impl From<f64> for Angle {
    fn from(x: f64) -> Angle {
        Angle::new(x)
    }
}

impl std::fmt::Display for Angle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Oriented closed arc `[anchor, anchor + length]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArc", into = "RawArc")]
pub struct Arc {
    anchor: Angle,
    length: f64,
}

#[derive(Serialize, Deserialize)]
struct RawArc {
    anchor: f64,
    length: f64,
}

impl TryFrom<RawArc> for Arc {
    type Error = crate::Error;
    fn try_from(r: RawArc) -> Result<Arc> {
        Arc::new(r.anchor, r.length)
    }
}

impl From<Arc> for RawArc {
    fn from(a: Arc) -> RawArc {
        RawArc { anchor: a.anchor.0, length: a.length }
    }
}

impl Arc {
    /// Arc starting at `anchor` with the given length. Lengths outside
    /// `(0, 1]` are rejected.
    pub fn new(anchor: f64, length: f64) -> Result<Arc> {
        if !anchor.is_finite() {
            return input(format!("arc anchor must be finite, got {anchor}"));
        }
        if !(length > 0.0 && length <= 1.0) {
            return input(format!("arc length must lie in (0, 1], got {length}"));
        }
        Ok(Arc { anchor: Angle::new(anchor), length })
    }

    /// The full circle, anchored at 0.
    pub fn full() -> Arc {
        Arc { anchor: Angle(0.0), length: 1.0 }
    }

    /// Closed ball of radius `r` around `center`; saturates to the full circle.
    pub fn ball(center: f64, r: f64) -> Result<Arc> {
        if !(r > 0.0) {
            return input(format!("ball radius must be positive, got {r}"));
        }
        if 2.0 * r >= 1.0 {
            return Ok(Arc::full());
        }
        Arc::new(center - r, 2.0 * r)
    }

    /// Arc running in positive orientation from `x` to `y`.
    pub fn between(x: f64, y: f64) -> Result<Arc> {
        let len = reduce(y - x);
        Arc::new(x, len)
    }

    /// Internal constructor for lengths already known to be valid; tiny or
    /// collapsed lengths are kept positive.
    pub(crate) fn raw(anchor: f64, length: f64) -> Arc {
        let length = if length >= 1.0 {
            1.0
        } else if length > 0.0 {
            length
        } else {
            f64::MIN_POSITIVE
        };
        Arc { anchor: Angle::new(anchor), length }
    }

    #[inline]
    pub fn anchor(&self) -> Angle {
        self.anchor
    }

    #[inline]
    pub fn left(&self) -> f64 {
        self.anchor.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        reduce(self.anchor.0 + self.length)
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn is_full(&self) -> bool {
        self.length >= 1.0
    }

    pub fn center(&self) -> f64 {
        reduce(self.anchor.0 + 0.5 * self.length)
    }

    /// Point at fraction `s` of the way along the arc.
    pub fn point_at(&self, s: f64) -> f64 {
        reduce(self.anchor.0 + s * self.length)
    }

    /// `n + 1` equally spaced points including both endpoints.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let n = n.max(1);
        (0..=n).map(|i| self.point_at(i as f64 / n as f64)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.contains_tol(x, ARC_TOL)
    }

    pub fn contains_tol(&self, x: f64, tol: f64) -> bool {
        if self.is_full() {
            return true;
        }
        let o = reduce(x - self.anchor.0);
        o <= self.length + tol || o >= 1.0 - tol
    }

    /// Whether the two closed arcs share a point.
    pub fn intersects(&self, other: &Arc) -> bool {
        self.contains(other.left()) || other.contains(self.left())
    }

    /// Closed `r`-neighborhood; full circle once it wraps around.
    pub fn neighborhood(&self, r: f64) -> Result<Arc> {
        if !(r > 0.0) || !r.is_finite() {
            return input(format!("neighborhood radius must be positive, got {r}"));
        }
        if self.length + 2.0 * r >= 1.0 {
            return Ok(Arc::full());
        }
        Ok(Arc { anchor: Angle::new(self.anchor.0 - r), length: self.length + 2.0 * r })
    }

    pub fn scaled(&self, factor: f64) -> Result<Arc> {
        let len = self.length * factor;
        if len >= 1.0 {
            return Ok(Arc::full());
        }
        Arc::new(self.center() - 0.5 * len, len)
    }
}

impl std::fmt::Display for Arc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, len {}]", self.anchor.0, self.length)
    }
}

/// Signed covering margin of `a` over `b`: the smaller of the left and right
/// clearances. Nonnegative iff `a ⊇ b` exactly.
pub fn cover_margin(a: &Arc, b: &Arc) -> f64 {
    if a.is_full() {
        return f64::INFINITY;
    }
    if b.is_full() {
        return a.length - 1.0;
    }
    let o = reduce(b.left() - a.left());
    let inside = (o).min(a.length - o - b.length);
    let wrapped = (o - 1.0).min(a.length - (o - 1.0) - b.length);
    inside.max(wrapped)
}

pub fn arc_contains(a: &Arc, x: Angle) -> bool {
    a.contains(x.value())
}

pub fn arc_covers(a: &Arc, b: &Arc) -> bool {
    cover_margin(a, b) >= -ARC_TOL
}

pub fn arc_covers_tol(a: &Arc, b: &Arc, tol: f64) -> bool {
    cover_margin(a, b) >= -tol
}

pub fn neighborhood(a: &Arc, r: f64) -> Result<Arc> {
    a.neighborhood(r)
}

/// Image of an arc under an orientation-preserving circle homeomorphism,
/// obtained from its endpoints.
pub fn image_arc<F: Fn(f64) -> f64>(f: F, a: &Arc) -> Arc {
    if a.is_full() {
        return Arc::full();
    }
    let l = f(a.left());
    let r = f(a.right());
    let mut len = reduce(r - l);
    if len == 0.0 && a.length > 0.5 {
        len = 1.0;
    }
    Arc::raw(l, len)
}

/// Whether two arcs are disjoint with clearance at least `gap`.
pub fn disjoint(a: &Arc, b: &Arc, gap: f64) -> bool {
    if a.is_full() || b.is_full() {
        return false;
    }
    let o = reduce(b.left() - a.left());
    o > a.length + gap && o + b.length < 1.0 - gap
}
