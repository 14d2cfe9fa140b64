//! Arc arithmetic behind the covering searches.
//!
//! Long compositions shrink arcs far below the spacing of `f64` near their
//! position on the circle. An [`Engine`] fixes how fiber points are stored:
//! [`F64Engine`] keeps plain angles, while [`ProjEngine`] works for systems
//! made of rotations and Möbius maps and stores points projectively in the
//! coordinate `u = tan(πx)`, where both families act by 2×2 matrices with
//! dyadic entries. Differences of nearby projective points are exact up to the
//! final rounding, so arcs of length `1e-40` keep full relative precision.
//!
//! Derivatives are always evaluated in `f64` at the rounded angle.

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_traits::{Float, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::circle::{centered, reduce, Arc};
use crate::systems::{FiberMap, SkewSystem};

pub trait Engine: Sync {
    type Pt: Clone + Send + Sync + std::fmt::Debug;

    fn system(&self) -> &SkewSystem;
    fn point(&self, x: f64) -> Self::Pt;
    fn angle(&self, p: &Self::Pt) -> f64;
    fn forward(&self, s: u8, p: &Self::Pt) -> Self::Pt;
    fn backward(&self, s: u8, p: &Self::Pt) -> Self::Pt;
    /// `p + dx` on the circle.
    fn advance(&self, p: &Self::Pt, dx: f64) -> Self::Pt;
    /// Signed displacement from `p` to `q`, in `[-1/2, 1/2)`.
    fn gap(&self, p: &Self::Pt, q: &Self::Pt) -> f64;
    fn name(&self) -> &'static str;

    fn log_deriv(&self, s: u8, p: &Self::Pt) -> f64 {
        self.system().map(s).log_deriv(self.angle(p))
    }

    fn run(&self, w: &[u8], p: &Self::Pt) -> Self::Pt {
        let mut q = p.clone();
        for &s in w {
            q = self.forward(s, &q);
        }
        q
    }

    fn run_backward(&self, w: &[u8], p: &Self::Pt) -> Self::Pt {
        let mut q = p.clone();
        for &s in w.iter().rev() {
            q = self.backward(s, &q);
        }
        q
    }

    /// Point and accumulated log derivative of `f_[w]`.
    fn run_log(&self, w: &[u8], p: &Self::Pt) -> (Self::Pt, f64) {
        let mut q = p.clone();
        let mut ld = 0.0;
        for &s in w {
            ld += self.log_deriv(s, &q);
            q = self.forward(s, &q);
        }
        (q, ld)
    }

    /// Positive length of the arc from `l` to `r`.
    fn span(&self, l: &Self::Pt, r: &Self::Pt) -> f64 {
        let coarse = reduce(self.angle(r) - self.angle(l));
        if coarse > 1e-3 && coarse < 1.0 - 1e-3 {
            return coarse;
        }
        let g = self.gap(l, r);
        if g > 0.0 {
            g
        } else if coarse > 0.5 {
            1.0 + g
        } else {
            f64::MIN_POSITIVE
        }
    }
}

/// Closed arc with endpoints held by an engine.
#[derive(Clone, Debug)]
pub struct EArc<P> {
    pub left: P,
    pub right: P,
    pub len: f64,
}

impl<P: Clone> EArc<P> {
    pub fn is_full(&self) -> bool {
        self.len >= 1.0
    }
}

pub fn to_earc<E: Engine>(e: &E, a: &Arc) -> EArc<E::Pt> {
    let left = e.point(a.left());
    let right = if a.is_full() { left.clone() } else { e.advance(&left, a.length()) };
    EArc { left, right, len: a.length() }
}

pub fn to_arc<E: Engine>(e: &E, a: &EArc<E::Pt>) -> Arc {
    Arc::raw(e.angle(&a.left), a.len)
}

/// Point at fraction `s` along the arc.
pub fn point_at<E: Engine>(e: &E, a: &EArc<E::Pt>, s: f64) -> E::Pt {
    e.advance(&a.left, s * a.len)
}

pub fn image<E: Engine>(e: &E, a: &EArc<E::Pt>, w: &[u8]) -> EArc<E::Pt> {
    if a.is_full() {
        return a.clone();
    }
    let left = e.run(w, &a.left);
    let right = e.run(w, &a.right);
    let len = e.span(&left, &right);
    EArc { left, right, len }
}

pub fn image_step<E: Engine>(e: &E, a: &EArc<E::Pt>, s: u8) -> EArc<E::Pt> {
    image(e, a, &[s])
}

pub fn preimage<E: Engine>(e: &E, a: &EArc<E::Pt>, w: &[u8]) -> EArc<E::Pt> {
    if a.is_full() {
        return a.clone();
    }
    let left = e.run_backward(w, &a.left);
    let right = e.run_backward(w, &a.right);
    let len = e.span(&left, &right);
    EArc { left, right, len }
}

/// Minimum and maximum of `log (f_[w])'` over `grid + 1` equally spaced points of `a`.
pub fn log_deriv_range<E: Engine>(e: &E, a: &EArc<E::Pt>, w: &[u8], grid: usize) -> (f64, f64) {
    let grid = grid.max(1);
    (0..=grid)
        .into_par_iter()
        .map(|i| {
            let p = if i == 0 {
                a.left.clone()
            } else if i == grid {
                a.right.clone()
            } else {
                point_at(e, a, i as f64 / grid as f64)
            };
            e.run_log(w, &p).1
        })
        .fold(|| (f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)))
}

/// Plain double-precision angles.
#[derive(Clone, Debug)]
pub struct F64Engine {
    sys: SkewSystem,
}

impl F64Engine {
    pub fn new(sys: &SkewSystem) -> F64Engine {
        F64Engine { sys: sys.clone() }
    }
}

impl Engine for F64Engine {
    type Pt = f64;

    fn system(&self) -> &SkewSystem {
        &self.sys
    }
    fn point(&self, x: f64) -> f64 {
        reduce(x)
    }
    fn angle(&self, p: &f64) -> f64 {
        *p
    }
    fn forward(&self, s: u8, p: &f64) -> f64 {
        self.sys.map(s).eval(*p)
    }
    fn backward(&self, s: u8, p: &f64) -> f64 {
        self.sys.map(s).inv_eval(*p)
    }
    fn advance(&self, p: &f64, dx: f64) -> f64 {
        reduce(p + dx)
    }
    fn gap(&self, p: &f64, q: &f64) -> f64 {
        centered(q - p)
    }
    fn name(&self) -> &'static str {
        "f64"
    }
}

/// Projective point `(p : q)` with `tan(πx) = p/q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PPt {
    p: BigInt,
    q: BigInt,
}

#[derive(Clone, Debug)]
struct Mat2 {
    a: BigInt,
    b: BigInt,
    c: BigInt,
    d: BigInt,
}

impl Mat2 {
    fn apply(&self, x: &PPt, bits: u64) -> PPt {
        let p = &self.a * &x.p + &self.b * &x.q;
        let q = &self.c * &x.p + &self.d * &x.q;
        normalize(p, q, bits)
    }
}

fn normalize(p: BigInt, q: BigInt, bits: u64) -> PPt {
    let top = p.bits().max(q.bits());
    if top > bits + 32 {
        let sh = top - bits;
        PPt { p: p >> sh, q: q >> sh }
    } else {
        PPt { p, q }
    }
}

/// Exact dyadic representation `(mantissa, exponent)` of a finite float.
fn dyadic(x: f64) -> (BigInt, i32) {
    if x == 0.0 {
        return (BigInt::zero(), i32::MAX);
    }
    let (m, e, s) = Float::integer_decode(x);
    let mut v = BigInt::from(m);
    if s < 0 {
        v = -v;
    }
    (v, e as i32)
}

/// Integers proportional to the given floats, exactly.
fn common_scale(xs: &[f64]) -> Vec<BigInt> {
    let parts: Vec<(BigInt, i32)> = xs.iter().map(|&x| dyadic(x)).collect();
    let emin = parts.iter().map(|p| p.1).min().unwrap_or(0);
    parts.into_iter().map(|(m, e)| if m.is_zero() { m } else { m << ((e - emin) as usize) }).collect()
}

fn rotation_matrix(angle: f64) -> Mat2 {
    let (s, c) = (PI * angle).sin_cos();
    let v = common_scale(&[c, s]);
    Mat2 { a: v[0].clone(), b: v[1].clone(), c: -v[1].clone(), d: v[0].clone() }
}

fn mobius_matrix(t: f64) -> Mat2 {
    // u ↦ u (1 - t)/(1 + t), with 1 ± t formed exactly
    let (m, e) = dyadic(t);
    let (num, den) = if m.is_zero() {
        (BigInt::from(1), BigInt::from(1))
    } else if e < 0 {
        let one = BigInt::from(1) << ((-e) as usize);
        (&one - &m, &one + &m)
    } else {
        let tv = m << (e as usize);
        (BigInt::from(1) - &tv, BigInt::from(1) + &tv)
    };
    Mat2 { a: num, b: BigInt::zero(), c: BigInt::zero(), d: den }
}

fn scaled(a: &BigInt) -> (f64, i64) {
    let sh = a.bits().saturating_sub(62);
    ((a >> sh).to_f64().unwrap_or(0.0), sh as i64)
}

/// Floats with the same ratio as `a : b`; the smaller one may underflow only
/// when the ratio itself is below the `f64` range.
fn joint_f64(a: &BigInt, b: &BigInt) -> (f64, f64) {
    let (fa, sa) = scaled(a);
    let (fb, sb) = scaled(b);
    let m = sa.max(sb);
    let pow = |d: i64| if d < -2000 { 0.0 } else { 2f64.powi(d as i32) };
    (fa * pow(sa - m), fb * pow(sb - m))
}

/// Extended-precision engine for rotation and Möbius systems.
#[derive(Clone, Debug)]
pub struct ProjEngine {
    sys: SkewSystem,
    fwd: Vec<Mat2>,
    bwd: Vec<Mat2>,
    bits: u64,
}

impl ProjEngine {
    /// Default working precision in bits.
    pub const BITS: u64 = 256;

    /// Available only when every map is a rotation or a Möbius map.
    pub fn new(sys: &SkewSystem) -> Option<ProjEngine> {
        ProjEngine::with_bits(sys, ProjEngine::BITS)
    }

    pub fn with_bits(sys: &SkewSystem, bits: u64) -> Option<ProjEngine> {
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for f in sys.maps() {
            match f {
                FiberMap::Rotation { angle } => {
                    fwd.push(rotation_matrix(*angle));
                    bwd.push(rotation_matrix(-angle));
                }
                FiberMap::Mobius { t } => {
                    fwd.push(mobius_matrix(*t));
                    bwd.push(mobius_matrix(-t));
                }
                _ => return None,
            }
        }
        Some(ProjEngine { sys: sys.clone(), fwd, bwd, bits: bits.max(64) })
    }
}

impl Engine for ProjEngine {
    type Pt = PPt;

    fn system(&self) -> &SkewSystem {
        &self.sys
    }
    fn point(&self, x: f64) -> PPt {
        let (s, c) = (PI * reduce(x)).sin_cos();
        let v = common_scale(&[s, c]);
        PPt { p: v[0].clone(), q: v[1].clone() }
    }
    fn angle(&self, x: &PPt) -> f64 {
        let (p, q) = joint_f64(&x.p, &x.q);
        reduce(p.atan2(q) / PI)
    }
    fn forward(&self, s: u8, x: &PPt) -> PPt {
        self.fwd[s as usize].apply(x, self.bits)
    }
    fn backward(&self, s: u8, x: &PPt) -> PPt {
        self.bwd[s as usize].apply(x, self.bits)
    }
    fn advance(&self, x: &PPt, dx: f64) -> PPt {
        if dx == 0.0 {
            return x.clone();
        }
        rotation_matrix(dx).apply(x, self.bits)
    }
    fn gap(&self, x: &PPt, y: &PPt) -> f64 {
        let num = &y.p * &x.q - &x.p * &y.q;
        let den = &x.q * &y.q + &x.p * &y.p;
        let (n, d) = joint_f64(&num, &den);
        // (n : d) and (-n : -d) name the same displacement mod 1
        let (n, d) = if d < 0.0 { (-n, -d) } else { (n, d) };
        centered(n.atan2(d) / PI)
    }
    fn name(&self) -> &'static str {
        "projective"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projective_matches_f64() {
        let sys = SkewSystem::contraction_expansion_rotation();
        let pe = ProjEngine::new(&sys).unwrap();
        let fe = F64Engine::new(&sys);
        let w = [0u8, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0];
        for i in 0..200 {
            let x = i as f64 / 200.0 + 0.0013;
            let a = pe.angle(&pe.run(&w, &pe.point(x)));
            let b = fe.run(&w, &x);
            assert!(centered(a - b).abs() < 1e-12, "{x}: {a} vs {b}");
            let back = pe.angle(&pe.run_backward(&w, &pe.run(&w, &pe.point(x))));
            assert!(centered(back - x).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_arcs_keep_relative_precision() {
        let sys = SkewSystem::contraction_expansion_rotation();
        let pe = ProjEngine::new(&sys).unwrap();
        let a = to_earc(&pe, &Arc::new(0.3, 0.01).unwrap());
        // 60 contracting steps near the attractor: length ~ 0.01 * 3^-60
        let w = vec![0u8; 60];
        let im = image(&pe, &a, &w);
        let (lo, hi) = log_deriv_range(&pe, &a, &w, 50);
        assert!(im.len > 0.0 && im.len < 1e-25);
        let ratio = im.len / 0.01;
        assert!(ratio.ln() >= lo - 1e-9 && ratio.ln() <= hi + 1e-9);
        // pulling back recovers the original arc
        let back = preimage(&pe, &im, &w);
        assert!((back.len - 0.01).abs() < 1e-14);
    }

    #[test]
    fn f64_engine_span() {
        let sys = SkewSystem::rotations(&[0.25, 0.5]).unwrap();
        let fe = F64Engine::new(&sys);
        assert!((fe.span(&0.9, &0.1) - 0.2).abs() < 1e-15);
        let a = to_earc(&fe, &Arc::new(0.9, 0.2).unwrap());
        let im = image(&fe, &a, &[0, 1]);
        assert!((to_arc(&fe, &im).left() - 0.65).abs() < 1e-12);
    }
}
