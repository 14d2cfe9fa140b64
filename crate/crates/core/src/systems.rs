//! Fiber maps and the step skew-product cocycle.
//!
//! A [`SkewSystem`] holds `k` orientation-preserving circle diffeomorphisms.
//! Words act on the fiber by forward composition, first symbol first, and the
//! derivative of a composition is carried as a sum of logarithms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circle::{reduce, Angle};
use crate::error::{input, Error, Result};
use crate::symbolic::Word;

/// Golden ratio conjugate, used as the default irrational rotation.
pub const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Default grid for derivative suprema and moduli of continuity.
pub const DEFAULT_GRID: usize = 10_000;

/// C¹ circle map given by periodic cubic Hermite interpolation in a lift.
///
/// Knots are `breakpoints[i] -> values[i]` with derivative `slopes[i]`; the
/// breakpoints span less than one period and the closing knot
/// `(x₀ + 1, y₀ + 1, s₀)` is implied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HermiteSpec", into = "HermiteSpec")]
pub struct PiecewiseSmooth {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ms: Vec<f64>,
    clamped: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HermiteSpec {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl TryFrom<HermiteSpec> for PiecewiseSmooth {
    type Error = Error;
    fn try_from(s: HermiteSpec) -> Result<PiecewiseSmooth> {
        PiecewiseSmooth::new(&s.breakpoints, &s.values, &s.slopes)
    }
}

impl From<PiecewiseSmooth> for HermiteSpec {
    fn from(p: PiecewiseSmooth) -> HermiteSpec {
        let n = p.xs.len() - 1;
        HermiteSpec { breakpoints: p.xs[..n].to_vec(), values: p.ys[..n].to_vec(), slopes: p.ms[..n].to_vec() }
    }
}

impl PiecewiseSmooth {
    pub fn new(breakpoints: &[f64], values: &[f64], slopes: &[f64]) -> Result<PiecewiseSmooth> {
        let n = breakpoints.len();
        if n == 0 || values.len() != n || slopes.len() != n {
            return input("piecewise map needs equally many breakpoints, values and slopes");
        }
        if breakpoints.iter().chain(values).chain(slopes).any(|v| !v.is_finite()) {
            return input("piecewise map parameters must be finite");
        }
        let mut xs = breakpoints.to_vec();
        let mut ys = values.to_vec();
        let mut ms = slopes.to_vec();
        xs.push(xs[0] + 1.0);
        ys.push(ys[0] + 1.0);
        ms.push(ms[0]);
        for i in 0..n {
            if !(xs[i + 1] > xs[i]) {
                return input("breakpoints must be strictly increasing within one period");
            }
            if !(ys[i + 1] > ys[i]) {
                return input("values must be strictly increasing within one period");
            }
            if !(ms[i] > 0.0) {
                return input("slopes must be positive");
            }
        }
        let mut clamped = false;
        // Fritsch-Carlson style clamping, repeated until every segment has a
        // positive derivative.
        for _ in 0..32 {
            let mut changed = false;
            for i in 0..n {
                let h = xs[i + 1] - xs[i];
                let delta = (ys[i + 1] - ys[i]) / h;
                if segment_min_slope(ms[i], ms[i + 1], delta) <= 1e-12 * delta {
                    let a = ms[i] / delta;
                    let b = ms[i + 1] / delta;
                    let tau = 2.9 / (a * a + b * b).sqrt();
                    ms[i] = tau * a * delta;
                    ms[i + 1] = tau * b * delta;
                    if i + 1 == n {
                        ms[0] = ms[n];
                    }
                    if i == 0 {
                        ms[n] = ms[0];
                    }
                    changed = true;
                    clamped = true;
                }
            }
            if !changed {
                return Ok(PiecewiseSmooth { xs, ys, ms, clamped });
            }
        }
        Err(Error::Construction("slope clamping did not converge".into()))
    }

    /// Whether any prescribed slope had to be reduced to keep the map monotone.
    pub fn clamped(&self) -> bool {
        self.clamped
    }

    fn locate_x(&self, t: f64) -> usize {
        let n = self.xs.len() - 1;
        match self.xs[..n].partition_point(|&v| v <= t) {
            0 => 0,
            p => p - 1,
        }
    }

    fn locate_y(&self, t: f64) -> usize {
        let n = self.ys.len() - 1;
        match self.ys[..n].partition_point(|&v| v <= t) {
            0 => 0,
            p => p - 1,
        }
    }

    fn coeffs(&self, i: usize) -> (f64, f64, f64, f64, f64) {
        let h = self.xs[i + 1] - self.xs[i];
        let delta = (self.ys[i + 1] - self.ys[i]) / h;
        let m0 = self.ms[i];
        let m1 = self.ms[i + 1];
        let c2 = 3.0 * delta - 2.0 * m0 - m1;
        let c3 = m0 + m1 - 2.0 * delta;
        (h, self.ys[i], m0, c2, c3)
    }

    /// Lift with `lift(x + 1) = lift(x) + 1`.
    pub fn lift(&self, x: f64) -> f64 {
        let x0 = self.xs[0];
        let t = x0 + reduce(x - x0);
        let shift = (x - t).round();
        let i = self.locate_x(t);
        let (h, y0, m0, c2, c3) = self.coeffs(i);
        let u = (t - self.xs[i]) / h;
        shift + y0 + h * u * (m0 + u * (c2 + u * c3))
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let x0 = self.xs[0];
        let t = x0 + reduce(x - x0);
        let i = self.locate_x(t);
        let (h, _, m0, c2, c3) = self.coeffs(i);
        let u = (t - self.xs[i]) / h;
        m0 + u * (2.0 * c2 + 3.0 * c3 * u)
    }

    /// Lift of the inverse map.
    pub fn inv_lift(&self, y: f64) -> f64 {
        let y0 = self.ys[0];
        let t = y0 + reduce(y - y0);
        let shift = (y - t).round();
        let i = self.locate_y(t);
        let (h, yi, m0, c2, c3) = self.coeffs(i);
        let target = t - yi;
        let g = |u: f64| h * u * (m0 + u * (c2 + u * c3)) - target;
        let dg = |u: f64| h * (m0 + u * (2.0 * c2 + 3.0 * c3 * u));
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        let span = self.ys[i + 1] - yi;
        let mut u = (target / span).clamp(0.0, 1.0);
        for _ in 0..100 {
            let v = g(u);
            if v == 0.0 {
                break;
            }
            if v < 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let mut next = u - v / dg(u);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() <= 1e-17 || hi - lo <= 1e-17 {
                u = next;
                break;
            }
            u = next;
        }
        shift + self.xs[i] + h * u
    }
}

fn segment_min_slope(m0: f64, m1: f64, delta: f64) -> f64 {
    // derivative in the normalized variable u is m0 + 2 c2 u + 3 c3 u²
    let c2 = 3.0 * delta - 2.0 * m0 - m1;
    let c3 = m0 + m1 - 2.0 * delta;
    let q = |u: f64| m0 + u * (2.0 * c2 + 3.0 * c3 * u);
    let mut best = m0.min(m1);
    if c3 != 0.0 {
        let u = -c2 / (3.0 * c3);
        if u > 0.0 && u < 1.0 {
            best = best.min(q(u));
        }
    }
    best
}

/// One fiber map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FiberMap {
    Rotation {
        angle: f64,
    },
    /// Induced by `z ↦ (z + t)/(1 + t z)` on the unit circle.
    Mobius {
        t: f64,
    },
    PiecewiseSmooth(PiecewiseSmooth),
    Inverse {
        of: Box<FiberMap>,
    },
}

impl FiberMap {
    pub fn validate(&self) -> Result<()> {
        match self {
            FiberMap::Rotation { angle } if !angle.is_finite() => input("rotation angle must be finite"),
            FiberMap::Mobius { t } if !(t.abs() < 1.0) => {
                input(format!("Möbius parameter must lie in (-1, 1), got {t}"))
            }
            FiberMap::Inverse { of } => of.validate(),
            _ => Ok(()),
        }
    }

    /// The inverse map, simplified where the family is closed under inversion.
    pub fn inverse(&self) -> FiberMap {
        match self {
            FiberMap::Rotation { angle } => FiberMap::Rotation { angle: -angle },
            FiberMap::Mobius { t } => FiberMap::Mobius { t: -t },
            FiberMap::Inverse { of } => (**of).clone(),
            other => FiberMap::Inverse { of: Box::new(other.clone()) },
        }
    }

    /// Lift of the map; continuous in `x` with `lift(x + 1) = lift(x) + 1`.
    pub fn lift(&self, x: f64) -> f64 {
        match self {
            FiberMap::Rotation { angle } => x + angle,
            FiberMap::Mobius { t } => {
                let (sn, cs) = sincos_2pi(x);
                x - (t * sn).atan2(1.0 + t * cs) / PI
            }
            FiberMap::PiecewiseSmooth(p) => p.lift(x),
            FiberMap::Inverse { of } => of.inv_lift(x),
        }
    }

    pub fn inv_lift(&self, y: f64) -> f64 {
        match self {
            FiberMap::Rotation { angle } => y - angle,
            FiberMap::Mobius { t } => FiberMap::Mobius { t: -t }.lift(y),
            FiberMap::PiecewiseSmooth(p) => p.inv_lift(y),
            FiberMap::Inverse { of } => of.lift(y),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        reduce(self.lift(x))
    }

    #[inline]
    pub fn inv_eval(&self, y: f64) -> f64 {
        reduce(self.inv_lift(y))
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            FiberMap::Rotation { .. } => 1.0,
            FiberMap::Mobius { t } => (1.0 - t * t) / (1.0 + t * t + 2.0 * t * sincos_2pi(x).1),
            FiberMap::PiecewiseSmooth(p) => p.deriv(x),
            FiberMap::Inverse { of } => 1.0 / of.deriv(of.inv_eval(x)),
        }
    }

    pub fn inv_deriv(&self, y: f64) -> f64 {
        1.0 / self.deriv(self.inv_eval(y))
    }

    #[inline]
    pub fn log_deriv(&self, x: f64) -> f64 {
        match self {
            FiberMap::Rotation { .. } => 0.0,
            _ => self.deriv(x).ln(),
        }
    }

    pub fn has_constant_derivative(&self) -> bool {
        match self {
            FiberMap::Rotation { .. } => true,
            FiberMap::Mobius { t } => *t == 0.0,
            FiberMap::Inverse { of } => of.has_constant_derivative(),
            FiberMap::PiecewiseSmooth(_) => false,
        }
    }
}

/// Point and log derivative of a composition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocycleResult {
    pub point: Angle,
    pub log_deriv: f64,
}

/// Step skew-product fiber data: `k ≥ 2` maps indexed by the alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem", into = "RawSystem")]
pub struct SkewSystem {
    maps: Vec<FiberMap>,
}

#[derive(Serialize, Deserialize)]
struct RawSystem {
    maps: Vec<FiberMap>,
}

impl TryFrom<RawSystem> for SkewSystem {
    type Error = Error;
    fn try_from(r: RawSystem) -> Result<SkewSystem> {
        SkewSystem::new(r.maps)
    }
}

impl From<SkewSystem> for RawSystem {
    fn from(s: SkewSystem) -> RawSystem {
        RawSystem { maps: s.maps }
    }
}

impl SkewSystem {
    pub fn new(maps: Vec<FiberMap>) -> Result<SkewSystem> {
        if maps.len() < 2 {
            return input(format!("a skew system needs k >= 2 maps, got {}", maps.len()));
        }
        if maps.len() > 255 {
            return input("alphabets larger than 255 symbols are not supported");
        }
        for m in &maps {
            m.validate()?;
        }
        Ok(SkewSystem { maps })
    }

    /// Canonical synthetic blender pair on `[a, b] = [0, 0.5]` with
    /// superposition interval `[c, d] = [0.2, 0.3]`.
    ///
    /// `g₀` is affine of slope 5/3 on `[0, 0.3]` and contracts at rate 0.6
    /// around an attracting fixed point near 0.867. `g₁` is affine of slope 1.5
    /// on `[0.2, 0.5]` and has no fixed point, so it drifts every orbit around
    /// the circle.
    pub fn synthetic_blender() -> SkewSystem {
        let g0 = PiecewiseSmooth::new(
            &[0.0, 0.3, 0.35, 0.9],
            &[0.0, 0.5, 167.0 / 300.0, 266.0 / 300.0],
            &[5.0 / 3.0, 5.0 / 3.0, 0.6, 0.6],
        )
        .expect("blender g0 knots");
        let g1 = PiecewiseSmooth::new(
            &[0.2, 0.5, 0.6, 1.1],
            &[0.0, 0.45, 67.0 / 120.0, 107.0 / 120.0],
            &[1.5, 1.5, 2.0 / 3.0, 2.0 / 3.0],
        )
        .expect("blender g1 knots");
        SkewSystem { maps: vec![FiberMap::PiecewiseSmooth(g0), FiberMap::PiecewiseSmooth(g1)] }
    }

    /// `f₀ = Möbius(t)`, `f₁ = Rotation(rho)`.
    pub fn mobius_rotation(t: f64, rho: f64) -> Result<SkewSystem> {
        SkewSystem::new(vec![FiberMap::Mobius { t }, FiberMap::Rotation { angle: rho }])
    }

    /// Contraction-expansion-rotation example: Möbius(0.5) and the golden rotation.
    pub fn contraction_expansion_rotation() -> SkewSystem {
        SkewSystem::mobius_rotation(0.5, GOLDEN).expect("valid defaults")
    }

    pub fn rotations(angles: &[f64]) -> Result<SkewSystem> {
        SkewSystem::new(angles.iter().map(|&a| FiberMap::Rotation { angle: a }).collect())
    }

    /// The system of inverse maps, with the same alphabet.
    pub fn inverse(&self) -> SkewSystem {
        SkewSystem { maps: self.maps.iter().map(FiberMap::inverse).collect() }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[FiberMap] {
        &self.maps
    }

    #[inline]
    pub fn map(&self, s: u8) -> &FiberMap {
        &self.maps[s as usize]
    }

    pub fn check_word(&self, w: &Word) -> Result<()> {
        match w.symbols().iter().find(|&&s| s as usize >= self.k()) {
            Some(s) => input(format!("symbol {s} outside alphabet of size {}", self.k())),
            None => Ok(()),
        }
    }

    /// Forward composition without validation: returns `(point, log_deriv)`.
    #[inline]
    pub fn run(&self, w: &[u8], x: f64) -> (f64, f64) {
        let mut x = x;
        let mut ld = 0.0;
        for &s in w {
            let f = &self.maps[s as usize];
            ld += f.log_deriv(x);
            x = f.eval(x);
        }
        (x, ld)
    }

    /// Inverse composition `(f_[w])⁻¹` without validation.
    #[inline]
    pub fn run_backward(&self, w: &[u8], y: f64) -> (f64, f64) {
        let mut y = y;
        let mut ld = 0.0;
        for &s in w.iter().rev() {
            let f = &self.maps[s as usize];
            let x = f.inv_eval(y);
            ld -= f.log_deriv(x);
            y = x;
        }
        (y, ld)
    }

    /// Lift of `f_[w]` at `x`.
    pub fn lift_word(&self, w: &[u8], x: f64) -> f64 {
        let mut base = x.floor();
        let mut y = x - base;
        for &s in w {
            let l = self.maps[s as usize].lift(y);
            let fl = l.floor();
            base += fl;
            y = l - fl;
        }
        base + y
    }

    /// Whether every map is a rotation or a Möbius map.
    pub fn is_projective(&self) -> bool {
        self.maps.iter().all(|m| matches!(m, FiberMap::Rotation { .. } | FiberMap::Mobius { .. }))
    }
}

pub fn fiber_eval(sys: &SkewSystem, w: &Word, x: Angle) -> Result<CocycleResult> {
    sys.check_word(w)?;
    let (p, ld) = sys.run(w.symbols(), x.value());
    Ok(CocycleResult { point: Angle::new(p), log_deriv: ld })
}

pub fn fiber_eval_backward(sys: &SkewSystem, w: &Word, x: Angle) -> Result<CocycleResult> {
    sys.check_word(w)?;
    let (p, ld) = sys.run_backward(w.symbols(), x.value());
    Ok(CocycleResult { point: Angle::new(p), log_deriv: ld })
}

/// `(sin 2πx, cos 2πx)` with the argument reduced to an eighth of a turn
/// first, so quarter turns are exact.
pub fn sincos_2pi(x: f64) -> (f64, f64) {
    let r = x - x.round();
    let q = (4.0 * r).round();
    let (s, c) = (2.0 * PI * (r - 0.25 * q)).sin_cos();
    match q as i64 {
        0 => (s, c),
        1 => (c, -s),
        -1 => (-c, s),
        _ => (-s, -c),
    }
}

/// Grid approximation of ‖F‖, the largest derivative of any map or its inverse.
pub fn uniform_norm(sys: &SkewSystem, grid_size: usize) -> Result<f64> {
    if grid_size < 2 {
        return input(format!("grid size must be at least 2, got {grid_size}"));
    }
    let mut best: f64 = 1.0;
    for f in sys.maps() {
        if f.has_constant_derivative() {
            continue;
        }
        for i in 0..grid_size {
            let x = i as f64 / grid_size as f64;
            best = best.max(f.deriv(x)).max(f.inv_deriv(x));
        }
    }
    Ok(best)
}

/// Grid approximation of `Mod(δ)`, the largest oscillation of `log f_i'`
/// over windows of width `δ`.
pub fn modulus_of_continuity(sys: &SkewSystem, delta: f64, grid_size: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return input(format!("delta must lie in (0, 0.5), got {delta}"));
    }
    if grid_size < 2 {
        return input(format!("grid size must be at least 2, got {grid_size}"));
    }
    let n = grid_size;
    let w = ((delta * n as f64).floor() as usize).max(1);
    let mut best: f64 = 0.0;
    for f in sys.maps() {
        if f.has_constant_derivative() {
            continue;
        }
        let g: Vec<f64> = (0..n).map(|i| f.log_deriv(i as f64 / n as f64)).collect();
        best = best.max(window_oscillation(&g, w));
    }
    Ok(best)
}

/// Largest `max - min` over cyclic windows spanning `w` grid steps.
fn window_oscillation(g: &[f64], w: usize) -> f64 {
    use std::collections::VecDeque;
    let n = g.len();
    let len = w + 1;
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut best: f64 = 0.0;
    for j in 0..(n + len) {
        let v = g[j % n];
        while maxq.back().is_some_and(|&b| g[b % n] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(j);
        while minq.back().is_some_and(|&b| g[b % n] >= v) {
            minq.pop_back();
        }
        minq.push_back(j);
        while maxq.front().is_some_and(|&f| f + len <= j) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&f| f + len <= j) {
            minq.pop_front();
        }
        if j + 1 >= len {
            let hi = g[maxq.front().copied().unwrap() % n];
            let lo = g[minq.front().copied().unwrap() % n];
            best = best.max(hi - lo);
        }
    }
    best
}
