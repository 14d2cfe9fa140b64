//! Finite-time exponents, Birkhoff averages, a truncated weak* distance,
//! distortion measurements and fixed points of composed fiber maps.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::circle::{reduce, Angle, Arc};
use crate::error::{input, Error, Result};
use crate::symbolic::Word;
use crate::systems::{modulus_of_continuity, SkewSystem, DEFAULT_GRID};

/// Number of initial brackets used by [`twin_periodic`].
pub const FIXED_POINT_GRID: usize = 1 << 14;
/// Bisection tolerance for fixed points.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Grid used to measure distortion on an arc.
pub const DISTORTION_GRID: usize = 1000;
/// Number of bins in exponent histograms.
pub const HISTOGRAM_BINS: usize = 20;

fn nonempty(w: &Word) -> Result<()> {
    if w.is_empty() {
        input("word must be nonempty")
    } else {
        Ok(())
    }
}

/// `(1/|w|) log (f_[w])'(x)`.
pub fn finite_time_exponent(sys: &SkewSystem, w: &Word, x: Angle) -> Result<f64> {
    nonempty(w)?;
    sys.check_word(w)?;
    Ok(sys.run(w.symbols(), x.value()).1 / w.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Histogram {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() || lo == hi {
            let c = if values.is_empty() { 0.0 } else { lo };
            return Histogram { edges: vec![c, c], counts: vec![values.len()] };
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSummary {
    pub mean: f64,
    pub stddev: f64,
    pub histogram: Histogram,
    pub samples: Vec<f64>,
}

fn weights(sys: &SkewSystem, p: &[f64]) -> Result<WeightedIndex<f64>> {
    if p.len() != sys.k() {
        return input(format!("probability vector has length {}, expected {}", p.len(), sys.k()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return input("probabilities must be finite and nonnegative");
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return input(format!("probabilities sum to {s}, not 1"));
    }
    WeightedIndex::new(p).map_err(|e| Error::Input(e.to_string()))
}

fn random_word(rng: &mut ChaCha8Rng, dist: &WeightedIndex<f64>, n: usize) -> Vec<u8> {
    (0..n).map(|_| dist.sample(rng) as u8).collect()
}

/// Finite-time exponents along i.i.d. words drawn from `p`, from uniform points.
pub fn exponent_sample(sys: &SkewSystem, p: &[f64], n: usize, trials: usize, seed: u64) -> Result<ExponentSummary> {
    let dist = weights(sys, p)?;
    if n == 0 || trials == 0 {
        return input("horizon and trials must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(Vec<u8>, f64)> = (0..trials)
        .map(|_| {
            let w = random_word(&mut rng, &dist, n);
            (w, rng.gen::<f64>())
        })
        .collect();
    let samples: Vec<f64> = jobs.par_iter().map(|(w, x)| sys.run(w, *x).1 / n as f64).collect();
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / trials as f64;
    Ok(ExponentSummary { mean, stddev: var.sqrt(), histogram: Histogram::new(&samples, HISTOGRAM_BINS), samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Cos,
    Sin,
}

/// `ψ(ξ, x) = 1[ξ ∈ [cylinder]] · trig(2π · freq · x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub cylinder: Word,
    pub freq: u32,
    pub phase: Phase,
}

impl TestFunction {
    pub fn fiber(&self, x: f64) -> f64 {
        let a = TAU * self.freq as f64 * x;
        match self.phase {
            Phase::Cos => a.cos(),
            Phase::Sin => a.sin(),
        }
    }

    /// Value at a point whose future symbols are `tail`; a tail shorter than
    /// the cylinder does not match.
    pub fn eval(&self, tail: &[u8], x: f64) -> f64 {
        if tail.starts_with(self.cylinder.symbols()) {
            self.fiber(x)
        } else {
            0.0
        }
    }

    /// Value at a point of the periodic sequence `w^∞` shifted by `k`.
    fn eval_periodic(&self, w: &[u8], k: usize, x: f64) -> f64 {
        let p = w.len();
        if self.cylinder.symbols().iter().enumerate().all(|(j, &c)| w[(k + j) % p] == c) {
            self.fiber(x)
        } else {
            0.0
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match (self.freq, self.phase) {
            (0, Phase::Sin) => 0.0,
            _ => 1.0,
        }
    }
}

/// Ordered test functions for the weak* distance.
///
/// Order: the empty cylinder with `cos 0`, `cos 2πx`, `sin 2πx`; then for
/// depth `d = 1, 2, ...` every cylinder of length `d` in lexicographic order
/// with `cos 0` followed by `cos` and `sin` of frequencies `1..=d+1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialFamily {
    pub functions: Vec<TestFunction>,
    pub sup_norms: Vec<f64>,
}

impl PotentialFamily {
    pub fn new(functions: Vec<TestFunction>) -> Result<PotentialFamily> {
        let sup_norms: Vec<f64> = functions.iter().map(|f| f.sup_norm()).collect();
        if sup_norms.iter().any(|&n| !(n > 0.0 && n <= 1.0)) {
            return input("every test function needs a sup norm in (0, 1]");
        }
        Ok(PotentialFamily { functions, sup_norms })
    }

    /// First `count` functions of the standard order over `k` symbols.
    pub fn standard(k: usize, count: usize) -> PotentialFamily {
        let mut fs = Vec::with_capacity(count);
        let mut depth = 0usize;
        let mut cylinders = vec![Vec::<u8>::new()];
        'outer: loop {
            for c in &cylinders {
                let top = depth as u32 + 1;
                let mut push = |freq, phase| {
                    fs.push(TestFunction { cylinder: Word::new(c.clone()), freq, phase });
                    fs.len() >= count
                };
                if push(0, Phase::Cos) {
                    break 'outer;
                }
                for f in 1..=top {
                    if push(f, Phase::Cos) || push(f, Phase::Sin) {
                        break 'outer;
                    }
                }
            }
            if count == 0 {
                break;
            }
            depth += 1;
            cylinders = cylinders
                .iter()
                .flat_map(|c| {
                    (0..k as u8).map(move |s| {
                        let mut c2 = c.clone();
                        c2.push(s);
                        c2
                    })
                })
                .collect();
        }
        fs.truncate(count);
        let sup_norms = vec![1.0; fs.len()];
        PotentialFamily { functions: fs, sup_norms }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// `(1/|w|) Σ_{k<|w|} ψ(σᵏξ, f^k(x))` with `ξ` starting with `w`.
pub fn birkhoff_average(sys: &SkewSystem, psi: &TestFunction, w: &Word, x: Angle) -> Result<f64> {
    nonempty(w)?;
    sys.check_word(w)?;
    let s = w.symbols();
    let mut y = x.value();
    let mut acc = 0.0;
    for k in 0..s.len() {
        acc += psi.eval(&s[k..], y);
        y = sys.map(s[k]).eval(y);
    }
    Ok(acc / s.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasureSupport {
    PeriodicOrbit { word: Word, point: f64 },
    WordSampled { probabilities: Vec<f64>, horizon: usize, samples: usize, seed: u64 },
}

/// Measure known through its averages of a registered potential family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub support: MeasureSupport,
    pub family: Vec<TestFunction>,
    pub averages: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Orbit average over one period of `w^∞` from `x`.
    pub fn periodic(sys: &SkewSystem, w: &Word, x: Angle, family: &PotentialFamily) -> Result<EmpiricalMeasure> {
        nonempty(w)?;
        sys.check_word(w)?;
        let mut pts = Vec::with_capacity(w.len());
        let mut y = x.value();
        for &c in w.symbols() {
            pts.push(y);
            y = sys.map(c).eval(y);
        }
        EmpiricalMeasure::from_orbit(w, &pts, family)
    }

    /// Periodic measure from precomputed orbit points, one per symbol of `w`.
    pub fn from_orbit(w: &Word, orbit: &[f64], family: &PotentialFamily) -> Result<EmpiricalMeasure> {
        nonempty(w)?;
        if orbit.len() != w.len() {
            return input(format!("orbit has {} points for a word of length {}", orbit.len(), w.len()));
        }
        let s = w.symbols();
        let averages = family
            .functions
            .iter()
            .map(|f| orbit.iter().enumerate().map(|(k, &y)| f.eval_periodic(s, k, y)).sum::<f64>() / s.len() as f64)
            .collect();
        Ok(EmpiricalMeasure {
            support: MeasureSupport::PeriodicOrbit { word: w.clone(), point: orbit[0] },
            family: family.functions.clone(),
            averages,
        })
    }

    /// Average of Birkhoff averages over `samples` random words of length
    /// `horizon` drawn i.i.d. from `p`, from uniform starting points.
    pub fn sampled(
        sys: &SkewSystem,
        p: &[f64],
        horizon: usize,
        samples: usize,
        seed: u64,
        family: &PotentialFamily,
    ) -> Result<EmpiricalMeasure> {
        let dist = weights(sys, p)?;
        if horizon == 0 || samples == 0 {
            return input("horizon and samples must be positive");
        }
        let depth = family.functions.iter().map(|f| f.cylinder.len()).max().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sums = vec![0.0; family.len()];
        for _ in 0..samples {
            let w = random_word(&mut rng, &dist, horizon + depth);
            let mut y = rng.gen::<f64>();
            for k in 0..horizon {
                for (acc, f) in sums.iter_mut().zip(&family.functions) {
                    *acc += f.eval(&w[k..], y);
                }
                y = sys.map(w[k]).eval(y);
            }
        }
        let n = (horizon * samples) as f64;
        Ok(EmpiricalMeasure {
            support: MeasureSupport::WordSampled { probabilities: p.to_vec(), horizon, samples, seed },
            family: family.functions.clone(),
            averages: sums.into_iter().map(|s| s / n).collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub value: f64,
    /// Upper bound on the omitted terms, `2^{-K}`.
    pub truncation_bound: f64,
}

/// `Σ_{i=1..K} 2^{-i} |∫ψᵢ dμ − ∫ψᵢ dν| / (2‖ψᵢ‖∞)`.
pub fn measure_distance(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    family: &PotentialFamily,
    k: usize,
) -> Result<Distance> {
    if k > family.len() {
        return input(format!("truncation {k} exceeds family size {}", family.len()));
    }
    for m in [mu, nu] {
        if m.averages.len() < k || m.family.len() < k || m.family[..k] != family.functions[..k] {
            return input("measure was registered with a different potential family");
        }
    }
    let mut value = 0.0;
    let mut scale = 1.0;
    for i in 0..k {
        scale *= 0.5;
        value += scale * (mu.averages[i] - nu.averages[i]).abs() / (2.0 * family.sup_norms[i]);
    }
    Ok(Distance { value: value.min(1.0), truncation_bound: 0.5f64.powi(k as i32) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub status: CheckStatus,
    /// Largest measured `log dist f^ℓ|_Z` over all prefixes.
    pub max_log_dist: f64,
    /// `|w| · ε_D`.
    pub bound: f64,
    /// Running maximum of the measured distortion over prefixes `0..=ℓ`.
    pub per_prefix: Vec<f64>,
    pub first_violation: Option<usize>,
    pub reason: Option<String>,
}

/// Measures `log dist f^ℓ|_Z` on a grid for every prefix of `w` and compares
/// it with `ℓ ε_D`, provided `Mod(2δ₀) ≤ ε_D` and
/// `|(f^ℓ)'(center)| < δ₀ e^{-ℓ ε_D} / r` for `ℓ < |w|`, `r` the radius of `Z`.
pub fn distortion_check(sys: &SkewSystem, w: &Word, z: &Arc, eps_d: f64, delta0: f64) -> Result<DistortionReport> {
    nonempty(w)?;
    sys.check_word(w)?;
    if !(eps_d > 0.0) || !(delta0 > 0.0 && delta0 < 0.25) {
        return input(format!("need eps_D > 0 and delta0 in (0, 0.25), got {eps_d}, {delta0}"));
    }
    let s = w.symbols();
    let m = s.len();
    let na = |reason: String| DistortionReport {
        status: CheckStatus::NotApplicable,
        max_log_dist: f64::NAN,
        bound: m as f64 * eps_d,
        per_prefix: Vec::new(),
        first_violation: None,
        reason: Some(reason),
    };
    let md = modulus_of_continuity(sys, 2.0 * delta0, DEFAULT_GRID)?;
    if md > eps_d {
        return Ok(na(format!("Mod(2 delta0) = {md} exceeds eps_D")));
    }
    let r = 0.5 * z.length();
    let mut y = z.center();
    let mut ld = 0.0;
    for (l, &c) in s.iter().enumerate() {
        let lim = (delta0 / r).ln() - l as f64 * eps_d;
        if !(ld < lim) {
            return Ok(na(format!("derivative hypothesis fails at step {l}")));
        }
        ld += sys.map(c).log_deriv(y);
        y = sys.map(c).eval(y);
    }
    let grid = z.grid(DISTORTION_GRID);
    let mut pts = grid.clone();
    let mut logs = vec![0.0; grid.len()];
    let mut per = vec![0.0];
    let mut run: f64 = 0.0;
    let mut first = None;
    for (l, &c) in s.iter().enumerate() {
        let f = sys.map(c);
        for (p, lg) in pts.iter_mut().zip(logs.iter_mut()) {
            *lg += f.log_deriv(*p);
            *p = f.eval(*p);
        }
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d = hi - lo;
        if first.is_none() && d > (l + 1) as f64 * eps_d + 1e-12 {
            first = Some(l + 1);
        }
        run = run.max(d);
        per.push(run);
    }
    Ok(DistortionReport {
        status: if first.is_none() { CheckStatus::Pass } else { CheckStatus::Fail },
        max_log_dist: run,
        bound: m as f64 * eps_d,
        per_prefix: per,
        first_violation: first,
        reason: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub angle: f64,
    pub log_multiplier: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwinStatus {
    Found,
    NoFixedPoint,
    /// The map is the identity on the grid.
    Degenerate,
    /// More sign changes than the grid can separate.
    TooMany,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinResult {
    pub status: TwinStatus,
    pub fixed_points: Vec<FixedPoint>,
    /// First fixed point with negative log multiplier.
    pub attracting: Option<FixedPoint>,
    /// First fixed point with nonnegative log multiplier.
    pub repelling: Option<FixedPoint>,
}

/// Fixed points of `f_[w]` from sign changes of the lifted displacement on
/// [`FIXED_POINT_GRID`] points, refined by bisection.
pub fn twin_periodic(sys: &SkewSystem, w: &Word) -> Result<TwinResult> {
    nonempty(w)?;
    sys.check_word(w)?;
    let s = w.symbols();
    let n = FIXED_POINT_GRID;
    let g = |x: f64| sys.lift_word(s, x) - x;
    let vals: Vec<f64> = (0..n).into_par_iter().map(|i| g(i as f64 / n as f64)).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let result = |status, fixed_points: Vec<FixedPoint>| {
        let attracting = fixed_points.iter().copied().find(|p| p.log_multiplier < 0.0);
        let repelling = fixed_points.iter().copied().find(|p| p.log_multiplier >= 0.0);
        TwinResult { status, fixed_points, attracting, repelling }
    };
    let shift = lo.ceil();
    if shift > hi {
        return Ok(result(TwinStatus::NoFixedPoint, Vec::new()));
    }
    if hi - lo < 1e-12 && (lo - lo.round()).abs() < 1e-12 {
        return Ok(result(TwinStatus::Degenerate, Vec::new()));
    }
    let d: Vec<f64> = vals.iter().map(|v| v - shift).collect();
    let mut roots = Vec::new();
    for i in 0..n {
        let (a, b) = (d[i], d[(i + 1) % n]);
        let x0 = i as f64 / n as f64;
        if a == 0.0 {
            roots.push(x0);
        } else if b != 0.0 && (a < 0.0) != (b < 0.0) {
            let (mut l, mut r) = (x0, x0 + 1.0 / n as f64);
            let sl = a < 0.0;
            while r - l > FIXED_POINT_TOL {
                let mid = 0.5 * (l + r);
                if (g(mid) - shift < 0.0) == sl {
                    l = mid;
                } else {
                    r = mid;
                }
            }
            roots.push(0.5 * (l + r));
        }
    }
    if roots.len() >= n / 2 {
        return Ok(result(TwinStatus::TooMany, Vec::new()));
    }
    let pts: Vec<FixedPoint> =
        roots.into_iter().map(|x| FixedPoint { angle: reduce(x), log_multiplier: sys.run(s, reduce(x)).1 }).collect();
    Ok(result(TwinStatus::Found, pts))
}
