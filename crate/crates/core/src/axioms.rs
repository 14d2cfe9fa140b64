//! Numerical checks of the covering and accessibility axioms.
//!
//! Everything here produces evidence on grids, never proofs. Coverings are
//! accepted only with a safety margin of [`COVER_MARGIN`] on the correct side,
//! and derivative bounds are minima over [`CERT_GRID`] points plus endpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::circle::{arc_covers_tol, cover_margin, image_arc, reduce, Arc, ARC_TOL};
use crate::engine::{self, EArc, Engine, F64Engine};
use crate::error::{input, Error, Result};
use crate::symbolic::{enumerate_words_capped, Word, ENUMERATION_CAP};
use crate::systems::{modulus_of_continuity, uniform_norm, SkewSystem, DEFAULT_GRID};

/// Required clearance of a certified covering.
pub const COVER_MARGIN: f64 = 1e-9;
/// Interior grid size for certificate derivative minima.
pub const CERT_GRID: usize = 1000;
/// Default number of arcs kept per BFS layer.
pub const DEFAULT_BEAM: usize = 4096;
/// Tolerance for the equalities in the blender conditions.
pub const BLENDER_TOL: f64 = 1e-10;

const MAX_SUCCESSOR_STEPS: usize = 10_000;
const MAX_ARC_PIECES: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringCertificate {
    pub word: Word,
    pub length: usize,
    pub image: Arc,
    pub min_log_deriv: f64,
    pub target_met: bool,
}

/// Blender data: two words and the configuration `a < c < d < b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlenderParams {
    pub w0: Word,
    pub w1: Word,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub beta: f64,
}

impl BlenderParams {
    /// Parameters matching [`SkewSystem::synthetic_blender`].
    pub fn synthetic() -> BlenderParams {
        BlenderParams { w0: Word::new(vec![0]), w1: Word::new(vec![1]), a: 0.0, b: 0.5, c: 0.2, d: 0.3, beta: 1.5 }
    }

    fn offsets(&self) -> (f64, f64, f64) {
        (reduce(self.c - self.a), reduce(self.d - self.a), reduce(self.b - self.a))
    }

    pub fn validate(&self, sys: &SkewSystem) -> Result<()> {
        sys.check_word(&self.w0)?;
        sys.check_word(&self.w1)?;
        if self.w0.is_empty() || self.w1.is_empty() {
            return input("blender words must be nonempty");
        }
        for v in [self.a, self.b, self.c, self.d, self.beta] {
            if !v.is_finite() {
                return input("blender parameters must be finite");
            }
        }
        let (c, d, b) = self.offsets();
        if !(0.0 < c && c < d && d < b) {
            return input(format!(
                "need a < c < d < b in arc order, got a={} c={} d={} b={}",
                self.a, self.c, self.d, self.b
            ));
        }
        if !(self.beta > 1.0) {
            return input(format!("beta must exceed 1, got {}", self.beta));
        }
        Ok(())
    }

    pub fn domain(&self) -> Arc {
        Arc::raw(self.a, self.offsets().2)
    }

    /// `[a, d]`, where `g0` expands.
    pub fn left_part(&self) -> Arc {
        Arc::raw(self.a, self.offsets().1)
    }

    /// `[c, b]`, where `g1` expands.
    pub fn right_part(&self) -> Arc {
        let (c, _, b) = self.offsets();
        Arc::raw(self.c, b - c)
    }

    /// The superposition interval `[c, d]`.
    pub fn superposition(&self) -> Arc {
        let (c, d, _) = self.offsets();
        Arc::raw(self.c, d - c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub pass: bool,
    /// Worst-case margin; negative when the condition fails.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlenderReport {
    pub expansion: ConditionCheck,
    pub boundary: ConditionCheck,
    pub covering: ConditionCheck,
}

impl BlenderReport {
    pub fn pass(&self) -> bool {
        self.expansion.pass && self.boundary.pass && self.covering.pass
    }
}

fn min_deriv_on(sys: &SkewSystem, w: &Word, a: &Arc, grid: usize) -> f64 {
    a.grid(grid).into_iter().map(|x| sys.run(w.symbols(), x).1.exp()).fold(f64::INFINITY, f64::min)
}

fn word_image(sys: &SkewSystem, w: &[u8], a: &Arc) -> Arc {
    image_arc(|x| sys.run(w, x).0, a)
}

pub fn blender_check(sys: &SkewSystem, p: &BlenderParams, grid_size: usize) -> Result<BlenderReport> {
    p.validate(sys)?;
    if grid_size < 2 {
        return input(format!("grid size must be at least 2, got {grid_size}"));
    }
    let m0 = min_deriv_on(sys, &p.w0, &p.left_part(), grid_size) - p.beta;
    let m1 = min_deriv_on(sys, &p.w1, &p.right_part(), grid_size) - p.beta;
    let em = m0.min(m1);

    let g0a = sys.run(p.w0.symbols(), p.a).0;
    let g1c = sys.run(p.w1.symbols(), p.c).0;
    let dev = crate::circle::Angle::new(g0a)
        .distance(crate::circle::Angle::new(p.a))
        .max(crate::circle::Angle::new(g1c).distance(crate::circle::Angle::new(p.a)));
    let bm = BLENDER_TOL - dev;

    // g0([a,d]) = [a,b] both ways, and g1([c,b]) ⊆ [a,b]
    let dom = p.domain();
    let im0 = word_image(sys, p.w0.symbols(), &p.left_part());
    let im1 = word_image(sys, p.w1.symbols(), &p.right_part());
    let cm = cover_margin(&im0, &dom).min(cover_margin(&dom, &im0)).min(cover_margin(&dom, &im1));

    Ok(BlenderReport {
        expansion: ConditionCheck { pass: em >= -BLENDER_TOL, margin: em },
        boundary: ConditionCheck { pass: bm >= 0.0, margin: bm },
        covering: ConditionCheck { pass: cm >= -BLENDER_TOL, margin: cm },
    })
}

/// Outcome of the successor algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessorCovering {
    pub certificate: CoveringCertificate,
    /// Number of `g0`/`g1` applications before `[c, d]` is covered.
    pub core_steps: usize,
    /// Exponent `s` of the tail `g1 g0^s`.
    pub tail_zeros: usize,
}

/// Grid minimum of `log (f_[w])'` on `h`, endpoints included.
pub fn min_log_deriv(sys: &SkewSystem, w: &[u8], h: &Arc) -> f64 {
    let e = F64Engine::new(sys);
    engine::log_deriv_range(&e, &engine::to_earc(&e, h), w, CERT_GRID + 1).0
}

/// Runs the successor rule on `h`, then appends `g1 g0^s` with the first `s`
/// for which the image covers `target`.
pub fn successor_covering(sys: &SkewSystem, p: &BlenderParams, h: &Arc, target: &Arc) -> Result<SuccessorCovering> {
    p.validate(sys)?;
    let (c, d, _) = p.offsets();
    let alpha = d - c;
    if h.length() > alpha + ARC_TOL {
        return Err(Error::Precondition(format!("|H| = {} must not exceed d - c = {alpha}", h.length())));
    }
    let dom = p.domain();
    if !arc_covers_tol(&dom, h, ARC_TOL) {
        return Err(Error::Precondition(format!("H = {h} is not inside [a, b]")));
    }
    let (left, right, sup) = (p.left_part(), p.right_part(), p.superposition());
    let mut word = Word::empty();
    let mut cur = *h;
    let mut core = 0;
    while !arc_covers_tol(&cur, &sup, ARC_TOL) {
        let g = if arc_covers_tol(&left, &cur, ARC_TOL) {
            &p.w0
        } else if arc_covers_tol(&right, &cur, ARC_TOL) {
            &p.w1
        } else {
            return Err(Error::Construction(format!(
                "successor step {core}: arc {cur} lies in neither [a, d] nor [c, b]"
            )));
        };
        cur = word_image(sys, g.symbols(), &cur);
        word = word.concat(g);
        core += 1;
        if core > MAX_SUCCESSOR_STEPS {
            return Err(Error::Construction("successor iteration did not terminate".into()));
        }
    }
    word = word.concat(&p.w1);
    cur = word_image(sys, p.w1.symbols(), &cur);
    let mut s = 0;
    while !arc_covers_tol(&cur, target, ARC_TOL) {
        if s >= MAX_SUCCESSOR_STEPS {
            return Err(Error::Construction(format!("tail g1 g0^s never covers {target}")));
        }
        cur = word_image(sys, p.w0.symbols(), &cur);
        word = word.concat(&p.w0);
        s += 1;
    }
    let image = word_image(sys, word.symbols(), h);
    let mld = min_log_deriv(sys, word.symbols(), h);
    let target_met = arc_covers_tol(&image, target, ARC_TOL);
    Ok(SuccessorCovering {
        certificate: CoveringCertificate { length: word.len(), word, image, min_log_deriv: mld, target_met },
        core_steps: core,
        tail_zeros: s,
    })
}

/// Recomputes a certificate from scratch: the image must match, `target_met`
/// must agree with a covering of `target` at tolerance `tol`, and the grid
/// expansion must reach `length · k5`.
pub fn validate_certificate(
    sys: &SkewSystem,
    h: &Arc,
    target: &Arc,
    k5: f64,
    tol: f64,
    cert: &CoveringCertificate,
) -> bool {
    if cert.word.len() != cert.length || sys.check_word(&cert.word).is_err() {
        return false;
    }
    let image = word_image(sys, cert.word.symbols(), h);
    let same = crate::circle::Angle::new(image.left()).distance(cert.image.anchor()) <= 1e-9
        && (image.length() - cert.image.length()).abs() <= 1e-9;
    let covers = arc_covers_tol(&image, target, tol);
    let mld = min_log_deriv(sys, cert.word.symbols(), h);
    same && covers == cert.target_met && covers && mld >= cert.length as f64 * k5 - 1e-9
}

/// Shortest-first search with the default double-precision engine.
pub fn cec_search(
    sys: &SkewSystem,
    j: &Arc,
    h: &Arc,
    k4: f64,
    k5: f64,
    max_depth: usize,
) -> Result<CoveringCertificate> {
    let e = F64Engine::new(sys);
    cec_search_with(&e, j, &engine::to_earc(&e, h), k4, k5, max_depth, DEFAULT_BEAM)
}

/// Breadth-first search for the first word whose image of `h` covers
/// `B(j, k4)` with margin and whose grid expansion is at least `ℓ·k5`.
///
/// Each layer is generated in lexicographic order. Once a layer exceeds
/// `beam` arcs, only the `beam` longest images survive (ties broken
/// lexicographically), and identical images are merged.
pub fn cec_search_with<E: Engine>(
    e: &E,
    j: &Arc,
    h: &EArc<E::Pt>,
    k4: f64,
    k5: f64,
    max_depth: usize,
    beam: usize,
) -> Result<CoveringCertificate> {
    let ha = engine::to_arc(e, h);
    if !ha.intersects(j) {
        return Err(Error::Precondition(format!("H = {ha} does not meet J = {j}")));
    }
    if !(k4 > 0.0) || !k4.is_finite() || !k5.is_finite() {
        return input(format!("need K4 > 0 and finite K5, got {k4}, {k5}"));
    }
    let target = j.neighborhood(k4)?;
    let k = e.system().k() as u8;
    let beam = beam.max(1);
    let mut layer: Vec<(Vec<u8>, EArc<E::Pt>)> = vec![(Vec::new(), h.clone())];
    for depth in 1..=max_depth {
        let mut next = Vec::with_capacity(layer.len() * k as usize);
        for (w, a) in &layer {
            for s in 0..k {
                let mut w2 = w.clone();
                w2.push(s);
                next.push((w2, engine::image_step(e, a, s)));
            }
        }
        for (w, a) in &next {
            let im = engine::to_arc(e, a);
            if cover_margin(&im, &target) < COVER_MARGIN {
                continue;
            }
            let mld = engine::log_deriv_range(e, h, w, CERT_GRID + 1).0;
            if mld >= depth as f64 * k5 {
                let image = engine::to_arc(e, &engine::image(e, h, w));
                return Ok(CoveringCertificate {
                    word: Word::new(w.clone()),
                    length: depth,
                    image,
                    min_log_deriv: mld,
                    target_met: true,
                });
            }
        }
        let mut seen = HashSet::new();
        next.retain(|(_, a)| seen.insert((e.angle(&a.left).to_bits(), a.len.to_bits())));
        if next.len() > beam {
            next.sort_by(|x, y| y.1.len.total_cmp(&x.1.len).then_with(|| x.0.cmp(&y.0)));
            next.truncate(beam);
            next.sort_by(|x, y| x.0.cmp(&y.0));
        }
        layer = next;
    }
    Err(Error::NotFound(format!("no covering word of length <= {max_depth} for H = {ha}")))
}

/// Settings for [`fit_cec_constants`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k4: f64,
    /// Expansion floor required of every certificate.
    pub k5_floor: f64,
    pub max_depth: usize,
    pub beam: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> FitConfig {
        FitConfig { k4: 0.01, k5_floor: 1e-3, max_depth: 64, beam: DEFAULT_BEAM, seed: 0 }
    }
}

/// One covering experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub size: f64,
    pub length: usize,
    /// `min_log_deriv / length`.
    pub rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub cec_plus: Option<bool>,
    pub cec_minus: Option<bool>,
    pub acc_plus: Option<bool>,
    pub acc_minus: Option<bool>,
}

impl Verdict {
    /// True when every checked axiom passed and at least one was checked.
    pub fn pass(&self) -> bool {
        let v = [self.cec_plus, self.cec_minus, self.acc_plus, self.acc_minus];
        v.iter().any(|x| x.is_some()) && v.iter().all(|x| x.unwrap_or(true))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub m_f: Option<usize>,
    pub m_b: Option<usize>,
    pub samples: Vec<Sample>,
    /// Fewer than two distinct sizes: `K2 = 0` and `K3` is the largest length.
    pub degenerate_fit: bool,
    /// Searches that failed, as `(size, message)`.
    pub failures: Vec<(f64, String)>,
    pub verdict: Verdict,
}

/// Exact solution of: minimize `Σ (k2 xᵢ + k3 − ℓᵢ)` subject to
/// `k2 xᵢ + k3 ≥ ℓᵢ`, `k2 ≥ 0`. Ties go to the smaller `k2`.
pub fn envelope_fit(points: &[(f64, f64)]) -> (f64, f64) {
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let k3_for = |k2: f64| points.iter().map(|&(x, l)| l - k2 * x).fold(f64::NEG_INFINITY, f64::max);
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let n = points.len() as f64;
    let cost = |k2: f64| n * k3_for(k2) + k2 * sx;
    let mut cands = vec![0.0];
    for (i, &(xi, li)) in points.iter().enumerate() {
        for &(xj, lj) in &points[i + 1..] {
            if (xi - xj).abs() > 1e-12 {
                let s = (li - lj) / (xi - xj);
                if s > 0.0 {
                    cands.push(s);
                }
            }
        }
    }
    cands.sort_by(f64::total_cmp);
    let mut best = (cands[0], cost(cands[0]));
    for &c in &cands[1..] {
        let v = cost(c);
        if v < best.1 - 1e-9 * best.1.abs().max(1.0) {
            best = (c, v);
        }
    }
    (best.0, k3_for(best.0))
}

/// Random arc of length `size` meeting `j`.
pub fn random_arc_meeting(rng: &mut ChaCha8Rng, j: &Arc, size: f64) -> Arc {
    let left = j.left() - size + rng.gen::<f64>() * (j.length() + size);
    Arc::raw(left, size)
}

/// Runs [`cec_search`] on `trials` random arcs of each size and fits the
/// constants of the covering axiom.
pub fn fit_cec_constants(
    sys: &SkewSystem,
    j: &Arc,
    sizes: &[f64],
    trials: usize,
    cfg: &FitConfig,
) -> Result<AxiomReport> {
    if sizes.is_empty() || trials == 0 {
        return input("need at least one size and one trial");
    }
    for w in sizes.windows(2) {
        if !(w[1] < w[0]) {
            return input("sizes must be strictly decreasing");
        }
    }
    if !(sizes[0] < j.length()) || !(sizes[sizes.len() - 1] > 0.0) {
        return input(format!("sizes must lie in (0, |J|) with |J| = {}", j.length()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs = Vec::new();
    for &s in sizes {
        for _ in 0..trials {
            jobs.push((s, random_arc_meeting(&mut rng, j, s)));
        }
    }
    let e = F64Engine::new(sys);
    let results: Vec<(f64, Result<CoveringCertificate>)> = jobs
        .par_iter()
        .map(|(s, h)| {
            let r = cec_search_with(&e, j, &engine::to_earc(&e, h), cfg.k4, cfg.k5_floor, cfg.max_depth, cfg.beam);
            (*s, r)
        })
        .collect();

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in results {
        match r {
            Ok(c) => samples.push(Sample { size: s, length: c.length, rate: c.min_log_deriv / c.length as f64 }),
            Err(err) => failures.push((s, err.to_string())),
        }
    }
    let k1 = sizes.iter().copied().find(|s| !failures.iter().any(|f| f.0 == *s)).unwrap_or(0.0);
    let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.size.ln().abs(), s.length as f64)).collect();
    let distinct = {
        let mut xs: Vec<u64> = sizes.iter().map(|s| s.to_bits()).collect();
        xs.retain(|b| samples.iter().any(|s| s.size.to_bits() == *b));
        xs.len()
    };
    let degenerate = distinct < 2;
    let (k2, k3) = if degenerate { (0.0, pts.iter().map(|p| p.1).fold(0.0, f64::max)) } else { envelope_fit(&pts) };
    let k5 = samples.iter().map(|s| s.rate).fold(f64::INFINITY, f64::min);
    let k5 = if k5.is_finite() { k5 } else { 0.0 };
    let ok = failures.is_empty() && !samples.is_empty() && k5 > 0.0;
    Ok(AxiomReport {
        k1,
        k2,
        k3,
        k4: cfg.k4,
        k5,
        m_f: None,
        m_b: None,
        samples,
        degenerate_fit: degenerate,
        failures,
        verdict: Verdict { cec_plus: Some(ok), ..Verdict::default() },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Every point is a forward image of a point of `J`.
    Forward,
    /// Every point has a forward image in `J`.
    Backward,
}

/// Finite union of closed sub-intervals of `[0, 1]`, kept sorted and merged.
#[derive(Clone, Debug, PartialEq)]
struct ArcSet(Vec<(f64, f64)>);

impl ArcSet {
    fn from_arcs(arcs: impl IntoIterator<Item = Arc>) -> ArcSet {
        let mut v = Vec::new();
        for a in arcs {
            if a.is_full() {
                return ArcSet(vec![(0.0, 1.0)]);
            }
            let l = a.left();
            let r = l + a.length();
            if r <= 1.0 {
                v.push((l, r));
            } else {
                v.push((l, 1.0));
                v.push((0.0, r - 1.0));
            }
        }
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (l, r) in v {
            match out.last_mut() {
                Some(last) if l <= last.1 => last.1 = last.1.max(r),
                _ => out.push((l, r)),
            }
        }
        ArcSet(out)
    }

    fn arcs(&self) -> impl Iterator<Item = Arc> + '_ {
        self.0.iter().map(|&(l, r)| Arc::raw(l, r - l))
    }

    fn contains(&self, x: f64) -> bool {
        let x = reduce(x);
        self.0.iter().any(|&(l, r)| {
            (x >= l - ARC_TOL && x <= r + ARC_TOL)
                || (r >= 1.0 - ARC_TOL && x <= ARC_TOL)
                || (l <= ARC_TOL && x >= 1.0 - ARC_TOL)
        })
    }
}

/// Smallest `m` such that every grid point reaches `J` by a word of length
/// at most `m`, found by growing the reachable set from `J` one layer at a time.
pub fn accessibility_depth(
    sys: &SkewSystem,
    j: &Arc,
    direction: Direction,
    grid_size: usize,
    max_depth: usize,
) -> Result<usize> {
    if grid_size < 1 {
        return input("grid size must be positive");
    }
    let grid: Vec<f64> = (0..grid_size).map(|i| i as f64 / grid_size as f64).collect();
    let mut set = ArcSet::from_arcs([*j]);
    for depth in 0..=max_depth {
        if grid.iter().all(|&x| set.contains(x)) {
            return Ok(depth);
        }
        if depth == max_depth {
            break;
        }
        let mut arcs: Vec<Arc> = set.arcs().collect();
        for f in sys.maps() {
            for a in set.arcs() {
                arcs.push(match direction {
                    Direction::Forward => image_arc(|x| f.eval(x), &a),
                    Direction::Backward => image_arc(|y| f.inv_eval(y), &a),
                });
            }
        }
        let next = ArcSet::from_arcs(arcs);
        if next.0.len() > MAX_ARC_PIECES {
            return Err(Error::Resource(format!("reachable set split into {} pieces", next.0.len())));
        }
        if next == set {
            break;
        }
        set = next;
    }
    Err(Error::NotFound(format!("grid not reached from J = {j} within depth {max_depth}")))
}

/// Constants consumed by the bounded and distortion-controlled coverings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CecConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
}

impl CecConstants {
    pub fn from_report(r: &AxiomReport) -> CecConstants {
        CecConstants { k1: r.k1, k2: r.k2, k3: r.k3, k4: r.k4, k5: r.k5 }
    }

    /// `K2 |log |H|| + K3`.
    pub fn length_bound(&self, h: f64) -> f64 {
        self.k2 * h.ln().abs() + self.k3
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedCovering {
    pub certificate: CoveringCertificate,
    /// The subarc of `H` mapped onto `B(J, K4)`.
    pub sub_arc: Arc,
    pub rounds: usize,
    pub lower: f64,
    pub upper: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub expansion_ok: bool,
}

/// Concatenates coverings of arcs of size `|H|` until the total length first
/// reaches `K2 |log |H|| + K3`.
pub fn bounded_covering(
    sys: &SkewSystem,
    j: &Arc,
    h: &Arc,
    k: &CecConstants,
    max_depth: usize,
) -> Result<BoundedCovering> {
    let lower = k.length_bound(h.length());
    let mut word = Word::empty();
    let mut cur = *h;
    let mut rounds = 0;
    loop {
        let c = cec_search(sys, j, &cur, k.k4, k.k5, max_depth)?;
        word = word.concat(&c.word);
        rounds += 1;
        if word.len() as f64 >= lower {
            break;
        }
        if rounds > 10_000 {
            return Err(Error::Construction("recursion does not reach the lower bound".into()));
        }
        // the image covers B(J, K4), so any arc centered on J of size below
        // K1 fits inside it; take the largest whose covering reaches the bound
        let need = lower - word.len() as f64;
        let mut size = (0.5 * k.k1).min(0.5 * j.length()).max(h.length());
        let mut next = None;
        while size >= h.length() {
            let a = Arc::raw(j.center() - 0.5 * size, size);
            let c = cec_search(sys, j, &a, k.k4, k.k5, max_depth)?;
            if c.length as f64 >= need {
                next = Some(c);
                break;
            }
            size *= 0.1;
        }
        match next {
            Some(c) => {
                word = word.concat(&c.word);
                rounds += 1;
                break;
            }
            None => cur = Arc::raw(j.center() - 0.5 * h.length(), h.length()),
        }
    }
    let target = j.neighborhood(k.k4)?;
    let e = F64Engine::new(sys);
    let sub = engine::to_arc(&e, &engine::preimage(&e, &engine::to_earc(&e, &target), word.symbols()));
    let iota = word.len();
    let image = word_image(sys, word.symbols(), &sub);
    let (mld, xld) = engine::log_deriv_range(&e, &engine::to_earc(&e, &sub), word.symbols(), CERT_GRID + 1);
    // rounding in the endpoints of `sub` grows by the largest derivative
    let tol = ARC_TOL.max(8.0 * f64::EPSILON * xld.exp());
    Ok(BoundedCovering {
        certificate: CoveringCertificate {
            word,
            length: iota,
            image,
            min_log_deriv: mld,
            target_met: arc_covers_tol(&image, &target, tol),
        },
        sub_arc: sub,
        rounds,
        lower,
        upper: 2.0 * lower,
        lower_ok: iota as f64 >= lower,
        upper_ok: iota as f64 <= 2.0 * lower,
        expansion_ok: mld >= iota as f64 * k.k5 - 1e-9,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionCovering {
    pub certificate: CoveringCertificate,
    pub delta: f64,
    pub mod_delta: f64,
    /// Lengths of the expansion, re-entry and covering phases.
    pub phases: [usize; 3],
    pub k3_prime: f64,
    /// `log K_D = (K3/K2) ε_D + (s + r) log ‖F‖`.
    pub log_kd: f64,
    /// `log` of max/min of the composed derivative over the grid on `H`.
    pub measured: f64,
    /// `|log |H|| ε_D + log K_D`.
    pub bound: f64,
    pub holds: bool,
    pub length_ok: bool,
}

/// Three-phase covering with controlled distortion: expand `H` until it is
/// longer than `δ`, re-enter `J` by a word of length at most `m_b`, then cover.
pub fn covering_with_distortion(
    sys: &SkewSystem,
    j: &Arc,
    h: &Arc,
    eps_d: f64,
    k: &CecConstants,
    m_b: usize,
    max_depth: usize,
) -> Result<DistortionCovering> {
    let e = F64Engine::new(sys);
    covering_with_distortion_with(&e, j, &engine::to_earc(&e, h), eps_d, k, m_b, max_depth, DEFAULT_BEAM)
}

/// [`covering_with_distortion`] on engine arcs.
#[allow(clippy::too_many_arguments)]
pub fn covering_with_distortion_with<E: Engine>(
    e: &E,
    j: &Arc,
    h: &EArc<E::Pt>,
    eps_d: f64,
    k: &CecConstants,
    m_b: usize,
    max_depth: usize,
    beam: usize,
) -> Result<DistortionCovering> {
    let sys = e.system();
    if !(eps_d > 0.0) || !eps_d.is_finite() {
        return input(format!("eps_D must be positive, got {eps_d}"));
    }
    let ha = engine::to_arc(e, h);
    if !ha.intersects(j) {
        return Err(Error::Precondition(format!("H = {ha} does not meet J = {j}")));
    }
    let norm = uniform_norm(sys, DEFAULT_GRID)?;
    let limit = if k.k2 > 0.0 { eps_d / k.k2 } else { f64::INFINITY };
    let mut delta = k.k1.min(0.49) * 0.5;
    let mut md = f64::INFINITY;
    for _ in 0..200 {
        md = modulus_of_continuity(sys, delta, DEFAULT_GRID)?;
        if md < limit {
            break;
        }
        delta *= 0.5;
    }
    if !(md < limit) || !(delta > 0.0) {
        return Err(Error::Construction(format!("no delta with Mod(delta) < {limit}")));
    }

    let first = cec_search_with(e, j, h, k.k4, k.k5, max_depth, beam)
        .map_err(|err| Error::Construction(format!("phase 1 (expansion): {err}")))?;
    let syms = first.word.symbols();
    let mut t = syms.len();
    let mut cur = h.clone();
    for i in 0..syms.len() {
        cur = engine::image_step(e, &cur, syms[i]);
        if cur.len > delta {
            t = i + 1;
            break;
        }
    }
    if !(cur.len > delta) {
        return Err(Error::Construction("phase 1 (expansion): image never exceeds delta".into()));
    }
    let h1 = engine::to_arc(e, &cur);

    let mut reentry = None;
    'outer: for s in 0..=m_b {
        for w in enumerate_words_capped(sys.k(), s, ENUMERATION_CAP)? {
            let im = word_image(sys, w.symbols(), &h1);
            if im.intersects(j) {
                reentry = Some((w, im));
                break 'outer;
            }
        }
    }
    let (beta, h2) = reentry
        .ok_or_else(|| Error::Construction(format!("phase 2 (re-entry): no word of length <= {m_b} meets J")))?;

    let target = j.neighborhood(k.k4)?;
    let last = if cover_margin(&h2, &target) >= COVER_MARGIN {
        Word::empty()
    } else {
        cec_search(sys, j, &h2, k.k4, k.k5, max_depth)
            .map_err(|err| Error::Construction(format!("phase 3 (covering): {err}")))?
            .word
    };

    let word = first.word.prefix(t).concat(&beta).concat(&last);
    let (s, r) = (beta.len(), last.len());
    let (lo, hi) = engine::log_deriv_range(e, h, word.symbols(), CERT_GRID + 1);
    let measured = hi - lo;
    let lnf = norm.ln();
    let k3p = 2.0 * k.k3 + m_b as f64 + k.k2 * m_b as f64 * lnf + k.k2 * delta.ln().abs();
    let ratio = if k.k2 > 0.0 { k.k3 / k.k2 } else { 0.0 };
    let log_kd = ratio * eps_d + (s + r) as f64 * lnf;
    let bound = h.len.ln().abs() * eps_d + log_kd;
    let image = engine::to_arc(e, &engine::image(e, h, word.symbols()));
    let iota = word.len();
    Ok(DistortionCovering {
        certificate: CoveringCertificate {
            length: iota,
            image,
            min_log_deriv: lo,
            target_met: arc_covers_tol(&image, &target, ARC_TOL),
            word,
        },
        delta,
        mod_delta: md,
        phases: [t, s, r],
        k3_prime: k3p,
        log_kd,
        measured,
        bound,
        holds: measured <= bound,
        length_ok: iota as f64 <= k.k2 * h.len.ln().abs() + k3p,
    })
}

/// Settings for [`verify_axioms`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub fit: FitConfig,
    pub sizes: Vec<f64>,
    pub trials: usize,
    pub access_grid: usize,
    pub access_depth: usize,
}

impl Default for VerifyConfig {
    fn default() -> VerifyConfig {
        VerifyConfig {
            fit: FitConfig::default(),
            sizes: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            trials: 4,
            access_grid: 1000,
            access_depth: 64,
        }
    }
}

fn depth_or_none(r: Result<usize>) -> Result<Option<usize>> {
    match r {
        Ok(m) => Ok(Some(m)),
        Err(Error::NotFound(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// CEC+ and CEC- fits together with both accessibility depths.
pub fn verify_axioms(sys: &SkewSystem, j: &Arc, cfg: &VerifyConfig) -> Result<(AxiomReport, AxiomReport)> {
    let mut plus = fit_cec_constants(sys, j, &cfg.sizes, cfg.trials, &cfg.fit)?;
    let minus = fit_cec_constants(&sys.inverse(), j, &cfg.sizes, cfg.trials, &cfg.fit)?;
    plus.m_f = depth_or_none(accessibility_depth(sys, j, Direction::Forward, cfg.access_grid, cfg.access_depth))?;
    plus.m_b = depth_or_none(accessibility_depth(sys, j, Direction::Backward, cfg.access_grid, cfg.access_depth))?;
    plus.verdict.cec_minus = minus.verdict.cec_plus;
    plus.verdict.acc_plus = Some(plus.m_f.is_some());
    plus.verdict.acc_minus = Some(plus.m_b.is_some());
    Ok((plus, minus))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc(a: f64, l: f64) -> Arc {
        Arc::new(a, l).unwrap()
    }

    #[test]
    fn synthetic_blender_conditions() {
        let sys = SkewSystem::synthetic_blender();
        let r = blender_check(&sys, &BlenderParams::synthetic(), 10_000).unwrap();
        assert!(r.pass(), "{r:?}");
        let mut p = BlenderParams::synthetic();
        p.beta = 1.8;
        let r = blender_check(&sys, &p, 10_000).unwrap();
        assert!(!r.expansion.pass && r.boundary.pass && r.covering.pass);
        assert!((r.expansion.margin - (1.5 - 1.8)).abs() < 1e-9);
        let rot = SkewSystem::rotations(&[0.1, 0.2]).unwrap();
        assert!(!blender_check(&rot, &BlenderParams::synthetic(), 1000).unwrap().expansion.pass);
        p = BlenderParams::synthetic();
        p.c = 0.4;
        assert!(matches!(blender_check(&sys, &p, 100), Err(Error::Input(_))));
    }

    /// Successor count using only the affine pieces of the synthetic pair.
    fn affine_successor_count(mut l: f64, mut r: f64) -> usize {
        let mut n = 0;
        while !(l <= 0.2 && r >= 0.3) {
            if r <= 0.3 {
                (l, r) = (l * 5.0 / 3.0, r * 5.0 / 3.0);
            } else {
                (l, r) = (1.5 * (l - 0.2), 1.5 * (r - 0.2));
            }
            n += 1;
        }
        n
    }

    #[test]
    fn successor_examples() {
        let sys = SkewSystem::synthetic_blender();
        let p = BlenderParams::synthetic();
        let target = p.left_part();
        let r = successor_covering(&sys, &p, &arc(0.24, 0.02), &target).unwrap();
        // lengths alone would allow 4 or 5 steps; the position forces 6
        assert_eq!(r.core_steps, affine_successor_count(0.24, 0.26));
        assert_eq!(r.core_steps, 6);
        assert!(r.certificate.target_met);
        let r = successor_covering(&sys, &p, &p.superposition(), &target).unwrap();
        assert_eq!(r.core_steps, 0);
        assert_eq!(r.certificate.length, 1 + r.tail_zeros);
        assert!(matches!(successor_covering(&sys, &p, &arc(0.2, 0.15), &target), Err(Error::Precondition(_))));
        for (l, len) in [(0.2, 0.001), (0.25, 1e-5), (0.299, 1e-3), (0.21, 0.05)] {
            let r = successor_covering(&sys, &p, &arc(l, len), &target).unwrap();
            assert_eq!(r.core_steps, affine_successor_count(l, l + len));
        }
    }

    #[test]
    fn successor_certificate_revalidates() {
        let sys = SkewSystem::synthetic_blender();
        let p = BlenderParams::synthetic();
        let h = arc(0.231, 0.004);
        let r = successor_covering(&sys, &p, &h, &p.left_part()).unwrap();
        let c = &r.certificate;
        assert!(validate_certificate(&sys, &h, &p.left_part(), 0.0, ARC_TOL, c));
        let core = c.word.prefix(r.core_steps);
        assert!(min_log_deriv(&sys, core.symbols(), &h) >= r.core_steps as f64 * 1.5f64.ln() - 1e-9);
    }

    #[test]
    fn cec_search_examples() {
        let sys = SkewSystem::synthetic_blender();
        let j = arc(0.22, 0.06);
        let c = cec_search(&sys, &j, &j, 0.01, 0.1, 40).unwrap();
        assert!(c.length <= 12, "{}", c.length);
        assert!(validate_certificate(&sys, &j, &j.neighborhood(0.01).unwrap(), 0.1, COVER_MARGIN, &c));
        let rot = SkewSystem::rotations(&[0.1, GOLDEN_TEST]).unwrap();
        assert!(matches!(cec_search(&rot, &j, &j, 0.01, 0.1, 12), Err(Error::NotFound(_))));
        assert!(matches!(cec_search(&sys, &j, &arc(0.6, 0.01), 0.01, 0.1, 12), Err(Error::Precondition(_))));
    }

    const GOLDEN_TEST: f64 = crate::systems::GOLDEN;

    #[test]
    fn envelope_is_exact_lp_optimum() {
        let pts = [(1.0, 3.0), (2.0, 5.0), (3.0, 8.0), (4.0, 9.0)];
        let (k2, k3) = envelope_fit(&pts);
        for &(x, l) in &pts {
            assert!(k2 * x + k3 >= l - 1e-12);
        }
        // brute force over a fine grid of slopes
        let cost = |k2: f64| {
            let k3 = pts.iter().map(|&(x, l)| l - k2 * x).fold(f64::NEG_INFINITY, f64::max);
            pts.iter().map(|&(x, l)| k2 * x + k3 - l).sum::<f64>()
        };
        let best = (0..=5000).map(|i| cost(i as f64 * 1e-3)).fold(f64::INFINITY, f64::min);
        assert!(cost(k2) <= best + 1e-9);
    }

    #[test]
    fn degenerate_fit() {
        let sys = SkewSystem::synthetic_blender();
        let j = arc(0.22, 0.06);
        let r = fit_cec_constants(&sys, &j, &[0.01], 1, &FitConfig::default()).unwrap();
        assert!(r.degenerate_fit);
        assert_eq!(r.k2, 0.0);
        assert_eq!(r.k3, r.samples[0].length as f64);
        let rot = SkewSystem::rotations(&[0.1, GOLDEN_TEST]).unwrap();
        let cfg = FitConfig { max_depth: 10, ..FitConfig::default() };
        let r = fit_cec_constants(&rot, &j, &[0.01, 0.001], 1, &cfg).unwrap();
        assert_eq!(r.verdict.cec_plus, Some(false));
    }

    #[test]
    fn accessibility_examples() {
        let sys = SkewSystem::mobius_rotation(0.5, GOLDEN_TEST).unwrap();
        let j = arc(0.4, 0.05);
        let m = accessibility_depth(&sys, &j, Direction::Backward, 500, 200).unwrap();
        let m2 = accessibility_depth(&sys, &j, Direction::Backward, 2000, 200).unwrap();
        assert!(m >= 1 && m2 >= m);
        let big = accessibility_depth(&sys, &arc(0.38, 0.09), Direction::Backward, 500, 200).unwrap();
        assert!(big <= m);
        assert!(accessibility_depth(&sys, &j, Direction::Forward, 500, 200).is_ok());
        assert_eq!(accessibility_depth(&sys, &Arc::full(), Direction::Forward, 100, 5).unwrap(), 0);
        let still = SkewSystem::rotations(&[0.0, 0.0]).unwrap();
        assert!(matches!(accessibility_depth(&still, &j, Direction::Forward, 100, 50), Err(Error::NotFound(_))));
    }
}
