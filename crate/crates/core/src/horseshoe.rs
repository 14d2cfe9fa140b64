//! Multi-variable-time horseshoes assembled from a skeleton and covering
//! words, with the exponent-flip variant.
//!
//! Row `i` follows `θⁱ ξⁱ βⁱ ηⁱ` from the arc `Iᵢ′` around `xᵢ′ ∈ J`. The
//! transition from rectangle `i` to `j` reads `ξⁱ βⁱ ηⁱ θʲ` and takes
//! `t_ij = m + sᵢ + ℓᵢ + r_j` steps. Admissible pairs are those with
//! `t_ij = t(i)`, the most frequent time of row `i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{measure_distance, EmpiricalMeasure, PotentialFamily};
use crate::axioms::{bounded_covering, covering_with_distortion_with, CecConstants, COVER_MARGIN, DEFAULT_BEAM};
use crate::circle::{cover_margin, disjoint, Arc, ARC_TOL};
use crate::engine::{self, Engine, F64Engine, ProjEngine};
use crate::error::{input, Error, Result};
use crate::skeleton::{Skeleton, SkeletonEntry};
use crate::symbolic::{component_entropy, perron, scc_decompose, TransitionMatrix, Word};
use crate::systems::{modulus_of_continuity, uniform_norm, SkewSystem, DEFAULT_GRID};

pub const METHOD: &str = "multi-variable-time horseshoe";
pub const FLIP_METHOD: &str = "exponent-flip horseshoe";
/// Points per rectangle for the monotonicity check.
pub const INJECTIVITY_GRID: usize = 1000;
/// Default cap on enumerated cycles.
pub const DEFAULT_CYCLE_CAP: usize = 1 << 17;

/// Smallest `Iᵢ′` kept in double precision, so grid points stay apart.
pub const RESOLUTION: f64 = 1e-13;

const FIXED_POINT_ITERS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovRectangle {
    pub cylinder: Word,
    pub interval: Arc,
}

/// One quantifier inequality, `margin > 0` when it holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantifier {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl Quantifier {
    fn new(name: &str, lhs: f64, rhs: f64, margin: f64) -> Quantifier {
        Quantifier { name: name.to_string(), lhs, rhs, margin, pass: margin > 0.0 }
    }
}

fn refuse_failed(qs: &[Quantifier]) -> Result<()> {
    let failed: Vec<String> = qs
        .iter()
        .filter(|q| !q.pass)
        .map(|q| format!("{} (lhs {:e}, rhs {:e}, margin {:e})", q.name, q.lhs, q.rhs, q.margin))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("quantifier check failed: {}", failed.join("; "))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeParams {
    pub delta0: f64,
    pub eps_d: f64,
    /// Largest accepted `ε₁ = |log δ₀| / m`.
    pub eps1_max: f64,
    pub max_depth: usize,
    pub beam: usize,
}

impl Default for HorseshoeParams {
    fn default() -> HorseshoeParams {
        HorseshoeParams { delta0: 1e-6, eps_d: 0.01, eps1_max: 2.5, max_depth: 256, beam: DEFAULT_BEAM }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipParams {
    pub beta: f64,
    /// Slack in the derivative bound along connectors and skeleton words.
    pub eps: f64,
    pub eps_d: f64,
    pub delta0: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub max_depth: usize,
    pub beam: usize,
    /// Projective precision; 0 picks it from the smallest arc.
    pub bits: u64,
}

impl Default for FlipParams {
    fn default() -> FlipParams {
        FlipParams {
            beta: 0.2,
            eps: 0.01,
            eps_d: 0.05,
            delta0: 0.0025,
            gamma: 0.0,
            kappa: 0.0,
            max_depth: 1024,
            beam: 1024,
            bits: 0,
        }
    }
}

/// Construction data of one rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub theta: Word,
    pub xi: Word,
    pub beta: Word,
    pub eta: Word,
    pub x: f64,
    pub x_prime: f64,
    /// The arc `Iᵢ′` actually used, after any subinterval selection.
    pub i_prime: Arc,
    /// `log |Hᵢ′|`.
    pub log_h_prime: f64,
    pub ell: usize,
    pub ell_lower: f64,
    pub ell_upper: f64,
    pub ell_ok: bool,
    pub expansion_ok: bool,
    /// `log K_D` of the covering, 0 when not applicable.
    pub log_kd: f64,
    pub distortion_ok: bool,
    /// Bounds on the per-time exponent of `θ ξ β η` on `Iᵢ′`.
    pub chi_lower: f64,
    pub chi_upper: f64,
}

/// Explicit slack terms standing in for the big-O in the exponent bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    /// `max(α − lower, upper − α)`.
    pub lambda: f64,
    pub eps_e: f64,
    pub eps_d: f64,
    pub eps1: f64,
    pub inv_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
    /// `(1/m) log card`.
    pub h_sk: f64,
    /// `h_sk / (1 + K₂(|β| + |α|)) − γ`.
    pub entropy_floor: f64,
    /// `|β| / (1 + K₂(|β|+|α|))` and `|β| / (1 + (|β|+|α|)/log ‖F‖)`, with the
    /// sign of `β`, in increasing order.
    pub theory_band: [f64; 2],
    /// `K₂(|β|+|α|) / (1 + K₂(|β|+|α|)) + κ`.
    pub distance_ceiling: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Restriction {
    pub original_size: usize,
    /// Indices of the kept rectangles in the unrestricted numbering.
    pub kept: Vec<usize>,
    pub pigeonhole_before: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horseshoe {
    pub method: String,
    /// Built for the inverse system; exponents are reported for the original.
    pub time_reversed: bool,
    /// Projective precision, `None` for plain doubles.
    pub bits: Option<u64>,
    pub j: Arc,
    pub m: usize,
    pub alpha: f64,
    pub eps_e: f64,
    pub eps_d: f64,
    pub delta0: f64,
    pub eps1: f64,
    pub m_f: usize,
    pub m_b: usize,
    pub k0: f64,
    pub k0_hat: f64,
    pub norm: f64,
    pub constants: CecConstants,
    pub quantifiers: Vec<Quantifier>,
    pub rectangles: Vec<MarkovRectangle>,
    pub rows: Vec<Row>,
    pub transition_words: Vec<Vec<Word>>,
    pub times: Vec<Vec<usize>>,
    pub row_times: Vec<usize>,
    pub a: TransitionMatrix,
    pub restriction: Option<Restriction>,
    /// Skeleton entries dropped because `Iᵢ′` fell below [`RESOLUTION`].
    pub unresolved: Vec<usize>,
    pub band: Band,
    pub flip: Option<FlipReport>,
}

impl Horseshoe {
    pub fn size(&self) -> usize {
        self.rectangles.len()
    }

    /// Every row of `A` has at least `⌈M/(t_max − t_min + 1)⌉` ones.
    pub fn pigeonhole_holds(&self) -> bool {
        pigeonhole(&self.times, &self.a)
    }

    /// Rectangles differ in their cylinder or have disjoint intervals.
    pub fn rectangles_disjoint(&self) -> bool {
        let r = &self.rectangles;
        (0..r.len()).all(|i| {
            (i + 1..r.len()).all(|j| r[i].cylinder != r[j].cylinder || disjoint(&r[i].interval, &r[j].interval, 0.0))
        })
    }

    /// The intervals alone are pairwise disjoint.
    pub fn intervals_disjoint(&self) -> bool {
        let r = &self.rectangles;
        (0..r.len()).all(|i| (i + 1..r.len()).all(|j| disjoint(&r[i].interval, &r[j].interval, 0.0)))
    }

    fn system(&self, sys: &SkewSystem) -> SkewSystem {
        if self.time_reversed {
            sys.inverse()
        } else {
            sys.clone()
        }
    }
}

/// Every row of `a` has at least `⌈M/(t_max − t_min + 1)⌉` ones.
pub fn pigeonhole(times: &[Vec<usize>], a: &TransitionMatrix) -> bool {
    let n = a.size();
    let all = times.iter().flatten();
    let (lo, hi) = all.fold((usize::MAX, 0), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    if n == 0 {
        return true;
    }
    let need = n.div_ceil(hi - lo + 1);
    (0..n).all(|i| a.row_count(i) >= need)
}

macro_rules! with_engine {
    ($sys:expr, $bits:expr, |$e:ident| $body:expr) => {
        match $bits {
            Some(b) => {
                let $e = ProjEngine::with_bits($sys, b)
                    .ok_or_else(|| Error::Input("projective precision needs rotations and Möbius maps".into()))?;
                $body
            }
            None => {
                let $e = F64Engine::new($sys);
                $body
            }
        }
    };
}

fn concat(parts: &[&Word]) -> Word {
    Word::new(parts.iter().flat_map(|w| w.symbols().iter().copied()).collect())
}

/// `t(i)`, the most frequent time in row `i` (smallest on ties), and
/// `a_ij = [t_ij = t(i)]`.
pub fn select_transitions(times: &[Vec<usize>]) -> (Vec<usize>, TransitionMatrix) {
    let row_times: Vec<usize> = times
        .iter()
        .map(|row| {
            let mut vals = row.clone();
            vals.sort_unstable();
            let mut best = (0usize, usize::MAX);
            let mut k = 0;
            while k < vals.len() {
                let t = vals[k];
                let c = vals[k..].iter().take_while(|&&v| v == t).count();
                if c > best.0 {
                    best = (c, t);
                }
                k += c;
            }
            best.1
        })
        .collect();
    let n = times.len();
    let mut a = TransitionMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, times[i][j] == row_times[i]);
        }
    }
    (row_times, a)
}

/// Indices of the cyclic component of largest entropy, the first on ties;
/// all indices when `a` has no cycle.
pub fn max_entropy_component(a: &TransitionMatrix) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for c in scc_decompose(a).into_iter().filter(|c| c.cyclic) {
        let h = component_entropy(&c.submatrix);
        if best.as_ref().is_none_or(|b| h > b.0 + 1e-12) {
            best = Some((h, c.indices));
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| (0..a.size()).collect())
}

/// Transition tables, `t(i)`, `A`, and the restriction to the component of
/// largest entropy.
#[allow(clippy::type_complexity)]
fn tables(
    m: usize,
    rows: &[Row],
) -> (Vec<Vec<Word>>, Vec<Vec<usize>>, Vec<usize>, TransitionMatrix, Option<Restriction>, Vec<usize>) {
    let n = rows.len();
    let times: Vec<Vec<usize>> =
        rows.iter().map(|ri| rows.iter().map(|rj| m + ri.beta.len() + ri.ell + rj.theta.len()).collect()).collect();
    let (row_times, a) = select_transitions(&times);
    let before = pigeonhole(&times, &a);
    let kept = max_entropy_component(&a);
    let restriction =
        (kept.len() < n).then(|| Restriction { original_size: n, kept: kept.clone(), pigeonhole_before: before });
    let times: Vec<Vec<usize>> = kept.iter().map(|&i| kept.iter().map(|&j| times[i][j]).collect()).collect();
    let row_times: Vec<usize> = kept.iter().map(|&i| row_times[i]).collect();
    let a = a.restrict(&kept);
    let words = kept
        .iter()
        .map(|&i| {
            let r = &rows[i];
            kept.iter().map(|&j| concat(&[&r.xi, &r.beta, &r.eta, &rows[j].theta])).collect()
        })
        .collect();
    (words, times, row_times, a, restriction, kept)
}

struct Common<'a> {
    sys: &'a SkewSystem,
    sk: &'a Skeleton,
    j: Arc,
    norm: f64,
    k0_hat: f64,
    k: CecConstants,
}

impl<'a> Common<'a> {
    fn new(sys: &'a SkewSystem, sk: &'a Skeleton, j: &Arc, k: &CecConstants) -> Result<Common<'a>> {
        if sk.entries.is_empty() {
            return input("skeleton is empty");
        }
        if sk.params.j != *j {
            return input(format!("skeleton was built for J = {}, not {j}", sk.params.j));
        }
        for e in &sk.entries {
            sys.check_word(&e.xi)?;
        }
        let norm = uniform_norm(sys, DEFAULT_GRID)?;
        let k0_hat = sk.k0 * norm.powi((sk.params.m_b + sk.params.m_f) as i32);
        Ok(Common { sys, sk, j: *j, norm, k0_hat, k: *k })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        method: &str,
        rows: Vec<Row>,
        quantifiers: Vec<Quantifier>,
        delta0: f64,
        eps_d: f64,
        eps1: f64,
        bits: Option<u64>,
        time_reversed: bool,
        flip: Option<FlipReport>,
    ) -> Result<Horseshoe> {
        let p = &self.sk.params;
        let unresolved: Vec<usize> = if bits.is_some() {
            Vec::new()
        } else {
            (0..rows.len()).filter(|&i| rows[i].i_prime.length() < RESOLUTION).collect()
        };
        let rows: Vec<Row> =
            rows.into_iter().enumerate().filter(|(i, _)| !unresolved.contains(i)).map(|r| r.1).collect();
        if rows.is_empty() {
            return Err(Error::Construction("every rectangle fell below double resolution".into()));
        }
        let (transition_words, times, row_times, a, restriction, kept) = tables(p.m, &rows);
        let rows: Vec<Row> = kept.iter().map(|&i| rows[i].clone()).collect();
        let rectangles = rows
            .iter()
            .map(|r| {
                let e = F64Engine::new(self.sys);
                let ia = engine::image(&e, &engine::to_earc(&e, &r.i_prime), r.theta.symbols());
                MarkovRectangle { cylinder: r.xi.clone(), interval: engine::to_arc(&e, &ia) }
            })
            .collect();
        let lower = rows.iter().map(|r| r.chi_lower).fold(f64::INFINITY, f64::min);
        let upper = rows.iter().map(|r| r.chi_upper).fold(f64::NEG_INFINITY, f64::max);
        let centre = flip.as_ref().map(|f| f.beta).unwrap_or(p.alpha);
        let band = Band {
            lower,
            upper,
            lambda: (centre - lower).max(upper - centre),
            eps_e: p.eps_e,
            eps_d,
            eps1,
            inv_m: 1.0 / p.m as f64,
        };
        Ok(Horseshoe {
            method: method.to_string(),
            time_reversed,
            bits,
            j: self.j,
            m: p.m,
            alpha: p.alpha,
            eps_e: p.eps_e,
            eps_d,
            delta0,
            eps1,
            m_f: p.m_f,
            m_b: p.m_b,
            k0: self.sk.k0,
            k0_hat: self.k0_hat,
            norm: self.norm,
            constants: self.k,
            quantifiers,
            rectangles,
            rows,
            transition_words,
            times,
            row_times,
            a,
            restriction,
            unresolved,
            band,
            flip,
        })
    }
}

/// Checks the quantifier inequalities of the construction.
pub fn horseshoe_quantifiers(
    sys: &SkewSystem,
    sk: &Skeleton,
    p: &HorseshoeParams,
    k: &CecConstants,
) -> Result<Vec<Quantifier>> {
    if !(p.delta0 > 0.0 && p.delta0 < 0.5) || !(p.eps_d > 0.0) {
        return input("need 0 < delta0 < 1/2 and eps_D > 0");
    }
    let norm = uniform_norm(sys, DEFAULT_GRID)?;
    let m = sk.params.m as f64;
    let k0_hat = sk.k0 * norm.powi((sk.params.m_b + sk.params.m_f) as i32);
    let ld = p.delta0.ln().abs();
    let md = modulus_of_continuity(sys, (2.0 * p.delta0).min(0.49), DEFAULT_GRID)?;
    let cap = -m * (p.eps_d + sk.params.eps_e).sqrt();
    let theta = k.k2 * k.k5 * ld - m * (sk.params.eps_e + p.eps_d) - k0_hat.ln() + k.k3 * k.k5;
    let eps1 = ld / m;
    let kk = k.k1.min(k.k4);
    Ok(vec![
        Quantifier::new("Mod(2 delta0) <= eps_D", md, p.eps_d, p.eps_d - md + f64::MIN_POSITIVE),
        Quantifier::new("delta0 < exp(-m sqrt(eps_D + eps_E))", p.delta0, cap.exp(), cap - p.delta0.ln()),
        Quantifier::new("delta0 < min(K1, K4)", p.delta0, kk, kk - p.delta0),
        Quantifier::new("K2 K5 |log delta0| - m(eps_E + eps_D) - log K0hat + K3 K5 > 0", theta, 0.0, theta),
        Quantifier::new("eps1 = |log delta0| / m < eps1_max", eps1, p.eps1_max, p.eps1_max - eps1),
    ])
}

/// Horseshoe with exponents near the skeleton's `α`.
pub fn build_horseshoe(
    sys: &SkewSystem,
    sk: &Skeleton,
    j: &Arc,
    p: &HorseshoeParams,
    k: &CecConstants,
) -> Result<Horseshoe> {
    let c = Common::new(sys, sk, j, k)?;
    let qs = horseshoe_quantifiers(sys, sk, p, k)?;
    refuse_failed(&qs)?;
    let sp = &sk.params;
    let m = sp.m as f64;
    let radius = p.delta0 / c.k0_hat * (-m * (sp.alpha + sp.eps_e + p.eps_d)).exp();
    let lnf = c.norm.ln();
    let lk = c.k0_hat.ln();
    let rows = sk
        .entries
        .par_iter()
        .map(|e| -> Result<Row> {
            let ip = Arc::ball(e.x_prime, radius)?;
            let zeta = concat(&[&e.theta, &e.xi, &e.beta]);
            let fe = F64Engine::new(sys);
            let hp = engine::to_arc(&fe, &engine::image(&fe, &engine::to_earc(&fe, &ip), zeta.symbols()));
            let bc = bounded_covering(sys, j, &hp, k, p.max_depth)?;
            let sub = engine::preimage(&fe, &engine::to_earc(&fe, &bc.sub_arc), zeta.symbols());
            let ell = bc.certificate.length;
            let mi = (zeta.len() + ell) as f64;
            Ok(Row {
                theta: e.theta.clone(),
                xi: e.xi.clone(),
                beta: e.beta.clone(),
                eta: bc.certificate.word.clone(),
                x: e.x,
                x_prime: e.x_prime,
                i_prime: engine::to_arc(&fe, &sub),
                log_h_prime: hp.length().ln(),
                ell,
                ell_lower: bc.lower,
                ell_upper: bc.upper,
                ell_ok: bc.lower_ok && bc.upper_ok,
                expansion_ok: bc.expansion_ok && bc.certificate.target_met,
                log_kd: 0.0,
                distortion_ok: true,
                chi_lower: (-lk + m * (sp.alpha - sp.eps_e - p.eps_d) + ell as f64 * k.k5) / mi,
                chi_upper: (lk + m * (sp.alpha + sp.eps_e + p.eps_d) + ell as f64 * lnf) / mi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps1 = p.delta0.ln().abs() / m;
    c.finish(METHOD, rows, qs, p.delta0, p.eps_d, eps1, None, false, None)
}

/// Horseshoe of the inverse system built from the time reversal of `sk`;
/// `k` holds the inverse system's constants. Exponents are reported for the
/// original system.
pub fn build_backward_horseshoe(
    sys: &SkewSystem,
    sk: &Skeleton,
    j: &Arc,
    p: &HorseshoeParams,
    k: &CecConstants,
) -> Result<Horseshoe> {
    let inv = sys.inverse();
    let rsk = sk.time_reversed(sys);
    let mut hs = build_horseshoe(&inv, &rsk, j, p, k)?;
    hs.time_reversed = true;
    Ok(hs)
}

fn signed_band(beta: f64, lo: f64, hi: f64) -> [f64; 2] {
    if beta > 0.0 {
        [lo, hi]
    } else {
        [-hi, -lo]
    }
}

/// Projective precision large enough for the smallest arc `|Hᵢ′|`.
fn auto_bits(log_h: f64) -> u64 {
    let need = (-log_h / std::f64::consts::LN_2).max(0.0) + 128.0;
    ((need / 64.0).ceil() as u64 * 64).max(256)
}

/// Quantifier checks of the flip construction, for `α < 0 < β`.
pub fn flip_quantifiers(sys: &SkewSystem, sk: &Skeleton, p: &FlipParams) -> Result<Vec<Quantifier>> {
    if !(p.delta0 > 0.0 && p.delta0 < 0.25) || !(p.eps_d > 0.0) || !(p.eps > 0.0 && p.eps < 1.0) {
        return input("need 0 < delta0 < 1/4, eps_D > 0, 0 < eps < 1");
    }
    let norm = uniform_norm(sys, DEFAULT_GRID)?;
    let sp = &sk.params;
    let m = sp.m as f64;
    let k0_hat = sk.k0 * norm.powi((sp.m_b + sp.m_f) as i32);
    let md = modulus_of_continuity(sys, 2.0 * p.delta0, DEFAULT_GRID)?;
    let s = p.eps + p.eps_d;
    let rhs = p.delta0.ln() - k0_hat.ln() - (sp.m_b + sp.m_f) as f64 * s - m * s;
    Ok(vec![
        Quantifier::new("alpha + eps_E < 0", sp.alpha + sp.eps_e, 0.0, -(sp.alpha + sp.eps_e)),
        Quantifier::new("eps + eps_D < beta", s, p.beta, p.beta - s),
        Quantifier::new("Mod(2 delta0) <= eps_D", md, p.eps_d, p.eps_d - md + f64::MIN_POSITIVE),
        Quantifier::new(
            "exp(-m beta) < delta0 K0hat^-1 exp(-(m_b + m_f)(eps + eps_D)) exp(-m(eps + eps_D))",
            -m * p.beta,
            rhs,
            rhs + m * p.beta,
        ),
    ])
}

/// Horseshoe whose exponents have the sign of `β`, built from a skeleton
/// whose exponent `α` has the opposite sign. For `α > 0 > β` the construction
/// runs on the inverse system, and `k` must hold that system's constants.
pub fn build_flip_horseshoe(
    sys: &SkewSystem,
    sk: &Skeleton,
    j: &Arc,
    p: &FlipParams,
    k: &CecConstants,
) -> Result<Horseshoe> {
    let a = sk.params.alpha;
    if !(a * p.beta < 0.0) {
        return input(format!("alpha = {a} and beta = {} must have opposite signs", p.beta));
    }
    if !(p.gamma >= 0.0) || !(p.kappa >= 0.0) {
        return input("gamma and kappa must be nonnegative");
    }
    if a > 0.0 {
        let inv = sys.inverse();
        let rsk = sk.time_reversed(sys);
        let mut q = p.clone();
        q.beta = -p.beta;
        let mut hs = flip_forward(&inv, &rsk, j, &q, k)?;
        hs.time_reversed = true;
        if let Some(f) = hs.flip.as_mut() {
            f.beta = p.beta;
            f.alpha = a;
            f.theory_band = signed_band(p.beta, f.theory_band[0], f.theory_band[1]);
        }
        return Ok(hs);
    }
    flip_forward(sys, sk, j, p, k)
}

fn flip_forward(sys: &SkewSystem, sk: &Skeleton, j: &Arc, p: &FlipParams, k: &CecConstants) -> Result<Horseshoe> {
    let c = Common::new(sys, sk, j, k)?;
    let qs = flip_quantifiers(sys, sk, p)?;
    refuse_failed(&qs)?;
    let sp = &sk.params;
    let m = sp.m as f64;
    let radius = (-m * p.beta).exp();
    let lnf = c.norm.ln();
    // smallest |H'| estimated along the anchor orbits
    let log_h = |e: &SkeletonEntry| {
        let zeta = concat(&[&e.theta, &e.xi, &e.beta]);
        (2.0 * radius).ln() + sys.run(zeta.symbols(), e.x_prime).1
    };
    let min_log_h = sk.entries.iter().map(log_h).fold(f64::INFINITY, f64::min);
    let bits = if !sys.is_projective() {
        None
    } else if p.bits > 0 {
        Some(p.bits)
    } else {
        Some(auto_bits(min_log_h))
    };
    let rows = with_engine!(sys, bits, |e| flip_rows(&e, &c, p, radius, lnf)?);
    let h_sk = sk.achieved_h;
    let (ab, aa) = (p.beta.abs(), sp.alpha.abs());
    let denom = 1.0 + k.k2 * (ab + aa);
    let flip = FlipReport {
        beta: p.beta,
        alpha: sp.alpha,
        gamma: p.gamma,
        kappa: p.kappa,
        h_sk,
        entropy_floor: h_sk / denom - p.gamma,
        theory_band: signed_band(p.beta, ab / denom, ab / (1.0 + (ab + aa) / lnf)),
        distance_ceiling: k.k2 * (ab + aa) / denom + p.kappa,
    };
    c.finish(FLIP_METHOD, rows, qs, p.delta0, p.eps_d, 0.0, bits, false, Some(flip))
}

fn flip_rows<E: Engine>(e: &E, c: &Common, p: &FlipParams, radius: f64, lnf: f64) -> Result<Vec<Row>> {
    let j = &c.j;
    let log_j = j.length().ln();
    c.sk.entries
        .par_iter()
        .map(|en| -> Result<Row> {
            let ip = Arc::ball(en.x_prime, radius)?;
            let zeta = concat(&[&en.theta, &en.xi, &en.beta]);
            let eip = engine::to_earc(e, &ip);
            let hp = engine::image(e, &eip, zeta.symbols());
            let dc = covering_with_distortion_with(e, j, &hp, p.eps_d, &c.k, c.sk.params.m_b, p.max_depth, p.beam)?;
            let ell = dc.certificate.length;
            let lh = hp.len.ln();
            let ell_lower = (log_j - lh) / lnf;
            let mi = zeta.len() as f64;
            let tot = mi + ell as f64;
            let li = ip.length().ln();
            let lo = (log_j - li - mi * p.eps_d + p.eps_d * lh - dc.log_kd) / tot;
            let hi = (-li + mi * p.eps_d - p.eps_d * lh + dc.log_kd) / tot;
            Ok(Row {
                theta: en.theta.clone(),
                xi: en.xi.clone(),
                beta: en.beta.clone(),
                eta: dc.certificate.word.clone(),
                x: en.x,
                x_prime: en.x_prime,
                i_prime: ip,
                log_h_prime: lh,
                ell,
                ell_lower,
                ell_upper: c.k.k2 * lh.abs() + dc.k3_prime,
                ell_ok: dc.length_ok && ell as f64 >= ell_lower - 1e-9,
                expansion_ok: dc.certificate.target_met,
                log_kd: dc.log_kd,
                distortion_ok: dc.holds,
                chi_lower: lo,
                chi_upper: hi,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairStatus {
    Pass,
    Fail,
    Untested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub i: usize,
    pub j: usize,
    pub status: PairStatus,
    /// Clearance of `Iⱼ` inside the image of `Iᵢ`; NaN when untested.
    pub margin: f64,
    pub injective: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveringReport {
    pub pairs: Vec<PairCheck>,
    pub tested: usize,
    pub untested: usize,
    pub min_margin: f64,
    pub rectangles_disjoint: bool,
    pub intervals_disjoint: bool,
    pub pullbacks_disjoint: bool,
    pub all_pass: bool,
}

/// Re-checks `f_[ξⁱβⁱηⁱθʲ](Iᵢ) ⊃ Iⱼ` with margin for every admissible pair,
/// and monotonicity of each transition on `grid + 1` points of `Iᵢ`.
pub fn verify_covering(sys: &SkewSystem, hs: &Horseshoe, grid: usize) -> Result<CoveringReport> {
    let s = hs.system(sys);
    with_engine!(&s, hs.bits, |e| verify_with(&e, hs, grid.max(1)))
}

fn verify_with<E: Engine>(e: &E, hs: &Horseshoe, grid: usize) -> Result<CoveringReport> {
    let n = hs.size();
    let pairs: Vec<Vec<PairCheck>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = &hs.rows[i];
            let ii = engine::to_earc(e, &hs.rectangles[i].interval);
            let pre = concat(&[&r.xi, &r.beta, &r.eta]);
            let pts: Vec<E::Pt> = (0..=grid)
                .map(|g| {
                    let p = engine::point_at(e, &ii, g as f64 / grid as f64);
                    e.run(pre.symbols(), &p)
                })
                .collect();
            let head = engine::image(e, &ii, pre.symbols());
            (0..n)
                .map(|jx| {
                    if !hs.a.get(i, jx) {
                        return PairCheck {
                            i,
                            j: jx,
                            status: PairStatus::Untested,
                            margin: f64::NAN,
                            injective: false,
                        };
                    }
                    let th = hs.rows[jx].theta.symbols();
                    let im = engine::to_arc(e, &engine::image(e, &head, th));
                    let margin = cover_margin(&im, &hs.rectangles[jx].interval);
                    let imgs: Vec<E::Pt> = pts.iter().map(|p| e.run(th, p)).collect();
                    let mut total = 0.0;
                    let mut mono = true;
                    for w in imgs.windows(2) {
                        let g = e.gap(&w[0], &w[1]);
                        mono &= g > 0.0;
                        total += g.max(0.0);
                    }
                    let injective = mono && total < 1.0;
                    let ok = margin >= COVER_MARGIN && injective;
                    PairCheck {
                        i,
                        j: jx,
                        status: if ok { PairStatus::Pass } else { PairStatus::Fail },
                        margin,
                        injective,
                    }
                })
                .collect()
        })
        .collect();
    let pairs: Vec<PairCheck> = pairs.into_iter().flatten().collect();
    let tested = pairs.iter().filter(|p| p.status != PairStatus::Untested).count();
    let min_margin =
        pairs.iter().filter(|p| p.status != PairStatus::Untested).map(|p| p.margin).fold(f64::INFINITY, f64::min);
    // admissible pairs from a common source read different symbols before
    // reaching S_j, since the target cylinders differ
    let mut pullbacks = true;
    for i in 0..n {
        let targets: Vec<usize> = (0..n).filter(|&jx| hs.a.get(i, jx)).collect();
        for (x, &j1) in targets.iter().enumerate() {
            for &j2 in &targets[x + 1..] {
                let w1 = concat(&[&hs.transition_words[i][j1], &hs.rectangles[j1].cylinder]);
                let w2 = concat(&[&hs.transition_words[i][j2], &hs.rectangles[j2].cylinder]);
                let n1 = w1.len().min(w2.len());
                if w1.symbols()[..n1] == w2.symbols()[..n1] {
                    pullbacks = false;
                }
            }
        }
    }
    let rectangles_disjoint = hs.rectangles_disjoint();
    let all_pass = pairs.iter().all(|p| p.status != PairStatus::Fail) && rectangles_disjoint && pullbacks && tested > 0;
    Ok(CoveringReport {
        tested,
        untested: pairs.len() - tested,
        min_margin,
        rectangles_disjoint,
        intervals_disjoint: hs.intervals_disjoint(),
        pullbacks_disjoint: pullbacks,
        all_pass,
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBounds {
    pub rectangles: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub lower: f64,
    pub upper: f64,
    pub sft_rate: f64,
    pub holds: bool,
}

/// `((log M − log(t_max − t_min + 1)) / t_max, log M / t_min)`.
pub fn entropy_formula(m: usize, t_min: usize, t_max: usize) -> (f64, f64) {
    let lm = (m as f64).ln();
    ((lm - ((t_max - t_min + 1) as f64).ln()) / t_max as f64, lm / t_min as f64)
}

pub fn entropy_bounds(hs: &Horseshoe) -> EntropyBounds {
    entropy_bounds_from(&hs.a, &hs.times, &hs.row_times)
}

/// [`entropy_bounds`] on bare tables; times range over admissible pairs.
pub fn entropy_bounds_from(a: &TransitionMatrix, times: &[Vec<usize>], row_times: &[usize]) -> EntropyBounds {
    let n = a.size();
    let adm: Vec<usize> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| a.get(i, j)).map(move |j| (i, j)))
        .map(|(i, j)| times[i][j])
        .collect();
    let t_min = adm.iter().copied().min().unwrap_or(1);
    let t_max = adm.iter().copied().max().unwrap_or(1);
    let (lower, upper) = entropy_formula(n, t_min, t_max);
    let h = crate::symbolic::sft_entropy(a);
    let mean_t = if n == 1 {
        row_times[0] as f64
    } else {
        let pr = perron(a);
        let w: Vec<f64> = pr.left.iter().zip(&pr.right).map(|(l, r)| l * r).collect();
        let s: f64 = w.iter().sum();
        w.iter().zip(row_times).map(|(wi, &t)| wi * t as f64).sum::<f64>() / s
    };
    let sft_rate = h / mean_t;
    EntropyBounds {
        rectangles: n,
        t_min,
        t_max,
        lower,
        upper,
        sft_rate,
        holds: lower <= sft_rate + 1e-12 && sft_rate <= upper + 1e-9,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleExponent {
    pub cycle: Vec<usize>,
    pub period: usize,
    pub point: f64,
    pub in_rectangle: bool,
    pub chi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentBounds {
    pub max_period: usize,
    pub cycles: Vec<CycleExponent>,
    pub partial: bool,
    pub min_chi: f64,
    pub max_chi: f64,
    /// The construction band, in the orientation of the original system.
    pub band_lower: f64,
    pub band_upper: f64,
    pub lambda: f64,
    pub in_band: bool,
}

/// Primitive cycles of `A`, up to rotation, with total time at most `max_period`.
pub fn enumerate_cycles(hs: &Horseshoe, max_period: usize, cap: usize) -> (Vec<(Vec<usize>, usize)>, bool) {
    let n = hs.size();
    let mut out = Vec::new();
    let mut partial = false;
    let mut stack: Vec<usize> = Vec::new();
    fn canonical(c: &[usize]) -> bool {
        let k = c.len();
        (1..k).all(|r| {
            let rot: Vec<usize> = c[r..].iter().chain(&c[..r]).copied().collect();
            rot.as_slice() > c
        })
    }
    fn rec(
        hs: &Horseshoe,
        stack: &mut Vec<usize>,
        time: usize,
        max_period: usize,
        cap: usize,
        out: &mut Vec<(Vec<usize>, usize)>,
        partial: &mut bool,
    ) {
        if *partial {
            return;
        }
        let first = stack[0];
        let last = *stack.last().expect("nonempty");
        if hs.a.get(last, first) {
            let t = time + hs.times[last][first];
            if t <= max_period && canonical(stack) {
                if out.len() >= cap {
                    *partial = true;
                    return;
                }
                out.push((stack.clone(), t));
            }
        }
        for nx in first..hs.size() {
            if !hs.a.get(last, nx) {
                continue;
            }
            let t = time + hs.times[last][nx];
            // the closing step takes at least the smallest time
            if t + hs.row_times.iter().min().copied().unwrap_or(0) > max_period {
                continue;
            }
            stack.push(nx);
            rec(hs, stack, t, max_period, cap, out, partial);
            stack.pop();
        }
    }
    for s in 0..n {
        stack.push(s);
        rec(hs, &mut stack, 0, max_period, cap, &mut out, &mut partial);
        stack.pop();
    }
    (out, partial)
}

fn cycle_word(hs: &Horseshoe, c: &[usize]) -> Word {
    let parts: Vec<&Word> = (0..c.len()).map(|k| &hs.transition_words[c[k]][c[(k + 1) % c.len()]]).collect();
    concat(&parts)
}

/// Fixed point of `f_[w]` in `I` by backward iteration, which contracts there.
fn fixed_point<E: Engine>(e: &E, w: &[u8], i: &Arc) -> (E::Pt, bool) {
    let mut p = e.point(i.center());
    for _ in 0..FIXED_POINT_ITERS {
        let q = e.run_backward(w, &p);
        let g = e.gap(&p, &q).abs();
        p = q;
        if g == 0.0 || g < 1e-300 {
            break;
        }
    }
    let inside = i.contains_tol(e.angle(&p), ARC_TOL);
    (p, inside)
}

/// Orbit of the fixed point `p` of `f_[w]`, listed forward, recovered by
/// backward steps so rounding is contracted rather than amplified.
fn backward_orbit<E: Engine>(e: &E, w: &[u8], p: &E::Pt) -> Vec<E::Pt> {
    let mut pts = Vec::with_capacity(w.len());
    let mut y = p.clone();
    for &s in w.iter().rev() {
        y = e.backward(s, &y);
        pts.push(y.clone());
    }
    pts.reverse();
    pts
}

fn orbit_log_deriv<E: Engine>(e: &E, w: &[u8], orbit: &[E::Pt]) -> f64 {
    w.iter().zip(orbit).map(|(&s, x)| e.run_log(&[s], x).1).sum()
}

/// Exponents of the periodic points of admissible cycles with period at most
/// `max_period`.
pub fn exponent_bounds(sys: &SkewSystem, hs: &Horseshoe, max_period: usize, cap: usize) -> Result<ExponentBounds> {
    let s = hs.system(sys);
    let (cycles, partial) = enumerate_cycles(hs, max_period, cap);
    let sign = if hs.time_reversed { -1.0 } else { 1.0 };
    let found: Vec<CycleExponent> = with_engine!(&s, hs.bits, |e| cycles
        .par_iter()
        .map(|(c, t)| {
            let w = cycle_word(hs, c);
            let (p, inside) = fixed_point(&e, w.symbols(), &hs.rectangles[c[0]].interval);
            let orbit = backward_orbit(&e, w.symbols(), &p);
            let ld = orbit_log_deriv(&e, w.symbols(), &orbit);
            CycleExponent {
                cycle: c.clone(),
                period: *t,
                point: e.angle(&p),
                in_rectangle: inside,
                chi: sign * ld / w.len() as f64,
            }
        })
        .collect());
    let min_chi = found.iter().map(|c| c.chi).fold(f64::INFINITY, f64::min);
    let max_chi = found.iter().map(|c| c.chi).fold(f64::NEG_INFINITY, f64::max);
    let (bl, bu) = if hs.time_reversed { (-hs.band.upper, -hs.band.lower) } else { (hs.band.lower, hs.band.upper) };
    let in_band = found.iter().all(|c| c.chi >= bl - 1e-9 && c.chi <= bu + 1e-9);
    Ok(ExponentBounds {
        max_period,
        cycles: found,
        partial,
        min_chi,
        max_chi,
        band_lower: bl,
        band_upper: bu,
        lambda: hs.band.lambda,
        in_band,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceCheck {
    pub cycles: usize,
    pub partial: bool,
    pub max_distance: f64,
    pub ceiling: f64,
    pub holds: bool,
}

/// Weak* distance from each cycle's periodic measure to `mu`, against the
/// flip construction's ceiling.
pub fn flip_distance_check(
    sys: &SkewSystem,
    hs: &Horseshoe,
    mu: &EmpiricalMeasure,
    family: &PotentialFamily,
    k: usize,
    max_period: usize,
    cap: usize,
) -> Result<DistanceCheck> {
    let flip = hs.flip.as_ref().ok_or_else(|| Error::Input("not a flip horseshoe".into()))?;
    let s = hs.system(sys);
    let (cycles, partial) = enumerate_cycles(hs, max_period, cap);
    let dists: Vec<f64> = with_engine!(&s, hs.bits, |e| cycles
        .iter()
        .map(|(c, _)| -> Result<f64> {
            let w = cycle_word(hs, c);
            let (p, _) = fixed_point(&e, w.symbols(), &hs.rectangles[c[0]].interval);
            let syms = w.symbols();
            let pts: Vec<f64> = backward_orbit(&e, syms, &p).iter().map(|x| e.angle(x)).collect();
            // orbit points are listed for the original time direction
            let (word, orbit) = if hs.time_reversed {
                let mut o: Vec<f64> = Vec::with_capacity(pts.len());
                o.push(pts[0]);
                o.extend(pts[1..].iter().rev());
                (Word::new(syms.iter().rev().copied().collect()), o)
            } else {
                (w.clone(), pts)
            };
            let nu = EmpiricalMeasure::from_orbit(&word, &orbit, family)?;
            Ok(measure_distance(mu, &nu, family, k)?.value)
        })
        .collect::<Result<Vec<_>>>()?);
    let max_distance = dists.iter().copied().fold(0.0, f64::max);
    Ok(DistanceCheck {
        cycles: dists.len(),
        partial,
        max_distance,
        ceiling: flip.distance_ceiling,
        holds: max_distance < flip.distance_ceiling,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct K2Estimate {
    pub per_j: Vec<(Arc, Option<f64>)>,
    pub k2_f: f64,
    pub inverse_log_norm: f64,
    /// `K2_F − 1/log ‖F‖`.
    pub slack: f64,
    pub chi_bar_estimate: f64,
    pub inverse_chi_bar: f64,
    pub word_cap: usize,
    pub tolerance: f64,
    /// `1/log ‖F‖ ≤ K2_F + tolerance`.
    pub bound_holds: bool,
}

/// `K₂(F)` as the smallest fitted `K₂` over blending intervals, beside
/// `1/log ‖F‖` and the largest periodic exponent up to `word_cap`.
pub fn k2_estimate(
    sys: &SkewSystem,
    js: &[Arc],
    sizes: &[f64],
    trials: usize,
    cfg: &crate::axioms::FitConfig,
    word_cap: usize,
    tolerance: f64,
) -> Result<K2Estimate> {
    if js.is_empty() {
        return input("need at least one interval J");
    }
    if !(tolerance >= 0.0) {
        return input("tolerance must be nonnegative");
    }
    let mut per_j = Vec::with_capacity(js.len());
    for j in js {
        let k2 = match crate::axioms::fit_cec_constants(sys, j, sizes, trials, cfg) {
            Ok(r) => (r.verdict.cec_plus == Some(true)).then_some(r.k2),
            Err(e @ Error::Input(_)) => return Err(e),
            Err(_) => None,
        };
        per_j.push((*j, k2));
    }
    let k2_f = per_j.iter().filter_map(|p| p.1).fold(f64::INFINITY, f64::min);
    if !k2_f.is_finite() {
        return Err(Error::Construction("CEC+ fails on every interval in the grid".into()));
    }
    let inverse_log_norm = 1.0 / uniform_norm(sys, DEFAULT_GRID)?.ln();
    let mut chi_bar = f64::NEG_INFINITY;
    for n in 1..=word_cap {
        for w in crate::symbolic::enumerate_words_capped(sys.k(), n, crate::symbolic::ENUMERATION_CAP)? {
            if let Ok(t) = crate::analysis::twin_periodic(sys, &w) {
                for fp in &t.fixed_points {
                    chi_bar = chi_bar.max(fp.log_multiplier / n as f64);
                }
            }
        }
    }
    Ok(K2Estimate {
        per_j,
        k2_f,
        inverse_log_norm,
        slack: k2_f - inverse_log_norm,
        chi_bar_estimate: chi_bar,
        inverse_chi_bar: 1.0 / chi_bar,
        word_cap,
        tolerance,
        bound_holds: inverse_log_norm <= k2_f + tolerance,
    })
}
