//! Enumerative skeletons: words of length `m` with anchors whose prefix
//! derivatives stay in a window around `e^{nα}`, joined to a blending
//! interval `J` by short connector words.
//!
//! Every word of length `m` is tried; there is no sampling. An entry is kept
//! when some anchor on the grid satisfies the derivative sandwich with
//! `K₀ ≤ k0_cap` and admits both connectors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{EmpiricalMeasure, PotentialFamily, TestFunction};
use crate::circle::{Angle, Arc, ARC_TOL};
use crate::error::{input, Error, Result};
use crate::symbolic::{enumerate_words_capped, Word, ENUMERATION_CAP};
use crate::systems::SkewSystem;

/// Label recorded in every skeleton built here.
pub const METHOD: &str = "enumerative skeleton";
/// Default number of anchor candidates per word.
pub const DEFAULT_ANCHORS: usize = 256;
/// Tolerance for `f_[θ](x') = x`.
pub const CONNECT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonParams {
    pub j: Arc,
    pub m: usize,
    pub alpha: f64,
    pub eps_e: f64,
    pub target_h: f64,
    pub eps_h: f64,
    pub m_f: usize,
    pub m_b: usize,
    /// Largest admissible `K₀` for a single entry.
    pub k0_cap: f64,
    pub anchors: usize,
}

impl SkeletonParams {
    pub fn new(j: Arc, m: usize, alpha: f64, eps_e: f64, m_f: usize, m_b: usize) -> SkeletonParams {
        SkeletonParams {
            j,
            m,
            alpha,
            eps_e,
            target_h: 0.0,
            eps_h: 0.0,
            m_f,
            m_b,
            k0_cap: std::f64::consts::E,
            anchors: DEFAULT_ANCHORS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return input("m must be positive");
        }
        if self.j.is_full() {
            return input("J must be a proper arc");
        }
        if !(self.eps_e > 0.0) || !self.alpha.is_finite() {
            return input("need eps_E > 0 and finite alpha");
        }
        if !(self.k0_cap >= 1.0) {
            return input("K0 cap must be at least 1");
        }
        if self.anchors == 0 {
            return input("need at least one anchor");
        }
        if !(self.target_h >= 0.0 && self.eps_h >= 0.0) {
            return input("entropy target and slack must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonEntry {
    pub xi: Word,
    pub x: f64,
    pub theta: Word,
    pub beta: Word,
    pub x_prime: f64,
    /// Smallest `K₀` for this entry alone.
    pub k0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub method: String,
    pub params: SkeletonParams,
    pub entries: Vec<SkeletonEntry>,
    /// Largest entry `K₀`.
    pub k0: f64,
    /// Smallest `L₀ ≥ 1` with `card ≥ L₀⁻¹ e^{m(h − ε_H)}`.
    pub l0: f64,
    /// `(1/m) log card`.
    pub achieved_h: f64,
    pub potentials: Vec<TestFunction>,
    /// `∫φ_j dμ` for each potential.
    pub targets: Vec<f64>,
}

impl Skeleton {
    pub fn card(&self) -> usize {
        self.entries.len()
    }
}

/// Smallest `log K₀ ≥ 0` for the prefix sandwich of `w` at `x`.
pub fn prefix_log_k0(sys: &SkewSystem, w: &[u8], x: f64, alpha: f64, eps: f64) -> f64 {
    let mut y = x;
    let mut l = 0.0;
    let mut best: f64 = 0.0;
    for (i, &s) in w.iter().enumerate() {
        let f = sys.map(s);
        l += f.log_deriv(y);
        y = f.eval(y);
        let n = (i + 1) as f64;
        best = best.max(l - n * (alpha + eps)).max(n * (alpha - eps) - l);
    }
    best
}

/// `log K₀` of the reversed word on the inverse system at `f_[w](x)`, from
/// the log-derivatives along the forward orbit of `x`.
fn reversed_log_k0(sys: &SkewSystem, w: &[u8], x: f64, alpha: f64, eps: f64) -> f64 {
    let mut y = x;
    let mut sums = Vec::with_capacity(w.len() + 1);
    sums.push(0.0);
    for &s in w {
        let f = sys.map(s);
        sums.push(sums[sums.len() - 1] + f.log_deriv(y));
        y = f.eval(y);
    }
    let total = sums[w.len()];
    (1..=w.len())
        .map(|n| {
            // the first n reversed steps undo the last n forward ones
            let l = total - sums[w.len() - n];
            let nf = n as f64;
            (l - nf * (alpha + eps)).max(nf * (alpha - eps) - l)
        })
        .fold(0.0, f64::max)
}

/// Birkhoff sums of the potentials along `w` from `x`, cylinders matched
/// against `w` alone.
fn birkhoff_sums(sys: &SkewSystem, w: &[u8], x: f64, pots: &[TestFunction]) -> Vec<f64> {
    let mut sums = vec![0.0; pots.len()];
    let mut y = x;
    for k in 0..w.len() {
        for (acc, p) in sums.iter_mut().zip(pots) {
            *acc += p.eval(&w[k..], y);
        }
        y = sys.map(w[k]).eval(y);
    }
    sums
}

fn star_log_k0(sums: &[f64], targets: &[f64], m: usize, eps: f64) -> f64 {
    sums.iter()
        .zip(targets)
        .map(|(s, t)| {
            let need = (s - m as f64 * t).abs() - m as f64 * eps;
            if need > 1.0 {
                need.ln()
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Lexicographically first shortest `θ`, `|θ| ≤ depth`, with `f_[θ]⁻¹(x) ∈ J`.
pub fn theta_connector(sys: &SkewSystem, j: &Arc, x: f64, depth: usize) -> Result<Option<(Word, f64)>> {
    let mut layer: Vec<(Vec<u8>, f64)> = vec![(Vec::new(), x)];
    for r in 0..=depth {
        if let Some((w, y)) = layer.iter().filter(|(_, y)| j.contains(*y)).min_by(|a, b| a.0.cmp(&b.0)) {
            return Ok(Some((Word::new(w.clone()), *y)));
        }
        if r == depth {
            break;
        }
        if (layer.len() * sys.k()) as u64 > ENUMERATION_CAP {
            return Err(Error::Resource(format!("connector layer {} exceeds the enumeration cap", r + 1)));
        }
        layer = layer
            .iter()
            .flat_map(|(w, y)| {
                (0..sys.k() as u8).map(move |s| {
                    let mut w2 = Vec::with_capacity(w.len() + 1);
                    w2.push(s);
                    w2.extend_from_slice(w);
                    (w2, sys.map(s).inv_eval(*y))
                })
            })
            .collect();
    }
    Ok(None)
}

/// Lexicographically first shortest `β`, `|β| ≤ depth`, with `f_[β](y) ∈ J`.
pub fn beta_connector(sys: &SkewSystem, j: &Arc, y: f64, depth: usize) -> Result<Option<Word>> {
    let mut layer: Vec<(Vec<u8>, f64)> = vec![(Vec::new(), y)];
    for r in 0..=depth {
        if let Some((w, _)) = layer.iter().find(|(_, z)| j.contains(*z)) {
            return Ok(Some(Word::new(w.clone())));
        }
        if r == depth {
            break;
        }
        if (layer.len() * sys.k()) as u64 > ENUMERATION_CAP {
            return Err(Error::Resource(format!("connector layer {} exceeds the enumeration cap", r + 1)));
        }
        layer = layer
            .iter()
            .flat_map(|(w, z)| {
                (0..sys.k() as u8).map(move |s| {
                    let mut w2 = w.clone();
                    w2.push(s);
                    (w2, sys.map(s).eval(*z))
                })
            })
            .collect();
    }
    Ok(None)
}

enum Outcome {
    Entry(SkeletonEntry),
    Window,
    Connect,
}

struct Filter<'a> {
    sys: &'a SkewSystem,
    p: &'a SkeletonParams,
    pots: &'a [TestFunction],
    targets: &'a [f64],
}

impl Filter<'_> {
    fn log_k0(&self, w: &[u8], x: f64) -> f64 {
        let base = prefix_log_k0(self.sys, w, x, self.p.alpha, self.p.eps_e);
        if self.pots.is_empty() {
            return base;
        }
        let sums = birkhoff_sums(self.sys, w, x, self.pots);
        base.max(star_log_k0(&sums, self.targets, w.len(), self.p.eps_e))
    }

    /// Anchors in order of increasing `K₀`, then try connectors.
    fn with_grid(&self, w: &[u8], n: usize) -> Result<(Option<SkeletonEntry>, f64, bool)> {
        let cap = self.p.k0_cap.ln() + 1e-12;
        let mut cands: Vec<(f64, usize)> = (0..n).map(|i| (self.log_k0(w, i as f64 / n as f64), i)).collect();
        let best = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        cands.retain(|c| c.0 <= cap);
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let within = !cands.is_empty();
        for (lk, i) in cands {
            let x = i as f64 / n as f64;
            let Some((theta, xp)) = theta_connector(self.sys, &self.p.j, x, self.p.m_f)? else {
                continue;
            };
            let end = self.sys.run(w, x).0;
            let Some(beta) = beta_connector(self.sys, &self.p.j, end, self.p.m_b)? else {
                continue;
            };
            let entry = SkeletonEntry { xi: Word::new(w.to_vec()), x, theta, beta, x_prime: xp, k0: lk.exp() };
            return Ok((Some(entry), best, within));
        }
        Ok((None, best, within))
    }

    fn word(&self, w: &[u8]) -> Result<Outcome> {
        let n = self.p.anchors;
        let (e, best, within) = self.with_grid(w, n)?;
        if let Some(e) = e {
            return Ok(Outcome::Entry(e));
        }
        let mut within = within;
        // one refinement when the coarse grid misses by at most a factor of 2
        if best <= (2.0 * self.p.k0_cap).ln() {
            let (e, _, w2) = self.with_grid(w, 4 * n)?;
            if let Some(e) = e {
                return Ok(Outcome::Entry(e));
            }
            within |= w2;
        }
        Ok(if within { Outcome::Connect } else { Outcome::Window })
    }
}

fn assemble(
    sys: &SkewSystem,
    p: &SkeletonParams,
    words: Vec<Word>,
    pots: Vec<TestFunction>,
    targets: Vec<f64>,
) -> Result<Skeleton> {
    p.validate()?;
    for w in &words {
        sys.check_word(w)?;
        if w.len() != p.m {
            return input(format!("candidate {w} does not have length m = {}", p.m));
        }
    }
    let mut words = words;
    words.sort();
    words.dedup();
    let f = Filter { sys, p, pots: &pots, targets: &targets };
    let outcomes: Vec<Outcome> = words.par_iter().map(|w| f.word(w.symbols())).collect::<Result<Vec<_>>>()?;
    let (mut window, mut connect) = (0usize, 0usize);
    let mut entries = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Entry(e) => entries.push(e),
            Outcome::Window => window += 1,
            Outcome::Connect => connect += 1,
        }
    }
    if entries.is_empty() {
        let binding = if window >= connect {
            "exponent window (no anchor meets the derivative sandwich within the K0 cap)"
        } else {
            "connectivity (no connector into or out of J within m_f, m_b)"
        };
        return Err(Error::Construction(format!(
            "empty skeleton: {window} words fail the exponent window, {connect} fail connectivity; binding constraint: {binding}"
        )));
    }
    entries.sort_by(|a, b| a.xi.cmp(&b.xi));
    let k0 = entries.iter().map(|e| e.k0).fold(1.0, f64::max);
    let card = entries.len() as f64;
    let achieved_h = card.ln() / p.m as f64;
    let need = (p.m as f64 * (p.target_h - p.eps_h)).exp();
    let l0 = (need / card).max(1.0);
    Ok(Skeleton {
        method: METHOD.to_string(),
        params: p.clone(),
        entries,
        k0,
        l0,
        achieved_h,
        potentials: pots,
        targets,
    })
}

pub fn build_skeleton(sys: &SkewSystem, p: &SkeletonParams) -> Result<Skeleton> {
    p.validate()?;
    let words = enumerate_words_capped(sys.k(), p.m, ENUMERATION_CAP)?;
    assemble(sys, p, words, Vec::new(), Vec::new())
}

/// The same filter applied to an explicit candidate list, for lengths where
/// enumerating all `k^m` words is out of reach.
pub fn skeleton_from_words(sys: &SkewSystem, p: &SkeletonParams, words: Vec<Word>) -> Result<Skeleton> {
    assemble(sys, p, words, Vec::new(), Vec::new())
}

/// As [`build_skeleton`], also requiring the Birkhoff sums of the first
/// `count` potentials to stay within `K₀ + m ε_E` of `m ∫φ dμ`.
pub fn build_skeleton_star(
    sys: &SkewSystem,
    p: &SkeletonParams,
    mu: &EmpiricalMeasure,
    family: &PotentialFamily,
    count: usize,
) -> Result<Skeleton> {
    if count > family.len() || mu.averages.len() < count || mu.family.len() < count {
        return input("measure does not carry averages for the requested potentials");
    }
    if mu.family[..count] != family.functions[..count] {
        return input("measure was registered with a different potential family");
    }
    p.validate()?;
    let words = enumerate_words_capped(sys.k(), p.m, ENUMERATION_CAP)?;
    assemble(sys, p, words, family.functions[..count].to_vec(), mu.averages[..count].to_vec())
}

impl Skeleton {
    /// The same orbit pieces read backwards, as a skeleton of the inverse
    /// system at exponent `-α`. Each word is reversed and anchored at its old
    /// endpoint. The old exit connector, reversed, becomes the entry
    /// connector, and vice versa. Potentials are dropped.
    pub fn time_reversed(&self, sys: &SkewSystem) -> Skeleton {
        let inv = sys.inverse();
        let mut p = self.params.clone();
        p.alpha = -p.alpha;
        std::mem::swap(&mut p.m_f, &mut p.m_b);
        let rev = |w: &Word| Word::new(w.symbols().iter().rev().copied().collect());
        let mut entries: Vec<SkeletonEntry> = self
            .entries
            .par_iter()
            .map(|e| {
                let xi = rev(&e.xi);
                let (theta, beta) = (rev(&e.beta), rev(&e.theta));
                let y = sys.run(e.xi.symbols(), e.x).0;
                let lk = reversed_log_k0(sys, e.xi.symbols(), e.x, self.params.alpha, p.eps_e);
                let entry = |x: f64, lk: f64| SkeletonEntry {
                    xi: xi.clone(),
                    x,
                    theta: theta.clone(),
                    beta: beta.clone(),
                    x_prime: sys.run(e.beta.symbols(), x).0,
                    k0: lk.exp(),
                };
                let connects = |x: f64| {
                    let back = inv.run(&[xi.symbols(), beta.symbols()].concat(), x).0;
                    p.j.contains_tol(sys.run(e.beta.symbols(), x).0, 0.0) && p.j.contains_tol(back, 0.0)
                };
                if connects(y) {
                    return entry(y, lk);
                }
                // an expanding word pins y only up to rounding; the reversed
                // word contracts, so any anchor in its basin will do
                let n = p.anchors.max(1);
                (0..n)
                    .map(|i| i as f64 / n as f64)
                    .filter(|&x| connects(x))
                    .map(|x| (x, prefix_log_k0(&inv, xi.symbols(), x, p.alpha, p.eps_e)))
                    .filter(|c| c.1.exp() <= p.k0_cap)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(x, l)| entry(x, l))
                    .unwrap_or_else(|| entry(y, lk))
            })
            .collect();
        entries.sort_by(|a, b| a.xi.cmp(&b.xi));
        let k0 = entries.iter().map(|e| e.k0).fold(1.0, f64::max);
        p.k0_cap = p.k0_cap.max(k0);
        Skeleton {
            method: self.method.clone(),
            params: p,
            entries,
            k0,
            l0: self.l0,
            achieved_h: self.achieved_h,
            potentials: Vec::new(),
            targets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemCheck {
    pub pass: bool,
    pub margin: f64,
}

impl ItemCheck {
    fn new(margin: f64) -> ItemCheck {
        ItemCheck { pass: margin >= 0.0, margin }
    }
}

/// Items (i)–(vi) of the skeleton definition, re-checked from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonReport {
    pub cardinality: ItemCheck,
    pub distinct: ItemCheck,
    pub exponents: ItemCheck,
    pub entry: ItemCheck,
    pub exit: ItemCheck,
    pub birkhoff: ItemCheck,
}

impl SkeletonReport {
    pub fn pass(&self) -> bool {
        [&self.cardinality, &self.distinct, &self.exponents, &self.entry, &self.exit, &self.birkhoff]
            .iter()
            .all(|c| c.pass)
    }
}

/// Signed distance of `x` into `j`: positive inside.
fn inside_margin(j: &Arc, x: f64) -> f64 {
    let o = j.anchor().displacement(Angle::new(x));
    let o = if o < -ARC_TOL { o + 1.0 } else { o };
    o.min(j.length() - o)
}

pub fn skeleton_validate(sys: &SkewSystem, sk: &Skeleton) -> SkeletonReport {
    let p = &sk.params;
    let card = sk.entries.len() as f64;
    let need = (p.m as f64 * (p.target_h - p.eps_h)).exp() / sk.l0;
    let cardinality = ItemCheck::new(if card > 0.0 { card.ln() - need.ln() } else { f64::NEG_INFINITY });

    let mut words: Vec<&Word> = sk.entries.iter().map(|e| &e.xi).collect();
    words.sort();
    let dups = words.windows(2).filter(|w| w[0] == w[1]).count();
    let distinct = ItemCheck::new(-(dups as f64));

    let lk = sk.k0.ln();
    let mut ex = f64::INFINITY;
    let mut en = f64::INFINITY;
    let mut ot = f64::INFINITY;
    let mut bk = f64::INFINITY;
    for e in &sk.entries {
        let w = e.xi.symbols();
        let wrong_len = w.len() != p.m || sys.check_word(&e.xi).is_err();
        ex = ex.min(if wrong_len {
            f64::NEG_INFINITY
        } else {
            lk + 1e-12 - prefix_log_k0(sys, w, e.x, p.alpha, p.eps_e)
        });
        let hit = sys.run(e.theta.symbols(), e.x_prime).0;
        let miss = Angle::new(hit).distance(Angle::new(e.x));
        let len_ok = e.theta.len() <= p.m_f && e.beta.len() <= p.m_b;
        en = en.min(if len_ok { (CONNECT_TOL - miss).min(inside_margin(&p.j, e.x_prime) + ARC_TOL) } else { -1.0 });
        let out = sys.run(&[w, e.beta.symbols()].concat(), e.x).0;
        ot = ot.min(inside_margin(&p.j, out) + ARC_TOL);
        if !sk.potentials.is_empty() && !wrong_len {
            let sums = birkhoff_sums(sys, w, e.x, &sk.potentials);
            for (s, t) in sums.iter().zip(&sk.targets) {
                let slack = sk.k0 + p.m as f64 * p.eps_e - (s - p.m as f64 * t).abs();
                bk = bk.min(slack + 1e-12);
            }
        }
    }
    let fix = |v: f64| if v.is_finite() || v < 0.0 { v } else { 0.0 };
    SkeletonReport {
        cardinality,
        distinct,
        exponents: ItemCheck::new(fix(ex)),
        entry: ItemCheck::new(fix(en)),
        exit: ItemCheck::new(fix(ot)),
        birkhoff: ItemCheck::new(fix(bk)),
    }
}
