use serde::Serialize;
use serde_json::{json, Value};

use skewlab::analysis::{exponent_sample, twin_periodic, TwinStatus};
use skewlab::axioms::{
    accessibility_depth, blender_check, verify_axioms, AxiomReport, BlenderParams, CecConstants, Direction, FitConfig,
    VerifyConfig,
};
use skewlab::horseshoe::{
    build_backward_horseshoe, build_flip_horseshoe, build_horseshoe, entropy_bounds, exponent_bounds, k2_estimate,
    verify_covering, CoveringReport, FlipParams, Horseshoe, HorseshoeParams,
};
use skewlab::skeleton::{build_skeleton, skeleton_from_words, skeleton_validate, Skeleton, SkeletonParams};
use skewlab::{Arc, Error, SkewSystem};

use crate::config::{arc, Config, Family};

pub struct Table {
    pub name: &'static str,
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

#[derive(Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
}

/// Everything a command produces.
#[derive(Default)]
pub struct Outcome {
    pub result: Value,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    /// Extra JSON files, by name.
    pub files: Vec<(&'static str, Value)>,
    /// A search or enumeration stopped at its cap.
    pub capped: bool,
}

impl Outcome {
    fn check(&mut self, name: impl Into<String>, pass: bool) {
        self.checks.push(Check { name: name.into(), pass });
    }
}

type Res = Result<Outcome, Error>;

fn num(x: f64) -> String {
    format!("{x}")
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn j_arc(cfg: &Config) -> Arc {
    arc("params.j", cfg.params.j).expect("validated")
}

fn verify_config(cfg: &Config) -> VerifyConfig {
    VerifyConfig {
        fit: FitConfig { seed: cfg.run.seed, ..FitConfig::default() },
        sizes: cfg.params.sizes.clone(),
        trials: cfg.params.trials,
        access_grid: cfg.run.grid,
        access_depth: cfg.params.access_depth,
    }
}

fn depths(sys: &SkewSystem, cfg: &Config, j: &Arc) -> Result<(usize, usize), Error> {
    let p = &cfg.params;
    let m_f = match p.m_f {
        Some(v) => v,
        None => accessibility_depth(sys, j, Direction::Forward, cfg.run.grid, p.access_depth)?,
    };
    let m_b = match p.m_b {
        Some(v) => v,
        None => accessibility_depth(sys, j, Direction::Backward, cfg.run.grid, p.access_depth)?,
    };
    Ok((m_f, m_b))
}

fn sample_rows(direction: &str, r: &AxiomReport, rows: &mut Vec<Vec<String>>) {
    for s in &r.samples {
        rows.push(vec![direction.into(), num(s.size), s.length.to_string(), num(s.rate)]);
    }
}

pub fn verify_axioms_cmd(sys: &SkewSystem, cfg: &Config) -> Res {
    let j = j_arc(cfg);
    let (plus, minus) = verify_axioms(sys, &j, &verify_config(cfg))?;
    let mut out = Outcome::default();
    let v = &plus.verdict;
    for (name, x) in [("cec+", v.cec_plus), ("cec-", v.cec_minus), ("acc+", v.acc_plus), ("acc-", v.acc_minus)] {
        if let Some(pass) = x {
            out.check(name, pass);
        }
    }
    let blender = if cfg.system.family == Family::SyntheticBlender && !cfg.system.inverse {
        let r = blender_check(sys, &BlenderParams::synthetic(), cfg.run.grid)?;
        out.check("blender", r.pass());
        Some(r)
    } else {
        None
    };
    let mut samples = Vec::new();
    sample_rows("plus", &plus, &mut samples);
    sample_rows("minus", &minus, &mut samples);
    let mut failures = Vec::new();
    for (d, r) in [("plus", &plus), ("minus", &minus)] {
        for (size, msg) in &r.failures {
            failures.push(vec![d.into(), num(*size), msg.clone()]);
        }
    }
    out.tables.push(Table { name: "samples", header: &["direction", "size", "length", "rate"], rows: samples });
    out.tables.push(Table { name: "failures", header: &["direction", "size", "message"], rows: failures });
    out.result = json!({ "plus": plus, "minus": minus, "blender": blender });
    Ok(out)
}

pub fn lyapunov(sys: &SkewSystem, cfg: &Config) -> Res {
    let p = &cfg.params;
    let probs = if p.probabilities.is_empty() { vec![1.0 / sys.k() as f64; sys.k()] } else { p.probabilities.clone() };
    let s = exponent_sample(sys, &probs, p.horizon, p.samples, cfg.run.seed)?;
    let mut out = Outcome::default();
    out.check("finite", s.samples.iter().all(|v| v.is_finite()));
    let h = &s.histogram;
    let rows =
        h.counts.iter().enumerate().map(|(i, c)| vec![num(h.edges[i]), num(h.edges[i + 1]), c.to_string()]).collect();
    out.tables.push(Table { name: "histogram", header: &["left", "right", "count"], rows });
    let rows = s.samples.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]).collect();
    out.tables.push(Table { name: "exponents", header: &["trial", "exponent"], rows });
    out.result = json!({ "probabilities": probs, "mean": s.mean, "stddev": s.stddev, "histogram": s.histogram });
    Ok(out)
}

fn skeleton_params(sys: &SkewSystem, cfg: &Config, j: Arc) -> Result<SkeletonParams, Error> {
    let p = &cfg.params;
    let (m_f, m_b) = depths(sys, cfg, &j)?;
    let mut sp = SkeletonParams::new(j, p.m, p.alpha, p.eps_e, m_f, m_b);
    sp.k0_cap = p.k0_cap;
    sp.anchors = p.anchors;
    Ok(sp)
}

fn entry_table(sk: &Skeleton) -> Table {
    let rows = sk
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            vec![
                i.to_string(),
                e.xi.to_string(),
                num(e.x),
                e.theta.to_string(),
                e.beta.to_string(),
                num(e.x_prime),
                num(e.k0),
            ]
        })
        .collect();
    Table { name: "entries", header: &["index", "xi", "x", "theta", "beta", "x_prime", "k0"], rows }
}

pub fn skeleton(sys: &SkewSystem, cfg: &Config) -> Res {
    let sp = skeleton_params(sys, cfg, j_arc(cfg))?;
    let sk = build_skeleton(sys, &sp)?;
    let report = skeleton_validate(sys, &sk);
    let mut out = Outcome::default();
    out.check("cardinality", report.cardinality.pass);
    out.check("distinct", report.distinct.pass);
    out.check("exponents", report.exponents.pass);
    out.check("entry", report.entry.pass);
    out.check("exit", report.exit.pass);
    out.check("birkhoff", report.birkhoff.pass);
    out.tables.push(entry_table(&sk));
    out.result = json!({ "skeleton": sk, "validation": report });
    Ok(out)
}

/// Fits constants, builds the skeleton and the horseshoe in the configured direction.
fn build(sys: &SkewSystem, cfg: &Config) -> Result<Horseshoe, Error> {
    let p = &cfg.params;
    let j = j_arc(cfg);
    let (plus, minus) = verify_axioms(sys, &j, &verify_config(cfg))?;
    let sp = skeleton_params(sys, cfg, j)?;
    let sk = build_skeleton(sys, &sp)?;
    let hp = HorseshoeParams {
        delta0: p.delta0,
        eps_d: p.eps_d,
        eps1_max: p.eps1_max,
        max_depth: p.max_depth,
        ..HorseshoeParams::default()
    };
    if p.backward {
        build_backward_horseshoe(sys, &sk, &j, &hp, &CecConstants::from_report(&minus))
    } else {
        build_horseshoe(sys, &sk, &j, &hp, &CecConstants::from_report(&plus))
    }
}

fn load_or_build(sys: &SkewSystem, cfg: &Config) -> Result<Horseshoe, Error> {
    match &cfg.params.horseshoe_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("params.horseshoe_file: {path}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("params.horseshoe_file: {path}: {e}")))
        }
        None => build(sys, cfg),
    }
}

fn covering_checks(out: &mut Outcome, hs: &Horseshoe, c: &CoveringReport) {
    out.check("quantifiers", hs.quantifiers.iter().all(|q| q.pass));
    out.check("covering", c.all_pass);
    out.check("rectangles disjoint", hs.rectangles_disjoint());
    out.check("pigeonhole", hs.pigeonhole_holds());
}

fn pair_table(c: &CoveringReport) -> Table {
    let rows = c
        .pairs
        .iter()
        .map(|p| {
            let status = serde_json::to_value(p.status).expect("status").as_str().unwrap_or_default().to_string();
            vec![p.i.to_string(), p.j.to_string(), status, num(p.margin), p.injective.to_string()]
        })
        .collect();
    Table { name: "pairs", header: &["i", "j", "status", "margin", "injective"], rows }
}

fn rectangle_table(hs: &Horseshoe) -> Table {
    let rows = hs
        .rectangles
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                i.to_string(),
                r.cylinder.to_string(),
                num(r.interval.left()),
                num(r.interval.length()),
                hs.row_times[i].to_string(),
                hs.a.row_count(i).to_string(),
            ]
        })
        .collect();
    Table { name: "rectangles", header: &["index", "cylinder", "left", "length", "row_time", "out_degree"], rows }
}

fn transition_table(hs: &Horseshoe) -> Table {
    let n = hs.size();
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                hs.times[i][j].to_string(),
                u8::from(hs.a.get(i, j)).to_string(),
                hs.transition_words[i][j].to_string(),
            ]);
        }
    }
    Table { name: "transitions", header: &["i", "j", "time", "admissible", "word"], rows }
}

/// Covering, entropy and exponent checks shared by `horseshoe` and `flip`.
fn assess(sys: &SkewSystem, cfg: &Config, hs: &Horseshoe, max_period: usize, expanding: bool) -> Res {
    let mut out = Outcome::default();
    let c = verify_covering(sys, hs, cfg.run.grid)?;
    covering_checks(&mut out, hs, &c);
    let e = entropy_bounds(hs);
    out.check("entropy sandwich", e.holds);
    let eb = exponent_bounds(sys, hs, max_period, cfg.run.cap)?;
    let signed = !eb.cycles.is_empty() && if expanding { eb.min_chi > 0.0 } else { eb.max_chi < 0.0 };
    out.check(if expanding { "exponents positive" } else { "exponents negative" }, signed);
    out.check("exponents in band", eb.in_band);
    out.capped = eb.partial;
    let rows = eb
        .cycles
        .iter()
        .map(|cy| {
            let ids: Vec<String> = cy.cycle.iter().map(|i| i.to_string()).collect();
            vec![ids.join(" "), cy.period.to_string(), num(cy.point), cy.in_rectangle.to_string(), num(cy.chi)]
        })
        .collect();
    out.tables.push(rectangle_table(hs));
    out.tables.push(transition_table(hs));
    out.tables.push(pair_table(&c));
    out.tables.push(Table { name: "cycles", header: &["cycle", "period", "point", "in_rectangle", "chi"], rows });
    let summary = json!({
        "method": hs.method,
        "time_reversed": hs.time_reversed,
        "bits": hs.bits,
        "rectangles": hs.size(),
        "unresolved": hs.unresolved,
        "restriction": hs.restriction,
        "quantifiers": hs.quantifiers,
        "constants": hs.constants,
        "band": hs.band,
        "flip": hs.flip,
    });
    let cov = json!({
        "tested": c.tested,
        "untested": c.untested,
        "min_margin": c.min_margin,
        "rectangles_disjoint": c.rectangles_disjoint,
        "intervals_disjoint": c.intervals_disjoint,
        "pullbacks_disjoint": c.pullbacks_disjoint,
        "all_pass": c.all_pass,
    });
    let ex = json!({
        "max_period": eb.max_period,
        "cycles": eb.cycles.len(),
        "partial": eb.partial,
        "min_chi": eb.min_chi,
        "max_chi": eb.max_chi,
        "band_lower": eb.band_lower,
        "band_upper": eb.band_upper,
        "lambda": eb.lambda,
        "in_band": eb.in_band,
    });
    out.result = json!({ "horseshoe": summary, "covering": cov, "entropy": e, "exponents": ex });
    out.files.push(("horseshoe", to_value(hs)));
    Ok(out)
}

fn t_max(hs: &Horseshoe) -> usize {
    hs.row_times.iter().copied().max().unwrap_or(1)
}

pub fn horseshoe(sys: &SkewSystem, cfg: &Config) -> Res {
    let hs = build(sys, cfg)?;
    let period = cfg.params.max_period.unwrap_or(3 * t_max(&hs));
    assess(sys, cfg, &hs, period, !hs.time_reversed)
}

pub fn flip(sys: &SkewSystem, cfg: &Config) -> Res {
    let f = &cfg.params.flip;
    let j = j_arc(cfg);
    let (plus, minus) = verify_axioms(sys, &j, &verify_config(cfg))?;
    let (m_f, m_b) = depths(sys, cfg, &j)?;
    let fp = FlipParams {
        beta: f.beta,
        eps: f.eps,
        eps_d: f.eps_d,
        delta0: f.delta0,
        gamma: f.gamma,
        kappa: f.kappa,
        max_depth: f.max_depth,
        beam: f.beam,
        bits: f.bits,
    };
    let (sk, k) = if f.beta > 0.0 {
        let mut sp = SkeletonParams::new(j, f.m, f.alpha, f.eps_e, m_f, m_b);
        sp.anchors = f.anchors;
        (skeleton_from_words(sys, &sp, f.candidates())?, CecConstants::from_report(&plus))
    } else {
        // contracting words of the inverse, read backwards
        let inv = sys.inverse();
        let mut sp = SkeletonParams::new(j, f.m, -f.alpha, f.eps_e, m_b, m_f);
        sp.anchors = f.anchors;
        let contracting = skeleton_from_words(&inv, &sp, f.candidates())?;
        (contracting.time_reversed(&inv), CecConstants::from_report(&minus))
    };
    let hs = build_flip_horseshoe(sys, &sk, &j, &fp, &k)?;
    let period = f.max_period.unwrap_or(2 * t_max(&hs));
    let mut out = assess(sys, cfg, &hs, period, f.beta > 0.0)?;
    out.tables.push(entry_table(&sk));
    Ok(out)
}

pub fn covering(sys: &SkewSystem, cfg: &Config) -> Res {
    let hs = load_or_build(sys, cfg)?;
    let c = verify_covering(sys, &hs, cfg.run.grid)?;
    let mut out = Outcome::default();
    covering_checks(&mut out, &hs, &c);
    out.tables.push(pair_table(&c));
    out.result = to_value(&c);
    Ok(out)
}

pub fn entropy_bounds_cmd(sys: &SkewSystem, cfg: &Config) -> Res {
    let hs = load_or_build(sys, cfg)?;
    let e = entropy_bounds(&hs);
    let mut out = Outcome::default();
    out.check("entropy sandwich", e.holds);
    out.check("pigeonhole", hs.pigeonhole_holds());
    out.tables.push(rectangle_table(&hs));
    out.result = to_value(&e);
    Ok(out)
}

pub fn twin(sys: &SkewSystem, cfg: &Config) -> Res {
    let w = &cfg.params.word;
    let t = twin_periodic(sys, w)?;
    let mut out = Outcome::default();
    out.check("twin", t.attracting.is_none() || t.repelling.is_some());
    out.capped = t.status == TwinStatus::TooMany;
    let n = w.len() as f64;
    let rows =
        t.fixed_points.iter().map(|f| vec![num(f.angle), num(f.log_multiplier), num(f.log_multiplier / n)]).collect();
    out.tables.push(Table { name: "fixed_points", header: &["angle", "log_multiplier", "exponent"], rows });
    out.result = json!({ "word": w, "twin": t });
    Ok(out)
}

pub fn k2(sys: &SkewSystem, cfg: &Config) -> Res {
    let p = &cfg.params;
    let js: Vec<Arc> = if p.js.is_empty() {
        vec![j_arc(cfg)]
    } else {
        p.js.iter().map(|&j| arc("params.js", j).expect("validated")).collect()
    };
    let fit = FitConfig { seed: cfg.run.seed, ..FitConfig::default() };
    let r = k2_estimate(sys, &js, &p.sizes, p.trials, &fit, p.word_cap, cfg.run.tolerance)?;
    let mut out = Outcome::default();
    out.check("1/log norm <= K2 + tolerance", r.bound_holds);
    let rows =
        r.per_j.iter().map(|(j, k)| vec![num(j.left()), num(j.length()), k.map(num).unwrap_or_default()]).collect();
    out.tables.push(Table { name: "intervals", header: &["anchor", "length", "k2"], rows });
    out.result = to_value(&r);
    Ok(out)
}
