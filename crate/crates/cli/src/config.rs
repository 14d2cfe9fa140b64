use std::path::Path;

use serde::{Deserialize, Serialize};
use skewlab::systems::GOLDEN;
use skewlab::{Arc, SkewSystem, Word};

/// Scenario file. Every table except `[system]` may be omitted.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Output directory; `--out` takes precedence. Not embedded in reports.
    #[serde(default, skip_serializing)]
    pub out: Option<String>,
    pub system: SystemConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SyntheticBlender,
    MobiusRotation,
    Rotations,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub family: Family,
    /// Möbius parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Rotation angle paired with the Möbius map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    /// Use the inverse system.
    #[serde(default)]
    pub inverse: bool,
}

/// Settings shared by every command, each overridable by a flag.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Verification grid: accessibility grid, covering and monotonicity checks.
    pub grid: usize,
    /// Largest number of cycles enumerated for exponent bounds.
    pub cap: usize,
    /// Slack allowed in the `K2` bound.
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig { seed: 0, grid: 1000, cap: skewlab::horseshoe::DEFAULT_CYCLE_CAP, tolerance: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Blending interval as `[anchor, length]`.
    pub j: [f64; 2],
    /// Intervals for `k2`; empty means `[j]`.
    pub js: Vec<[f64; 2]>,
    /// Arc sizes for the covering fits.
    pub sizes: Vec<f64>,
    pub trials: usize,
    pub access_depth: usize,
    /// Word for `twin`.
    pub word: Word,
    pub m: usize,
    pub alpha: f64,
    pub eps_e: f64,
    pub k0_cap: f64,
    pub anchors: usize,
    /// Connector depths; fitted accessibility depths when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_f: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_b: Option<usize>,
    /// Build the contracting horseshoe through the inverse system.
    pub backward: bool,
    pub delta0: f64,
    pub eps_d: f64,
    pub eps1_max: f64,
    pub max_depth: usize,
    /// Longest cycle time for exponent bounds; defaults to 3 t_max.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_period: Option<usize>,
    /// Previously written horseshoe for `covering` and `entropy-bounds`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horseshoe_file: Option<String>,
    /// Symbol probabilities for `lyapunov`; empty means uniform.
    pub probabilities: Vec<f64>,
    pub horizon: usize,
    pub samples: usize,
    /// Longest periodic word for the `k2` exponent estimate.
    pub word_cap: usize,
    pub flip: FlipConfig,
}

impl Default for Params {
    fn default() -> Params {
        Params {
            j: [0.22, 0.06],
            js: Vec::new(),
            sizes: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            trials: 4,
            access_depth: 64,
            word: Word::new(vec![0]),
            m: 6,
            alpha: 0.0,
            eps_e: 0.05,
            k0_cap: std::f64::consts::E,
            anchors: skewlab::skeleton::DEFAULT_ANCHORS,
            m_f: None,
            m_b: None,
            backward: false,
            delta0: 1e-6,
            eps_d: 0.01,
            eps1_max: 2.5,
            max_depth: 256,
            max_period: None,
            horseshoe_file: None,
            probabilities: Vec::new(),
            horizon: 1000,
            samples: 1000,
            word_cap: 6,
            flip: FlipConfig::default(),
        }
    }
}

/// Exponent-flip scenario. Candidate words are `words` when given, otherwise
/// `base^m` together with `base^m` carrying `mark` at each position of `marks`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlipConfig {
    pub m: usize,
    pub alpha: f64,
    pub eps_e: f64,
    pub words: Vec<Word>,
    pub base: u8,
    pub mark: u8,
    pub marks: Vec<usize>,
    pub anchors: usize,
    pub beta: f64,
    pub eps: f64,
    pub eps_d: f64,
    pub delta0: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub max_depth: usize,
    pub beam: usize,
    /// Projective precision; 0 picks it automatically.
    pub bits: u64,
    /// Longest cycle time for exponent bounds; defaults to 2 t_max.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_period: Option<usize>,
}

impl Default for FlipConfig {
    fn default() -> FlipConfig {
        let d = skewlab::horseshoe::FlipParams::default();
        FlipConfig {
            m: 120,
            alpha: -(3f64.ln()),
            eps_e: 0.05,
            words: Vec::new(),
            base: 0,
            mark: 1,
            marks: vec![0, 19, 61, 100],
            anchors: 1,
            beta: d.beta,
            eps: d.eps,
            eps_d: d.eps_d,
            delta0: d.delta0,
            gamma: d.gamma,
            kappa: d.kappa,
            max_depth: d.max_depth,
            beam: d.beam,
            bits: d.bits,
            max_period: None,
        }
    }
}

impl FlipConfig {
    pub fn candidates(&self) -> Vec<Word> {
        if !self.words.is_empty() {
            return self.words.clone();
        }
        let mut out = vec![Word::repeat(self.base, self.m)];
        for &q in &self.marks {
            let mut v = vec![self.base; self.m];
            v[q] = self.mark;
            out.push(Word::new(v));
        }
        out
    }
}

/// A rejected field, reported by its dotted path.
#[derive(Debug)]
pub struct Invalid(pub String);

fn bad<T>(field: &str, msg: impl std::fmt::Display) -> Result<T, Invalid> {
    Err(Invalid(format!("{field}: {msg}")))
}

fn positive(field: &str, v: f64) -> Result<(), Invalid> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(field, format!("must be positive and finite, got {v}"))
    }
}

fn nonzero(field: &str, v: usize) -> Result<(), Invalid> {
    if v == 0 {
        bad(field, "must be at least 1")
    } else {
        Ok(())
    }
}

pub fn arc(field: &str, v: [f64; 2]) -> Result<Arc, Invalid> {
    if !v[0].is_finite() || !(v[1] > 0.0 && v[1] < 1.0) {
        return bad(field, format!("need a finite anchor and a length in (0, 1), got {v:?}"));
    }
    Arc::new(v[0], v[1]).or_else(|e| bad(field, e))
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, Invalid> {
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Invalid(format!("{}: {}", path.display(), e.message())))
    }

    pub fn system(&self) -> Result<SkewSystem, Invalid> {
        let s = &self.system;
        let sys = match s.family {
            Family::SyntheticBlender => SkewSystem::synthetic_blender(),
            Family::MobiusRotation => {
                let t = s.t.unwrap_or(0.5);
                if !(t > 0.0 && t < 1.0) {
                    return bad("system.t", format!("must lie in (0, 1), got {t}"));
                }
                let rho = s.rho.unwrap_or(GOLDEN);
                if !rho.is_finite() {
                    return bad("system.rho", "must be finite");
                }
                SkewSystem::mobius_rotation(t, rho).or_else(|e| bad("system", e))?
            }
            Family::Rotations => {
                let a = match &s.angles {
                    Some(a) if !a.is_empty() => a,
                    _ => return bad("system.angles", "rotations need at least one angle"),
                };
                if a.iter().any(|x| !x.is_finite()) {
                    return bad("system.angles", "angles must be finite");
                }
                SkewSystem::rotations(a).or_else(|e| bad("system", e))?
            }
        };
        if s.family != Family::MobiusRotation && (s.t.is_some() || s.rho.is_some()) {
            return bad("system.t", "only the mobius-rotation family takes t and rho");
        }
        if s.family != Family::Rotations && s.angles.is_some() {
            return bad("system.angles", "only the rotations family takes angles");
        }
        Ok(if s.inverse { sys.inverse() } else { sys })
    }

    /// Checks every field the command reads before any computation.
    pub fn validate(&self, command: &str) -> Result<(), Invalid> {
        let p = &self.params;
        let r = &self.run;
        let k = self.system()?.k();
        nonzero("run.grid", r.grid)?;
        nonzero("run.cap", r.cap)?;
        if !(r.tolerance >= 0.0 && r.tolerance.is_finite()) {
            return bad("run.tolerance", format!("must be nonnegative, got {}", r.tolerance));
        }
        let fits = matches!(command, "verify-axioms" | "k2" | "horseshoe" | "flip" | "skeleton")
            || (matches!(command, "covering" | "entropy-bounds") && p.horseshoe_file.is_none());
        if fits {
            arc("params.j", p.j)?;
            nonzero("params.trials", p.trials)?;
            nonzero("params.access_depth", p.access_depth)?;
            if p.sizes.is_empty() {
                return bad("params.sizes", "need at least one size");
            }
            for (i, &s) in p.sizes.iter().enumerate() {
                if !(s > 0.0 && s < 1.0) {
                    return bad(&format!("params.sizes[{i}]"), format!("must lie in (0, 1), got {s}"));
                }
            }
        }
        if matches!(command, "skeleton" | "horseshoe")
            || (matches!(command, "covering" | "entropy-bounds") && p.horseshoe_file.is_none())
        {
            nonzero("params.m", p.m)?;
            positive("params.eps_e", p.eps_e)?;
            if !p.alpha.is_finite() {
                return bad("params.alpha", "must be finite");
            }
            if !(p.k0_cap >= 1.0) {
                return bad("params.k0_cap", format!("must be at least 1, got {}", p.k0_cap));
            }
            nonzero("params.anchors", p.anchors)?;
            let words = (k as f64).powi(p.m as i32);
            if words > skewlab::symbolic::ENUMERATION_CAP as f64 {
                return bad("params.m", format!("{k}^{} words exceed the enumeration cap", p.m));
            }
        }
        if matches!(command, "horseshoe")
            || (matches!(command, "covering" | "entropy-bounds") && p.horseshoe_file.is_none())
        {
            positive("params.delta0", p.delta0)?;
            positive("params.eps_d", p.eps_d)?;
            positive("params.eps1_max", p.eps1_max)?;
            nonzero("params.max_depth", p.max_depth)?;
            if let Some(0) = p.max_period {
                return bad("params.max_period", "must be at least 1");
            }
        }
        match command {
            "twin" => {
                if p.word.is_empty() {
                    return bad("params.word", "must be nonempty");
                }
                if let Some(&s) = p.word.symbols().iter().find(|&&s| s as usize >= k) {
                    return bad("params.word", format!("symbol {s} outside the {k} maps"));
                }
            }
            "lyapunov" => {
                nonzero("params.horizon", p.horizon)?;
                nonzero("params.samples", p.samples)?;
                if !p.probabilities.is_empty() {
                    if p.probabilities.len() != k {
                        return bad("params.probabilities", format!("need {k} entries"));
                    }
                    let s: f64 = p.probabilities.iter().sum();
                    if p.probabilities.iter().any(|v| !(*v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                        return bad("params.probabilities", "must be nonnegative and sum to 1");
                    }
                }
            }
            "k2" => {
                nonzero("params.word_cap", p.word_cap)?;
                for (i, &j) in p.js.iter().enumerate() {
                    arc(&format!("params.js[{i}]"), j)?;
                }
            }
            "flip" => {
                let f = &p.flip;
                nonzero("params.flip.m", f.m)?;
                positive("params.flip.eps_e", f.eps_e)?;
                nonzero("params.flip.anchors", f.anchors)?;
                if !(f.beta != 0.0 && f.beta.is_finite()) {
                    return bad("params.flip.beta", "must be nonzero and finite");
                }
                if !(f.alpha.is_finite() && f.alpha * f.beta < 0.0) {
                    return bad("params.flip.alpha", "must be finite with the sign opposite to beta");
                }
                positive("params.flip.eps", f.eps)?;
                positive("params.flip.eps_d", f.eps_d)?;
                positive("params.flip.delta0", f.delta0)?;
                nonzero("params.flip.max_depth", f.max_depth)?;
                nonzero("params.flip.beam", f.beam)?;
                if !(f.gamma >= 0.0 && f.kappa >= 0.0) {
                    return bad("params.flip.gamma", "gamma and kappa must be nonnegative");
                }
                if f.words.is_empty() {
                    if f.base as usize >= k || f.mark as usize >= k {
                        return bad("params.flip.base", format!("base and mark must be below {k}"));
                    }
                    if let Some(&q) = f.marks.iter().find(|&&q| q >= f.m) {
                        return bad("params.flip.marks", format!("position {q} outside a word of length {}", f.m));
                    }
                }
                for (i, w) in f.words.iter().enumerate() {
                    if w.len() != f.m || w.symbols().iter().any(|&s| s as usize >= k) {
                        return bad(&format!("params.flip.words[{i}]"), format!("need {} symbols below {k}", f.m));
                    }
                }
                if let Some(0) = f.max_period {
                    return bad("params.flip.max_period", "must be at least 1");
                }
            }
            _ => {}
        }
        Ok(())
    }
}
