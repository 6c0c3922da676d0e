//! Run configuration: a flat `key = value` text format and built-in presets.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptParams;
use crate::error::{Error, Result};
use crate::fem::{MaterialLaw, PlaneReduction};
use crate::filters::FilterParams;
use crate::optimizer::{ConstraintBounds, NUM_CONSTRAINTS};

/// Which pipeline a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Adaptive,
    Baseline,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Mode::Adaptive),
            "baseline" => Ok(Mode::Baseline),
            _ => Err(Error::Parse(format!("unknown mode '{s}' (expected adaptive or baseline)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Adaptive => "adaptive",
            Mode::Baseline => "baseline",
        })
    }
}

/// Complete description of one design run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub name: String,
    pub bounds: ConstraintBounds,
    pub rho_min: f64,
    pub law: MaterialLaw,
    /// Relative cardinality change below which the outer loop stops.
    pub ctol: f64,
    pub kmax: usize,
    /// Outer iterations that apply the filter chain.
    pub kfmax: usize,
    pub tol: f64,
    pub topt: f64,
    pub it_first: usize,
    pub it_rest: usize,
    pub filter: FilterParams,
    pub adapt: AdaptParams,
    /// Upper bound on the element count requested from the remesher.
    pub max_elements: usize,
    pub n: usize,
    pub seed: u64,
    pub mode: Mode,
    pub baseline_n: usize,
    pub baseline_iterations: usize,
    pub verify_n: usize,
    pub verify_threshold: f64,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            bounds: ConstraintBounds {
                lower: [0.0; NUM_CONSTRAINTS],
                upper: [f64::INFINITY; NUM_CONSTRAINTS],
            },
            rho_min: 1e-4,
            law: MaterialLaw::default(),
            ctol: 0.01,
            kmax: 100,
            kfmax: 25,
            tol: 1e-5,
            topt: 1e-5,
            it_first: 100,
            it_rest: 10,
            filter: FilterParams::default(),
            adapt: AdaptParams::default(),
            max_elements: 8000,
            n: 30,
            seed: 1,
            mode: Mode::Adaptive,
            baseline_n: 50,
            baseline_iterations: 300,
            verify_n: 100,
            verify_threshold: 0.75,
        }
    }
}

const PRESETS: [(&str, &str); 3] = [
    ("design1", include_str!("../../presets/design1.cfg")),
    ("design2", include_str!("../../presets/design2.cfg")),
    ("design3", include_str!("../../presets/design3.cfg")),
];

/// Names of the built-in presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Text of a built-in preset.
pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("{key}: cannot parse '{v}'")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse_num(key, v),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

fn parse_vector(key: &str, v: &str) -> Result<[f64; NUM_CONSTRAINTS]> {
    let values = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect::<Result<Vec<_>>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("{key}: expected {NUM_CONSTRAINTS} values, got {}", v.len())))
}

impl DesignSpec {
    /// Parses a configuration text on top of the defaults. A `preset = NAME`
    /// line loads the preset first; later lines override it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        spec.apply(text, 0)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = preset_text(name).ok_or_else(|| Error::InvalidArgument(format!("unknown preset '{name}'")))?;
        Self::parse(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, text: &str, depth: usize) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected 'key = value'", no + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            self.set(key, v, depth)
                .map_err(|e| Error::Parse(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str, depth: usize) -> Result<()> {
        match key {
            "preset" => {
                if depth > 0 {
                    return Err(Error::Parse("presets cannot be nested".into()));
                }
                let text = preset_text(v).ok_or_else(|| Error::Parse(format!("unknown preset '{v}'")))?;
                self.apply(text, depth + 1)?;
            }
            "name" => self.name = v.to_string(),
            "c_lower" => self.bounds.lower = parse_vector(key, v)?,
            "c_upper" => self.bounds.upper = parse_vector(key, v)?,
            "rho_min" => self.rho_min = parse_f64(key, v)?,
            "young" => self.law.young = parse_f64(key, v)?,
            "poisson" => self.law.poisson = parse_f64(key, v)?,
            "k11" => self.law.k11 = parse_f64(key, v)?,
            "k22" => self.law.k22 = parse_f64(key, v)?,
            "p" => self.law.p = parse_f64(key, v)?,
            "s" => self.law.s = parse_f64(key, v)?,
            "plane" => {
                self.law.reduction = match v {
                    "stress" => PlaneReduction::PlaneStress,
                    "strain" => PlaneReduction::PlaneStrain,
                    _ => return Err(Error::Parse(format!("plane: expected stress or strain, got '{v}'"))),
                }
            }
            "ctol" => self.ctol = parse_f64(key, v)?,
            "kmax" => self.kmax = parse_num(key, v)?,
            "kfmax" => self.kfmax = parse_num(key, v)?,
            "tol" => self.tol = parse_f64(key, v)?,
            "topt" => self.topt = parse_f64(key, v)?,
            "it_first" => self.it_first = parse_num(key, v)?,
            "it_rest" => self.it_rest = parse_num(key, v)?,
            "tau" => self.filter.tau = parse_f64(key, v)?,
            "beta" => self.filter.beta = parse_f64(key, v)?,
            "eta" => self.filter.eta = parse_f64(key, v)?,
            "hyb" => self.adapt.hybrid = parse_bool(key, v)?,
            "rho_th" => self.adapt.rho_th = parse_f64(key, v)?,
            "h_iso" => self.adapt.h_iso = parse_f64(key, v)?,
            "max_sweeps" => self.adapt.max_sweeps = parse_num(key, v)?,
            "max_elements" => self.max_elements = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "mode" => self.mode = v.parse()?,
            "baseline_n" => self.baseline_n = parse_num(key, v)?,
            "baseline_iterations" => self.baseline_iterations = parse_num(key, v)?,
            "verify_n" => self.verify_n = parse_num(key, v)?,
            "verify_threshold" => self.verify_threshold = parse_f64(key, v)?,
            _ => return Err(Error::Parse(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.law.validate()?;
        self.filter.validate()?;
        self.adapt.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.rho_min > 0.0 && self.rho_min < 1.0) {
            return bad(format!("rho_min must lie in (0, 1), got {}", self.rho_min));
        }
        if self.kmax == 0 {
            return bad("kmax must be at least 1".into());
        }
        if !(self.ctol >= 0.0) || !(self.tol > 0.0) || !(self.topt > 0.0) {
            return bad("ctol, tol and topt must be nonnegative, positive and positive".into());
        }
        if self.n == 0 || self.baseline_n == 0 || self.verify_n == 0 {
            return bad("mesh sizes must be positive".into());
        }
        if self.max_elements < 2 * self.n * self.n.min(10) {
            return bad(format!("max_elements = {} is too small", self.max_elements));
        }
        if !(self.verify_threshold > 0.0 && self.verify_threshold < 1.0) {
            return bad(format!("verify_threshold must lie in (0, 1), got {}", self.verify_threshold));
        }
        Ok(())
    }

    /// Configuration text that parses back to `self`.
    pub fn to_config(&self) -> String {
        let v = |a: &[f64]| a.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "c_lower = {}", v(&self.bounds.lower));
        let _ = writeln!(s, "c_upper = {}", v(&self.bounds.upper));
        let _ = writeln!(s, "rho_min = {}", self.rho_min);
        let _ = writeln!(s, "young = {}", self.law.young);
        let _ = writeln!(s, "poisson = {}", self.law.poisson);
        let _ = writeln!(s, "k11 = {}", self.law.k11);
        let _ = writeln!(s, "k22 = {}", self.law.k22);
        let _ = writeln!(s, "p = {}", self.law.p);
        let _ = writeln!(s, "s = {}", self.law.s);
        let plane = match self.law.reduction {
            PlaneReduction::PlaneStress => "stress",
            PlaneReduction::PlaneStrain => "strain",
        };
        let _ = writeln!(s, "plane = {plane}");
        let _ = writeln!(s, "ctol = {}", self.ctol);
        let _ = writeln!(s, "kmax = {}", self.kmax);
        let _ = writeln!(s, "kfmax = {}", self.kfmax);
        let _ = writeln!(s, "tol = {}", self.tol);
        let _ = writeln!(s, "topt = {}", self.topt);
        let _ = writeln!(s, "it_first = {}", self.it_first);
        let _ = writeln!(s, "it_rest = {}", self.it_rest);
        let _ = writeln!(s, "tau = {}", self.filter.tau);
        let _ = writeln!(s, "beta = {}", self.filter.beta);
        let _ = writeln!(s, "eta = {}", self.filter.eta);
        let _ = writeln!(s, "hyb = {}", self.adapt.hybrid);
        let _ = writeln!(s, "rho_th = {}", self.adapt.rho_th);
        let _ = writeln!(s, "h_iso = {}", self.adapt.h_iso);
        let _ = writeln!(s, "max_sweeps = {}", self.adapt.max_sweeps);
        let _ = writeln!(s, "max_elements = {}", self.max_elements);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "baseline_n = {}", self.baseline_n);
        let _ = writeln!(s, "baseline_iterations = {}", self.baseline_iterations);
        let _ = writeln!(s, "verify_n = {}", self.verify_n);
        let _ = writeln!(s, "verify_threshold = {}", self.verify_threshold);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in preset_names() {
            let s = DesignSpec::preset(name).unwrap();
            assert_eq!(s.name, name);
            assert_eq!(s.n, 30);
        }
        let d1 = DesignSpec::preset("design1").unwrap();
        assert_eq!(d1.bounds.upper[4], 0.58);
    }

    #[test]
    fn overrides_and_round_trip() {
        let s = DesignSpec::parse("preset = design3\nseed = 7 # comment\nc_upper = 1, 1, 2, 1, inf\nhyb = false").unwrap();
        assert_eq!(s.seed, 7);
        assert!(s.bounds.upper[4].is_infinite());
        assert!(!s.adapt.hybrid);
        assert_eq!(DesignSpec::parse(&s.to_config()).unwrap(), s);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(DesignSpec::parse("bogus = 1").is_err());
        assert!(DesignSpec::parse("kmax = 0").is_err());
        assert!(DesignSpec::parse("c_lower = 1, 2").is_err());
        assert!(DesignSpec::parse("c_lower = 0.2, 0, 0, 0, 0\nc_upper = 0.1, 1, 1, 1, 1").is_err());
    }
}
