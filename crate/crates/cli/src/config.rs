//! Flat `key = value` scenario files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys, repeated keys and malformed values are rejected with the
//! offending line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    FixedDomain,
    DomainAware,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FixedDomain => "fixed_domain",
            Mode::DomainAware => "domain_aware",
        }
    }
}

/// Tensor grid `G_{a_1,…,a_d,n}`: half widths and points per side.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub half_widths: Vec<f64>,
    pub n_side: usize,
}

impl GridSpec {
    /// `"a_1 … a_d n"`, whitespace or comma separated.
    pub fn parse(text: &str) -> Result<Self, String> {
        let tokens: Vec<&str> = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.len() < 2 {
            return Err(format!("grid `{text}` needs half widths followed by a point count"));
        }
        let (widths, n) = tokens.split_at(tokens.len() - 1);
        let n_side: usize = n[0]
            .parse()
            .map_err(|_| format!("grid point count `{}` is not a positive integer", n[0]))?;
        if n_side < 2 {
            return Err("grid needs at least 2 points per side".into());
        }
        let half_widths = widths
            .iter()
            .map(|w| parse_positive(w))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { half_widths, n_side })
    }

    pub fn dim(&self) -> usize {
        self.half_widths.len()
    }

    pub fn to_grid(&self) -> Result<hjb_pi::Grid, CliError> {
        hjb_pi::Grid::rectangular(&self.half_widths, self.n_side).map_err(|e| CliError::Config(e.to_string()))
    }

    fn render(&self) -> String {
        let mut out: Vec<String> = self.half_widths.iter().map(|w| fmt_f64(*w)).collect();
        out.push(self.n_side.to_string());
        out.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSettings {
    pub horizon: f64,
    pub n_steps: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Cache CSV; relative paths resolve against the output root.
    pub cache: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditSettings {
    pub n_boundary: usize,
    pub n_interior: usize,
    pub dt: f64,
    pub max_time: f64,
    pub radius_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: String,
    pub mode: Mode,
    pub train_grid: GridSpec,
    pub test_grid: GridSpec,
    /// Generalization grid precomputed by `reference`, if any.
    pub eval_grid: Option<GridSpec>,
    /// Half widths of the declared box (initial domain of domain-aware runs).
    pub domain_box: Vec<f64>,
    pub sigma: f64,
    pub dt_colloc: f64,
    pub nu: f64,
    /// Early-stop threshold on `e_s`; 0 runs all `max_iters` iterations.
    pub epsilon: f64,
    pub max_iters: usize,
    pub n_boundary_samples: usize,
    /// Optional initial gain `K0` for Newton–Kleinman, row-major.
    pub initial_gain: Option<Vec<f64>>,
    pub reference: ReferenceSettings,
    pub audit: AuditSettings,
    /// Relative paths resolve against the output root.
    pub output_dir: String,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "name",
    "system",
    "mode",
    "train_grid",
    "test_grid",
    "eval_grid",
    "box",
    "sigma",
    "dt_colloc",
    "nu",
    "epsilon",
    "max_iters",
    "n_boundary_samples",
    "initial_gain",
    "ref_horizon",
    "ref_steps",
    "ref_max_iters",
    "ref_tol",
    "ref_cache",
    "audit_boundary",
    "audit_interior",
    "audit_dt",
    "audit_max_time",
    "audit_radius_tol",
    "output_dir",
    "seed",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn required(&self, key: &str) -> Result<(usize, &str), CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    fn parsed<V>(&self, key: &str, default: V, parse: impl Fn(&str) -> Result<V, String>) -> Result<V, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => parse(v).map_err(|m| at(line, key, m)),
        }
    }
}

fn at(line: usize, key: &str, msg: String) -> CliError {
    CliError::Config(format!("line {line}: `{key}`: {msg}"))
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must be positive"))
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` must be non-negative"))
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    let out: Vec<f64> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(parse_f64)
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        Err("expected at least one number".into())
    } else {
        Ok(out)
    }
}

/// Shortest round-tripping decimal.
fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(CliError::Config(format!("line {line}: expected `key = value`, got `{body}`")));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(CliError::Config(format!("line {line}: unknown key `{k}`")));
            }
            if v.is_empty() {
                return Err(CliError::Config(format!("line {line}: `{k}` has no value")));
            }
            if let Some((first, _)) = map.get(k) {
                return Err(CliError::Config(format!("line {line}: `{k}` already set on line {first}")));
            }
            map.insert(k.to_string(), (line, v.to_string()));
        }
        let e = Entries { map };

        let (_, system) = e.required("system")?;
        let system = system.to_string();
        if !hjb_pi::systems::REGISTERED_SYSTEMS.contains(&system.as_str()) {
            let (line, _) = e.required("system")?;
            return Err(at(line, "system", format!("unknown system `{system}`")));
        }
        let name = e.parsed("name", system.clone(), |s| Ok(s.to_string()))?;
        let mode = e.parsed("mode", Mode::FixedDomain, |s| match s {
            "fixed_domain" => Ok(Mode::FixedDomain),
            "domain_aware" => Ok(Mode::DomainAware),
            other => Err(format!("`{other}` is not one of fixed_domain, domain_aware")),
        })?;
        let grid = |key: &str| -> Result<GridSpec, CliError> {
            let (line, v) = e.required(key)?;
            GridSpec::parse(v).map_err(|m| at(line, key, m))
        };
        let train_grid = grid("train_grid")?;
        let test_grid = grid("test_grid")?;
        let eval_grid = e.parsed("eval_grid", None, |s| GridSpec::parse(s).map(Some))?;
        let domain_box = e.parsed("box", train_grid.half_widths.clone(), |s| {
            let v = parse_list(s)?;
            if v.iter().all(|w| *w > 0.0) {
                Ok(v)
            } else {
                Err("half widths must be positive".into())
            }
        })?;

        let reference = ReferenceSettings {
            horizon: e.parsed("ref_horizon", 20.0, parse_positive)?,
            n_steps: e.parsed("ref_steps", 2000, parse_count)?,
            max_iters: e.parsed("ref_max_iters", 2000, parse_count)?,
            tol: e.parsed("ref_tol", 1e-12, parse_positive)?,
            cache: e.parsed("ref_cache", "reference_cache.csv".to_string(), |s| Ok(s.to_string()))?,
        };
        let audit = AuditSettings {
            n_boundary: e.parsed("audit_boundary", 360, |s| s.parse().map_err(|_| format!("`{s}` is not an integer")))?,
            n_interior: e.parsed("audit_interior", 64, |s| s.parse().map_err(|_| format!("`{s}` is not an integer")))?,
            dt: e.parsed("audit_dt", 1e-2, parse_positive)?,
            max_time: e.parsed("audit_max_time", 30.0, parse_positive)?,
            radius_tol: e.parsed("audit_radius_tol", 1e-2, parse_positive)?,
        };
        let nu = e.parsed("nu", 0.99, |s| {
            let v = parse_f64(s)?;
            if v > 0.0 && v < 1.0 {
                Ok(v)
            } else {
                Err("must lie in (0, 1)".into())
            }
        })?;

        let cfg = Self {
            output_dir: e.parsed("output_dir", format!("runs/{name}"), |s| Ok(s.to_string()))?,
            name,
            system,
            mode,
            train_grid,
            test_grid,
            eval_grid,
            domain_box,
            sigma: e.parsed("sigma", 2.5, parse_positive)?,
            dt_colloc: e.parsed("dt_colloc", 1e-5, parse_positive)?,
            nu,
            epsilon: e.parsed("epsilon", 0.0, parse_non_negative)?,
            max_iters: e.parsed("max_iters", 20, parse_count)?,
            n_boundary_samples: e.parsed("n_boundary_samples", 720, parse_count)?,
            initial_gain: e.parsed("initial_gain", None, |s| parse_list(s).map(Some))?,
            reference,
            audit,
            seed: e.parsed("seed", 0, |s| s.parse().map_err(|_| format!("`{s}` is not an unsigned integer")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let dim = self.domain_box.len();
        let sys = hjb_pi::systems::registry_get::<f64>(&self.system).map_err(|e| CliError::Config(e.to_string()))?;
        if sys.state_dim() != dim {
            return Err(CliError::Config(format!(
                "`box` has {dim} half widths but system `{}` has state dimension {}",
                self.system,
                sys.state_dim()
            )));
        }
        let grids = [("train_grid", Some(&self.train_grid)), ("test_grid", Some(&self.test_grid)), ("eval_grid", self.eval_grid.as_ref())];
        for (key, g) in grids {
            let Some(g) = g else { continue };
            if g.dim() != dim {
                return Err(CliError::Config(format!("`{key}` has dimension {} but `box` has {dim}", g.dim())));
            }
            if key != "eval_grid" && g.half_widths.iter().zip(&self.domain_box).any(|(a, b)| a > b) {
                return Err(CliError::Config(format!("`{key}` does not lie inside the declared box")));
            }
        }
        if let Some(k) = &self.initial_gain {
            if k.len() != sys.control_dim() * dim {
                return Err(CliError::Config(format!(
                    "`initial_gain` needs {} entries, got {}",
                    sys.control_dim() * dim,
                    k.len()
                )));
            }
        }
        if self.audit.n_boundary + self.audit.n_interior == 0 {
            return Err(CliError::Config("audit needs at least one boundary or interior sample".into()));
        }
        Ok(())
    }

    /// Canonical dump; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("system", self.system.clone());
        kv("mode", self.mode.as_str().into());
        kv("train_grid", self.train_grid.render());
        kv("test_grid", self.test_grid.render());
        if let Some(g) = &self.eval_grid {
            kv("eval_grid", g.render());
        }
        kv("box", self.domain_box.iter().map(|w| fmt_f64(*w)).collect::<Vec<_>>().join(" "));
        kv("sigma", fmt_f64(self.sigma));
        kv("dt_colloc", fmt_f64(self.dt_colloc));
        kv("nu", fmt_f64(self.nu));
        kv("epsilon", fmt_f64(self.epsilon));
        kv("max_iters", self.max_iters.to_string());
        kv("n_boundary_samples", self.n_boundary_samples.to_string());
        if let Some(k) = &self.initial_gain {
            kv("initial_gain", k.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" "));
        }
        kv("ref_horizon", fmt_f64(self.reference.horizon));
        kv("ref_steps", self.reference.n_steps.to_string());
        kv("ref_max_iters", self.reference.max_iters.to_string());
        kv("ref_tol", fmt_f64(self.reference.tol));
        kv("ref_cache", self.reference.cache.clone());
        kv("audit_boundary", self.audit.n_boundary.to_string());
        kv("audit_interior", self.audit.n_interior.to_string());
        kv("audit_dt", fmt_f64(self.audit.dt));
        kv("audit_max_time", fmt_f64(self.audit.max_time));
        kv("audit_radius_tol", fmt_f64(self.audit.radius_tol));
        kv("output_dir", self.output_dir.clone());
        kv("seed", self.seed.to_string());
        out
    }
}

/// Committed presets for the three benchmark scenarios.
pub mod presets {
    pub const A: &str = include_str!("../scenarios/A.cfg");
    pub const B: &str = include_str!("../scenarios/B.cfg");
    pub const C: &str = include_str!("../scenarios/C.cfg");

    pub fn get(name: &str) -> Option<&'static str> {
        match name {
            "A" | "a" => Some(A),
            "B" | "b" => Some(B),
            "C" | "c" => Some(C),
            _ => None,
        }
    }
}
