//! Scenario execution, artifact emission and the post-run entry points.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use hjb_pi::domains::{audit_admissibility, boundary_csv, contract, inscribed_radius, AuditOptions, InvarianceReport, Region, SublevelDomain};
use hjb_pi::ghjb::policy_improvement;
use hjb_pi::integrate::{RolloutStop, Scheme};
use hjb_pi::kernels::KernelSpec;
use hjb_pi::lqr::{initial_policy, lqr_for_system};
use hjb_pi::pi::{run_domain_aware_pi, run_pi, PIStop, ReferenceSet};
use hjb_pi::reference::{e_l2_masked, PmpSettings, ReferenceCache, ReferenceValue};
use hjb_pi::systems::registry_get;
use hjb_pi::value::ValueFunction;
use hjb_pi::{BoundingBox, Grid, PIConfig, PIResult, Quadratic, Surrogate, System};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::config::{GridSpec, Mode, ScenarioConfig};
use crate::error::CliError;
use crate::plot;

/// Overrides the directory relative output and cache paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "HJBPI_OUTPUT_ROOT";

/// Relative slack of the monotone-descent check.
pub const MONOTONE_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub output_root: PathBuf,
    /// Parallel collocation assembly, reference solves and audit rollouts.
    /// Summation order may then perturb the last digits.
    pub parallel: bool,
    /// Suppress progress lines on stderr.
    pub quiet: bool,
}

impl RunOptions {
    pub fn new(output_root: impl Into<PathBuf>) -> Self {
        Self {
            output_root: output_root.into(),
            parallel: false,
            quiet: true,
        }
    }

    /// Root from [`OUTPUT_ROOT_ENV`], else the working directory.
    pub fn from_env(parallel: bool) -> Self {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
        Self {
            output_root: root,
            parallel,
            quiet: false,
        }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_root.join(p)
        }
    }

    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

pub struct RunSummary {
    pub run_dir: PathBuf,
    pub result: PIResult,
    pub lqr: Quadratic,
    pub test_grid: Grid,
    /// Test points whose reference did not converge (excluded from `E_ℓ2`).
    pub reference_excluded: usize,
    pub elapsed_seconds: f64,
}

impl RunSummary {
    /// 0 for a completed run, 2 after a solver failure, 3 after a
    /// degenerate domain.
    pub fn exit_code(&self) -> i32 {
        match self.result.stop {
            PIStop::Converged | PIStop::MaxIters => 0,
            PIStop::SolverError(_) => 2,
            PIStop::DegenerateDomain(_) => 3,
        }
    }

    pub fn e_l2(&self) -> Vec<Option<f64>> {
        self.result.records.iter().map(|r| r.e_l2).collect()
    }

    pub fn levels(&self) -> Vec<Option<f64>> {
        self.result.records.iter().map(|r| r.level).collect()
    }
}

fn system(cfg: &ScenarioConfig) -> Result<System, CliError> {
    registry_get(&cfg.system).map_err(|e| CliError::Config(e.to_string()))
}

/// Riccati solution of the linearization (the initial policy's value and
/// the terminal weight of the reference solves).
pub fn lqr_value(cfg: &ScenarioConfig, sys: &System) -> Result<(Quadratic, usize), CliError> {
    let k0 = cfg
        .initial_gain
        .as_ref()
        .map(|k| DMatrix::from_row_slice(sys.control_dim(), sys.state_dim(), k));
    let (_, res) = lqr_for_system(sys, None, k0.as_ref())?;
    if !res.converged {
        return Err(CliError::Solver("Newton–Kleinman did not converge".into()));
    }
    Ok((res.value, res.iterates.len()))
}

fn pmp_settings(cfg: &ScenarioConfig, parallel: bool) -> PmpSettings<f64> {
    let mut s = PmpSettings::new(cfg.reference.horizon, cfg.reference.n_steps);
    s.max_iters = cfg.reference.max_iters;
    s.tol = cfg.reference.tol;
    s.parallel = parallel;
    s
}

/// Reference values at `points`, served from and added to the CSV cache.
pub fn reference_for(
    cfg: &ScenarioConfig,
    sys: &System,
    p: &Quadratic,
    points: &[DVector<f64>],
    opts: &RunOptions,
) -> Result<Vec<ReferenceValue<f64>>, CliError> {
    let path = opts.resolve(&cfg.reference.cache);
    let mut cache = match fs::read_to_string(&path) {
        Ok(text) => ReferenceCache::from_csv(&text).map_err(|e| CliError::Reference(format!("{}: {e}", path.display())))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => ReferenceCache::default(),
        Err(e) => return Err(CliError::Reference(format!("{}: {e}", path.display()))),
    };
    let before = cache.len();
    let values = cache
        .get_or_compute(sys, points, p, &pmp_settings(cfg, opts.parallel))
        .map_err(|e| CliError::Reference(e.to_string()))?;
    if cache.len() != before {
        opts.note(&format!("reference: computed {} new values", cache.len() - before));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::Reference(format!("{}: {e}", dir.display())))?;
        }
        let tmp = path.with_extension("csv.tmp");
        fs::write(&tmp, cache.to_csv(sys.state_dim())).map_err(|e| CliError::Reference(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::Reference(format!("{}: {e}", path.display())))?;
    }
    Ok(values)
}

/// Precomputes the reference cache for the test grid and the optional
/// generalization grid; returns the number of points covered.
pub fn precompute_reference(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<usize, CliError> {
    let sys = system(cfg)?;
    let (p, _) = lqr_value(cfg, &sys)?;
    let mut points = cfg.test_grid.to_grid()?.points().to_vec();
    if let Some(g) = &cfg.eval_grid {
        points.extend_from_slice(g.to_grid()?.points());
    }
    reference_for(cfg, &sys, &p, &points, opts)?;
    Ok(points.len())
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.17e}"))
}

/// `run.csv`: one row per evaluated value function `v_s`.
pub fn run_csv(result: &PIResult) -> String {
    let mut out = String::from("iteration,e_s,c_s,grid_n,max_ghjb_residual,E_l2,condition,jitter\n");
    for r in &result.records {
        let _ = writeln!(
            out,
            "{},{:.17e},{},{},{},{},{:.6e},{:.6e}",
            r.iteration,
            r.error,
            opt(r.level),
            r.grid.len(),
            opt(r.max_ghjb_residual),
            opt(r.e_l2),
            r.condition,
            r.jitter
        );
    }
    out
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// LQR init, policy iteration, per-iteration `E_ℓ2` and artifact emission.
///
/// Writes into the configured output directory:
/// `config.txt`, `run.csv`, `run.log`, `summary.json`, `error.svg`,
/// `surrogates/iter_s.txt`, and for domain-aware runs `domains/iter_s.csv`
/// plus `domains.svg`.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let sys = system(cfg)?;
    let train = cfg.train_grid.to_grid()?;
    let test = cfg.test_grid.to_grid()?;
    let kernel = KernelSpec::gaussian(cfg.sigma).map_err(|e| CliError::Config(e.to_string()))?;

    let mut log = String::new();
    let (p, kleinman_iters) = lqr_value(cfg, &sys)?;
    let gain = sys.control_weight_inv() * sys.input_map(&DVector::zeros(sys.state_dim())).transpose() * &p.p;
    let _ = writeln!(log, "lqr: newton-kleinman iterates {kleinman_iters}");
    let _ = writeln!(log, "lqr: P = {:?}", p.p.as_slice());
    let _ = writeln!(log, "lqr: K = {:?}", gain.as_slice());

    let values = reference_for(cfg, &sys, &p, test.points(), opts)?;
    let excluded = values.iter().filter(|v| !v.converged).count();
    if excluded > 0 {
        let msg = format!("warning: {excluded} reference values did not converge and are excluded from E_l2");
        opts.note(&msg);
        let _ = writeln!(log, "{msg}");
    }

    let mut pc = PIConfig::new(train, kernel, cfg.dt_colloc);
    pc.nu = cfg.nu;
    pc.tol = cfg.epsilon;
    pc.max_iters = cfg.max_iters;
    pc.domain_aware = cfg.mode == Mode::DomainAware;
    pc.n_boundary_samples = cfg.n_boundary_samples;
    pc.parallel = opts.parallel;
    pc.reference = Some(ReferenceSet {
        points: test.points().to_vec(),
        values,
    });
    let u0 = initial_policy(&sys, &p);
    let result = match cfg.mode {
        Mode::FixedDomain => run_pi(&pc, &sys, u0)?,
        Mode::DomainAware => run_domain_aware_pi(&pc, &sys, u0, &BoundingBox::symmetric(&cfg.domain_box))?,
    };
    for r in &result.records {
        let line = format!(
            "iter {:2}: e_s {:.3e}  E_l2 {}  c_s {}  grid {}  cond {:.2e}  jitter {:.1e}",
            r.iteration,
            r.error,
            r.e_l2.map_or("-".into(), |e| format!("{e:.4e}")),
            r.level.map_or("-".into(), |c| format!("{c:.5}")),
            r.grid.len(),
            r.condition,
            r.jitter
        );
        opts.note(&line);
        let _ = writeln!(log, "{line}");
    }
    let _ = writeln!(log, "stop: {}", result.stop.as_str());
    if let PIStop::SolverError(m) | PIStop::DegenerateDomain(m) = &result.stop {
        let _ = writeln!(log, "stop detail: {m}");
    }

    let run_dir = opts.resolve(&cfg.output_dir);
    mkdir(&run_dir.join("surrogates"))?;
    write(&run_dir.join("config.txt"), &cfg.render())?;
    let csv = run_csv(&result);
    write(&run_dir.join("run.csv"), &csv)?;
    write(&run_dir.join("error.svg"), &plot::error_plot(&csv)?)?;
    for r in &result.records {
        write(&run_dir.join(format!("surrogates/iter_{}.txt", r.iteration)), &r.surrogate.to_text())?;
    }
    if cfg.mode == Mode::DomainAware {
        mkdir(&run_dir.join("domains"))?;
        let mut boundaries = Vec::new();
        for (s, d) in result.domains.iter().enumerate() {
            let b = boundary_csv(d, cfg.n_boundary_samples);
            write(&run_dir.join(format!("domains/iter_{s}.csv")), &b)?;
            boundaries.push(b);
        }
        if cfg.domain_box.len() == 2 {
            write(&run_dir.join("domains.svg"), &plot::domain_plot(&cfg.domain_box, &boundaries)?)?;
        }
    }
    write(&run_dir.join("run.log"), &log)?;
    let elapsed = start.elapsed().as_secs_f64();
    let summary = json!({
        "name": cfg.name,
        "system": cfg.system,
        "mode": cfg.mode.as_str(),
        "seed": cfg.seed,
        "stop": result.stop.as_str(),
        "iterations": result.records.len(),
        "final_e_l2": result.records.last().and_then(|r| r.e_l2),
        "final_level": result.records.last().and_then(|r| r.level),
        "reference_excluded": excluded,
        "elapsed_seconds": elapsed,
    });
    write(&run_dir.join("summary.json"), &format!("{summary:#}\n"))?;

    Ok(RunSummary {
        run_dir,
        result,
        lqr: p,
        test_grid: test,
        reference_excluded: excluded,
        elapsed_seconds: elapsed,
    })
}

/// A completed run read back from its directory.
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub config: ScenarioConfig,
    pub surrogates: Vec<Arc<Surrogate>>,
    pub levels: Vec<Option<f64>>,
}

pub fn load_run(run_dir: &Path) -> Result<RunArtifacts, CliError> {
    let read = |name: &str| -> Result<String, CliError> {
        let p = run_dir.join(name);
        fs::read_to_string(&p).map_err(|e| CliError::Artifacts(format!("{}: {e}", p.display())))
    };
    let config = ScenarioConfig::parse(&read("config.txt")?).map_err(|e| CliError::Artifacts(format!("config.txt: {e}")))?;
    let (header, cols) = plot::read_columns(&read("run.csv")?)?;
    let idx = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Artifacts(format!("run.csv has no `{name}` column")))
    };
    let (it, cs) = (idx("iteration")?, idx("c_s")?);
    let mut surrogates = Vec::new();
    for s in cols[it].iter() {
        let s = s.ok_or_else(|| CliError::Artifacts("run.csv has an empty iteration cell".into()))? as usize;
        let text = read(&format!("surrogates/iter_{s}.txt"))?;
        let v = Surrogate::from_text(&text).map_err(|e| CliError::Artifacts(format!("surrogates/iter_{s}.txt: {e}")))?;
        surrogates.push(Arc::new(v));
    }
    if surrogates.is_empty() {
        return Err(CliError::Artifacts("run.csv has no iterations".into()));
    }
    Ok(RunArtifacts {
        run_dir: run_dir.to_path_buf(),
        config,
        levels: cols[cs].clone(),
        surrogates,
    })
}

impl RunArtifacts {
    pub fn final_surrogate(&self) -> &Arc<Surrogate> {
        self.surrogates.last().expect("load_run checks for at least one surrogate")
    }

    /// Domains `Ω_0, Ω_1, …` rebuilt from the surrogates and levels.
    pub fn domains(&self) -> Result<Vec<Arc<SublevelDomain<f64>>>, CliError> {
        let outer = BoundingBox::symmetric(&self.config.domain_box);
        let mut out: Vec<Arc<SublevelDomain<f64>>> = Vec::new();
        for (v, c) in self.surrogates.iter().zip(&self.levels) {
            let Some(c) = c else { break };
            let vf: Arc<dyn ValueFunction<f64>> = v.clone();
            out.push(Arc::new(SublevelDomain::new(vf, *c, outer.clone(), out.last().cloned())));
        }
        Ok(out)
    }

    /// Grid each `v_s` was collocated on.
    pub fn grids(&self) -> Result<Vec<Grid>, CliError> {
        let mut grid = self.config.train_grid.to_grid()?;
        let domains = self.domains()?;
        let mut out = Vec::with_capacity(self.surrogates.len());
        for s in 0..self.surrogates.len() {
            out.push(grid.clone());
            if let Some(d) = domains.get(s) {
                grid = grid
                    .filter(|x| d.contains(x))
                    .ok_or_else(|| CliError::DegenerateDomain(format!("no grid point inside domain {s}")))?;
            }
        }
        Ok(out)
    }
}

/// `E_ℓ2` of `v` against reference values, skipping unconverged entries.
pub fn e_l2_of<V: ValueFunction<f64> + ?Sized>(v: &V, reference: &ReferenceSet<f64>) -> Result<f64, CliError> {
    let approx: Vec<f64> = reference.points.iter().map(|x| v.value(x)).collect();
    let (e, _) = e_l2_masked(&approx, &reference.values).map_err(|e| CliError::Reference(e.to_string()))?;
    Ok(e)
}

/// Final surrogate of a run scored on `grid` against the reference cache
/// (missing entries are computed and cached).
pub fn generalization_eval(run_dir: &Path, grid: &GridSpec, opts: &RunOptions) -> Result<f64, CliError> {
    let run = load_run(run_dir)?;
    let sys = system(&run.config)?;
    if grid.dim() != sys.state_dim() {
        return Err(CliError::Config(format!("grid has dimension {} but the system has {}", grid.dim(), sys.state_dim())));
    }
    let (p, _) = lqr_value(&run.config, &sys)?;
    let points = grid.to_grid()?.points().to_vec();
    let values = reference_for(&run.config, &sys, &p, &points, opts)?;
    e_l2_of(run.final_surrogate().as_ref(), &ReferenceSet { points, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityCheck {
    /// Pairs `(v_s, v_{s+1})` compared.
    pub pairs: usize,
    pub points_checked: usize,
    /// Points with `v_{s+1} > v_s + tol·(1 + |v_s|)`.
    pub violations: usize,
    /// Largest `v_{s+1}(x) − v_s(x)` seen.
    pub max_increase: f64,
}

/// Checks `v_{s+1}(xᵢ) ≤ v_s(xᵢ) + tol·(1 + |v_s(xᵢ)|)` for `s ≥ from` on the
/// grid `v_{s+1}` was collocated on.
pub fn monotonicity<V: ValueFunction<f64>>(values: &[V], grids: &[Grid], from: usize, tol: f64) -> MonotonicityCheck {
    let mut out = MonotonicityCheck {
        pairs: 0,
        points_checked: 0,
        violations: 0,
        max_increase: f64::NEG_INFINITY,
    };
    for s in from..values.len().saturating_sub(1) {
        out.pairs += 1;
        for x in grids[s + 1].points() {
            let (a, b) = (values[s].value(x), values[s + 1].value(x));
            out.points_checked += 1;
            out.max_increase = out.max_increase.max(b - a);
            if b > a + tol * (1.0 + a.abs()) {
                out.violations += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub seed: u64,
    pub mode: Mode,
    pub level: f64,
    pub inscribed_radius: f64,
    pub n_boundary: usize,
    pub n_interior: usize,
    pub invariance: InvarianceReport,
    pub monotonicity: MonotonicityCheck,
}

impl AuditReport {
    pub fn to_json(&self) -> serde_json::Value {
        let inv = &self.invariance;
        let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
        json!({
            "seed": self.seed,
            "mode": self.mode.as_str(),
            "level": self.level,
            "inscribed_radius": self.inscribed_radius,
            "n_boundary": self.n_boundary,
            "n_interior": self.n_interior,
            "n_samples": inv.n_samples,
            "n_escapes": inv.n_escapes,
            "n_converged": inv.n_converged,
            "worst_escape_time": inv.worst_escape_time,
            "min_decay_margin": finite(inv.min_decay_margin),
            "lyapunov_violations": inv.lyapunov_violations,
            "monotonicity": {
                "from_iteration": 1,
                "tolerance": MONOTONE_TOL,
                "pairs": self.monotonicity.pairs,
                "points_checked": self.monotonicity.points_checked,
                "violations": self.monotonicity.violations,
                "max_increase": finite(self.monotonicity.max_increase),
            },
        })
    }
}

/// Rolls out the final improved policy `u_{S+1}` from the final domain
/// (`Ω_S` for domain-aware runs, the sublevel set of `v_S` inside the box
/// otherwise) and writes `audit.json` into the run directory.
pub fn audit(run_dir: &Path, opts: &RunOptions) -> Result<AuditReport, CliError> {
    let run = load_run(run_dir)?;
    let cfg = &run.config;
    let sys = system(cfg)?;
    let v = run.final_surrogate().clone();
    let policy = policy_improvement(&sys, &v)?;
    let domain = match cfg.mode {
        Mode::DomainAware => run
            .domains()?
            .last()
            .cloned()
            .ok_or_else(|| CliError::Artifacts("run.csv records no domain levels".into()))?,
        Mode::FixedDomain => {
            let vf: Arc<dyn ValueFunction<f64>> = v.clone();
            let region = Region::Box(BoundingBox::symmetric(&cfg.domain_box));
            Arc::new(contract(vf, &region, cfg.nu, cfg.n_boundary_samples)?)
        }
    };
    let audit_opts = AuditOptions {
        n_boundary: cfg.audit.n_boundary,
        n_interior: cfg.audit.n_interior,
        dt: cfg.audit.dt,
        stop: RolloutStop::new(cfg.audit.max_time, cfg.audit.radius_tol, None)?,
        scheme: Scheme::Rk4,
        seed: cfg.seed,
        parallel: opts.parallel,
    };
    let invariance = audit_admissibility(&sys, &policy, &domain, &audit_opts)?;
    let grids = run.grids()?;
    let mono = monotonicity(&run.surrogates, &grids, 1, MONOTONE_TOL);
    let report = AuditReport {
        seed: cfg.seed,
        mode: cfg.mode,
        level: domain.level(),
        inscribed_radius: inscribed_radius(&domain, cfg.audit.n_boundary.max(1)),
        n_boundary: cfg.audit.n_boundary,
        n_interior: cfg.audit.n_interior,
        invariance,
        monotonicity: mono,
    };
    write(&run_dir.join("audit.json"), &format!("{:#}\n", report.to_json()))?;
    Ok(report)
}
