//! Sublevel-set domains `{x ∈ Ω_{s−1} : v_s(x) < c_s}`, the threshold
//! `c_s = ν·min(min_{∂Ω_{s−1}} v_s, (1−ν)⁻¹)`, grid restriction, and
//! sampling-based forward-invariance audits.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BoundingBox, Grid};
use crate::integrate::{step_unchecked, RolloutStop, Scheme};
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;
use crate::value::ValueFunction;

/// Ray-bisection tolerance for boundary points.
pub const BISECTION_TOL: f64 = 1e-6;
const MARCH_STEPS: usize = 400;

#[derive(Clone)]
pub struct SublevelDomain<T: Scalar> {
    value_fn: Arc<dyn ValueFunction<T>>,
    level: T,
    outer_box: BoundingBox<T>,
    parent: Option<Arc<SublevelDomain<T>>>,
}

impl<T: Scalar> std::fmt::Debug for SublevelDomain<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SublevelDomain")
            .field("level", &self.level)
            .field("outer_box", &self.outer_box)
            .field("depth", &self.depth())
            .finish()
    }
}

impl<T: Scalar> SublevelDomain<T> {
    pub fn new(
        value_fn: Arc<dyn ValueFunction<T>>,
        level: T,
        outer_box: BoundingBox<T>,
        parent: Option<Arc<SublevelDomain<T>>>,
    ) -> Self {
        Self {
            value_fn,
            level,
            outer_box,
            parent,
        }
    }

    pub fn level(&self) -> T {
        self.level
    }

    pub fn outer_box(&self) -> &BoundingBox<T> {
        &self.outer_box
    }

    pub fn parent(&self) -> Option<&Arc<SublevelDomain<T>>> {
        self.parent.as_ref()
    }

    pub fn value_fn(&self) -> &Arc<dyn ValueFunction<T>> {
        &self.value_fn
    }

    /// Number of nested sublevel sets including this one.
    pub fn depth(&self) -> usize {
        1 + self.parent.as_ref().map_or(0, |p| p.depth())
    }

    /// `v(x) < c`, `x` in the outer box, and `x` in every ancestor.
    pub fn contains(&self, x: &DVector<T>) -> bool {
        self.value_fn.value(x) < self.level
            && self.outer_box.contains(x)
            && self.parent.as_ref().is_none_or(|p| p.contains(x))
    }
}

pub fn membership<T: Scalar>(d: &SublevelDomain<T>, x: &DVector<T>) -> bool {
    d.contains(x)
}

/// Region a threshold is computed against: the initial box or a previous
/// sublevel domain.
#[derive(Debug, Clone)]
pub enum Region<T: Scalar> {
    Box(BoundingBox<T>),
    Sublevel(Arc<SublevelDomain<T>>),
}

impl<T: Scalar> Region<T> {
    pub fn contains(&self, x: &DVector<T>) -> bool {
        match self {
            Region::Box(b) => b.contains(x),
            Region::Sublevel(d) => d.contains(x),
        }
    }

    pub fn outer_box(&self) -> &BoundingBox<T> {
        match self {
            Region::Box(b) => b,
            Region::Sublevel(d) => d.outer_box(),
        }
    }

    fn contains_origin(&self) -> bool {
        let origin = DVector::zeros(self.outer_box().dim());
        match self {
            Region::Box(b) => b.contains_strict(&origin),
            Region::Sublevel(d) => d.contains(&origin),
        }
    }

    /// Boundary points: face lattices for a box, ray bisection from the
    /// origin for a sublevel domain.
    pub fn boundary_samples(&self, n: usize) -> Vec<DVector<T>> {
        match self {
            Region::Box(b) => b.boundary_samples(n),
            Region::Sublevel(d) => ray_boundary(d, n).into_iter().map(|(_, outer)| outer).collect(),
        }
    }
}

/// `n` unit directions: evenly spaced angles in 2D, `±e₁` in 1D, seeded
/// Gaussian directions otherwise.
pub fn ray_directions<T: Scalar>(dim: usize, n: usize) -> Vec<DVector<T>> {
    match dim {
        1 => vec![DVector::from_element(1, T::one()), DVector::from_element(1, -T::one())],
        2 => (0..n)
            .map(|i| {
                let a = T::two_pi() * T::from_usize_lossy(i) / T::from_usize_lossy(n);
                DVector::from_column_slice(&[a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..n)
                .map(|_| {
                    let v = DVector::from_fn(dim, |_, _| {
                        let z: f64 = rng.sample(rand::distr::StandardUniform);
                        let w: f64 = rng.sample(rand::distr::StandardUniform);
                        // Box–Muller
                        T::lit((-2.0 * z.max(1e-300).ln()).sqrt() * (std::f64::consts::TAU * w).cos())
                    });
                    v.normalize()
                })
                .collect()
        }
    }
}

// distance from the origin to the box surface along `dir`
fn box_exit<T: Scalar>(b: &BoundingBox<T>, dir: &DVector<T>) -> T {
    let mut t = T::lit(f64::INFINITY);
    for i in 0..dir.len() {
        let d = dir[i];
        let lim = if d > T::zero() {
            b.upper[i] / d
        } else if d < T::zero() {
            b.lower[i] / d
        } else {
            continue;
        };
        if lim < t {
            t = lim;
        }
    }
    t
}

/// First membership flip along each ray: `(last inside, first outside)`,
/// bracketed to [`BISECTION_TOL`].
pub fn ray_boundary<T: Scalar>(d: &SublevelDomain<T>, n_rays: usize) -> Vec<(DVector<T>, DVector<T>)> {
    let dim = d.outer_box().dim();
    ray_directions::<T>(dim, n_rays)
        .into_iter()
        .map(|dir| {
            let t_max = box_exit(d.outer_box(), &dir);
            let dt = t_max / T::from_usize_lossy(MARCH_STEPS);
            let mut lo = T::zero();
            let mut hi = t_max;
            let mut found = false;
            for k in 1..=MARCH_STEPS {
                let t = dt * T::from_usize_lossy(k);
                if !d.contains(&(&dir * t)) {
                    hi = t;
                    found = true;
                    break;
                }
                lo = t;
            }
            if !found {
                // the domain reaches the box face along this ray
                return (&dir * t_max, &dir * t_max);
            }
            let tol = T::lit(BISECTION_TOL);
            while hi - lo > tol {
                let mid = (lo + hi) * T::lit(0.5);
                if d.contains(&(&dir * mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (&dir * lo, &dir * hi)
        })
        .collect()
}

fn check_nu<T: Scalar>(nu: T) -> Result<()> {
    if nu > T::zero() && nu < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidInput("nu must lie in (0, 1)".into()))
    }
}

/// `ν · min(min over boundary samples of v, (1−ν)⁻¹)`.
pub fn sublevel_threshold<T: Scalar, V: ValueFunction<T> + ?Sized>(
    v: &V,
    region: &Region<T>,
    nu: T,
    n_boundary_samples: usize,
) -> Result<T> {
    check_nu(nu)?;
    if !region.contains_origin() {
        return Err(Error::InvalidRegion("origin does not lie inside the region".into()));
    }
    let samples = region.boundary_samples(n_boundary_samples);
    let boundary_min = samples
        .iter()
        .map(|x| v.value(x))
        .fold(T::lit(f64::INFINITY), |m, val| if val < m { val } else { m });
    let cap = T::one() / (T::one() - nu);
    Ok(nu * boundary_min.min(cap))
}

/// Sublevel set of `v` inside `parent` at the threshold level.
pub fn contract<T: Scalar>(
    v: Arc<dyn ValueFunction<T>>,
    parent: &Region<T>,
    nu: T,
    n_boundary_samples: usize,
) -> Result<SublevelDomain<T>> {
    let c = sublevel_threshold(v.as_ref(), parent, nu, n_boundary_samples)?;
    if !(c > T::zero()) {
        return Err(Error::DegenerateDomain(format!(
            "non-positive sublevel threshold {:.3e}",
            c.as_f64()
        )));
    }
    let parent_domain = match parent {
        Region::Box(_) => None,
        Region::Sublevel(d) => Some(d.clone()),
    };
    Ok(SublevelDomain::new(v, c, parent.outer_box().clone(), parent_domain))
}

/// Grid points inside `d`, order preserved.
pub fn restrict_grid<T: Scalar>(g: &Grid<T>, d: &SublevelDomain<T>) -> Result<Grid<T>> {
    g.filter(|x| d.contains(x)).ok_or_else(|| {
        Error::DegenerateDomain(format!(
            "no grid point satisfies v < {:.6e}",
            d.level().as_f64()
        ))
    })
}

/// Boundary polyline (one ray-bisection point per direction) as CSV.
pub fn boundary_csv<T: Scalar>(d: &SublevelDomain<T>, n_rays: usize) -> String {
    let dim = d.outer_box().dim();
    let mut out = (1..=dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for (inside, _) in ray_boundary(d, n_rays) {
        let row: Vec<String> = inside.iter().map(|v| format!("{:.10e}", v.as_f64())).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Smallest distance from the origin to the ray-sampled boundary.
pub fn inscribed_radius<T: Scalar>(d: &SublevelDomain<T>, n_rays: usize) -> T {
    ray_boundary(d, n_rays)
        .iter()
        .map(|(inside, _)| inside.norm())
        .fold(T::lit(f64::INFINITY), |m, r| if r < m { r } else { m })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOptions<T: Scalar> {
    pub n_boundary: usize,
    pub n_interior: usize,
    pub dt: T,
    pub stop: RolloutStop<T>,
    pub scheme: Scheme,
    pub seed: u64,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub n_samples: usize,
    pub n_escapes: usize,
    pub n_converged: usize,
    pub worst_escape_time: Option<f64>,
    /// Smallest per-step decrease rate `(v(xₖ) − v(xₖ₊₁))/Δt` observed on
    /// non-escaping trajectories (positive: `v` always decreased).
    pub min_decay_margin: f64,
    /// Steps on non-escaping trajectories with `v(xₖ₊₁) − v(xₖ) > 1e-8·(1 + |v(xₖ)|)`.
    pub lyapunov_violations: usize,
}

struct SampleOutcome {
    escaped_at: Option<f64>,
    converged: bool,
    min_rate: f64,
    violations: usize,
}

/// Rolls out `policy` from boundary and interior points of `d` and records
/// escapes from `d`, convergences, and the decrease of `d`'s value function.
pub fn audit_admissibility<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    d: &SublevelDomain<T>,
    opts: &AuditOptions<T>,
) -> Result<InvarianceReport> {
    if opts.n_boundary + opts.n_interior == 0 {
        return Err(Error::InvalidInput("audit needs at least one sample".into()));
    }
    let mut starts: Vec<DVector<T>> = if opts.n_boundary > 0 {
        ray_boundary(d, opts.n_boundary).into_iter().map(|(inside, _)| inside).collect()
    } else {
        Vec::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut found = 0;
    let mut attempts = 0;
    while found < opts.n_interior && attempts < 1000 * opts.n_interior.max(1) {
        attempts += 1;
        let x = d.outer_box().sample(&mut rng);
        if d.contains(&x) {
            starts.push(x);
            found += 1;
        }
    }
    let run = |x0: &DVector<T>| audit_one(sys, policy, d, x0, opts);
    let outcomes: Vec<SampleOutcome> = if opts.parallel {
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };
    let mut report = InvarianceReport {
        n_samples: outcomes.len(),
        n_escapes: 0,
        n_converged: 0,
        worst_escape_time: None,
        min_decay_margin: f64::INFINITY,
        lyapunov_violations: 0,
    };
    for o in outcomes {
        if let Some(t) = o.escaped_at {
            report.n_escapes += 1;
            report.worst_escape_time = Some(report.worst_escape_time.map_or(t, |w: f64| w.min(t)));
            continue;
        }
        if o.converged {
            report.n_converged += 1;
        }
        report.min_decay_margin = report.min_decay_margin.min(o.min_rate);
        report.lyapunov_violations += o.violations;
    }
    Ok(report)
}

fn audit_one<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    d: &SublevelDomain<T>,
    x0: &DVector<T>,
    opts: &AuditOptions<T>,
) -> SampleOutcome {
    let v = d.value_fn();
    let mut x = x0.clone();
    let mut vx = v.value(&x);
    let mut t = T::zero();
    let max_steps = (opts.stop.max_time / opts.dt).as_f64().ceil() as usize;
    let mut out = SampleOutcome {
        escaped_at: None,
        converged: false,
        min_rate: f64::INFINITY,
        violations: 0,
    };
    for _ in 0..max_steps {
        if x.norm() <= opts.stop.radius_tol {
            out.converged = true;
            return out;
        }
        let next = step_unchecked(sys, policy, &x, opts.dt, opts.scheme);
        t += opts.dt;
        if next.iter().any(|c| !c.finite()) || !d.contains(&next) {
            out.escaped_at = Some(t.as_f64());
            return out;
        }
        let vn = v.value(&next);
        let rate = ((vx - vn) / opts.dt).as_f64();
        out.min_rate = out.min_rate.min(rate);
        if (vn - vx).as_f64() > 1e-8 * (1.0 + vx.as_f64().abs()) {
            out.violations += 1;
        }
        x = next;
        vx = vn;
    }
    out.converged = x.norm() <= opts.stop.radius_tol;
    out
}
