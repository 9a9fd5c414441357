//! Generic and domain-aware policy iteration drivers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::domains::{contract, restrict_grid, Region, SublevelDomain};
use crate::error::{Error, Result};
use crate::ghjb::{max_ghjb_residual, policy_evaluation, policy_improvement};
use crate::grid::{BoundingBox, Grid};
use crate::kernels::{KernelSpec, KernelSurrogate};
use crate::policy::Policy;
use crate::reference::{e_l2_masked, ReferenceValue};
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;
use crate::value::ValueFunction;

/// Test points with reference values for per-iteration `E_ℓ2`.
#[derive(Debug, Clone)]
pub struct ReferenceSet<T: Scalar> {
    pub points: Vec<DVector<T>>,
    pub values: Vec<ReferenceValue<T>>,
}

impl<T: Scalar> ReferenceSet<T> {
    pub fn e_l2<V: ValueFunction<T> + ?Sized>(&self, v: &V) -> Result<(T, usize)> {
        let approx: Vec<T> = self.points.iter().map(|x| v.value(x)).collect();
        e_l2_masked(&approx, &self.values)
    }

    /// `E_ℓ2` over the test points accepted by `keep`; `None` when no point
    /// with a nonzero converged reference survives.
    pub fn e_l2_within<V, F>(&self, v: &V, keep: F) -> Result<Option<T>>
    where
        V: ValueFunction<T> + ?Sized,
        F: Fn(&DVector<T>) -> bool,
    {
        let mut approx = Vec::new();
        let mut refs = Vec::new();
        for (x, r) in self.points.iter().zip(&self.values) {
            if keep(x) {
                approx.push(v.value(x));
                refs.push(*r);
            }
        }
        match e_l2_masked(&approx, &refs) {
            Ok((e, _)) => Ok(Some(e)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PIConfig<T: Scalar> {
    pub grid: Grid<T>,
    pub kernel: KernelSpec<T>,
    pub dt_colloc: T,
    pub nu: T,
    pub tol: T,
    pub max_iters: usize,
    pub domain_aware: bool,
    pub n_boundary_samples: usize,
    pub parallel: bool,
    /// Evaluate the GHJB residual on the grid every iteration.
    pub record_residuals: bool,
    pub reference: Option<ReferenceSet<T>>,
}

impl<T: Scalar> PIConfig<T> {
    /// Defaults: `ε = 1e-6`, 50 iterations, `ν = 0.99`, 720 boundary rays.
    pub fn new(grid: Grid<T>, kernel: KernelSpec<T>, dt_colloc: T) -> Self {
        Self {
            grid,
            kernel,
            dt_colloc,
            nu: T::lit(0.99),
            tol: T::lit(1e-6),
            max_iters: 50,
            domain_aware: false,
            n_boundary_samples: 720,
            parallel: false,
            record_residuals: true,
            reference: None,
        }
    }

    fn validate(&self) -> Result<()> {
        // tol = 0 disables the early stop
        if !(self.tol >= T::zero()) {
            return Err(Error::InvalidInput("tol must be non-negative".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.nu > T::zero() && self.nu < T::one()) {
            return Err(Error::InvalidInput("nu must lie in (0, 1)".into()));
        }
        if !(self.dt_colloc > T::zero()) {
            return Err(Error::InvalidInput("dt_colloc must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord<T: Scalar> {
    /// `s`: this record holds `v_s`, the value of `u_s`.
    pub iteration: usize,
    pub surrogate: Arc<KernelSurrogate<T>>,
    /// Descriptor of `u_s`, the policy that was evaluated.
    pub policy: String,
    /// Points `v_s` was collocated on.
    pub grid: Grid<T>,
    /// `e_{s+1} = max |v_s − v_{s−1}|` over `grid`.
    pub error: T,
    /// `c_s` of the domain built from `v_s` (domain-aware runs only).
    pub level: Option<T>,
    pub max_ghjb_residual: Option<T>,
    pub e_l2: Option<T>,
    pub condition: f64,
    pub solve_residual: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PIStop {
    Converged,
    MaxIters,
    DegenerateDomain(String),
    SolverError(String),
}

impl PIStop {
    pub fn as_str(&self) -> &'static str {
        match self {
            PIStop::Converged => "converged",
            PIStop::MaxIters => "max_iters",
            PIStop::DegenerateDomain(_) => "degenerate_domain",
            PIStop::SolverError(_) => "solver_error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PIResult<T: Scalar> {
    pub records: Vec<IterationRecord<T>>,
    pub stop: PIStop,
    /// `u_{s+1}` induced by the last surrogate (the initial policy when no
    /// evaluation succeeded).
    pub final_policy: Policy<T>,
    /// Domains `Ω_0, Ω_1, …` of a domain-aware run.
    pub domains: Vec<Arc<SublevelDomain<T>>>,
}

impl<T: Scalar> PIResult<T> {
    pub fn final_surrogate(&self) -> Option<&Arc<KernelSurrogate<T>>> {
        self.records.last().map(|r| &r.surrogate)
    }

    pub fn final_domain(&self) -> Option<&Arc<SublevelDomain<T>>> {
        self.domains.last()
    }

    pub fn errors(&self) -> Vec<T> {
        self.records.iter().map(|r| r.error).collect()
    }
}

/// `max_i |v_new(xᵢ) − v_old(xᵢ)|`; `v_old = None` stands for `v ≡ 0`.
pub fn convergence_error<T: Scalar>(v_new: &KernelSurrogate<T>, v_old: Option<&KernelSurrogate<T>>, grid: &Grid<T>) -> T {
    grid.points()
        .iter()
        .map(|x| {
            let old = v_old.map_or(T::zero(), |o| o.eval_slice(x.as_slice()));
            (v_new.eval_slice(x.as_slice()) - old).magnitude()
        })
        .fold(T::zero(), |m, e| if e > m { e } else { m })
}

/// Policy iteration on the fixed grid of `cfg`.
pub fn run_pi<T: Scalar>(cfg: &PIConfig<T>, sys: &ControlAffineSystem<T>, u0: Policy<T>) -> Result<PIResult<T>> {
    if cfg.domain_aware {
        return Err(Error::InvalidInput("run_pi expects domain_aware = false".into()));
    }
    drive(cfg, sys, u0, None)
}

/// Policy iteration that contracts the computational domain to a sublevel
/// set of the latest value function after every evaluation.
pub fn run_domain_aware_pi<T: Scalar>(
    cfg: &PIConfig<T>,
    sys: &ControlAffineSystem<T>,
    u0: Policy<T>,
    omega_init: &BoundingBox<T>,
) -> Result<PIResult<T>> {
    if !cfg.domain_aware {
        return Err(Error::InvalidInput("run_domain_aware_pi expects domain_aware = true".into()));
    }
    if !omega_init.contains_strict(&DVector::zeros(omega_init.dim())) {
        return Err(Error::InvalidRegion("origin must lie strictly inside the initial box".into()));
    }
    if cfg.grid.points().iter().any(|p| !omega_init.contains(p)) {
        return Err(Error::InvalidInput("grid must lie inside the initial box".into()));
    }
    drive(cfg, sys, u0, Some(omega_init))
}

fn drive<T: Scalar>(
    cfg: &PIConfig<T>,
    sys: &ControlAffineSystem<T>,
    u0: Policy<T>,
    omega_init: Option<&BoundingBox<T>>,
) -> Result<PIResult<T>> {
    cfg.validate()?;
    let mut grid = cfg.grid.clone();
    let mut policy = u0;
    let mut records: Vec<IterationRecord<T>> = Vec::new();
    let mut domains: Vec<Arc<SublevelDomain<T>>> = Vec::new();
    let mut region = omega_init.map(|b| Region::Box(b.clone()));
    let mut stop = PIStop::MaxIters;

    for s in 0..cfg.max_iters {
        let ev = match policy_evaluation(&grid, sys, &policy, cfg.dt_colloc, &cfg.kernel, cfg.parallel) {
            Ok(ev) => ev,
            Err(e @ (Error::Solver { .. } | Error::ShiftDivergence { .. })) => {
                stop = PIStop::SolverError(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let surrogate = Arc::new(ev.surrogate);
        let error = convergence_error(&surrogate, records.last().map(|r| r.surrogate.as_ref()), &grid);
        let max_res = if cfg.record_residuals {
            Some(max_ghjb_residual(sys, surrogate.as_ref(), &policy, &grid)?)
        } else {
            None
        };
        // domain-aware runs score v_s on the test points of Ω_{s−1}
        let e_l2 = match &cfg.reference {
            Some(r) => r.e_l2_within(surrogate.as_ref(), |x| region.as_ref().is_none_or(|d| d.contains(x)))?,
            None => None,
        };
        let next_policy = policy_improvement(sys, &surrogate)?;
        let mut record = IterationRecord {
            iteration: s,
            surrogate: surrogate.clone(),
            policy: policy.describe(),
            grid: grid.clone(),
            error,
            level: None,
            max_ghjb_residual: max_res,
            e_l2,
            condition: ev.report.condition,
            solve_residual: ev.report.residual,
            jitter: ev.report.jitter,
        };
        policy = next_policy;

        let mut halt = None;
        if let Some(parent) = &region {
            let v: Arc<dyn ValueFunction<T>> = surrogate.clone();
            match contract(v, parent, cfg.nu, cfg.n_boundary_samples) {
                Ok(domain) => {
                    record.level = Some(domain.level());
                    let domain = Arc::new(domain);
                    match restrict_grid(&grid, &domain) {
                        Ok(g) => grid = g,
                        Err(e) => halt = Some(PIStop::DegenerateDomain(e.to_string())),
                    }
                    region = Some(Region::Sublevel(domain.clone()));
                    domains.push(domain);
                }
                Err(Error::DegenerateDomain(msg)) => halt = Some(PIStop::DegenerateDomain(msg)),
                Err(e) => return Err(e),
            }
        }
        records.push(record);
        if let Some(h) = halt {
            stop = h;
            break;
        }
        if cfg.tol > T::zero() && error <= cfg.tol {
            stop = PIStop::Converged;
            break;
        }
    }
    Ok(PIResult {
        records,
        stop,
        final_policy: policy,
        domains,
    })
}

/// Least-squares linear gain `K` with `u(x) ≈ −Kx` over `points`.
pub fn estimate_linear_gain<T: Scalar>(policy: &Policy<T>, points: &[DVector<T>]) -> Result<DMatrix<T>> {
    let n = points.first().map_or(0, |p| p.len());
    let m = policy.control_dim();
    let mut xx = DMatrix::<T>::zeros(n, n);
    let mut ux = DMatrix::<T>::zeros(m, n);
    for x in points {
        let u = policy.eval(x)?;
        xx += x * x.transpose();
        ux += &u * x.transpose();
    }
    let inv = xx
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("points do not span the state space".into()))?;
    Ok(-(ux * inv))
}
