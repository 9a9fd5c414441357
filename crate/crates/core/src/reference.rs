//! Finite-horizon open-loop reference values via a Pontryagin
//! forward–backward sweep, and the relative ℓ² error metric.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lqr::QuadraticValue;
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct PmpSettings<T: Scalar> {
    pub horizon: T,
    pub n_steps: usize,
    pub max_iters: usize,
    /// Relative cost decrease below which an accepted sweep counts as converged.
    pub tol: T,
    /// Initial damping `β` of the control update.
    pub initial_step: T,
    pub parallel: bool,
}

impl<T: Scalar> PmpSettings<T> {
    pub fn new(horizon: T, n_steps: usize) -> Self {
        Self {
            horizon,
            n_steps,
            max_iters: 2000,
            tol: T::lit(1e-12),
            initial_step: T::lit(0.5),
            parallel: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpenLoopSolution<T: Scalar> {
    pub horizon: T,
    pub times: Vec<T>,
    /// Controls at the time nodes (piecewise linear in between).
    pub controls: Vec<DVector<T>>,
    pub states: Vec<DVector<T>>,
    pub costates: Vec<DVector<T>>,
    /// Running cost over `[0, T]` plus `x(T)ᵀ P x(T)`.
    pub total_cost: T,
    /// History of accepted total costs, first entry is the initial guess.
    pub cost_history: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    /// `max_k ‖u_k − ū_k‖_∞` against the costate-stationary controls at the last check.
    pub stationarity_gap: T,
}

struct Sweep<'a, T: Scalar> {
    sys: &'a ControlAffineSystem<T>,
    terminal: &'a DMatrix<T>,
    dt: T,
}

/// Time-varying tracking feedback `u(t, x) = w(t) − K(x)(x − x̄(t))` with
/// `K(x) = R⁻¹g(x)ᵀP`. `w` is given at the nodes and step midpoints, `x̄`
/// is the cubic Hermite interpolant of `(xbar, fbar)`. With `w = 0, x̄ = 0`
/// this is the Riccati feedback.
struct Plan<T: Scalar> {
    w: Vec<DVector<T>>,
    w_mid: Vec<DVector<T>>,
    xbar: Vec<DVector<T>>,
    fbar: Vec<DVector<T>>,
}

/// Result of executing a plan: node states, realized controls at the nodes
/// and at the Hermite midpoints, the closed-loop vector field at the nodes
/// and the total cost. Re-executing `(controls, mid_controls, states)` as a
/// plan reproduces the path.
struct Path<T: Scalar> {
    states: Vec<DVector<T>>,
    controls: Vec<DVector<T>>,
    mid_controls: Vec<DVector<T>>,
    rhs: Vec<DVector<T>>,
    cost: T,
}

impl<T: Scalar> Sweep<'_, T> {
    fn tracking_gain(&self, x: &DVector<T>) -> DMatrix<T> {
        self.sys.control_weight_inv() * self.sys.input_map(x).transpose() * self.terminal
    }

    fn control(&self, w: &DVector<T>, xbar: &DVector<T>, x: &DVector<T>) -> DVector<T> {
        w - self.tracking_gain(x) * (x - xbar)
    }

    fn hermite_mid(&self, x0: &DVector<T>, x1: &DVector<T>, f0: &DVector<T>, f1: &DVector<T>) -> DVector<T> {
        (x0 + x1) * T::lit(0.5) + (f0 - f1) * (self.dt / T::lit(8.0))
    }

    fn execute(&self, x0: &DVector<T>, plan: &Plan<T>) -> Path<T> {
        let n = plan.w.len();
        let half = self.dt * T::lit(0.5);
        let sixth = self.dt / T::lit(6.0);
        let two = T::lit(2.0);
        let mut states = Vec::with_capacity(n);
        let mut controls = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        let mut x = x0.clone();
        let mut cost = T::zero();
        let mut u = self.control(&plan.w[0], &plan.xbar[0], &x);
        for k in 0..n - 1 {
            let wm = &plan.w_mid[k];
            let xm = self.hermite_mid(&plan.xbar[k], &plan.xbar[k + 1], &plan.fbar[k], &plan.fbar[k + 1]);
            let k1 = self.sys.rhs_unchecked(&x, &u);
            let c1 = self.sys.cost_unchecked(&x, &u);
            states.push(x.clone());
            controls.push(u.clone());
            rhs.push(k1.clone());

            let xa = &x + &k1 * half;
            let ua = self.control(wm, &xm, &xa);
            let k2 = self.sys.rhs_unchecked(&xa, &ua);
            let c2 = self.sys.cost_unchecked(&xa, &ua);
            let xb = &x + &k2 * half;
            let ub = self.control(wm, &xm, &xb);
            let k3 = self.sys.rhs_unchecked(&xb, &ub);
            let c3 = self.sys.cost_unchecked(&xb, &ub);
            let xc = &x + &k3 * self.dt;
            let uc = self.control(&plan.w[k + 1], &plan.xbar[k + 1], &xc);
            let k4 = self.sys.rhs_unchecked(&xc, &uc);
            let c4 = self.sys.cost_unchecked(&xc, &uc);
            x += (k1 + (k2 + k3) * two + k4) * sixth;
            cost += (c1 + (c2 + c3) * two + c4) * sixth;
            u = self.control(&plan.w[k + 1], &plan.xbar[k + 1], &x);
        }
        rhs.push(self.sys.rhs_unchecked(&x, &u));
        states.push(x.clone());
        controls.push(u);
        let mid_controls = (0..n - 1)
            .map(|k| {
                let xm = self.hermite_mid(&states[k], &states[k + 1], &rhs[k], &rhs[k + 1]);
                let xbm = self.hermite_mid(&plan.xbar[k], &plan.xbar[k + 1], &plan.fbar[k], &plan.fbar[k + 1]);
                self.control(&plan.w_mid[k], &xbm, &xm)
            })
            .collect();
        let terminal = x.dot(&(self.terminal * &x));
        let cost = if cost.finite() && terminal.finite() {
            cost + terminal
        } else {
            T::lit(f64::INFINITY)
        };
        Path {
            states,
            controls,
            mid_controls,
            rhs,
            cost,
        }
    }

    // adjoint of the tracking closed loop with ∂u/∂x = −K(x); equals the
    // open-loop costate λ̇ = −(Df + Σu_k Dg_k)ᵀλ − ∇h once 2Ru + gᵀλ = 0
    fn costate_rhs(&self, x: &DVector<T>, u: &DVector<T>, lam: &DVector<T>) -> DVector<T> {
        let k = self.tracking_gain(x);
        let jac = self.sys.rhs_jacobian(x, u) - self.sys.input_map(x) * &k;
        let two = T::lit(2.0);
        -(jac.transpose() * lam) - self.sys.state_cost_gradient(x) + k.transpose() * (self.sys.control_weight() * u) * two
    }

    fn backward(&self, path: &Path<T>) -> Vec<DVector<T>> {
        let n = path.states.len();
        let half = self.dt * T::lit(0.5);
        let sixth = self.dt / T::lit(6.0);
        let two = T::lit(2.0);
        let mut lam = (self.terminal * &path.states[n - 1]) * two;
        let mut out = vec![lam.clone(); n];
        for k in (0..n - 1).rev() {
            let (x1, x0) = (&path.states[k + 1], &path.states[k]);
            let (u1, u0) = (&path.controls[k + 1], &path.controls[k]);
            let xm = self.hermite_mid(x0, x1, &path.rhs[k], &path.rhs[k + 1]);
            let um = &path.mid_controls[k];
            let k1 = self.costate_rhs(x1, u1, &lam);
            let k2 = self.costate_rhs(&xm, um, &(&lam - &k1 * half));
            let k3 = self.costate_rhs(&xm, um, &(&lam - &k2 * half));
            let k4 = self.costate_rhs(x0, u0, &(&lam - &k3 * self.dt));
            lam -= (k1 + (k2 + k3) * two + k4) * sixth;
            out[k] = lam.clone();
        }
        out
    }

    // −½R⁻¹g(x)ᵀλ at every node
    fn stationary_controls(&self, states: &[DVector<T>], costates: &[DVector<T>]) -> Vec<DVector<T>> {
        let r_inv = self.sys.control_weight_inv();
        states
            .iter()
            .zip(costates)
            .map(|(x, l)| (r_inv * (self.sys.input_map(x).transpose() * l)) * T::lit(-0.5))
            .collect()
    }
}

fn max_control_gap<T: Scalar>(a: &[DVector<T>], b: &[DVector<T>]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax())
        .fold(T::zero(), |m, v| if v > m { v } else { m })
}

/// Forward–backward sweep for the horizon-`T` problem with terminal cost
/// `x(T)ᵀPx(T)`.
///
/// Each iterate is a tracking feedback around the previous trajectory, so
/// the forward pass stays stable on open-loop unstable plants; at a fixed
/// point the tracking term vanishes and the realized controls satisfy
/// `u = −½R⁻¹gᵀλ`. The update blends realized and stationary controls with
/// damping `β`, halving `β` whenever the total cost would increase.
pub fn pmp_solve<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    x0: &DVector<T>,
    p_terminal: &QuadraticValue<T>,
    settings: &PmpSettings<T>,
) -> Result<OpenLoopSolution<T>> {
    if !(settings.horizon > T::zero()) || settings.n_steps == 0 {
        return Err(Error::InvalidInput("horizon and n_steps must be positive".into()));
    }
    crate::error::check_dim("pmp_solve x0", sys.state_dim(), x0.len())?;
    let dt = settings.horizon / T::from_usize_lossy(settings.n_steps);
    let sweep = Sweep {
        sys,
        terminal: &p_terminal.p,
        dt,
    };
    let nodes = settings.n_steps + 1;
    let times: Vec<T> = (0..nodes).map(|k| dt * T::from_usize_lossy(k)).collect();
    let zeros_x = vec![DVector::zeros(sys.state_dim()); nodes];
    let initial = Plan {
        w: vec![DVector::zeros(sys.control_dim()); nodes],
        w_mid: vec![DVector::zeros(sys.control_dim()); nodes - 1],
        xbar: zeros_x.clone(),
        fbar: zeros_x,
    };
    let mut path = sweep.execute(x0, &initial);
    if !path.cost.finite() {
        return Err(Error::Divergence {
            time: 0.0,
            state: x0.iter().map(|v| v.as_f64()).collect(),
        });
    }
    let mut history = vec![path.cost];
    let mut beta = settings.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_gap = T::lit(f64::INFINITY);
    let mut last_decrease = T::lit(f64::INFINITY);
    let mut costates = sweep.backward(&path);
    let scale = x0.amax().max(T::one());
    let min_beta = T::lit(1e-10);

    while iterations < settings.max_iters {
        iterations += 1;
        let target = sweep.stationary_controls(&path.states, &costates);
        let mid_states: Vec<DVector<T>> = (0..nodes - 1)
            .map(|k| sweep.hermite_mid(&path.states[k], &path.states[k + 1], &path.rhs[k], &path.rhs[k + 1]))
            .collect();
        let mid_costates: Vec<DVector<T>> = costates.windows(2).map(|c| (&c[0] + &c[1]) * T::lit(0.5)).collect();
        let mid_target = sweep.stationary_controls(&mid_states, &mid_costates);
        let gap = max_control_gap(&target, &path.controls);
        last_gap = gap;
        let umax = path.controls.iter().map(|u| u.amax()).fold(T::zero(), |m, v| if v > m { v } else { m });
        if gap <= T::lit(1e-10) * (scale + umax) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while beta >= min_beta {
            let plan = Plan {
                w: path
                    .controls
                    .iter()
                    .zip(&target)
                    .map(|(u, t)| u * (T::one() - beta) + t * beta)
                    .collect(),
                w_mid: path
                    .mid_controls
                    .iter()
                    .zip(&mid_target)
                    .map(|(u, t)| u * (T::one() - beta) + t * beta)
                    .collect(),
                xbar: path.states.clone(),
                fbar: path.rhs.clone(),
            };
            let trial = sweep.execute(x0, &plan);
            if trial.cost.finite() && trial.cost <= path.cost {
                let decrease = (path.cost - trial.cost) / path.cost.max(T::lit(1e-300));
                path = trial;
                history.push(path.cost);
                accepted = true;
                last_decrease = decrease;
                if decrease < settings.tol && beta >= settings.initial_step {
                    converged = true;
                }
                beta = (beta * T::lit(2.0)).min(T::one());
                break;
            }
            beta *= T::lit(0.5);
        }
        if !accepted {
            // no descent left: stationary up to roundoff if the last steps had stalled
            converged = last_decrease < T::lit(1e-9);
            break;
        }
        costates = sweep.backward(&path);
        if converged {
            break;
        }
    }
    Ok(OpenLoopSolution {
        horizon: settings.horizon,
        times,
        controls: path.controls,
        states: path.states,
        costates,
        total_cost: path.cost,
        cost_history: history,
        converged,
        iterations,
        stationarity_gap: last_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceValue<T: Scalar> {
    pub value: T,
    pub converged: bool,
}

/// `pmp_solve` at every test point (the origin maps to 0 directly).
pub fn reference_values<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    points: &[DVector<T>],
    p_terminal: &QuadraticValue<T>,
    settings: &PmpSettings<T>,
) -> Result<Vec<ReferenceValue<T>>> {
    let solve = |x: &DVector<T>| -> Result<ReferenceValue<T>> {
        if x.iter().all(|v| *v == T::zero()) {
            return Ok(ReferenceValue {
                value: T::zero(),
                converged: true,
            });
        }
        let sol = pmp_solve(sys, x, p_terminal, settings)?;
        Ok(ReferenceValue {
            value: sol.total_cost,
            converged: sol.converged,
        })
    };
    if settings.parallel {
        points.par_iter().map(solve).collect()
    } else {
        points.iter().map(solve).collect()
    }
}

/// `sqrt(Σ(vᵢ* − Iᵢ)² / Σ(vᵢ*)²)`.
pub fn e_l2<T: Scalar>(approx: &[T], reference: &[T]) -> Result<T> {
    crate::error::check_dim("e_l2", reference.len(), approx.len())?;
    let den = reference.iter().fold(T::zero(), |s, r| s + *r * *r);
    if den == T::zero() {
        return Err(Error::UndefinedMetric("reference values are all zero".into()));
    }
    let num = approx
        .iter()
        .zip(reference)
        .fold(T::zero(), |s, (a, r)| s + (*r - *a) * (*r - *a));
    Ok((num / den).sqrt())
}

/// `E_ℓ2` restricted to the converged reference entries; returns the metric
/// and the number of excluded points.
pub fn e_l2_masked<T: Scalar>(approx: &[T], reference: &[ReferenceValue<T>]) -> Result<(T, usize)> {
    let mut a = Vec::with_capacity(approx.len());
    let mut r = Vec::with_capacity(approx.len());
    for (v, rv) in approx.iter().zip(reference) {
        if rv.converged {
            a.push(*v);
            r.push(rv.value);
        }
    }
    let excluded = approx.len() - a.len();
    Ok((e_l2(&a, &r)?, excluded))
}

/// Reference values on disk, keyed by `(system, horizon, n_steps, point)`.
#[derive(Debug, Clone, Default)]
pub struct ReferenceCache {
    entries: HashMap<String, (f64, bool)>,
}

fn cache_key(system: &str, horizon: f64, n_steps: usize, point: &[f64]) -> String {
    let mut key = format!("{system}|{horizon:e}|{n_steps}");
    for v in point {
        let _ = write!(key, "|{v:.15e}");
    }
    key
}

impl ReferenceCache {
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 6 {
                return Err(Error::Parse(format!("reference cache line {}: too few columns", lineno + 1)));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("reference cache line {}: {e}", lineno + 1)))
            };
            let (system, horizon, n_steps) = (cols[0], parse(cols[1])?, parse(cols[2])? as usize);
            let n = cols.len() - 5;
            let point: Vec<f64> = cols[3..3 + n].iter().map(|c| parse(c)).collect::<Result<_>>()?;
            let value = parse(cols[3 + n])?;
            let converged = cols[4 + n].trim() == "1";
            entries.insert(cache_key(system, horizon, n_steps, &point), (value, converged));
        }
        Ok(Self { entries })
    }

    pub fn to_csv(&self, state_dim: usize) -> String {
        let mut out = String::from("system,horizon,n_steps");
        for i in 1..=state_dim {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",value,converged\n");
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        for key in keys {
            let parts: Vec<&str> = key.split('|').collect();
            if parts.len() != 3 + state_dim {
                continue;
            }
            let (value, conv) = self.entries[key];
            let _ = writeln!(
                out,
                "{},{},{},{},{:.17e},{}",
                parts[0],
                parts[1],
                parts[2],
                parts[3..].join(","),
                value,
                u8::from(conv)
            );
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get<T: Scalar>(&self, system: &str, horizon: T, n_steps: usize, point: &DVector<T>) -> Option<ReferenceValue<T>> {
        let p: Vec<f64> = point.iter().map(|v| v.as_f64()).collect();
        self.entries
            .get(&cache_key(system, horizon.as_f64(), n_steps, &p))
            .map(|&(value, converged)| ReferenceValue {
                value: T::lit(value),
                converged,
            })
    }

    pub fn insert<T: Scalar>(&mut self, system: &str, horizon: T, n_steps: usize, point: &DVector<T>, value: ReferenceValue<T>) {
        let p: Vec<f64> = point.iter().map(|v| v.as_f64()).collect();
        self.entries.insert(
            cache_key(system, horizon.as_f64(), n_steps, &p),
            (value.value.as_f64(), value.converged),
        );
    }

    /// Returns cached values, computing (and inserting) any missing ones.
    pub fn get_or_compute<T: Scalar>(
        &mut self,
        sys: &ControlAffineSystem<T>,
        points: &[DVector<T>],
        p_terminal: &QuadraticValue<T>,
        settings: &PmpSettings<T>,
    ) -> Result<Vec<ReferenceValue<T>>> {
        let missing: Vec<DVector<T>> = points
            .iter()
            .filter(|p| self.get(sys.name(), settings.horizon, settings.n_steps, p).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            let values = reference_values(sys, &missing, p_terminal, settings)?;
            for (p, v) in missing.iter().zip(values) {
                self.insert(sys.name(), settings.horizon, settings.n_steps, p, v);
            }
        }
        Ok(points
            .iter()
            .map(|p| {
                self.get(sys.name(), settings.horizon, settings.n_steps, p)
                    .expect("value inserted above")
            })
            .collect())
    }
}
