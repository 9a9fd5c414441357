//! Closed-loop integration and rollout-based policy cost.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::BoundingBox;
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

/// Truncation rule for the infinite-horizon integral.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStop<T: Scalar> {
    pub max_time: T,
    pub radius_tol: T,
    pub escape_box: Option<BoundingBox<T>>,
}

impl<T: Scalar> RolloutStop<T> {
    pub fn new(max_time: T, radius_tol: T, escape_box: Option<BoundingBox<T>>) -> Result<Self> {
        if !(max_time > T::zero()) || !(radius_tol > T::zero()) {
            return Err(Error::InvalidInput("max_time and radius_tol must be positive".into()));
        }
        Ok(Self {
            max_time,
            radius_tol,
            escape_box,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Entered the `radius_tol` ball.
    Converged,
    /// Reached `max_time` outside the ball.
    Timeout,
    /// Left the escape box.
    Escaped,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::Timeout => "timeout",
            StopReason::Escaped => "escaped",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    /// One control per step (`states.len() − 1` entries).
    pub controls: Vec<DVector<T>>,
    /// Cost accumulated up to each time node (starts at 0).
    pub accumulated_cost: Vec<T>,
    pub stop: StopReason,
}

impl<T: Scalar> Trajectory<T> {
    pub fn total_cost(&self) -> T {
        *self.accumulated_cost.last().expect("trajectory has at least one node")
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("trajectory has at least one node")
    }

    /// CSV with columns `t, x1..xN, u1..uM, cost`; the control column of the
    /// last node is left empty.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        for i in 1..=m {
            let _ = write!(out, ",u{i}");
        }
        out.push_str(",cost\n");
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let _ = write!(out, "{:.10e}", t.as_f64());
            for v in x.iter() {
                let _ = write!(out, ",{:.10e}", v.as_f64());
            }
            match self.controls.get(k) {
                Some(u) => {
                    for v in u.iter() {
                        let _ = write!(out, ",{:.10e}", v.as_f64());
                    }
                }
                None => out.push_str(&",".repeat(m)),
            }
            let _ = writeln!(out, ",{:.10e}", self.accumulated_cost[k].as_f64());
        }
        out
    }
}

fn closed_loop<T: Scalar>(sys: &ControlAffineSystem<T>, policy: &Policy<T>, x: &DVector<T>) -> DVector<T> {
    sys.rhs_unchecked(x, &policy.eval_unchecked(x))
}

/// One explicit step of the closed loop `ẋ = f(x) + g(x)·policy(x)`.
pub fn step<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    x: &DVector<T>,
    dt: T,
    scheme: Scheme,
) -> Result<DVector<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    crate::error::check_dim("step state", sys.state_dim(), x.len())?;
    crate::error::check_dim("step policy", sys.control_dim(), policy.control_dim())?;
    let next = step_unchecked(sys, policy, x, dt, scheme);
    if next.iter().any(|v| !v.finite()) {
        return Err(Error::Divergence {
            time: f64::NAN,
            state: next.iter().map(|v| v.as_f64()).collect(),
        });
    }
    Ok(next)
}

pub(crate) fn step_unchecked<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    x: &DVector<T>,
    dt: T,
    scheme: Scheme,
) -> DVector<T> {
    match scheme {
        Scheme::Euler => x + closed_loop(sys, policy, x) * dt,
        Scheme::Rk4 => {
            let half = dt * T::lit(0.5);
            let k1 = closed_loop(sys, policy, x);
            let k2 = closed_loop(sys, policy, &(x + &k1 * half));
            let k3 = closed_loop(sys, policy, &(x + &k2 * half));
            let k4 = closed_loop(sys, policy, &(x + &k3 * dt));
            x + (k1 + (k2 + k3) * T::lit(2.0) + k4) * (dt / T::lit(6.0))
        }
    }
}

/// Integrates the closed loop until the state enters the `radius_tol` ball,
/// leaves the escape box, or `max_time` is reached. Cost uses the
/// left-endpoint rule `Δt·(h(xᵢ) + uᵢᵀRuᵢ)`.
pub fn rollout<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    x0: &DVector<T>,
    dt: T,
    stop: &RolloutStop<T>,
    scheme: Scheme,
) -> Result<Trajectory<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    crate::error::check_dim("rollout state", sys.state_dim(), x0.len())?;
    crate::error::check_dim("rollout policy", sys.control_dim(), policy.control_dim())?;
    if x0.iter().any(|v| !v.finite()) {
        return Err(Error::InvalidInput("initial state must be finite".into()));
    }
    let mut traj = Trajectory {
        times: vec![T::zero()],
        states: vec![x0.clone()],
        controls: Vec::new(),
        accumulated_cost: vec![T::zero()],
        stop: StopReason::Timeout,
    };
    let mut t = T::zero();
    let mut x = x0.clone();
    let mut cost = T::zero();
    let mut steps = 0usize;
    let max_steps = (stop.max_time / dt).as_f64().ceil() as usize;
    loop {
        if x.norm() <= stop.radius_tol {
            traj.stop = StopReason::Converged;
            break;
        }
        if let Some(b) = &stop.escape_box {
            if !b.contains(&x) {
                traj.stop = StopReason::Escaped;
                break;
            }
        }
        if steps >= max_steps {
            traj.stop = StopReason::Timeout;
            break;
        }
        let u = policy.eval_unchecked(&x);
        cost += dt * sys.cost_unchecked(&x, &u);
        x = step_unchecked(sys, policy, &x, dt, scheme);
        t += dt;
        steps += 1;
        if x.iter().any(|v| !v.finite()) {
            return Err(Error::Divergence {
                time: t.as_f64(),
                state: x.iter().map(|v| v.as_f64()).collect(),
            });
        }
        traj.controls.push(u);
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.accumulated_cost.push(cost);
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyCost<T: Scalar> {
    pub value: T,
    pub converged: bool,
    pub stop: StopReason,
}

/// Truncated infinite-horizon cost of `policy` from `x0`; flagged
/// non-converged unless the rollout reached the `radius_tol` ball.
pub fn policy_cost<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    x0: &DVector<T>,
    dt: T,
    stop: &RolloutStop<T>,
) -> Result<PolicyCost<T>> {
    let traj = rollout(sys, policy, x0, dt, stop, Scheme::Euler)?;
    Ok(PolicyCost {
        value: traj.total_cost(),
        converged: traj.stop == StopReason::Converged,
        stop: traj.stop,
    })
}
