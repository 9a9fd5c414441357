//! Control-affine problem data `ẋ = f(x) + g(x)u` with running cost
//! `h(x) + uᵀRu`, plus the shipped benchmark instances.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::grid::BoundingBox;
use crate::scalar::Scalar;

/// Drift, input map and state cost of a control-affine system.
///
/// Implementations must be pure. The optional derivative hooks are used by
/// the linearization and the Pontryagin sweep; when they return `None` the
/// callers fall back to central differences.
pub trait Dynamics<T: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn drift(&self, x: &DVector<T>) -> DVector<T>;
    fn input_map(&self, x: &DVector<T>) -> DMatrix<T>;
    fn state_cost(&self, x: &DVector<T>) -> T;

    fn drift_jacobian(&self, _x: &DVector<T>) -> Option<DMatrix<T>> {
        None
    }

    /// `true` when `g` does not depend on the state.
    fn constant_input_map(&self) -> bool {
        false
    }

    fn state_cost_gradient(&self, _x: &DVector<T>) -> Option<DVector<T>> {
        None
    }
}

/// Problem data `(f, g, h, R)` with the cached inverse `R⁻¹`.
#[derive(Clone)]
pub struct ControlAffineSystem<T: Scalar> {
    name: String,
    dynamics: Arc<dyn Dynamics<T>>,
    control_weight: DMatrix<T>,
    control_weight_inv: DMatrix<T>,
}

impl<T: Scalar> fmt::Debug for ControlAffineSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlAffineSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim())
            .field("control_dim", &self.control_dim())
            .field("control_weight", &self.control_weight)
            .finish()
    }
}

impl<T: Scalar> ControlAffineSystem<T> {
    /// Wraps user dynamics; `control_weight` must be symmetric positive-definite.
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn Dynamics<T>>,
        control_weight: DMatrix<T>,
    ) -> Result<Self> {
        let m = dynamics.control_dim();
        if dynamics.state_dim() == 0 || m == 0 {
            return Err(Error::InvalidProblem("dimensions must be positive".into()));
        }
        if control_weight.nrows() != m || control_weight.ncols() != m {
            return Err(Error::InvalidProblem(format!(
                "control weight must be {m}x{m}, got {}x{}",
                control_weight.nrows(),
                control_weight.ncols()
            )));
        }
        check_spd(&control_weight, "R")?;
        let control_weight_inv = control_weight
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidProblem("R is singular".into()))?;
        Ok(Self {
            name: name.into(),
            dynamics,
            control_weight,
            control_weight_inv,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics<T>> {
        &self.dynamics
    }

    pub fn control_weight(&self) -> &DMatrix<T> {
        &self.control_weight
    }

    pub fn control_weight_inv(&self) -> &DMatrix<T> {
        &self.control_weight_inv
    }

    pub fn drift(&self, x: &DVector<T>) -> DVector<T> {
        self.dynamics.drift(x)
    }

    pub fn input_map(&self, x: &DVector<T>) -> DMatrix<T> {
        self.dynamics.input_map(x)
    }

    pub fn state_cost(&self, x: &DVector<T>) -> T {
        self.dynamics.state_cost(x)
    }

    /// `f(x) + g(x)·u`.
    pub fn eval_rhs(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        check_dim("eval_rhs state", self.state_dim(), x.len())?;
        check_dim("eval_rhs control", self.control_dim(), u.len())?;
        Ok(self.rhs_unchecked(x, u))
    }

    pub(crate) fn rhs_unchecked(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        let mut dx = self.dynamics.drift(x);
        dx.gemv(T::one(), &self.dynamics.input_map(x), u, T::one());
        dx
    }

    /// `h(x) + uᵀRu`.
    pub fn running_cost(&self, x: &DVector<T>, u: &DVector<T>) -> Result<T> {
        check_dim("running_cost state", self.state_dim(), x.len())?;
        check_dim("running_cost control", self.control_dim(), u.len())?;
        Ok(self.cost_unchecked(x, u))
    }

    pub(crate) fn cost_unchecked(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        self.dynamics.state_cost(x) + self.control_penalty(u)
    }

    /// `uᵀRu`.
    pub fn control_penalty(&self, u: &DVector<T>) -> T {
        (u.transpose() * &self.control_weight * u)[(0, 0)]
    }

    /// Jacobian of `x ↦ f(x) + g(x)u` at fixed `u`.
    pub fn rhs_jacobian(&self, x: &DVector<T>, u: &DVector<T>) -> DMatrix<T> {
        if self.dynamics.constant_input_map() {
            if let Some(jac) = self.dynamics.drift_jacobian(x) {
                return jac;
            }
        }
        central_jacobian(|z| self.rhs_unchecked(z, u), x, T::lit(1e-6))
    }

    pub fn state_cost_gradient(&self, x: &DVector<T>) -> DVector<T> {
        if let Some(grad) = self.dynamics.state_cost_gradient(x) {
            return grad;
        }
        let h = T::lit(1e-6);
        let two = T::lit(2.0);
        DVector::from_fn(x.len(), |i, _| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (self.state_cost(&xp) - self.state_cost(&xm)) / (two * h)
        })
    }

    /// Samples `n` states uniformly in `region` and checks `h(x) > 0` there
    /// (and `h(0) = 0`, `f(0) = 0`).
    pub fn audit_state_cost(&self, region: &BoundingBox<T>, n: usize, seed: u64) -> Result<()> {
        let origin = DVector::zeros(self.state_dim());
        if self.state_cost(&origin) != T::zero() {
            return Err(Error::InvalidProblem("h(0) != 0".into()));
        }
        if self.drift(&origin).iter().any(|v| *v != T::zero()) {
            return Err(Error::InvalidProblem("f(0) != 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..n {
            let x = region.sample(&mut rng);
            if x.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let h = self.state_cost(&x);
            if !(h > T::zero()) {
                return Err(Error::InvalidProblem(format!(
                    "state cost not positive at {:?}",
                    x.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }
}

/// Central-difference Jacobian of a vector field.
pub fn central_jacobian<T: Scalar, F>(f: F, x: &DVector<T>, step: T) -> DMatrix<T>
where
    F: Fn(&DVector<T>) -> DVector<T>,
{
    let n = x.len();
    let rows = f(x).len();
    let two = T::lit(2.0);
    let mut jac = DMatrix::zeros(rows, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let col = (f(&xp) - f(&xm)) / (two * step);
        jac.set_column(j, &col);
    }
    jac
}

/// Checks symmetry (1e-12 relative) and strict positivity of the spectrum.
pub fn check_spd<T: Scalar>(m: &DMatrix<T>, label: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidProblem(format!("{label} is not square")));
    }
    let scale = m.iter().fold(T::one(), |acc, v| {
        if v.magnitude() > acc {
            v.magnitude()
        } else {
            acc
        }
    });
    let tol = T::lit(1e-12) * scale;
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).magnitude() > tol {
                return Err(Error::InvalidProblem(format!("{label} is not symmetric")));
            }
        }
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > T::zero())) {
        return Err(Error::InvalidProblem(format!(
            "{label} is not positive-definite"
        )));
    }
    Ok(())
}

/// Unforced-parameter `μ = 1` Van der Pol oscillator with `g = (0, 1)ᵀ`,
/// `h = x² + y²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VanDerPol;

impl<T: Scalar> Dynamics<T> for VanDerPol {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        let (p, q) = (x[0], x[1]);
        DVector::from_vec(vec![q, -p + q * (T::one() - p * p)])
    }

    fn input_map(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_column_slice(2, 1, &[T::zero(), T::one()])
    }

    fn state_cost(&self, x: &DVector<T>) -> T {
        x[0] * x[0] + x[1] * x[1]
    }

    fn drift_jacobian(&self, x: &DVector<T>) -> Option<DMatrix<T>> {
        let (p, q) = (x[0], x[1]);
        let two = T::lit(2.0);
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[T::zero(), T::one(), -T::one() - two * p * q, T::one() - p * p],
        ))
    }

    fn constant_input_map(&self) -> bool {
        true
    }

    fn state_cost_gradient(&self, x: &DVector<T>) -> Option<DVector<T>> {
        Some(x * T::lit(2.0))
    }
}

/// `ẋ = Ax + Bu`, `h(x) = xᵀQx`.
#[derive(Debug, Clone)]
pub struct LinearDynamics<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub q: DMatrix<T>,
}

impl<T: Scalar> Dynamics<T> for LinearDynamics<T> {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x
    }

    fn input_map(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.b.clone()
    }

    fn state_cost(&self, x: &DVector<T>) -> T {
        x.dot(&(&self.q * x))
    }

    fn drift_jacobian(&self, _x: &DVector<T>) -> Option<DMatrix<T>> {
        Some(self.a.clone())
    }

    fn constant_input_map(&self) -> bool {
        true
    }

    fn state_cost_gradient(&self, x: &DVector<T>) -> Option<DVector<T>> {
        Some((&self.q + self.q.transpose()) * x)
    }
}

type DriftFn<T> = dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync;
type InputFn<T> = dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync;
type CostFn<T> = dyn Fn(&DVector<T>) -> T + Send + Sync;

/// Dynamics assembled from closures.
pub struct FnDynamics<T: Scalar> {
    state_dim: usize,
    control_dim: usize,
    drift: Box<DriftFn<T>>,
    input_map: Box<InputFn<T>>,
    state_cost: Box<CostFn<T>>,
}

impl<T: Scalar> FnDynamics<T> {
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        drift: impl Fn(&DVector<T>) -> DVector<T> + Send + Sync + 'static,
        input_map: impl Fn(&DVector<T>) -> DMatrix<T> + Send + Sync + 'static,
        state_cost: impl Fn(&DVector<T>) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            control_dim,
            drift: Box::new(drift),
            input_map: Box::new(input_map),
            state_cost: Box::new(state_cost),
        }
    }
}

impl<T: Scalar> Dynamics<T> for FnDynamics<T> {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        (self.drift)(x)
    }

    fn input_map(&self, x: &DVector<T>) -> DMatrix<T> {
        (self.input_map)(x)
    }

    fn state_cost(&self, x: &DVector<T>) -> T {
        (self.state_cost)(x)
    }
}

/// The Van der Pol benchmark with `R = 1/50`.
pub fn make_van_der_pol<T: Scalar>() -> ControlAffineSystem<T> {
    let r = DMatrix::from_element(1, 1, T::one() / T::lit(50.0));
    ControlAffineSystem::new("vdp", Arc::new(VanDerPol), r).expect("valid built-in system")
}

/// Linear-quadratic problem `f = Ax`, `g = B`, `h = xᵀQx`.
pub fn make_linear<T: Scalar>(
    a: DMatrix<T>,
    b: DMatrix<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
) -> Result<ControlAffineSystem<T>> {
    make_linear_named("linear", a, b, q, r)
}

pub fn make_linear_named<T: Scalar>(
    name: &str,
    a: DMatrix<T>,
    b: DMatrix<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
) -> Result<ControlAffineSystem<T>> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(Error::InvalidProblem("A must be square".into()));
    }
    if b.nrows() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidProblem("inconsistent A, B, Q shapes".into()));
    }
    check_spd(&q, "Q")?;
    ControlAffineSystem::new(name, Arc::new(LinearDynamics { a, b, q }), r)
}

/// Looks up a built-in system: `vdp`, `lqr2d` (the Van der Pol
/// linearization with `Q = I`, `R = 1/50`) or `lqr1d` (`a = b = q = r = 1`).
pub fn registry_get<T: Scalar>(name: &str) -> Result<ControlAffineSystem<T>> {
    match name {
        "vdp" => Ok(make_van_der_pol()),
        "lqr2d" => make_linear_named(
            "lqr2d",
            DMatrix::from_row_slice(2, 2, &[T::zero(), T::one(), -T::one(), T::one()]),
            DMatrix::from_column_slice(2, 1, &[T::zero(), T::one()]),
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, T::one() / T::lit(50.0)),
        ),
        "lqr1d" => make_linear_named(
            "lqr1d",
            DMatrix::from_element(1, 1, T::one()),
            DMatrix::from_element(1, 1, T::one()),
            DMatrix::from_element(1, 1, T::one()),
            DMatrix::from_element(1, 1, T::one()),
        ),
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

pub const REGISTERED_SYSTEMS: &[&str] = &["vdp", "lqr2d", "lqr1d"];

/// Uniform random state in a box; shared by audits.
pub(crate) fn uniform_in<T: Scalar, R: Rng>(lo: &DVector<T>, hi: &DVector<T>, rng: &mut R) -> DVector<T> {
    DVector::from_fn(lo.len(), |i, _| {
        let t = T::lit(rng.random::<f64>());
        lo[i] + (hi[i] - lo[i]) * t
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn van_der_pol_rhs() {
        let sys = make_van_der_pol::<f64>();
        let dx = sys.eval_rhs(&v(&[1.0, 0.5]), &v(&[0.0])).unwrap();
        assert_relative_eq!(dx[0], 0.5);
        assert_relative_eq!(dx[1], -1.0);
        let z = sys.eval_rhs(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
        assert_eq!(z, v(&[0.0, 0.0]));
        assert_eq!(sys.input_map(&v(&[3.0, -2.0])), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert_relative_eq!(sys.control_weight()[(0, 0)], 1.0 / 50.0);
    }

    #[test]
    fn linear_rhs_hand_product() {
        let sys = registry_get::<f64>("lqr2d").unwrap();
        let dx = sys.eval_rhs(&v(&[1.0, 0.0]), &v(&[2.0])).unwrap();
        assert_eq!(dx, v(&[0.0, 1.0]));
    }

    #[test]
    fn running_costs() {
        let sys = make_van_der_pol::<f64>();
        assert_relative_eq!(sys.running_cost(&v(&[1.0, 0.5]), &v(&[5.0])).unwrap(), 1.75, epsilon = 1e-14);
        assert_eq!(sys.running_cost(&v(&[0.0, 0.0]), &v(&[0.0])).unwrap(), 0.0);
        let scalar = registry_get::<f64>("lqr1d").unwrap();
        assert_relative_eq!(scalar.running_cost(&v(&[2.0]), &v(&[3.0])).unwrap(), 13.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let sys = make_van_der_pol::<f64>();
        assert!(matches!(sys.eval_rhs(&v(&[1.0]), &v(&[0.0])), Err(Error::Dimension { .. })));
        assert!(matches!(sys.running_cost(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn make_linear_checks_spd() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = make_linear(one.clone(), one.clone(), one.clone(), one.clone()).unwrap();
        assert_eq!(sys.drift(&v(&[2.0]))[0], 2.0);
        let sys2 = make_linear(
            DMatrix::identity(2, 2),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            one.clone(),
        )
        .unwrap();
        assert_eq!(sys2.state_cost(&v(&[1.0, 1.0])), 2.0);
        let bad_q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            make_linear(DMatrix::identity(2, 2), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), bad_q, one),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn control_weight_inverse_is_cached() {
        let sys = make_van_der_pol::<f64>();
        let prod = sys.control_weight() * sys.control_weight_inv();
        assert_relative_eq!(prod[(0, 0)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn state_cost_audit() {
        let sys = make_van_der_pol::<f64>();
        let region = BoundingBox::symmetric(&[1.0, 1.0]);
        sys.audit_state_cost(&region, 500, 7).unwrap();
        let bad = ControlAffineSystem::new(
            "bad",
            Arc::new(FnDynamics::new(1, 1, |x: &DVector<f64>| x.clone(), |_| DMatrix::identity(1, 1), |x| -x[0] * x[0])),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!(bad.audit_state_cost(&BoundingBox::symmetric(&[1.0]), 10, 1).is_err());
    }

    #[test]
    fn registry_lookup() {
        for name in REGISTERED_SYSTEMS {
            assert_eq!(registry_get::<f64>(name).unwrap().name(), *name);
        }
        assert!(matches!(registry_get::<f64>("pendulum"), Err(Error::UnknownSystem(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let sys = make_van_der_pol::<f32>();
        let dx = sys
            .eval_rhs(&DVector::from_column_slice(&[1.0f32, 0.5]), &DVector::from_column_slice(&[0.0f32]))
            .unwrap();
        assert_eq!(dx[1], -1.0f32);
    }

    proptest! {
        #[test]
        fn running_cost_nonnegative(x in -2.0f64..2.0, y in -2.0f64..2.0, u in -5.0f64..5.0) {
            let sys = make_van_der_pol::<f64>();
            let c = sys.running_cost(&v(&[x, y]), &v(&[u])).unwrap();
            prop_assert!(c >= 0.0);
            if x != 0.0 || y != 0.0 || u != 0.0 {
                prop_assert!(c > 0.0);
            }
        }

        #[test]
        fn rhs_affine_in_control(x in -2.0f64..2.0, y in -2.0f64..2.0, u1 in -5.0f64..5.0, u2 in -5.0f64..5.0, a in 0.0f64..1.0) {
            let sys = make_van_der_pol::<f64>();
            let s = v(&[x, y]);
            let mixed = sys.eval_rhs(&s, &v(&[a * u1 + (1.0 - a) * u2])).unwrap();
            let combo = sys.eval_rhs(&s, &v(&[u1])).unwrap() * a + sys.eval_rhs(&s, &v(&[u2])).unwrap() * (1.0 - a);
            prop_assert!((mixed - combo).amax() <= 1e-12);
        }
    }
}
