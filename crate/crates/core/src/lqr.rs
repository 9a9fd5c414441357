//! Linearization at the origin, Lyapunov solves, the Newton–Kleinman
//! Riccati iteration and the LQR initial controller.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::systems::{central_jacobian, ControlAffineSystem};

/// `(A, B) = (Df(0), g(0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

/// `v(x) = xᵀPx` with `P` symmetric positive-definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticValue<T: Scalar> {
    pub p: DMatrix<T>,
}

impl<T: Scalar> QuadraticValue<T> {
    pub fn new(p: DMatrix<T>) -> Result<Self> {
        let scale = p.amax().max(T::one());
        if !p.is_square() || (&p - p.transpose()).amax() > T::lit(1e-10) * scale {
            return Err(Error::InvalidProblem("P must be square and symmetric".into()));
        }
        if p.clone().symmetric_eigen().eigenvalues.iter().any(|l| !(*l > T::zero())) {
            return Err(Error::InvalidProblem("P must be positive-definite".into()));
        }
        Ok(Self { p })
    }

    pub fn eval(&self, x: &DVector<T>) -> T {
        x.dot(&(&self.p * x))
    }

    pub fn grad(&self, x: &DVector<T>) -> DVector<T> {
        (&self.p * x) * T::lit(2.0)
    }

    /// Spectral norm (largest eigenvalue for SPD `P`).
    pub fn spectral_norm(&self) -> T {
        self.p.clone().symmetric_eigen().eigenvalues.max()
    }
}

pub fn linearize<T: Scalar>(sys: &ControlAffineSystem<T>) -> Result<Linearization<T>> {
    let origin = DVector::zeros(sys.state_dim());
    let a = match sys.dynamics().drift_jacobian(&origin) {
        Some(a) => a,
        None => central_jacobian(|x| sys.drift(x), &origin, T::lit(1e-6)),
    };
    let b = sys.input_map(&origin);
    if a.iter().chain(b.iter()).any(|v| !v.finite()) {
        return Err(Error::InvalidProblem("non-finite linearization".into()));
    }
    Ok(Linearization { a, b })
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa<T: Scalar>(a: &DMatrix<T>) -> T {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(T::lit(f64::NEG_INFINITY), |m, r| if r > m { r } else { m })
}

pub fn is_hurwitz<T: Scalar>(a: &DMatrix<T>) -> bool {
    spectral_abscissa(a) < T::lit(-1e-12)
}

/// Solves `AᵀP + PA + Q = 0` by vectorization.
pub fn solve_lyapunov<T: Scalar>(acl: &DMatrix<T>, q: &DMatrix<T>) -> Result<QuadraticValue<T>> {
    let n = acl.nrows();
    if !acl.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidInput("solve_lyapunov: shape mismatch".into()));
    }
    let max_real = spectral_abscissa(acl);
    if !(max_real < T::lit(-1e-12)) {
        return Err(Error::Stability {
            max_real: max_real.as_f64(),
        });
    }
    let eye = DMatrix::<T>::identity(n, n);
    let at = acl.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -*v));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::Stability {
            max_real: max_real.as_f64(),
        })?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * T::lit(0.5);
    QuadraticValue::new(p)
}

/// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖_∞` (max-abs entry).
pub fn riccati_residual<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, q: &DMatrix<T>, r: &DMatrix<T>, p: &DMatrix<T>) -> T {
    let r_inv = r.clone().try_inverse().expect("R invertible");
    let res = a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q;
    res.amax()
}

#[derive(Debug, Clone)]
pub struct KleinmanResult<T: Scalar> {
    pub value: QuadraticValue<T>,
    /// `P_0, P_1, …` in order.
    pub iterates: Vec<DMatrix<T>>,
    /// Gains `K_0, K_1, …`; `gains[s]` produced `iterates[s]`.
    pub gains: Vec<DMatrix<T>>,
    pub converged: bool,
}

/// Newton–Kleinman: `P_s` solves the Lyapunov equation of `A − BK_s` with
/// weight `Q + K_sᵀRK_s`, then `K_{s+1} = R⁻¹BᵀP_s`.
pub fn newton_kleinman<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    k0: &DMatrix<T>,
    tol: T,
    max_iters: usize,
) -> Result<KleinmanResult<T>> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidProblem("R is singular".into()))?;
    let mut gain = k0.clone();
    let mut iterates: Vec<DMatrix<T>> = Vec::new();
    let mut gains = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        let acl = a - b * &gain;
        let weight = q + gain.transpose() * r * &gain;
        let p = solve_lyapunov(&acl, &weight)?.p;
        gains.push(gain.clone());
        gain = &r_inv * b.transpose() * &p;
        let done = iterates
            .last()
            .map(|prev| (&p - prev).amax() <= tol)
            .unwrap_or(false);
        iterates.push(p);
        if done {
            converged = true;
            break;
        }
    }
    let p = iterates.last().cloned().expect("at least one iterate");
    Ok(KleinmanResult {
        value: QuadraticValue::new(p)?,
        iterates,
        gains,
        converged,
    })
}

/// Single-input pole placement (Ackermann) putting the closed-loop poles of
/// `A − BK` at `−1, −2, …, −N`.
pub fn stabilizing_gain<T: Scalar>(lin: &Linearization<T>) -> Result<DMatrix<T>> {
    let n = lin.a.nrows();
    if lin.b.ncols() != 1 {
        return Err(Error::InvalidProblem(
            "automatic stabilizing gain only implemented for single-input systems; supply K0".into(),
        ));
    }
    if is_hurwitz(&lin.a) {
        return Ok(DMatrix::zeros(1, n));
    }
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = lin.b.column(0).into_owned();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = &lin.a * col;
    }
    let ctrb_inv = ctrb
        .try_inverse()
        .ok_or_else(|| Error::InvalidProblem("(A, B) is not controllable".into()))?;
    // φ(A) = Π (A + kI), k = 1..N
    let eye = DMatrix::<T>::identity(n, n);
    let mut phi = eye.clone();
    for k in 1..=n {
        phi *= &lin.a + &eye * T::from_usize_lossy(k);
    }
    let last_row = ctrb_inv.row(n - 1).into_owned();
    Ok(DMatrix::from_row_slice(1, n, (last_row * phi).as_slice()))
}

/// `u₀(x) = −R⁻¹g(x)ᵀPx`.
pub fn initial_policy<T: Scalar>(sys: &ControlAffineSystem<T>, p: &QuadraticValue<T>) -> Policy<T> {
    Policy::Quadratic {
        system: sys.clone(),
        p: p.p.clone(),
    }
}

/// Linearizes `sys`, runs Newton–Kleinman from `k0` (or a pole-placement
/// gain) and returns the Riccati solution of `(Df(0), g(0), Q, R)`.
///
/// `q` defaults to the Hessian of `h` at 0 halved, i.e. `h ≈ xᵀQx`.
pub fn lqr_for_system<T: Scalar>(
    sys: &ControlAffineSystem<T>,
    q: Option<&DMatrix<T>>,
    k0: Option<&DMatrix<T>>,
) -> Result<(Linearization<T>, KleinmanResult<T>)> {
    let lin = linearize(sys)?;
    let q = match q {
        Some(q) => q.clone(),
        None => state_cost_hessian(sys) * T::lit(0.5),
    };
    let k0 = match k0 {
        Some(k) => k.clone(),
        None => stabilizing_gain(&lin)?,
    };
    let res = newton_kleinman(&lin.a, &lin.b, &q, sys.control_weight(), &k0, T::lit(1e-12), 100)?;
    Ok((lin, res))
}

fn state_cost_hessian<T: Scalar>(sys: &ControlAffineSystem<T>) -> DMatrix<T> {
    let n = sys.state_dim();
    let origin = DVector::zeros(n);
    let h = central_jacobian(|x| sys.state_cost_gradient(x), &origin, T::lit(1e-4));
    (&h + h.transpose()) * T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_van_der_pol, registry_get};
    use approx::assert_relative_eq;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn van_der_pol_linearization() {
        let lin = linearize(&make_van_der_pol::<f64>()).unwrap();
        assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 1.0]));
        assert_eq!(lin.b, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        let sys = make_van_der_pol::<f64>();
        let fd = central_jacobian(|x| sys.drift(x), &DVector::zeros(2), 1e-6);
        assert!((&fd - &lin.a).amax() < 1e-8);
    }

    #[test]
    fn linear_system_linearizes_to_itself() {
        let sys = registry_get::<f64>("lqr2d").unwrap();
        let lin = linearize(&sys).unwrap();
        assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 1.0]));
    }

    #[test]
    fn lyapunov_examples() {
        assert_relative_eq!(solve_lyapunov(&s(-1.0), &s(5.0)).unwrap().p[(0, 0)], 2.5, epsilon = 1e-14);
        let p = solve_lyapunov(&(-DMatrix::<f64>::identity(2, 2)), &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((p.p - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert!(matches!(solve_lyapunov(&s(1.0), &s(1.0)), Err(Error::Stability { .. })));
    }

    #[test]
    fn lyapunov_residual_small() {
        let acl = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, 0.3, -1.5, 0.2, 0.0, -0.4, -1.0]);
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let p = solve_lyapunov(&acl, &q).unwrap().p;
        let res = acl.transpose() * &p + &p * &acl + &q;
        assert!(res.amax() <= 1e-10 * q.amax());
    }

    #[test]
    fn scalar_kleinman_sequence() {
        let one = s(1.0);
        let res = newton_kleinman(&one, &one, &one, &one, &s(2.0), 1e-12, 50).unwrap();
        let ps: Vec<f64> = res.iterates.iter().map(|p| p[(0, 0)]).collect();
        // p = (1 + k²)/(2(k − 1)), k⁺ = p
        assert_relative_eq!(ps[0], 2.5, epsilon = 1e-12);
        assert_relative_eq!(ps[1], 2.416_666_666_666_667, epsilon = 1e-12);
        assert_relative_eq!(ps[2], 2.414_215_686_274_51, epsilon = 1e-12);
        assert_relative_eq!(res.value.p[(0, 0)], 1.0 + 2f64.sqrt(), epsilon = 1e-12);
        assert!(res.converged);
    }

    #[test]
    fn kleinman_fixed_point() {
        let one = s(1.0);
        let opt = 1.0 + 2f64.sqrt();
        let res = newton_kleinman(&one, &one, &one, &one, &s(opt), 1e-10, 50).unwrap();
        assert!(res.iterates.len() <= 2);
        assert_relative_eq!(res.value.p[(0, 0)], opt, epsilon = 1e-10);
    }

    #[test]
    fn van_der_pol_riccati() {
        let sys = make_van_der_pol::<f64>();
        let (lin, res) = lqr_for_system(&sys, Some(&DMatrix::identity(2, 2)), None).unwrap();
        let resid = riccati_residual(&lin.a, &lin.b, &DMatrix::identity(2, 2), sys.control_weight(), &res.value.p);
        assert!(resid <= 1e-8, "{resid}");
        let bound = res.iterates[0].clone().symmetric_eigen().eigenvalues.max();
        for p in &res.iterates {
            assert!(p.clone().symmetric_eigen().eigenvalues.max() <= bound * (1.0 + 1e-12));
        }
        let acl = &lin.a - &lin.b * sys.control_weight_inv() * lin.b.transpose() * &res.value.p;
        assert!(is_hurwitz(&acl));
    }

    #[test]
    fn default_state_weight_matches_identity_for_vdp() {
        let sys = make_van_der_pol::<f64>();
        let (_, with_default) = lqr_for_system(&sys, None, None).unwrap();
        let (_, with_identity) = lqr_for_system(&sys, Some(&DMatrix::identity(2, 2)), None).unwrap();
        assert!((with_default.value.p - with_identity.value.p).amax() < 1e-6);
    }

    #[test]
    fn pole_placement_vdp() {
        let lin = linearize(&make_van_der_pol::<f64>()).unwrap();
        let k = stabilizing_gain(&lin).unwrap();
        let mut eig: Vec<f64> = (&lin.a - &lin.b * &k).complex_eigenvalues().iter().map(|c| c.re).collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(eig[0], -2.0, epsilon = 1e-10);
        assert_relative_eq!(eig[1], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn initial_policy_values() {
        let sys = registry_get::<f64>("lqr1d").unwrap();
        let q = QuadraticValue::new(s(1.0 + 2f64.sqrt())).unwrap();
        let p = initial_policy(&sys, &q);
        assert_eq!(p.eval(&DVector::from_element(1, 0.0)).unwrap()[0], 0.0);
        assert_relative_eq!(p.eval(&DVector::from_element(1, 1.0)).unwrap()[0], -(1.0 + 2f64.sqrt()));
    }
}
