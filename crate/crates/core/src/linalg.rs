//! Dense LU solves with a one-norm condition estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Condition estimates above this are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// One-norm condition estimate `‖A‖₁·est(‖A⁻¹‖₁)`.
    pub condition: f64,
    /// `‖Ax − b‖_∞` of the returned solution against the original matrix.
    pub residual: f64,
    /// Diagonal jitter that was added (0 when none was needed).
    pub jitter: f64,
}

/// Relative diagonal jitter of the first retry; each further retry is ten
/// times larger, up to [`MAX_JITTER`].
pub const BASE_JITTER: f64 = 1e-10;
pub const MAX_JITTER: f64 = 1e-6;

/// Solves `Ax = b` with partial pivoting. When the factorization is
/// singular or the condition estimate exceeds [`CONDITION_LIMIT`], retries
/// with `ε·|tr A|/n` added to the diagonal for `ε = 1e-10, 1e-9, …, 1e-6`
/// and fails if none of them brings the estimate under the limit.
pub fn solve_dense<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Result<(DVector<T>, SolveReport)> {
    assert!(a.is_square() && a.nrows() == b.len(), "solve_dense: shape mismatch");
    match try_solve(a, b) {
        Some((x, cond)) if cond <= CONDITION_LIMIT => {
            let residual = residual_inf(a, &x, b);
            return Ok((
                x,
                SolveReport {
                    condition: cond,
                    residual,
                    jitter: 0.0,
                },
            ));
        }
        _ => {}
    }
    let n = a.nrows();
    let scale = a.trace().magnitude() / T::from_usize_lossy(n);
    if !(scale > T::zero()) {
        return Err(Error::Solver {
            condition: f64::INFINITY,
        });
    }
    let mut eps = BASE_JITTER;
    let mut last_cond = f64::INFINITY;
    while eps <= MAX_JITTER * (1.0 + 1e-9) {
        let jitter = T::lit(eps) * scale;
        let mut aj = a.clone();
        for i in 0..n {
            aj[(i, i)] += jitter;
        }
        match try_solve(&aj, b) {
            Some((x, cond)) if cond <= CONDITION_LIMIT => {
                let residual = residual_inf(a, &x, b);
                return Ok((
                    x,
                    SolveReport {
                        condition: cond,
                        residual,
                        jitter: jitter.as_f64(),
                    },
                ));
            }
            Some((_, cond)) => last_cond = cond,
            None => {}
        }
        eps *= 10.0;
    }
    Err(Error::Solver { condition: last_cond })
}

fn residual_inf<T: Scalar>(a: &DMatrix<T>, x: &DVector<T>, b: &DVector<T>) -> f64 {
    (a * x - b).iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
}

fn try_solve<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Option<(DVector<T>, f64)> {
    if a.iter().any(|v| !v.finite()) {
        return None;
    }
    let lu = a.clone().lu();
    let x = lu.solve(b)?;
    if x.iter().any(|v| !v.finite()) {
        return None;
    }
    let inv_norm = inverse_one_norm_estimate(&lu);
    let cond = one_norm(a).as_f64() * inv_norm.as_f64();
    Some((x, if cond.is_finite() { cond } else { f64::INFINITY }))
}

/// Maximum absolute column sum.
pub fn one_norm<T: Scalar>(a: &DMatrix<T>) -> T {
    a.column_iter()
        .map(|c| c.iter().fold(T::zero(), |s, v| s + v.magnitude()))
        .fold(T::zero(), |m, s| if s > m { s } else { m })
}

type Lu<T> = nalgebra::LU<T, nalgebra::Dyn, nalgebra::Dyn>;

fn solve_transposed<T: Scalar>(lu: &Lu<T>, l: &DMatrix<T>, u: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    // PA = LU  =>  Aᵀ = Uᵀ Lᵀ P
    let w = u.tr_solve_upper_triangular(b)?;
    let mut z = l.tr_solve_lower_triangular(&w)?;
    lu.p().inv_permute_rows(&mut z);
    Some(z)
}

/// Hager/Higham estimate of `‖A⁻¹‖₁` from an existing factorization.
pub fn inverse_one_norm_estimate<T: Scalar>(lu: &Lu<T>) -> T {
    let n = lu.l().nrows();
    let l = lu.l();
    let u = lu.u();
    let mut x = DVector::from_element(n, T::one() / T::from_usize_lossy(n));
    let mut estimate = T::zero();
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let Some(y) = lu.solve(&x) else {
            return T::lit(f64::INFINITY);
        };
        estimate = y.iter().fold(T::zero(), |s, v| s + v.magnitude());
        let xi = y.map(|v| if v < T::zero() { -T::one() } else { T::one() });
        let Some(z) = solve_transposed(lu, &l, &u, &xi) else {
            return T::lit(f64::INFINITY);
        };
        let (j, zmax) = z
            .iter()
            .enumerate()
            .fold((0, T::zero()), |(bj, bm), (i, v)| if v.magnitude() > bm { (i, v.magnitude()) } else { (bj, bm) });
        if zmax <= z.dot(&x) || j == last_j {
            break;
        }
        last_j = j;
        x = DVector::zeros(n);
        x[j] = T::one();
    }
    // Higham's alternating-sign test vector guards against underestimates.
    let alt = DVector::from_fn(n, |i, _| {
        let sign = if i % 2 == 0 { T::one() } else { -T::one() };
        sign * (T::one() + T::from_usize_lossy(i) / T::from_usize_lossy(n.max(2) - 1))
    });
    if let Some(y) = lu.solve(&alt) {
        let alt_est = T::lit(2.0) * y.iter().fold(T::zero(), |s, v| s + v.magnitude())
            / (T::lit(3.0) * T::from_usize_lossy(n));
        if alt_est > estimate {
            estimate = alt_est;
        }
    }
    estimate
}
