//! Policy evaluation by kernel collocation of the Euler-discretized
//! fixed-point equation, policy improvement, and continuous GHJB/HJB
//! residual diagnostics.
//!
//! With `xᵢ⁺ = xᵢ + Δt(f(xᵢ) + g(xᵢ)u(xᵢ))`, the interpolation conditions
//! `I(xᵢ) − I(xᵢ⁺) = Δt·(h(xᵢ) + uᵢᵀRuᵢ)` for `I = Σⱼ αⱼ k(xⱼ, ·)` form the
//! system `(K_G − K_G⁺)α = rhs` where `(K_G⁺)ᵢⱼ = k(xᵢ⁺, xⱼ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::kernels::{KernelSpec, KernelSurrogate};
use crate::linalg::{solve_dense, SolveReport};
use crate::policy::Policy;
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;
use crate::value::ValueFunction;

#[derive(Debug, Clone)]
pub struct Collocation<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub rhs: DVector<T>,
}

/// Builds `K_G − K_G⁺` and `Δt·(h(xᵢ) + uᵢᵀRuᵢ)`.
pub fn assemble<T: Scalar>(
    grid: &Grid<T>,
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    dt: T,
    spec: &KernelSpec<T>,
    parallel: bool,
) -> Result<Collocation<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidInput("dt must be positive".into()));
    }
    check_dim("assemble grid", sys.state_dim(), grid.dim())?;
    check_dim("assemble policy", sys.control_dim(), policy.control_dim())?;
    let pts = grid.points();
    let n = pts.len();
    let mut shifts = Vec::with_capacity(n);
    let mut rhs = DVector::zeros(n);
    for (i, x) in pts.iter().enumerate() {
        let u = policy.eval_unchecked(x);
        let xp = x + sys.rhs_unchecked(x, &u) * dt;
        if xp.iter().any(|v| !v.finite()) {
            return Err(Error::ShiftDivergence { index: i });
        }
        rhs[i] = dt * sys.cost_unchecked(x, &u);
        shifts.push(xp - x);
    }
    let row = |i: usize| -> Vec<T> {
        (0..n)
            .map(|j| spec.shift_difference(pts[i].as_slice(), shifts[i].as_slice(), pts[j].as_slice()))
            .collect()
    };
    let rows: Vec<Vec<T>> = if parallel {
        (0..n).into_par_iter().map(row).collect()
    } else {
        (0..n).map(row).collect()
    };
    let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Ok(Collocation { matrix, rhs })
}

#[derive(Debug, Clone)]
pub struct Evaluation<T: Scalar> {
    pub surrogate: KernelSurrogate<T>,
    pub report: SolveReport,
}

/// Solves the collocation system for the value of `policy`.
pub fn policy_evaluation<T: Scalar>(
    grid: &Grid<T>,
    sys: &ControlAffineSystem<T>,
    policy: &Policy<T>,
    dt: T,
    spec: &KernelSpec<T>,
    parallel: bool,
) -> Result<Evaluation<T>> {
    let col = assemble(grid, sys, policy, dt, spec, parallel)?;
    // row equilibration: each equation scaled by its largest entry
    let mut scaled = col.matrix.clone();
    let mut rhs = col.rhs.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        let m = row.amax();
        if m > T::zero() {
            row /= m;
            rhs[i] /= m;
        }
    }
    let (alpha, mut report) = solve_dense(&scaled, &rhs)?;
    report.residual = (&col.matrix * &alpha - &col.rhs).amax().as_f64();
    let surrogate = KernelSurrogate::new(*spec, grid.points(), alpha)?;
    Ok(Evaluation { surrogate, report })
}

/// `u⁺(x) = −½R⁻¹g(x)ᵀ∇I(x)`.
pub fn policy_improvement<T: Scalar>(sys: &ControlAffineSystem<T>, s: &KernelSurrogate<T>) -> Result<Policy<T>> {
    check_dim("policy_improvement", sys.state_dim(), s.state_dim())?;
    Ok(Policy::surrogate_feedback(sys.clone(), s.clone()))
}

/// `⟨f + gu, ∇v⟩ + h + uᵀRu` at `x`.
pub fn ghjb_residual<T: Scalar, V: ValueFunction<T> + ?Sized>(
    sys: &ControlAffineSystem<T>,
    v: &V,
    policy: &Policy<T>,
    x: &DVector<T>,
) -> Result<T> {
    check_dim("ghjb_residual", sys.state_dim(), x.len())?;
    let u = policy.eval(x)?;
    let field = sys.rhs_unchecked(x, &u);
    Ok(field.dot(&v.gradient(x)) + sys.cost_unchecked(x, &u))
}

/// `⟨f, ∇v⟩ − ¼∇vᵀgR⁻¹gᵀ∇v + h` at `x`.
pub fn hjb_residual<T: Scalar, V: ValueFunction<T> + ?Sized>(
    sys: &ControlAffineSystem<T>,
    v: &V,
    x: &DVector<T>,
) -> Result<T> {
    check_dim("hjb_residual", sys.state_dim(), x.len())?;
    let grad = v.gradient(x);
    let gt_grad = sys.input_map(x).transpose() * &grad;
    let quad = gt_grad.dot(&(sys.control_weight_inv() * &gt_grad));
    Ok(sys.drift(x).dot(&grad) - quad * T::lit(0.25) + sys.state_cost(x))
}

/// Max `|GHJB residual|` over the grid points.
pub fn max_ghjb_residual<T: Scalar, V: ValueFunction<T> + ?Sized>(
    sys: &ControlAffineSystem<T>,
    v: &V,
    policy: &Policy<T>,
    grid: &Grid<T>,
) -> Result<T> {
    let mut worst = T::zero();
    for x in grid.points() {
        let r = ghjb_residual(sys, v, policy, x)?.magnitude();
        if r > worst {
            worst = r;
        }
    }
    Ok(worst)
}
