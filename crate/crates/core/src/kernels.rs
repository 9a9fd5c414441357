//! Gaussian kernels with the zero-at-origin correction, kernel
//! interpolants and their analytic gradients.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{solve_dense, SolveReport};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKernel {
    Gaussian,
}

/// `k_b(x,y) = exp(−‖x−y‖²/(2σ²))`, optionally corrected to
/// `k(x,y) = k_b(x,y) − k_b(x,0) − k_b(0,y) + k_b(0,0)` so that `k(0,·) ≡ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T: Scalar> {
    pub base: BaseKernel,
    pub sigma: T,
    pub zeroed_at_origin: bool,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn gaussian(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.finite() {
            return Err(Error::InvalidInput("kernel lengthscale must be positive".into()));
        }
        Ok(Self {
            base: BaseKernel::Gaussian,
            sigma,
            zeroed_at_origin: true,
        })
    }

    pub fn plain(mut self) -> Self {
        self.zeroed_at_origin = false;
        self
    }

    /// Default lengthscale: `0.5 · diameter / √n`.
    pub fn default_sigma(diameter: T, n: usize) -> T {
        T::lit(0.5) * diameter / T::from_usize_lossy(n.max(1)).sqrt()
    }

    pub fn name(&self) -> &'static str {
        match (self.base, self.zeroed_at_origin) {
            (BaseKernel::Gaussian, true) => "gaussian_zeroed",
            (BaseKernel::Gaussian, false) => "gaussian",
        }
    }

    #[inline]
    fn inv_two_sigma_sq(&self) -> T {
        T::one() / (T::lit(2.0) * self.sigma * self.sigma)
    }

    #[inline]
    fn base_from_sq(&self, sq: T) -> T {
        (-sq * self.inv_two_sigma_sq()).exp()
    }

    /// Kernel value on raw slices (no dimension check).
    #[inline]
    pub fn eval_slices(&self, x: &[T], y: &[T]) -> T {
        let kxy = self.base_from_sq(sq_dist(x, y));
        if self.zeroed_at_origin {
            (kxy + T::one()) - (self.base_from_sq(sq_norm(x)) + self.base_from_sq(sq_norm(y)))
        } else {
            kxy
        }
    }

    /// `k(x, y) − k(x + δ, y)` without the cancellation of the naive
    /// difference when `δ` is small.
    pub fn shift_difference(&self, x: &[T], delta: &[T], y: &[T]) -> T {
        let c = self.inv_two_sigma_sq();
        // k_b(x, y) − k_b(x + δ, y) = −k_b(x, y)·expm1(−(‖x+δ−y‖² − ‖x−y‖²)·c)
        let base = |y: Option<&[T]>| {
            let (sq, growth) = x.iter().zip(delta).enumerate().fold((T::zero(), T::zero()), |(sq, g), (i, (a, d))| {
                let r = match y {
                    Some(y) => *a - y[i],
                    None => *a,
                };
                (sq + r * r, g + *d * (r + r + *d))
            });
            -self.base_from_sq(sq) * (-growth * c).exp_m1()
        };
        if self.zeroed_at_origin {
            base(Some(y)) - base(None)
        } else {
            base(Some(y))
        }
    }
}

#[inline]
fn sq_dist<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |s, (a, b)| {
        let d = *a - *b;
        s + d * d
    })
}

#[inline]
fn sq_norm<T: Scalar>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |s, a| s + *a * *a)
}

pub fn kernel_eval<T: Scalar>(spec: &KernelSpec<T>, x: &DVector<T>, y: &DVector<T>) -> Result<T> {
    check_dim("kernel_eval", x.len(), y.len())?;
    Ok(spec.eval_slices(x.as_slice(), y.as_slice()))
}

/// Gradient of `k(x, ·)` at `y`.
pub fn kernel_grad2<T: Scalar>(spec: &KernelSpec<T>, x: &DVector<T>, y: &DVector<T>) -> Result<DVector<T>> {
    check_dim("kernel_grad2", x.len(), y.len())?;
    let s2 = spec.sigma * spec.sigma;
    let kxy = spec.base_from_sq(sq_dist(x.as_slice(), y.as_slice()));
    let mut g = (x - y) * (kxy / s2);
    if spec.zeroed_at_origin {
        // −∇_y k_b(0, y) = k_b(0,y)·y/σ²
        let k0y = spec.base_from_sq(sq_norm(y.as_slice()));
        g += y * (k0y / s2);
    }
    Ok(g)
}

/// Gram matrix `(K)ᵢⱼ = k(xᵢ, xⱼ)`.
pub fn gram_matrix<T: Scalar>(spec: &KernelSpec<T>, points: &[DVector<T>]) -> DMatrix<T> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| spec.eval_slices(points[i].as_slice(), points[j].as_slice()))
}

/// `I(x) = Σᵢ αᵢ k(xᵢ, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSurrogate<T: Scalar> {
    spec: KernelSpec<T>,
    state_dim: usize,
    // row-major n × state_dim
    centers: Vec<T>,
    coefficients: DVector<T>,
    // k_b(xᵢ, 0) per center, and Σ αᵢ; cached for the zeroed kernel
    center_offsets: Vec<T>,
    coefficient_sum: T,
}

impl<T: Scalar> KernelSurrogate<T> {
    pub fn new(spec: KernelSpec<T>, centers: &[DVector<T>], coefficients: DVector<T>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidInput("surrogate needs at least one center".into()));
        }
        check_dim("surrogate coefficients", centers.len(), coefficients.len())?;
        let state_dim = centers[0].len();
        let mut flat = Vec::with_capacity(centers.len() * state_dim);
        for c in centers {
            check_dim("surrogate center", state_dim, c.len())?;
            if c.iter().all(|v| *v == T::zero()) {
                return Err(Error::InvalidInput("surrogate centers must exclude the origin".into()));
            }
            flat.extend_from_slice(c.as_slice());
        }
        Ok(Self::from_flat(spec, state_dim, flat, coefficients))
    }

    fn from_flat(spec: KernelSpec<T>, state_dim: usize, centers: Vec<T>, coefficients: DVector<T>) -> Self {
        let center_offsets = centers
            .chunks(state_dim)
            .map(|c| spec.base_from_sq(sq_norm(c)))
            .collect();
        let coefficient_sum = coefficients.sum();
        Self {
            spec,
            state_dim,
            centers,
            coefficients,
            center_offsets,
            coefficient_sum,
        }
    }

    /// Interpolates `values` at `centers` (solves the Gram system).
    pub fn fit(spec: KernelSpec<T>, centers: &[DVector<T>], values: &DVector<T>) -> Result<(Self, SolveReport)> {
        let gram = gram_matrix(&spec, centers);
        let (alpha, report) = solve_dense(&gram, values)?;
        Ok((Self::new(spec, centers, alpha)?, report))
    }

    pub fn zero(spec: KernelSpec<T>, centers: &[DVector<T>]) -> Result<Self> {
        Self::new(spec, centers, DVector::zeros(centers.len()))
    }

    pub fn spec(&self) -> &KernelSpec<T> {
        &self.spec
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn coefficients(&self) -> &DVector<T> {
        &self.coefficients
    }

    pub fn center(&self, i: usize) -> &[T] {
        &self.centers[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn centers(&self) -> Vec<DVector<T>> {
        self.centers
            .chunks(self.state_dim)
            .map(DVector::from_column_slice)
            .collect()
    }

    /// Same centers, coefficients scaled by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self::from_flat(self.spec, self.state_dim, self.centers.clone(), &self.coefficients * factor)
    }

    pub fn eval(&self, x: &DVector<T>) -> Result<T> {
        check_dim("interp_eval", self.state_dim, x.len())?;
        Ok(self.eval_slice(x.as_slice()))
    }

    /// Value at a raw point. Panics on dimension mismatch only in debug builds.
    pub fn eval_slice(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.state_dim);
        let w = self.spec.inv_two_sigma_sq();
        let mut acc = T::zero();
        for (i, c) in self.centers.chunks(self.state_dim).enumerate() {
            let kxy = (-sq_dist(c, x) * w).exp();
            let term = if self.spec.zeroed_at_origin {
                kxy - self.center_offsets[i]
            } else {
                kxy
            };
            acc += self.coefficients[i] * term;
        }
        if self.spec.zeroed_at_origin {
            // (k_b(0,0) − k_b(0,x)) Σαᵢ; exactly zero at x = 0
            acc += self.coefficient_sum * (T::one() - (-sq_norm(x) * w).exp());
        }
        acc
    }

    /// `∇I(x) = Σᵢ αᵢ ∇₂k(xᵢ, x)`.
    pub fn grad(&self, x: &DVector<T>) -> Result<DVector<T>> {
        check_dim("interp_grad", self.state_dim, x.len())?;
        Ok(self.grad_slice(x.as_slice()))
    }

    pub fn grad_slice(&self, x: &[T]) -> DVector<T> {
        let n = self.state_dim;
        let w = self.spec.inv_two_sigma_sq();
        let s2 = self.spec.sigma * self.spec.sigma;
        let mut g = vec![T::zero(); n];
        for (i, c) in self.centers.chunks(n).enumerate() {
            let kxy = (-sq_dist(c, x) * w).exp() * self.coefficients[i];
            for d in 0..n {
                g[d] += kxy * (c[d] - x[d]);
            }
        }
        if self.spec.zeroed_at_origin {
            let k0 = (-sq_norm(x) * w).exp() * self.coefficient_sum;
            for d in 0..n {
                g[d] += k0 * x[d];
            }
        }
        DVector::from_vec(g) / s2
    }

    /// Text dump: header lines then one `coords… coefficient` row per center.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "kernel {}", self.spec.name());
        let _ = writeln!(out, "sigma {:.17e}", self.spec.sigma.as_f64());
        let _ = writeln!(out, "state_dim {}", self.state_dim);
        let _ = writeln!(out, "centers {}", self.len());
        for i in 0..self.len() {
            for v in self.center(i) {
                let _ = write!(out, "{:.17e} ", v.as_f64());
            }
            let _ = writeln!(out, "{:.17e}", self.coefficients[i].as_f64());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing `{key}` header")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::Parse(format!("expected `{key}` header, got `{line}`")));
            }
            parts
                .next()
                .map(str::to_string)
                .ok_or_else(|| Error::Parse(format!("`{key}` header has no value")))
        };
        let kernel = header("kernel")?;
        let sigma: f64 = header("sigma")?
            .parse()
            .map_err(|e| Error::Parse(format!("sigma: {e}")))?;
        let state_dim: usize = header("state_dim")?
            .parse()
            .map_err(|e| Error::Parse(format!("state_dim: {e}")))?;
        let n: usize = header("centers")?
            .parse()
            .map_err(|e| Error::Parse(format!("centers: {e}")))?;
        let mut spec = KernelSpec::gaussian(T::lit(sigma))?;
        match kernel.as_str() {
            "gaussian_zeroed" => {}
            "gaussian" => spec = spec.plain(),
            other => return Err(Error::Parse(format!("unknown kernel `{other}`"))),
        }
        let mut centers = Vec::with_capacity(n);
        let mut coefs = Vec::with_capacity(n);
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
            if vals.len() != state_dim + 1 {
                return Err(Error::Parse(format!(
                    "row {row}: expected {} columns, got {}",
                    state_dim + 1,
                    vals.len()
                )));
            }
            centers.push(DVector::from_iterator(state_dim, vals[..state_dim].iter().map(|v| T::lit(*v))));
            coefs.push(T::lit(vals[state_dim]));
        }
        if centers.len() != n {
            return Err(Error::Parse(format!("expected {n} centers, found {}", centers.len())));
        }
        Self::new(spec, &centers, DVector::from_vec(coefs))
    }
}
