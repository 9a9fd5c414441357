//! Axis-aligned boxes and collocation grids.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox<T: Scalar> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidInput("box needs lower < upper in every coordinate".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `[-a₁, a₁] × … × [-a_N, a_N]`.
    pub fn symmetric(half_widths: &[T]) -> Self {
        let upper = DVector::from_column_slice(half_widths);
        Self {
            lower: -upper.clone(),
            upper,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    /// Open-box membership (strict inequalities).
    pub fn contains_strict(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim()
            && x.iter()
                .enumerate()
                .all(|(i, v)| *v > self.lower[i] && *v < self.upper[i])
    }

    /// Box scaled about the origin by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            lower: &self.lower * factor,
            upper: &self.upper * factor,
        }
    }

    pub fn diameter(&self) -> T {
        (&self.upper - &self.lower).norm()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<T> {
        crate::systems::uniform_in(&self.lower, &self.upper, rng)
    }

    /// Deterministic samples of the box surface, spread evenly over the
    /// `2N` faces (a regular lattice on each face).
    pub fn boundary_samples(&self, n_samples: usize) -> Vec<DVector<T>> {
        let n = self.dim();
        let per_face = (n_samples / (2 * n)).max(1);
        let mut out = Vec::new();
        if n == 1 {
            out.push(self.lower.clone());
            out.push(self.upper.clone());
            return out;
        }
        let side = (per_face as f64).powf(1.0 / (n - 1) as f64).ceil().max(1.0) as usize;
        let lattice = lattice_fractions(side, n - 1);
        for axis in 0..n {
            for fixed in [self.lower[axis], self.upper[axis]] {
                for frac in &lattice {
                    let mut p = DVector::zeros(n);
                    let mut k = 0;
                    for d in 0..n {
                        if d == axis {
                            p[d] = fixed;
                        } else {
                            p[d] = self.lower[d] + (self.upper[d] - self.lower[d]) * frac[k];
                            k += 1;
                        }
                    }
                    out.push(p);
                }
            }
        }
        out
    }
}

// Cell-centred fractions in (0,1) for a `side^dims` lattice.
fn lattice_fractions<T: Scalar>(side: usize, dims: usize) -> Vec<Vec<T>> {
    let total = side.pow(dims as u32);
    (0..total)
        .map(|mut idx| {
            (0..dims)
                .map(|_| {
                    let i = idx % side;
                    idx /= side;
                    (T::from_usize_lossy(i) + T::lit(0.5)) / T::from_usize_lossy(side)
                })
                .collect()
        })
        .collect()
}

/// Rectangular grid parameters: half widths and points per side.
#[derive(Debug, Clone, PartialEq)]
pub struct RectSpec<T: Scalar> {
    pub half_widths: Vec<T>,
    pub n_side: usize,
}

/// Collocation points (origin excluded) inside a bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T: Scalar> {
    points: Vec<DVector<T>>,
    bounding_box: BoundingBox<T>,
    spec: Option<RectSpec<T>>,
}

impl<T: Scalar> Grid<T> {
    /// Validates: nonempty, no origin, inside box, pairwise distinct.
    pub fn from_points(points: Vec<DVector<T>>, bounding_box: BoundingBox<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("grid must contain at least one point".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != bounding_box.dim() {
                return Err(Error::Dimension {
                    context: "grid point",
                    expected: bounding_box.dim(),
                    got: p.len(),
                });
            }
            if p.iter().all(|v| *v == T::zero()) {
                return Err(Error::InvalidInput(format!("grid point {i} is the origin")));
            }
            if !bounding_box.contains(p) {
                return Err(Error::InvalidInput(format!("grid point {i} lies outside the bounding box")));
            }
        }
        let mut keys: Vec<Vec<u64>> = points
            .iter()
            .map(|p| p.iter().map(|v| v.as_f64().to_bits()).collect())
            .collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("grid points must be pairwise distinct".into()));
        }
        Ok(Self {
            points,
            bounding_box,
            spec: None,
        })
    }

    /// Tensor grid `G_{a,b,n}`: coordinate `d` takes the values
    /// `-a_d + 2a_d (i-1)/(n-1)`, `i = 1..n`. The origin is dropped when
    /// `n` is odd.
    pub fn rectangular(half_widths: &[T], n_side: usize) -> Result<Self> {
        if n_side < 2 {
            return Err(Error::InvalidInput("rectangular grid needs n >= 2 points per side".into()));
        }
        if half_widths.iter().any(|a| !(*a > T::zero())) {
            return Err(Error::InvalidInput("half widths must be positive".into()));
        }
        let dims = half_widths.len();
        let denom = T::from_usize_lossy(n_side - 1);
        let two = T::lit(2.0);
        let mut points = Vec::with_capacity(n_side.pow(dims as u32));
        let mut idx = vec![0usize; dims];
        loop {
            let p = DVector::from_fn(dims, |d, _| {
                let a = half_widths[d];
                -a + two * a * T::from_usize_lossy(idx[d]) / denom
            });
            // odd n: the middle index lands on 0 up to rounding
            let is_origin = idx
                .iter()
                .all(|&i| n_side % 2 == 1 && i == n_side / 2);
            if !is_origin {
                let mut p = p;
                for (d, &i) in idx.iter().enumerate() {
                    if n_side % 2 == 1 && i == n_side / 2 {
                        p[d] = T::zero();
                    }
                }
                points.push(p);
            }
            // row-major: first coordinate outermost
            let mut d = dims;
            loop {
                if d == 0 {
                    let bbox = BoundingBox::symmetric(half_widths);
                    return Ok(Self {
                        points,
                        bounding_box: bbox,
                        spec: Some(RectSpec {
                            half_widths: half_widths.to_vec(),
                            n_side,
                        }),
                    });
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < n_side {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    pub fn points(&self) -> &[DVector<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounding_box.dim()
    }

    pub fn bounding_box(&self) -> &BoundingBox<T> {
        &self.bounding_box
    }

    pub fn spec(&self) -> Option<&RectSpec<T>> {
        self.spec.as_ref()
    }

    /// Keeps the points satisfying `keep`, preserving order. The rectangular
    /// spec is dropped since the result is no longer a full tensor grid.
    pub fn filter(&self, mut keep: impl FnMut(&DVector<T>) -> bool) -> Option<Self> {
        let points: Vec<_> = self.points.iter().filter(|p| keep(p)).cloned().collect();
        if points.is_empty() {
            None
        } else {
            Some(Self {
                points,
                bounding_box: self.bounding_box.clone(),
                spec: None,
            })
        }
    }
}
