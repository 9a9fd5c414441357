//! Grid-based policy iteration for infinite-horizon control-affine optimal
//! control problems `ẋ = f(x) + g(x)u`, `min ∫ h(x) + uᵀRu dt`.
//!
//! Value functions are kernel interpolants built from a Gaussian kernel
//! corrected to vanish at the origin. Each policy-evaluation step collocates
//! the Euler-discretized fixed-point equation on a grid; the improvement
//! step is `u⁺ = −½R⁻¹gᵀ∇v`. The domain-aware driver additionally shrinks
//! the computational domain to a sublevel set of the latest value function
//! so that it stays forward invariant under the updated feedback.
//!
//! All numerics are generic over [`Scalar`] (`f32`/`f64`); the aliases at
//! the crate root fix the scalar to `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domains;
pub mod error;
pub mod ghjb;
pub mod grid;
pub mod integrate;
pub mod kernels;
pub mod linalg;
pub mod lqr;
pub mod pi;
pub mod policy;
pub mod reference;
pub mod scalar;
pub mod systems;
pub mod value;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type System = systems::ControlAffineSystem<f64>;
pub type Surrogate = kernels::KernelSurrogate<f64>;
pub type Kernel = kernels::KernelSpec<f64>;
pub type FeedbackPolicy = policy::Policy<f64>;
pub type Grid = grid::Grid<f64>;
pub type BoundingBox = grid::BoundingBox<f64>;
pub type Domain = domains::SublevelDomain<f64>;
pub type Trajectory = integrate::Trajectory<f64>;
pub type PIConfig = pi::PIConfig<f64>;
pub type PIResult = pi::PIResult<f64>;
pub type Quadratic = lqr::QuadraticValue<f64>;
pub type OpenLoopSolution = reference::OpenLoopSolution<f64>;
