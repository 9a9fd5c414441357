//! Common interface for value functions (kernel surrogates, quadratics).

use nalgebra::DVector;

use crate::kernels::KernelSurrogate;
use crate::lqr::QuadraticValue;
use crate::scalar::Scalar;

pub trait ValueFunction<T: Scalar>: Send + Sync {
    fn value(&self, x: &DVector<T>) -> T;
    fn gradient(&self, x: &DVector<T>) -> DVector<T>;
}

impl<T: Scalar> ValueFunction<T> for KernelSurrogate<T> {
    fn value(&self, x: &DVector<T>) -> T {
        self.eval_slice(x.as_slice())
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.grad_slice(x.as_slice())
    }
}

impl<T: Scalar> ValueFunction<T> for QuadraticValue<T> {
    fn value(&self, x: &DVector<T>) -> T {
        self.eval(x)
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.grad(x)
    }
}

impl<T: Scalar, V: ValueFunction<T> + ?Sized> ValueFunction<T> for std::sync::Arc<V> {
    fn value(&self, x: &DVector<T>) -> T {
        (**self).value(x)
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        (**self).gradient(x)
    }
}

/// Value function given by closures (used for analytic test targets).
pub struct FnValue<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<T, F, G> ValueFunction<T> for FnValue<F, G>
where
    T: Scalar,
    F: Fn(&DVector<T>) -> T + Send + Sync,
    G: Fn(&DVector<T>) -> DVector<T> + Send + Sync,
{
    fn value(&self, x: &DVector<T>) -> T {
        (self.value)(x)
    }

    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        (self.gradient)(x)
    }
}

/// `v(x) = ‖x‖²`.
#[allow(clippy::type_complexity)]
pub fn squared_norm<T: Scalar>() -> FnValue<impl Fn(&DVector<T>) -> T + Send + Sync, impl Fn(&DVector<T>) -> DVector<T> + Send + Sync> {
    FnValue {
        value: |x: &DVector<T>| x.norm_squared(),
        gradient: |x: &DVector<T>| x * T::lit(2.0),
    }
}
