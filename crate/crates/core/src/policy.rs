//! Feedback laws `u(x)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::kernels::KernelSurrogate;
use crate::scalar::Scalar;
use crate::systems::ControlAffineSystem;

#[derive(Clone)]
pub enum Policy<T: Scalar> {
    /// `u ≡ 0`.
    Zero { control_dim: usize },
    /// `u(x) = −Kx`.
    LinearGain { gain: DMatrix<T> },
    /// `u(x) = −R⁻¹g(x)ᵀPx` for a quadratic value `xᵀPx`.
    Quadratic {
        system: ControlAffineSystem<T>,
        p: DMatrix<T>,
    },
    /// `u(x) = −½R⁻¹g(x)ᵀ∇I(x)`.
    SurrogateFeedback {
        system: ControlAffineSystem<T>,
        surrogate: Arc<KernelSurrogate<T>>,
    },
}

impl<T: Scalar> fmt::Debug for Policy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Policy({})", self.describe())
    }
}

impl<T: Scalar> Policy<T> {
    pub fn zero(control_dim: usize) -> Self {
        Policy::Zero { control_dim }
    }

    pub fn linear_gain(gain: DMatrix<T>) -> Self {
        Policy::LinearGain { gain }
    }

    pub fn surrogate_feedback(system: ControlAffineSystem<T>, surrogate: KernelSurrogate<T>) -> Self {
        Policy::SurrogateFeedback {
            system,
            surrogate: Arc::new(surrogate),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Policy::Zero { control_dim } => *control_dim,
            Policy::LinearGain { gain } => gain.nrows(),
            Policy::Quadratic { system, .. } | Policy::SurrogateFeedback { system, .. } => system.control_dim(),
        }
    }

    /// Short label for logs.
    pub fn describe(&self) -> String {
        match self {
            Policy::Zero { .. } => "zero".into(),
            Policy::LinearGain { gain } => format!(
                "linear_gain[{}]",
                gain.iter().map(|v| format!("{:.6}", v.as_f64())).collect::<Vec<_>>().join(",")
            ),
            Policy::Quadratic { .. } => "riccati_feedback".into(),
            Policy::SurrogateFeedback { surrogate, .. } => format!("surrogate_feedback(n={})", surrogate.len()),
        }
    }

    pub fn eval(&self, x: &DVector<T>) -> Result<DVector<T>> {
        match self {
            Policy::LinearGain { gain } => check_dim("eval_policy", gain.ncols(), x.len())?,
            Policy::Quadratic { system, .. } | Policy::SurrogateFeedback { system, .. } => {
                check_dim("eval_policy", system.state_dim(), x.len())?
            }
            Policy::Zero { .. } => {}
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &DVector<T>) -> DVector<T> {
        match self {
            Policy::Zero { control_dim } => DVector::zeros(*control_dim),
            Policy::LinearGain { gain } => -(gain * x),
            Policy::Quadratic { system, p } => {
                let g = system.input_map(x);
                -(system.control_weight_inv() * (g.transpose() * (p * x)))
            }
            Policy::SurrogateFeedback { system, surrogate } => {
                let grad = surrogate.grad_slice(x.as_slice());
                let g = system.input_map(x);
                (system.control_weight_inv() * (g.transpose() * grad)) * T::lit(-0.5)
            }
        }
    }

    /// Surrogate behind a feedback policy, if any.
    pub fn surrogate(&self) -> Option<&KernelSurrogate<T>> {
        match self {
            Policy::SurrogateFeedback { surrogate, .. } => Some(surrogate),
            _ => None,
        }
    }
}

/// Evaluates `p` at `x`.
pub fn eval_policy<T: Scalar>(p: &Policy<T>, x: &DVector<T>) -> Result<DVector<T>> {
    p.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::systems::registry_get;

    #[test]
    fn linear_gain_policy() {
        let p = Policy::linear_gain(DMatrix::from_element(1, 1, 2.0));
        assert_eq!(p.eval(&DVector::from_element(1, 1.0)).unwrap()[0], -2.0);
        assert_eq!(p.eval(&DVector::from_element(1, 0.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn zero_surrogate_gives_zero_control() {
        let sys = registry_get::<f64>("lqr1d").unwrap();
        let s = KernelSurrogate::zero(KernelSpec::gaussian(1.0).unwrap(), &[DVector::from_element(1, 0.5)]).unwrap();
        let p = Policy::surrogate_feedback(sys, s);
        for x in [-1.0, 0.0, 0.3, 2.0] {
            assert_eq!(p.eval(&DVector::from_element(1, x)).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn quadratic_policy_at_origin() {
        let sys = registry_get::<f64>("lqr1d").unwrap();
        let p = Policy::Quadratic {
            system: sys,
            p: DMatrix::from_element(1, 1, 1.0 + 2f64.sqrt()),
        };
        assert_eq!(p.eval(&DVector::from_element(1, 0.0)).unwrap()[0], 0.0);
        assert!((p.eval(&DVector::from_element(1, 1.0)).unwrap()[0] + 1.0 + 2f64.sqrt()).abs() < 1e-14);
    }
}
