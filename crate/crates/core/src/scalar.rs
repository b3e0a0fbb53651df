use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar the numerical kernels are written against.
///
/// Expression evaluation, the Runge-Kutta integrator and the curve fitter are
/// generic over this trait; the stochastic engines work in `f64` throughout.
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    /// Converts an `f64` literal. Panics only if the target cannot represent
    /// finite `f64` values, which no `Float` implementor in practice does.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
