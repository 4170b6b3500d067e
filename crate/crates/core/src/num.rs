//! Scalar abstraction shared by the geometry, metric, scoring and head code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the toolkit computes in: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every literal used by the crate is representable in `f32`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Index of the first maximal element, `None` for an empty slice or a NaN entry.
pub fn argmax<T: Real>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            return None;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// `ln Σ exp(x_i)` with the max-shift, so large inputs do not overflow.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(values: &[T]) -> Vec<T> {
    let lse = log_sum_exp(values);
    values.iter().map(|&v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
        assert_eq!(argmax(&[1.0, f64::NAN]), None);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0f64, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v32 = log_sum_exp(&[80.0f32, 80.0]);
        assert!((v32 - (80.0 + 2f32.ln())).abs() < 1e-4);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[0.3f64, -2.0, 5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
