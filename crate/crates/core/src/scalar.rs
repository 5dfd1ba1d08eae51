//! Scalar abstraction for metric values.
//!
//! Every metric in this crate is a ratio of counts or a mean of integer
//! distances, so the only construction needed is `from_ratio`. Floating
//! types give the usual approximate values; [`crate::Rational`] gives exact
//! ones, which is what the drift and recall oracles compare against.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// `num / den`. `den` must be non-zero.
    fn from_ratio(num: u64, den: u64) -> Self;

    fn to_f64(self) -> f64;

    fn from_count(n: u64) -> Self {
        Self::from_ratio(n, 1)
    }
}

impl Scalar for f64 {
    fn from_ratio(num: u64, den: u64) -> Self {
        debug_assert!(den != 0);
        num as f64 / den as f64
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_ratio(num: u64, den: u64) -> Self {
        debug_assert!(den != 0);
        (num as f64 / den as f64) as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for Ratio<i64> {
    fn from_ratio(num: u64, den: u64) -> Self {
        let num = i64::try_from(num).expect("numerator exceeds i64");
        let den = i64::try_from(den).expect("denominator exceeds i64");
        Ratio::new(num, den)
    }

    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

/// Arithmetic mean of a non-empty slice.
pub fn mean<S: Scalar>(values: &[S]) -> Option<S> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(S::zero(), |acc, v| acc + *v);
    Some(sum / S::from_count(values.len() as u64))
}
