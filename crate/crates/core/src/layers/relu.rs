use crate::error::Result;
use crate::tensor::{Real, Tensor4};

pub fn relu_forward<T: Real>(input: &Tensor4<T>) -> Tensor4<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks `upstream` wherever `input <= 0`; the derivative at exactly 0 is 0.
pub fn relu_backward<T: Real>(input: &Tensor4<T>, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    input.zip_with(upstream, |x, g| if x > T::zero() { g } else { T::zero() })
}
