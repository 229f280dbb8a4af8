use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Mean squared error over every element, and its gradient `2(pred − target)/count`.
pub fn mse_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(
            "mse_loss",
            format!("pred {} vs target {}", pred.dims(), target.dims()),
        ));
    }
    let count = pred.len();
    if count == 0 {
        return Err(Error::config("mse_loss over an empty tensor"));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let e = p.as_f64() - t.as_f64();
            e * e
        })
        .sum();
    let scale = T::from_f64(2.0 / count as f64);
    let grad = pred.zip_with(target, |p, t| scale * (p - t))?;
    Ok((sum / count as f64, grad))
}
