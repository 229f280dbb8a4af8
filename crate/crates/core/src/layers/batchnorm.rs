//! Per-channel batch normalization over `(n, h, w)`.

use rayon::prelude::*;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Running statistics plus the constants that govern them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Real> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    /// Weight of the newest batch in the exponential moving average.
    pub momentum: f64,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// Values saved by a Train-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T: Real> {
    pub xhat: Tensor4<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T: Real> {
    pub input: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

fn check_params<T: Real>(input: &Tensor4<T>, gamma: &[T], beta: &[T], channels: usize) -> Result<()> {
    let c = input.dims().c;
    if gamma.len() != c || beta.len() != c || channels != c {
        return Err(Error::config(format!(
            "batchnorm over {c} channels given gamma {}, beta {}, state {}",
            gamma.len(),
            beta.len(),
            channels
        )));
    }
    Ok(())
}

/// Visits the `n` contiguous planes that make up channel `c`.
fn channel_planes<T: Real>(t: &Tensor4<T>, c: usize) -> impl Iterator<Item = &[T]> {
    let d = t.dims();
    let plane = d.plane_len();
    (0..d.n).map(move |n| {
        let start = t.index(n, c, 0, 0);
        &t.data()[start..start + plane]
    })
}

fn affine_into<T: Real>(
    out: &mut Tensor4<T>,
    src: &Tensor4<T>,
    scale: &[f64],
    shift: &[f64],
) {
    let d = src.dims();
    let plane = d.plane_len();
    out.data_mut()
        .par_chunks_mut(plane)
        .zip(src.data().par_chunks(plane))
        .enumerate()
        .for_each(|(i, (o, s))| {
            let c = i % d.c;
            let (a, b) = (T::from_f64(scale[c]), T::from_f64(shift[c]));
            for (o, &s) in o.iter_mut().zip(s) {
                *o = a * s + b;
            }
        });
}

/// Train-mode forward: normalizes by batch statistics and folds them into
/// the running averages. Returns the output and the backward cache.
pub fn batchnorm_forward_train<T: Real>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    state: &mut BatchNormState<T>,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    bn_relu_forward_train(input, gamma, beta, state, false)
}

/// [`batchnorm_forward_train`] with an optional ReLU folded into the output pass.
pub(crate) fn bn_relu_forward_train<T: Real>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    state: &mut BatchNormState<T>,
    relu: bool,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    check_params(input, gamma, beta, state.channels())?;
    let d = input.dims();
    let count = d.n * d.plane_len();
    if count < 2 {
        return Err(Error::config(format!(
            "batchnorm in Train mode needs at least 2 values per channel, got {count} (dims {d})"
        )));
    }
    let m = count as f64;
    let stats: Vec<(f64, f64)> = (0..d.c)
        .into_par_iter()
        .map(|c| {
            let sum: f64 = channel_planes(input, c)
                .flat_map(|p| p.iter())
                .map(|v| v.as_f64())
                .sum();
            let mean = sum / m;
            let ss: f64 = channel_planes(input, c)
                .flat_map(|p| p.iter())
                .map(|v| {
                    let e = v.as_f64() - mean;
                    e * e
                })
                .sum();
            (mean, ss / m)
        })
        .collect();

    let inv_std: Vec<f64> = stats.iter().map(|&(_, var)| 1.0 / (var + state.epsilon).sqrt()).collect();
    let shift: Vec<f64> = stats.iter().zip(&inv_std).map(|(&(mean, _), &is)| -mean * is).collect();
    let mut xhat = Tensor4::zeros(d);
    let mut out = Tensor4::zeros(d);
    let plane = d.plane_len();
    xhat.data_mut()
        .par_chunks_mut(plane)
        .zip(out.data_mut().par_chunks_mut(plane))
        .zip(input.data().par_chunks(plane))
        .enumerate()
        .for_each(|(i, ((xh, o), s))| {
            let c = i % d.c;
            let (a, b) = (T::from_f64(inv_std[c]), T::from_f64(shift[c]));
            let (g, be) = (gamma[c], beta[c]);
            for ((xh, o), &s) in xh.iter_mut().zip(o.iter_mut()).zip(s) {
                *xh = a * s + b;
                let t = g * *xh + be;
                *o = if relu && t <= T::zero() { T::zero() } else { t };
            }
        });

    let mom = state.momentum;
    for (c, &(mean, var)) in stats.iter().enumerate() {
        let unbiased = var * m / (m - 1.0);
        state.running_mean[c] = T::from_f64((1.0 - mom) * state.running_mean[c].as_f64() + mom * mean);
        state.running_var[c] = T::from_f64((1.0 - mom) * state.running_var[c].as_f64() + mom * unbiased);
    }

    let cache = BnCache {
        xhat,
        inv_std: inv_std.into_iter().map(T::from_f64).collect(),
    };
    Ok((out, cache))
}

/// Inference-mode forward using the running statistics only.
pub fn batchnorm_forward_inference<T: Real>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    state: &BatchNormState<T>,
) -> Result<Tensor4<T>> {
    check_params(input, gamma, beta, state.channels())?;
    let (scale, shift): (Vec<f64>, Vec<f64>) = (0..state.channels())
        .map(|c| {
            let is = 1.0 / (state.running_var[c].as_f64() + state.epsilon).sqrt();
            let a = gamma[c].as_f64() * is;
            (a, beta[c].as_f64() - a * state.running_mean[c].as_f64())
        })
        .unzip();
    let mut out = Tensor4::zeros(input.dims());
    affine_into(&mut out, input, &scale, &shift);
    Ok(out)
}

/// Mode-dispatching forward. Running statistics are only touched in Train mode.
pub fn batchnorm_forward<T: Real>(
    input: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor4<T>> {
    match mode {
        Mode::Train => batchnorm_forward_train(input, gamma, beta, state).map(|(y, _)| y),
        Mode::Inference => batchnorm_forward_inference(input, gamma, beta, state),
    }
}

/// Backward through Train-mode normalization, with the batch mean and
/// variance treated as functions of the input.
pub fn batchnorm_backward<T: Real>(
    upstream: &Tensor4<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<BnGrads<T>> {
    bn_relu_backward(upstream, cache, gamma, None)
}

/// [`batchnorm_backward`] through a trailing ReLU when `beta` is given:
/// `upstream` is masked wherever `γ·x̂ + β ≤ 0`.
pub(crate) fn bn_relu_backward<T: Real>(
    upstream: &Tensor4<T>,
    cache: &BnCache<T>,
    gamma: &[T],
    beta: Option<&[T]>,
) -> Result<BnGrads<T>> {
    let d = cache.xhat.dims();
    if upstream.dims() != d {
        return Err(Error::shape(
            "batchnorm_backward",
            format!("upstream {} vs cached {d}", upstream.dims()),
        ));
    }
    if gamma.len() != d.c || cache.inv_std.len() != d.c || beta.is_some_and(|b| b.len() != d.c) {
        return Err(Error::config(format!(
            "batchnorm_backward over {} channels given gamma {}",
            d.c,
            gamma.len()
        )));
    }
    let m = (d.n * d.plane_len()) as f64;
    let masked = |c: usize, g: T, x: T| match beta {
        Some(b) if gamma[c] * x + b[c] <= T::zero() => T::zero(),
        _ => g,
    };
    let sums: Vec<(f64, f64)> = (0..d.c)
        .into_par_iter()
        .map(|c| {
            channel_planes(upstream, c)
                .zip(channel_planes(&cache.xhat, c))
                .flat_map(|(g, x)| g.iter().zip(x))
                .fold((0.0, 0.0), |(s, sx), (&g, &x)| {
                    let g = masked(c, g, x).as_f64();
                    (s + g, sx + g * x.as_f64())
                })
        })
        .collect();

    let plane = d.plane_len();
    let mut grad_input = Tensor4::zeros(d);
    grad_input
        .data_mut()
        .par_chunks_mut(plane)
        .zip(upstream.data().par_chunks(plane))
        .zip(cache.xhat.data().par_chunks(plane))
        .enumerate()
        .for_each(|(i, ((dx, dy), xh))| {
            let c = i % d.c;
            let (sum, sum_x) = sums[c];
            let k = gamma[c].as_f64() * cache.inv_std[c].as_f64() / m;
            for ((dx, &dy), &xh) in dx.iter_mut().zip(dy).zip(xh) {
                let dy = masked(c, dy, xh);
                *dx = T::from_f64(k * (m * dy.as_f64() - sum - xh.as_f64() * sum_x));
            }
        });

    Ok(BnGrads {
        input: grad_input,
        gamma: sums.iter().map(|&(_, sx)| T::from_f64(sx)).collect(),
        beta: sums.iter().map(|&(s, _)| T::from_f64(s)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn constant_channel_normalizes_to_beta() {
        let x = Tensor4::<f64>::from_fn(Dims::new(2, 2, 3, 3), |n, c, y, _| {
            if c == 0 { 3.0 } else { (n + y) as f64 }
        });
        let mut st = BatchNormState::new(2);
        let y = batchnorm_forward(&x, &[1.0, 1.0], &[0.0, 0.0], &mut st, Mode::Train).unwrap();
        for v in channel_planes(&y, 0).flatten() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn single_value_channel_is_rejected_in_train_mode() {
        let x = Tensor4::<f64>::filled(Dims::new(1, 1, 1, 1), 1.0);
        let mut st = BatchNormState::new(1);
        assert!(batchnorm_forward(&x, &[1.0], &[0.0], &mut st, Mode::Train).is_err());
        // Inference mode needs no batch statistics.
        assert!(batchnorm_forward(&x, &[1.0], &[0.0], &mut st, Mode::Inference).is_ok());
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = Tensor4::<f64>::from_fn(Dims::new(1, 1, 1, 4), |_, _, _, x| x as f64);
        let mut st = BatchNormState::new(1);
        batchnorm_forward(&x, &[1.0], &[0.0], &mut st, Mode::Train).unwrap();
        // mean 1.5, unbiased var 5/3
        assert!((st.running_mean[0] - 0.15).abs() < 1e-12);
        assert!((st.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn inference_mode_leaves_state_untouched() {
        let x = Tensor4::<f32>::from_fn(Dims::new(2, 1, 2, 2), |n, _, y, x| (n + y + x) as f32);
        let mut st = BatchNormState::new(1);
        st.running_mean[0] = 0.5;
        let before = st.clone();
        let a = batchnorm_forward(&x, &[2.0], &[0.1], &mut st, Mode::Inference).unwrap();
        let b = batchnorm_forward(&x, &[2.0], &[0.1], &mut st, Mode::Inference).unwrap();
        assert_eq!(st, before);
        assert_eq!(a, b);
    }

    #[test]
    fn backward_of_zero_upstream_is_zero() {
        let x = Tensor4::<f64>::from_fn(Dims::new(2, 3, 2, 2), |n, c, y, x| (n * 5 + c * 3 + y * 2 + x) as f64);
        let mut st = BatchNormState::new(3);
        let (_, cache) = batchnorm_forward_train(&x, &[1.0; 3], &[0.0; 3], &mut st).unwrap();
        let g = batchnorm_backward(&Tensor4::zeros(x.dims()), &cache, &[1.0; 3]).unwrap();
        assert!(g.input.data().iter().chain(&g.gamma).chain(&g.beta).all(|&v| v == 0.0));
    }
}
