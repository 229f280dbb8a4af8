//! Built-in health checks run by `fsdn selftest`: finite-difference
//! gradient checks in `f64` and a few end-to-end identities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{decode, encode, Checkpoint, TrainingMeta};
use crate::error::Result;
use crate::eval::{psnr, ssim, PSNR_CAP_DB};
use crate::frequency::{decompose, recombine};
use crate::layers::{
    batchnorm_backward, batchnorm_forward_train, conv2d_backward, conv2d_forward, mse_loss, relu_backward,
    relu_forward, BatchNormState, Mode,
};
use crate::network::{MappingMode, Network, NetworkSpec};
use crate::synthetic;
use crate::tensor::{Dims, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        });
    }
}

/// Tolerance on the norm-wise relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-5;
const STEP: f64 = 1e-6;

fn randn(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| rng.sample(StandardNormal))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function of `x`.
fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let plus = f(x)?;
        x[i] = orig - STEP;
        let minus = f(x)?;
        x[i] = orig;
        g[i] = (plus - minus) / (2.0 * STEP);
    }
    Ok(g)
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with_data(dims: Dims, data: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec(dims, data.to_vec()).expect("same length")
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let (n, ic, oc, k, h, w) = (2, 2, 3, 3, 5, 4);
    let x = randn(rng, Dims::new(n, ic, h, w));
    let wt = randn(rng, Dims::new(oc, ic, k, k));
    let bias: Vec<f64> = (0..oc).map(|_| rng.sample(StandardNormal)).collect();
    let up = randn(rng, Dims::new(n, oc, h, w));
    let pad = 1;
    let g = conv2d_backward(&x, &wt, &up, pad)?;

    let mut xv = x.data().to_vec();
    let num_x = numeric_grad(&mut xv, |v| Ok(dot(&conv2d_forward(&with_data(x.dims(), v), &wt, &bias, pad)?, &up)))?;
    let mut wv = wt.data().to_vec();
    let num_w = numeric_grad(&mut wv, |v| Ok(dot(&conv2d_forward(&x, &with_data(wt.dims(), v), &bias, pad)?, &up)))?;
    let mut bv = bias.clone();
    let num_b = numeric_grad(&mut bv, |v| Ok(dot(&conv2d_forward(&x, &wt, v, pad)?, &up)))?;

    let errs = [
        relative_error(g.input.as_ref().expect("input grad").data(), &num_x),
        relative_error(g.weight.data(), &num_w),
        relative_error(&g.bias, &num_b),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Ok((worst < GRAD_TOLERANCE, format!("max relative error {worst:.2e}")))
}

fn check_batchnorm(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let dims = Dims::new(3, 2, 3, 3);
    let x = randn(rng, dims);
    let gamma: Vec<f64> = (0..2).map(|_| 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let beta: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
    let up = randn(rng, dims);
    let mut state = BatchNormState::new(2);
    let (_, cache) = batchnorm_forward_train(&x, &gamma, &beta, &mut state)?;
    let g = batchnorm_backward(&up, &cache, &gamma)?;

    let mut eval = |x: &Tensor4<f64>, gm: &[f64], bt: &[f64]| -> Result<f64> {
        let (y, _) = batchnorm_forward_train(x, gm, bt, &mut state)?;
        Ok(dot(&y, &up))
    };
    let mut xv = x.data().to_vec();
    let num_x = numeric_grad(&mut xv, |v| eval(&with_data(dims, v), &gamma, &beta))?;
    let mut gv = gamma.clone();
    let num_g = numeric_grad(&mut gv, |v| eval(&x, v, &beta))?;
    let mut bv = beta.clone();
    let num_b = numeric_grad(&mut bv, |v| eval(&x, &gamma, v))?;
    let errs = [
        relative_error(g.input.data(), &num_x),
        relative_error(&g.gamma, &num_g),
        relative_error(&g.beta, &num_b),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Ok((worst < GRAD_TOLERANCE, format!("max relative error {worst:.2e}")))
}

fn check_relu_and_mse(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let dims = Dims::new(2, 1, 4, 4);
    // Keep inputs away from the kink.
    let x = Tensor4::from_fn(dims, |_, _, _, _| {
        let v: f64 = rng.sample(StandardNormal);
        if v.abs() < 0.05 {
            v.signum() * 0.05 + v
        } else {
            v
        }
    });
    let up = randn(rng, dims);
    let target = randn(rng, dims);
    let analytic = relu_backward(&x, &up)?;
    let mut xv = x.data().to_vec();
    let num = numeric_grad(&mut xv, |v| Ok(dot(&relu_forward(&with_data(dims, v)), &up)))?;
    let e_relu = relative_error(analytic.data(), &num);

    let (_, grad) = mse_loss(&x, &target)?;
    let mut xv = x.data().to_vec();
    let num = numeric_grad(&mut xv, |v| Ok(mse_loss(&with_data(dims, v), &target)?.0))?;
    let e_mse = relative_error(grad.data(), &num);
    let worst = e_relu.max(e_mse);
    Ok((worst < GRAD_TOLERANCE, format!("relu {e_relu:.2e}, mse {e_mse:.2e}")))
}

fn check_network(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let spec = NetworkSpec::dncnn_with_width("selftest", 3, 3, 4, MappingMode::Direct)?;
    let mut net = Network::<f64>::build(&spec, rng.random())?;
    net.set_mode(Mode::Train);
    let x = randn(rng, Dims::new(2, 1, 5, 5));
    let up = randn(rng, Dims::new(2, 1, 5, 5));
    let (_, trace) = net.forward_train(&x)?;
    let analytic: Vec<f64> = net.backward(&trace, &up)?.tensors.concat();

    let mut flat = net.flat_params();
    let mut probe = net.clone();
    let num = numeric_grad(&mut flat, |v| {
        let mut offset = 0;
        for slot in probe.params_mut() {
            let n = slot.values.len();
            slot.values.copy_from_slice(&v[offset..offset + n]);
            offset += n;
        }
        Ok(dot(&probe.forward_train(&x)?.0, &up))
    })?;
    let err = relative_error(&analytic, &num);
    Ok((err < GRAD_TOLERANCE, format!("relative error {err:.2e} over {} parameters", analytic.len())))
}

fn check_identities() -> Result<(bool, String)> {
    let img = synthetic::scene(48, 40, 11, 0.0, 1.0);
    let pair = decompose(&img, 4.5)?;
    let back = recombine(&pair)?;
    let recomb = img
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let p = psnr(&img, &img)?;
    let s = ssim(&img, &img)?;
    let ok = recomb <= 1e-6 && p == PSNR_CAP_DB && (s - 1.0).abs() < 1e-9;
    Ok((ok, format!("recombination {recomb:.1e}, psnr(x,x) {p}, ssim(x,x) {s:.12}")))
}

fn check_checkpoint() -> Result<(bool, String)> {
    let spec = NetworkSpec::low_freq().with_depth(3)?;
    let mut net = Network::<f32>::build(&spec, 3)?;
    net.set_mode(Mode::Inference);
    let ckpt = Checkpoint {
        network: net,
        meta: TrainingMeta {
            epoch: 1,
            sigma255: 25.0,
            blur_sigma: 4.5,
            seed: 3,
        },
    };
    let back = decode(&encode(&ckpt))?;
    let x = synthetic::scene(20, 20, 5, 0.0, 1.0).to_tensor();
    let same = ckpt.network.infer(&x)?.data() == back.network.infer(&x)?.data();
    Ok((same, format!("forward outputs identical after round trip: {same}")))
}

/// Runs every check with a fixed seed.
pub fn run_selftest() -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_7e57);
    let mut report = SelftestReport::default();
    report.push("conv2d gradient", check_conv(&mut rng));
    report.push("batchnorm gradient", check_batchnorm(&mut rng));
    report.push("relu/mse gradient", check_relu_and_mse(&mut rng));
    report.push("depth-3 network gradient", check_network(&mut rng));
    report.push("decomposition and metric identities", check_identities());
    report.push("checkpoint round trip", check_checkpoint());
    report
}
