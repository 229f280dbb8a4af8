//! Binary checkpoint format.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! magic        4 bytes  "FSDN"
//! version      u32      1
//! name         u32 byte length, UTF-8 bytes
//! layer count  u32
//! per layer    u8 kind (0 Conv, 1 BatchNorm, 2 ReLU), u32 in, u32 out, u32 kernel
//!              (BatchNorm: in = out = channels, kernel 0; ReLU: all 0)
//! tensors      in layer order, each u32 element count then f32 values
//!              Conv: weight (out, in, k, k) row-major, bias
//!              BatchNorm: gamma, beta, running_mean, running_var
//! metadata     u32 epoch, f32 sigma255, f32 blur_sigma, u8 mapping (0 direct,
//!              1 residual), u64 seed, f64 bn_epsilon, f64 bn_momentum
//! ```

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::layers::{BatchNormState, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::network::{BatchNormParams, ConvParams, LayerSpec, MappingMode, Network, NetworkSpec};
use crate::tensor::{Dims, Tensor4};

pub const MAGIC: [u8; 4] = *b"FSDN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub epoch: u32,
    pub sigma255: f32,
    pub blur_sigma: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub meta: TrainingMeta,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, values: &[f32]) {
        self.u32(values.len() as u32);
        for &v in values {
            self.f32(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated { what });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &'static str) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn tensor(&mut self, what: String, expected: usize) -> Result<Vec<f32>, CheckpointError> {
        let found = self.u32("tensor length")? as usize;
        if found != expected {
            return Err(CheckpointError::LengthMismatch { what, expected, found });
        }
        let raw = self.take(4 * found, "tensor data")?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.network;
    let spec = net.spec();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    w.u32(spec.name.len() as u32);
    w.0.extend_from_slice(spec.name.as_bytes());
    w.u32(spec.layers.len() as u32);
    for layer in &spec.layers {
        let (kind, i, o, k) = match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_size,
            } => (0u8, in_channels, out_channels, kernel_size),
            LayerSpec::BatchNorm { channels } => (1, channels, channels, 0),
            LayerSpec::Relu => (2, 0, 0, 0),
        };
        w.u8(kind);
        w.u32(i as u32);
        w.u32(o as u32);
        w.u32(k as u32);
    }
    let mut bn_consts = (DEFAULT_EPSILON, DEFAULT_MOMENTUM);
    for b in net.blocks() {
        w.tensor(b.conv.weight.data());
        w.tensor(&b.conv.bias);
        if let Some(p) = &b.bn {
            w.tensor(&p.gamma);
            w.tensor(&p.beta);
            w.tensor(&p.state.running_mean);
            w.tensor(&p.state.running_var);
            bn_consts = (p.state.epsilon, p.state.momentum);
        }
    }
    let m = &ckpt.meta;
    w.u32(m.epoch);
    w.f32(m.sigma255);
    w.f32(m.blur_sigma);
    w.u8(match spec.mapping_mode {
        MappingMode::Direct => 0,
        MappingMode::Residual => 1,
    });
    w.u64(m.seed);
    w.f64(bn_consts.0);
    w.f64(bn_consts.1);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let name_len = r.u32("name length")? as usize;
    let name = std::str::from_utf8(r.take(name_len, "name")?)
        .map_err(|_| CheckpointError::Invalid("network name is not UTF-8".into()))?
        .to_owned();
    let layer_count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let kind = r.u8("layer kind")?;
        let i = r.u32("layer spec")? as usize;
        let o = r.u32("layer spec")? as usize;
        let k = r.u32("layer spec")? as usize;
        layers.push(match kind {
            0 => LayerSpec::conv(i, o, k),
            1 if i == o => LayerSpec::BatchNorm { channels: i },
            2 => LayerSpec::Relu,
            _ => return Err(CheckpointError::Invalid(format!("bad layer record kind {kind} ({i},{o},{k})"))),
        });
    }
    let mut spec = NetworkSpec {
        name,
        layers,
        mapping_mode: MappingMode::Direct,
    };
    spec.validate()
        .map_err(|e| CheckpointError::Invalid(e.to_string()))?;

    // Each conv may be followed by a BN; read tensors block by block.
    let mut raw_blocks = Vec::new();
    let mut li = 0;
    while li < spec.layers.len() {
        let LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel_size: k,
        } = spec.layers[li]
        else {
            unreachable!("validated spec starts every block with a conv");
        };
        let dims = Dims::new(out_channels, in_channels, k, k);
        let weight = r.tensor(format!("layer {li} weight"), dims.len())?;
        let bias = r.tensor(format!("layer {li} bias"), out_channels)?;
        li += 1;
        let mut bn = None;
        if let Some(LayerSpec::BatchNorm { channels }) = spec.layers.get(li) {
            let c = *channels;
            let gamma = r.tensor(format!("layer {li} gamma"), c)?;
            let beta = r.tensor(format!("layer {li} beta"), c)?;
            let mean = r.tensor(format!("layer {li} running_mean"), c)?;
            let var = r.tensor(format!("layer {li} running_var"), c)?;
            bn = Some((gamma, beta, mean, var));
            li += 1;
        }
        if let Some(LayerSpec::Relu) = spec.layers.get(li) {
            li += 1;
        }
        raw_blocks.push((Tensor4::from_vec(dims, weight).expect("length checked"), bias, bn));
    }

    let epoch = r.u32("metadata")?;
    let sigma255 = r.f32("metadata")?;
    let blur_sigma = r.f32("metadata")?;
    spec.mapping_mode = match r.u8("metadata")? {
        0 => MappingMode::Direct,
        1 => MappingMode::Residual,
        other => return Err(CheckpointError::Invalid(format!("bad mapping mode {other}"))),
    };
    let seed = r.u64("metadata")?;
    let epsilon = r.f64("metadata")?;
    let momentum = r.f64("metadata")?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Invalid(format!(
            "{} trailing bytes after metadata",
            bytes.len() - r.pos
        )));
    }

    let blocks = raw_blocks
        .into_iter()
        .map(|(weight, bias, bn)| {
            (
                ConvParams { weight, bias },
                bn.map(|(gamma, beta, running_mean, running_var)| BatchNormParams {
                    gamma,
                    beta,
                    state: BatchNormState {
                        running_mean,
                        running_var,
                        epsilon,
                        momentum,
                    },
                }),
            )
        })
        .collect();
    let network = Network::from_blocks(&spec, blocks).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    Ok(Checkpoint {
        network,
        meta: TrainingMeta {
            epoch,
            sigma255,
            blur_sigma,
            seed,
        },
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; the network comes back in Inference mode.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::low_freq().with_depth(3).unwrap();
        Checkpoint {
            network: Network::build(&spec, 9).unwrap(),
            meta: TrainingMeta {
                epoch: 5,
                sigma255: 50.0,
                blur_sigma: 4.5,
                seed: 77,
            },
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut c = sample();
        c.network.set_mode(crate::layers::Mode::Inference);
        let back = decode(&encode(&c)).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(CheckpointError::BadMagic { .. })));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert_eq!(
            decode(&bytes).unwrap_err(),
            CheckpointError::Version { found: 2, expected: 1 }
        );
    }

    #[test]
    fn truncated_mid_tensor() {
        let bytes = encode(&sample());
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(decode(cut), Err(CheckpointError::Truncated { .. })));
    }

    #[test]
    fn length_inconsistent_with_spec() {
        let c = sample();
        let mut bytes = encode(&c);
        // First tensor length follows the spec block of 13 bytes per layer.
        let name_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let off = 12 + name_len + 4 + c.network.spec().layers.len() * 13;
        let wrong = (64u32 * 25 + 1).to_le_bytes();
        bytes[off..off + 4].copy_from_slice(&wrong);
        assert!(matches!(decode(&bytes), Err(CheckpointError::LengthMismatch { .. })));
    }
}
