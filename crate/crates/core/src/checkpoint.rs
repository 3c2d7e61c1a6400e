//! Checkpoint persistence.
//!
//! Flat little-endian binary: layer shapes, row-major weights, biases, both
//! Adam states and the training seed, with a trailing FNV checksum. Floats
//! are stored as raw bit patterns so a save/load round trip is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::Error;
use crate::numerics::{AdamState, Layer, Matrix, MlpParams, Vector};
use crate::policy::{PolicyNet, ValueNet};
use crate::Result;

const MAGIC: &[u8; 8] = b"PLCKPT01";

/// Everything needed to resume or replay a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub seed: u64,
    pub policy: PolicyNet,
    pub value: ValueNet,
    pub policy_adam: AdamState,
    pub value_adam: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes();
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_u64(&mut out, self.seed);
        write_net(&mut out, self.policy.params());
        write_net(&mut out, self.value.params());
        write_adam(&mut out, &self.policy_adam);
        write_adam(&mut out, &self.value_adam);
        let checksum = fnv(&out);
        write_u64(&mut out, checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Cursor {
            bytes: body,
            pos: 0,
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let seed = read_u64(&mut r)?;
        let policy = PolicyNet::new(read_net(&mut r)?)?;
        let value = ValueNet::new(read_net(&mut r)?)?;
        let policy_adam = read_adam(&mut r)?;
        let value_adam = read_adam(&mut r)?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            seed,
            policy,
            value,
            policy_adam,
            value_adam,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn read_exact(&mut self, buf: &mut [u8]) -> std::io::Result<()> {
        if self.pos + buf.len() > self.bytes.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "checkpoint truncated",
            ));
        }
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + buf.len()]);
        self.pos += buf.len();
        Ok(())
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

fn read_u64(r: &mut Cursor) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32(r: &mut Cursor) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut Cursor) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn write_net(out: &mut Vec<u8>, params: &MlpParams) {
    write_u32(out, params.layers().len() as u32);
    for layer in params.layers() {
        write_u32(out, layer.weight.rows() as u32);
        write_u32(out, layer.weight.cols() as u32);
        for v in layer.weight.data() {
            write_f64(out, *v);
        }
        for v in layer.bias.values() {
            write_f64(out, *v);
        }
    }
}

fn read_net(r: &mut Cursor) -> Result<MlpParams> {
    let n_layers = read_u32(r)? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Checkpoint(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        if rows == 0 || cols == 0 || rows * cols > 64_000_000 {
            return Err(Error::Checkpoint(format!(
                "implausible layer shape {rows}x{cols}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f64(r)?);
        }
        let mut bias = Vec::with_capacity(rows);
        for _ in 0..rows {
            bias.push(read_f64(r)?);
        }
        layers.push(Layer {
            weight: Matrix::new(rows, cols, data).map_err(|e| Error::Checkpoint(e.to_string()))?,
            bias: Vector::new(bias).map_err(|e| Error::Checkpoint(e.to_string()))?,
        });
    }
    MlpParams::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn write_adam(out: &mut Vec<u8>, state: &AdamState) {
    write_f64(out, state.beta1);
    write_f64(out, state.beta2);
    write_f64(out, state.epsilon);
    let (m, v, step) = state.parts();
    write_u64(out, step);
    write_net(out, m);
    write_net(out, v);
}

fn read_adam(r: &mut Cursor) -> Result<AdamState> {
    let beta1 = read_f64(r)?;
    let beta2 = read_f64(r)?;
    let epsilon = read_f64(r)?;
    let step = read_u64(r)?;
    let m = read_net(r)?;
    let v = read_net(r)?;
    Ok(AdamState::from_parts(m, v, step, beta1, beta2, epsilon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::adam_step;
    use crate::policy::policy_init;

    fn sample_checkpoint() -> Checkpoint {
        let (mut policy, value) = policy_init(99, 12, 6).unwrap();
        let mut policy_adam = AdamState::new(policy.params());
        let value_adam = AdamState::new(value.params());
        // Take one update so the Adam accumulators are non-trivial.
        let mut grads = policy.params().zeros_like();
        grads.flat_set(0, 0.5);
        grads.flat_set(7, -0.25);
        adam_step(policy.params_mut(), &grads, &mut policy_adam, 0.03).unwrap();
        Checkpoint {
            seed: 99,
            policy,
            value,
            policy_adam,
            value_adam,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.seed, ckpt.seed);
        assert_eq!(loaded.policy.params(), ckpt.policy.params());
        assert_eq!(loaded.value.params(), ckpt.value.params());
        assert_eq!(loaded.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample_checkpoint().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample_checkpoint().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("promptlift-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
        std::fs::remove_file(path).ok();
    }
}
