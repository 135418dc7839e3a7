//! Binary checkpoints.
//!
//! ```text
//! magic     8 bytes  "SPTCKPT\0"
//! version   u32
//! --- payload, covered by the trailing CRC32 ---
//! arch      u32 length + UTF-8 architecture text
//! epoch     u64
//! rng       32-byte seed, u64 stream, u128 word position
//! schedule  u64 fingerprint
//! wall_s    f64
//! tensors   u32 count, then per tensor:
//!             u64 block length, u16 name length + name,
//!             u8 rank, rank x u32 dims, f32 values
//! --- end of payload ---
//! crc32     u32
//! ```
//!
//! All integers and floats are little-endian. Parameters are named
//! `layer{i}.kernels`, `layer{i}.weights` and `layer{i}.bias`; optimizer
//! velocities carry the same names under a `velocity/` prefix.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::arch::{ArchitectureSpec, Layer};
use crate::engine::{ConvLayerParams, FcLayerParams};
use crate::error::{Error, Result};
use crate::network::{LayerParams, Network};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"SPTCKPT\0";
pub const VERSION: u32 = 1;
const VELOCITY_PREFIX: &str = "velocity/";

/// Position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::capture(&ChaCha8Rng::seed_from_u64(seed))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    /// One tensor per parameter, in [`Network::params_mut`] order.
    pub velocity: Vec<Tensor>,
    /// Last completed epoch.
    pub epoch: usize,
    pub rng: RngState,
    pub schedule_fingerprint: u64,
    /// Training wall-clock seconds accumulated up to `epoch`.
    pub wall_s: f64,
}

impl Checkpoint {
    /// A checkpoint at epoch 0 with zero velocity.
    pub fn fresh(network: Network, seed: u64, schedule_fingerprint: u64) -> Self {
        let velocity = network.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Checkpoint {
            network,
            velocity,
            epoch: 0,
            rng: RngState::from_seed(seed),
            schedule_fingerprint,
            wall_s: 0.0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Vec::new();
        let arch = self.network.arch().to_text();
        p.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        p.extend_from_slice(arch.as_bytes());
        p.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        p.extend_from_slice(&self.rng.seed);
        p.extend_from_slice(&self.rng.stream.to_le_bytes());
        p.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        p.extend_from_slice(&self.schedule_fingerprint.to_le_bytes());
        p.extend_from_slice(&self.wall_s.to_le_bytes());
        let named = self.network.named_params();
        p.extend_from_slice(&((named.len() + self.velocity.len()) as u32).to_le_bytes());
        for (name, t) in &named {
            write_tensor(&mut p, name, t);
        }
        for ((name, _), v) in named.iter().zip(&self.velocity) {
            write_tensor(&mut p, &format!("{VELOCITY_PREFIX}{name}"), v);
        }
        let mut out = Vec::with_capacity(p.len() + 16);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&p);
        out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Truncated {
                path: path.into(),
                detail: format!("{} bytes is shorter than the header", bytes.len()),
            });
        }
        if bytes[..8] != MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: u64::from_be_bytes(MAGIC),
                found: u64::from_be_bytes(bytes[..8].try_into().unwrap()),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                supported: VERSION,
            });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                path: path.into(),
                detail: "missing checksum".into(),
            });
        }
        let (payload, crc) = bytes[12..].split_at(bytes.len() - 16);
        let stored = u32::from_le_bytes(crc.try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        parse_payload(payload)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    let block_len = 2 + name.len() + 1 + 4 * t.shape().len() + 4 * t.len();
    out.extend_from_slice(&(block_len as u64).to_le_bytes());
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Corrupt(format!("payload ends inside {what}")));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }
}

fn parse_payload(payload: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: payload };
    let arch_len = u32::from_le_bytes(r.array("architecture length")?) as usize;
    let arch_text = std::str::from_utf8(r.take(arch_len, "architecture")?)
        .map_err(|_| Error::Corrupt("architecture text is not UTF-8".into()))?;
    let arch = ArchitectureSpec::parse(arch_text)?;
    let epoch = u64::from_le_bytes(r.array("epoch")?) as usize;
    let rng = RngState {
        seed: r.array("rng seed")?,
        stream: u64::from_le_bytes(r.array("rng stream")?),
        word_pos: u128::from_le_bytes(r.array("rng position")?),
    };
    let schedule_fingerprint = u64::from_le_bytes(r.array("schedule fingerprint")?);
    let wall_s = f64::from_le_bytes(r.array("wall time")?);
    let count = u32::from_le_bytes(r.array("tensor count")?) as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = u64::from_le_bytes(r.array("block length")?) as usize;
        let mut b = Reader {
            buf: r.take(len, "tensor block")?,
        };
        let name_len = u16::from_le_bytes(b.array("name length")?) as usize;
        let name = String::from_utf8(b.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = b.array::<1>("rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(b.array("dimension")?) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = b.take(4 * n, "tensor values")?;
        if !b.buf.is_empty() {
            return Err(Error::Corrupt(format!("trailing bytes in block {name}")));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if !r.buf.is_empty() {
        return Err(Error::Corrupt("trailing bytes after tensor blocks".into()));
    }

    let mut take = |name: String| {
        tensors
            .remove(&name)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))
    };
    let mut params = Vec::with_capacity(arch.layers.len());
    for (i, layer) in arch.layers.iter().enumerate() {
        params.push(match *layer {
            Layer::Conv { stride, pad, .. } => Some(LayerParams::Conv(ConvLayerParams::new(
                take(format!("layer{i}.kernels"))?,
                take(format!("layer{i}.bias"))?,
                stride,
                pad,
            )?)),
            Layer::Fc { .. } => Some(LayerParams::Fc(FcLayerParams::new(
                take(format!("layer{i}.weights"))?,
                take(format!("layer{i}.bias"))?,
            )?)),
            _ => None,
        });
    }
    let network = Network::from_params(arch, params)?;
    let names: Vec<String> = network.named_params().into_iter().map(|(n, _)| n).collect();
    let mut velocity = Vec::with_capacity(names.len());
    for (name, shape) in names.iter().zip(network.param_shapes()) {
        let v = take(format!("{VELOCITY_PREFIX}{name}"))?;
        if v.shape() != shape.as_slice() {
            return Err(Error::Corrupt(format!(
                "velocity of {name} has shape {:?}, parameter {shape:?}",
                v.shape()
            )));
        }
        velocity.push(v);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Corrupt(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint {
        network,
        velocity,
        epoch,
        rng,
        schedule_fingerprint,
        wall_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::cifar_mini;
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let net = Network::init(&cifar_mini(), 7).unwrap();
        let mut ck = Checkpoint::fresh(net, 3, 0xfeed);
        ck.velocity[1].data_mut()[0] = -0.25;
        ck.epoch = 4;
        ck.wall_s = 12.5;
        let mut rng = ck.rng.restore();
        rng.next_u32();
        rng.next_u64();
        ck.rng = RngState::capture(&rng);
        ck
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        let mut a = ck.rng.restore();
        let mut b = back.rng.restore();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, Path::new("mem")),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn header_errors_are_distinct() {
        let bytes = sample().to_bytes();
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&wrong_version, Path::new("mem")),
            Err(Error::Version { found: 9, .. })
        ));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&wrong_magic, Path::new("mem")),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&[], Path::new("mem")),
            Err(Error::Truncated { .. })
        ));
    }
}
