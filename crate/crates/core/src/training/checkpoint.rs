//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! | field | bytes |
//! |---|---|
//! | magic `MTSMAECK` | 8 |
//! | version (u32) | 4 |
//! | element type tag (u8, 1 = f32, 2 = f64) | 1 |
//! | epoch (u64) | 8 |
//! | rng seed, stream (u64), word position (u128) | 32 + 8 + 16 |
//! | config JSON length (u64) + UTF-8 bytes | 8 + n |
//! | record count (u64) | 8 |
//!
//! followed by one record per tensor: name length (u32), name, rank (u32),
//! `rank` dims (u64 each), then the element buffer.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore};
use crate::numeric::{DType, Element, NdArray};

pub const MAGIC: &[u8; 8] = b"MTSMAECK";
pub const FORMAT_VERSION: u32 = 1;

/// Resumable generator position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Configuration snapshot stored in the header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: CheckpointConfig,
    pub epoch: u64,
    pub rng: RngState,
    pub params: ParamStore<T>,
}

impl<T: Element> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let json = serde_json::to_vec(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, value) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.rank() as u32).to_le_bytes());
            for &d in value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in value.data() {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let dtype = read_header(&mut r)?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint holds {dtype:?} values, requested {:?}",
                T::DTYPE
            )));
        }
        let epoch = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let json_len = r.len_u64("config length")?;
        let config: CheckpointConfig =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| Error::Format(format!("config snapshot: {e}")))?;
        let count = r.len_u64("record count")?;
        let mut params = ParamStore::new();
        let width = T::DTYPE.size_of();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format(format!("record name at byte {} is not UTF-8", r.pos)))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len_u64("dimension")?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(width))
                .ok_or_else(|| Error::Format(format!("{name}: shape {shape:?} overflows")))?;
            let data = r.take(numel)?.chunks_exact(width).map(T::read_le).collect();
            if params.contains(&name) {
                return Err(Error::Format(format!("duplicate record {name}")));
            }
            params.insert(name, NdArray::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            epoch,
            rng: RngState { seed, stream, word_pos },
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Element type of a checkpoint file without decoding its tensors.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    use std::io::Read;
    let mut head = [0u8; 13];
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    f.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    read_header(&mut Reader { bytes: &head, pos: 0 })
}

fn read_header(r: &mut Reader<'_>) -> Result<DType> {
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let tag = r.take(1)?[0];
    DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown element type tag {tag}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated: needed {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{what} {v} too large")))
    }
}
