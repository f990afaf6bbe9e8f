//! Binary checkpoint format (little-endian):
//!
//! ```text
//! magic    8 bytes  "AITPRCK1"
//! header   u32 length + UTF-8 JSON (version, config, counters, vocabulary)
//! arrays   u32 count, then per array:
//!          u32 name length, name, u32 rank, u64 dims[rank], f64 data
//! rng      32-byte seed, u64 stream, u128 word position
//! ```
//!
//! Arrays are named `param/<name>`, `adam_m/<name>` and `adam_v/<name>`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainConfig;
use crate::decoder::{ModelParams, Param};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AITPRCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("format error: {0}")]
    Format(String),
    #[error("version error: checkpoint has format version {found}, this build reads version {expected}{detail}")]
    Version {
        found: u32,
        expected: u32,
        detail: String,
    },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub adam_step: u64,
    /// Content tokens in id order, after the reserved ones.
    pub vocab: Vec<String>,
    pub loss_trace: Vec<f64>,
    pub params: ModelParams,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    epoch: usize,
    adam_step: u64,
    vocab: Vec<String>,
    loss_trace: Vec<f64>,
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        format_version: ckpt.format_version,
        config: ckpt.config.clone(),
        epoch: ckpt.epoch,
        adam_step: ckpt.adam_step,
        vocab: ckpt.vocab.clone(),
        loss_trace: ckpt.loss_trace.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);

    let groups: [(&str, &[Tensor]); 3] = [
        ("param", ckpt.params.tensors()),
        ("adam_m", &ckpt.adam_m),
        ("adam_v", &ckpt.adam_v),
    ];
    let count: usize = groups.iter().map(|(_, ts)| ts.len()).sum();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (prefix, tensors) in groups {
        for (p, t) in Param::ALL.iter().zip(tensors) {
            let name = format!("{prefix}/{}", p.name());
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&ckpt.rng.seed);
    out.extend_from_slice(&ckpt.rng.stream.to_le_bytes());
    out.extend_from_slice(&ckpt.rng.word_pos.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(CheckpointError::Format(
            "bad magic bytes; not a checkpoint".into(),
        ));
    }
    let hlen = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| CheckpointError::Format(format!("header: {e}")))?;
    let version_error = |detail: &str| CheckpointError::Version {
        found: header.format_version,
        expected: FORMAT_VERSION,
        detail: detail.to_string(),
    };
    if header.format_version != FORMAT_VERSION {
        return Err(version_error(""));
    }

    let count = r.u32("array count")? as usize;
    let mut arrays: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| CheckpointError::Format("array name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 2 {
            return Err(CheckpointError::Format(format!(
                "{name}: unsupported rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dim")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(8)
                .ok_or_else(|| CheckpointError::Format("array too large".into()))?,
            &name,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Format(format!("{name}: {e}")))?;
        arrays.push((name, t));
    }

    let mut seed = [0u8; 32];
    seed.copy_from_slice(r.take(32, "rng seed")?);
    let stream = r.u64("rng stream")?;
    let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(CheckpointError::Format(format!(
            "{} trailing bytes after the rng record",
            bytes.len() - r.pos
        )));
    }

    let mut take_group = |prefix: &str| -> Option<Result<Vec<Tensor>, CheckpointError>> {
        let mut out = Vec::with_capacity(Param::ALL.len());
        for p in Param::ALL {
            let key = format!("{prefix}/{}", p.name());
            let idx = arrays.iter().position(|(n, _)| *n == key);
            match idx {
                Some(i) => out.push(arrays.swap_remove(i).1),
                None if out.is_empty() => return None,
                None => return Some(Err(CheckpointError::Format(format!("missing array {key}")))),
            }
        }
        Some(Ok(out))
    };
    let params = take_group("param")
        .ok_or_else(|| CheckpointError::Format("no parameter arrays".into()))??;
    let moments = (take_group("adam_m"), take_group("adam_v"));
    let (adam_m, adam_v) = match moments {
        (Some(m), Some(v)) => (m?, v?),
        _ => return Err(version_error(" (optimizer moments are missing)")),
    };
    if let Some((name, _)) = arrays.first() {
        return Err(CheckpointError::Format(format!("unexpected array {name}")));
    }

    let vocab_len = header.vocab.len() + crate::scene::RESERVED.len();
    let dims = header.config.dims(vocab_len);
    let params = ModelParams::from_tensors(dims, params).map_err(CheckpointError::Format)?;
    for (m, p) in adam_m
        .iter()
        .chain(&adam_v)
        .zip(params.tensors().iter().cycle())
    {
        if m.shape() != p.shape() {
            return Err(CheckpointError::Format(
                "optimizer moment shape mismatch".into(),
            ));
        }
    }

    Ok(Checkpoint {
        format_version: header.format_version,
        config: header.config,
        epoch: header.epoch,
        adam_step: header.adam_step,
        vocab: header.vocab,
        loss_trace: header.loss_trace,
        params,
        adam_m,
        adam_v,
        rng: RngState {
            seed,
            stream,
            word_pos,
        },
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, write_checkpoint(ckpt)).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    read_checkpoint(&bytes)
}
