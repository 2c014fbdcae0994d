//! Binary training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SLKCKPT\0" | version u32 | header length u64 | JSON header
//! | user table | item table | user m | user v | item m | item v | quantiles
//! | sha256 of everything above
//! ```
//!
//! Every real is stored as raw `f64` bits, so a load reproduces the saved
//! state exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, ScoreKind, Table};
use crate::optim::{AdamConfig, AdamState, Moments};
use crate::quantile::QuantileState;
use crate::rng::RngState;
use crate::trainer::{TrainConfig, TrainHistory, Trainer};

pub const MAGIC: &[u8; 8] = b"SLKCKPT\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dim: usize,
    score_kind: ScoreKind,
    num_users: usize,
    num_items: usize,
    epoch: usize,
    seed: u64,
    rng: RngState,
    config: TrainConfig,
    adam: AdamConfig,
    adam_steps: u64,
    quantiles: Option<QuantileMeta>,
    history: TrainHistory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QuantileMeta {
    k: usize,
    sample_size: usize,
    last_update_epoch: usize,
}

fn push_reals(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the full state of a trainer.
pub fn encode(trainer: &Trainer) -> Result<Vec<u8>> {
    let model = &trainer.model;
    let header = Header {
        dim: model.dim(),
        score_kind: model.score_kind,
        num_users: model.num_users(),
        num_items: model.num_items(),
        epoch: trainer.epoch,
        seed: trainer.config.seed,
        rng: RngState::capture(&trainer.rng),
        config: trainer.config.clone(),
        adam: trainer.adam.config,
        adam_steps: trainer.adam.step_count,
        quantiles: trainer.quantiles.as_ref().map(|q| QuantileMeta {
            k: q.k,
            sample_size: q.sample_size,
            last_update_epoch: q.last_update_epoch,
        }),
        history: trainer.history.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for table in [
        &model.users,
        &model.items,
        &trainer.adam.users.first,
        &trainer.adam.users.second,
        &trainer.adam.items.first,
        &trainer.adam.items.second,
    ] {
        push_reals(&mut buf, table.as_slice());
    }
    if let Some(q) = &trainer.quantiles {
        push_reals(&mut buf, &q.beta);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn reals(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn table(&mut self, rows: usize, dim: usize, what: &str) -> Result<Table> {
        Table::from_vec(rows, dim, self.reals(rows * dim, what)?)
    }
}

/// Rebuilds a trainer from checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < MAGIC.len() + 4 + 8 + DIGEST_LEN {
        return Err(Error::CorruptCheckpoint(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }

    let mut cur = Cursor { bytes: body, pos: 12 };
    let header_len = u64::from_le_bytes(cur.take(8, "header length")?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(cur.take(header_len as usize, "header")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    let (nu, ni, d) = (header.num_users, header.num_items, header.dim);
    let model = EmbeddingModel {
        users: cur.table(nu, d, "user table")?,
        items: cur.table(ni, d, "item table")?,
        score_kind: header.score_kind,
    };
    let adam = AdamState {
        config: header.adam,
        users: Moments {
            first: cur.table(nu, d, "user first moments")?,
            second: cur.table(nu, d, "user second moments")?,
        },
        items: Moments {
            first: cur.table(ni, d, "item first moments")?,
            second: cur.table(ni, d, "item second moments")?,
        },
        step_count: header.adam_steps,
    };
    let quantiles = match header.quantiles {
        Some(meta) => Some(QuantileState {
            beta: cur.reals(nu, "quantiles")?,
            k: meta.k,
            sample_size: meta.sample_size,
            last_update_epoch: meta.last_update_epoch,
        }),
        None => None,
    };
    if cur.pos != body.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            body.len() - cur.pos
        )));
    }
    Ok(Trainer::from_parts(
        header.config,
        model,
        adam,
        quantiles,
        header.history,
        header.epoch,
        header.rng.restore(),
    ))
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = encode(trainer)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Size in bytes of the real-valued payload: each embedding table and its two
/// moment tables, plus one quantile per user when present.
pub fn payload_len(num_users: usize, num_items: usize, dim: usize, with_quantiles: bool) -> usize {
    let reals = 3 * (num_users + num_items) * dim + if with_quantiles { num_users } else { 0 };
    reals * 8
}
