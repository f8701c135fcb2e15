//! Binary checkpoint format.
//!
//! ```text
//! "LFM1" | version u32
//! config: len u32 | payload | crc32 u32
//! n_blocks u32
//! block:  name_len u16 | name | rows u32 | cols u32 | rows·cols f64 | crc32 u32
//! ```
//!
//! All integers and floats are little-endian. Each block's CRC covers every
//! byte of the block before it. The first two blocks carry the feature map;
//! the remainder are parameters in [`Parameterized`] order.

use std::io::{Read, Write};

use super::config::{BranchMode, LfmConfig};
use super::model::{build_lfm, FeatureMap, LfmModel};
use crate::error::{Error, Result};
use crate::nncore::{Parameterized, Tensor};

pub const MAGIC: &[u8; 4] = b"LFM1";
pub const VERSION: u32 = 1;

fn config_bytes(c: &LfmConfig) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [
        c.user_vocab,
        c.item_vocab,
        c.user_segments,
        c.item_categories,
        c.embed_dim,
        c.tower_hidden,
        c.ur_dim,
        c.ir_dim,
        c.n_cross_layers,
        c.n_dnn_layers,
        c.dnn_hidden,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(match c.branch_mode {
        BranchMode::Dual => 0,
        BranchMode::Same => 1,
    });
    out.extend_from_slice(&c.seed.to_le_bytes());
    out
}

fn parse_config(bytes: &[u8]) -> Result<LfmConfig> {
    if bytes.len() != 11 * 8 + 1 + 8 {
        return Err(Error::Integrity(format!("config block has {} bytes", bytes.len())));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes")) as usize;
    let branch_mode = match bytes[88] {
        0 => BranchMode::Dual,
        1 => BranchMode::Same,
        b => return Err(Error::Integrity(format!("unknown branch mode byte {b}"))),
    };
    Ok(LfmConfig {
        user_vocab: word(0),
        item_vocab: word(1),
        user_segments: word(2),
        item_categories: word(3),
        embed_dim: word(4),
        tower_hidden: word(5),
        ur_dim: word(6),
        ir_dim: word(7),
        n_cross_layers: word(8),
        n_dnn_layers: word(9),
        dnn_hidden: word(10),
        branch_mode,
        seed: u64::from_le_bytes(bytes[89..97].try_into().expect("8 bytes")),
    })
}

fn block_bytes(name: &str, t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(name.len() + 10 + 8 * t.len() + 4);
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn ids_tensor(ids: &[usize]) -> Tensor {
    Tensor::from_vec(ids.len(), 1, ids.iter().map(|&v| v as f64).collect()).expect("column")
}

/// Serializes a model into the checkpoint format.
pub fn to_bytes(model: &LfmModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = config_bytes(&model.config);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&crc32fast::hash(&cfg).to_le_bytes());

    let names = model.param_names();
    let params = model.params();
    out.extend_from_slice(&((params.len() + 2) as u32).to_le_bytes());
    out.extend(block_bytes("features.user_segment", &ids_tensor(&model.features.user_segment)));
    out.extend(block_bytes("features.item_category", &ids_tensor(&model.features.item_category)));
    for (name, p) in names.iter().zip(params) {
        out.extend(block_bytes(name, &p.value));
    }
    out
}

pub fn save(model: &LfmModel, mut w: impl Write) -> Result<()> {
    w.write_all(&to_bytes(model))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity(format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn read_block(c: &mut Cursor<'_>) -> Result<(String, Tensor)> {
    let start = c.pos;
    let name_len = c.u16()? as usize;
    let name = String::from_utf8(c.take(name_len)?.to_vec()).map_err(|_| Error::Integrity("block name is not utf-8".into()))?;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let payload = c.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Integrity("block size overflow".into()))?)?;
    let covered = &c.buf[start..c.pos];
    let stored = c.u32()?;
    if crc32fast::hash(covered) != stored {
        return Err(Error::Integrity(format!("crc mismatch in block {name:?}")));
    }
    let data = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    Ok((name, Tensor::from_vec(rows, cols, data)?))
}

fn ids_from(t: &Tensor) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Integrity(format!("feature id {v} is not a non-negative integer")))
            }
        })
        .collect()
}

/// Parses and verifies a checkpoint.
pub fn from_bytes(buf: &[u8]) -> Result<LfmModel> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Integrity("bad magic; not an LFM1 checkpoint".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = c.u32()? as usize;
    let cfg_bytes = c.take(cfg_len)?;
    if crc32fast::hash(cfg_bytes) != c.u32()? {
        return Err(Error::Integrity("crc mismatch in config block".into()));
    }
    let config = parse_config(cfg_bytes)?;
    let n_blocks = c.u32()? as usize;
    let (n1, users) = read_block(&mut c)?;
    let (n2, items) = read_block(&mut c)?;
    if n1 != "features.user_segment" || n2 != "features.item_category" {
        return Err(Error::Integrity("feature blocks missing".into()));
    }
    let features = FeatureMap { user_segment: ids_from(&users)?, item_category: ids_from(&items)? };
    let mut model = build_lfm(&config, features).map_err(|e| Error::Integrity(format!("stored config invalid: {e}")))?;
    let names = model.param_names();
    if n_blocks != names.len() + 2 {
        return Err(Error::Integrity(format!("expected {} blocks, header says {n_blocks}", names.len() + 2)));
    }
    for (expected, p) in names.iter().zip(model.params_mut()) {
        let (name, t) = read_block(&mut c)?;
        if &name != expected || t.shape() != p.value.shape() {
            return Err(Error::Integrity(format!("block {name:?} {:?} does not match {expected:?} {:?}", t.shape(), p.value.shape())));
        }
        p.value = t;
    }
    if c.pos != buf.len() {
        return Err(Error::Integrity(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(model)
}

pub fn load(mut r: impl Read) -> Result<LfmModel> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
