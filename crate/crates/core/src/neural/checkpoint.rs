use std::path::Path;

use super::Tensor;
use crate::mesh::io::Reader;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named tensors plus a free-form JSON manifest.
///
/// Layout: magic, u32 version, u32 manifest length, manifest bytes, u32 section
/// count, then per section (u32 name length, name, u64 rows, u64 cols, u64
/// offset in values), then u64 value count and the little-endian f64 payload.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub manifest: String,
    pub sections: Vec<(String, Tensor)>,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        msg: msg.into(),
    }
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&Tensor> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(self.manifest.as_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += t.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for (_, t) in &self.sections {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(parse_err(0, "bad checkpoint magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(parse_err(
                4,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let at = r.pos;
        let len = r.u32()? as usize;
        let manifest = std::str::from_utf8(r.take(len)?)
            .map_err(|_| parse_err(at, "manifest is not utf-8"))?
            .to_string();
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| parse_err(at, "section name is not utf-8"))?
                .to_string();
            let (rows, cols, offset) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
            table.push((at, name, rows, cols, offset));
        }
        let at = r.pos;
        let total = r.u64()? as usize;
        if total
            .checked_mul(8)
            .is_none_or(|b| b != bytes.len() - r.pos)
        {
            return Err(parse_err(
                at,
                format!("payload of {total} values does not match file size"),
            ));
        }
        let payload: Vec<f64> = (0..total).map(|_| r.f64()).collect::<Result<_>>()?;
        let mut sections = Vec::with_capacity(table.len());
        for (at, name, rows, cols, offset) in table {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| parse_err(at, "section shape overflows"))?;
            let end = offset
                .checked_add(n)
                .filter(|&e| e <= total)
                .ok_or_else(|| parse_err(at, format!("section {name} exceeds payload")))?;
            sections.push((
                name,
                Tensor::new(rows, cols, payload[offset..end].to_vec())?,
            ));
        }
        Ok(Checkpoint { manifest, sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
