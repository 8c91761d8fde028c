//! Binary container shared by embeddings, lexicons, centroids and token checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      16 bytes  "OAK-EMBEDDINGS\0\x01"
//! rows       u32
//! dim        u32
//! values     rows * dim f32, row-major
//! sections   zero or more of: tag [u8; 4], length u32, payload [u8; length]
//! ```
//!
//! Known section tags: `NAME` (row names: u32 count, then u32-length-prefixed UTF-8
//! strings), `CTXT` (UTF-8 context id), `VELO` (f32 momentum buffer, same shape as the
//! values), `META` (UTF-8 `key=value` lines).

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::tensor::Mat;

pub const MAGIC: &[u8; 16] = b"OAK-EMBEDDINGS\0\x01";

pub const TAG_NAMES: [u8; 4] = *b"NAME";
pub const TAG_CONTEXT: [u8; 4] = *b"CTXT";
pub const TAG_VELOCITY: [u8; 4] = *b"VELO";
pub const TAG_META: [u8; 4] = *b"META";

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f32>,
    pub sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), rows * dim);
        Self { rows, dim, values, sections: Vec::new() }
    }

    pub fn from_mat(m: &Mat) -> Self {
        Self::new(m.rows(), m.cols(), m.as_slice().iter().map(|&v| v as f32).collect())
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_vec(self.rows, self.dim, self.values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn section(&self, tag: [u8; 4]) -> Option<&[u8]> {
        self.sections.iter().find(|(t, _)| *t == tag).map(|(_, p)| p.as_slice())
    }

    pub fn push_section(&mut self, tag: [u8; 4], payload: Vec<u8>) {
        self.sections.push((tag, payload));
    }

    pub fn with_names(mut self, names: &[String]) -> Self {
        let mut p = Vec::new();
        p.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for n in names {
            p.extend_from_slice(&(n.len() as u32).to_le_bytes());
            p.extend_from_slice(n.as_bytes());
        }
        self.push_section(TAG_NAMES, p);
        self
    }

    pub fn names(&self) -> Result<Option<Vec<String>>> {
        let Some(mut p) = self.section(TAG_NAMES) else { return Ok(None) };
        let count = take_u32(&mut p)? as usize;
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = take_u32(&mut p)? as usize;
            let bytes = take(&mut p, len)?;
            names.push(
                String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format("name table is not UTF-8".into()))?,
            );
        }
        Ok(Some(names))
    }

    pub fn text_section(&self, tag: [u8; 4]) -> Result<Option<String>> {
        self.section(tag)
            .map(|p| String::from_utf8(p.to_vec()).map_err(|_| Error::Format("section is not UTF-8".into())))
            .transpose()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut p = bytes;
        if take(&mut p, 16)? != MAGIC {
            return Err(Error::Format("bad container magic".into()));
        }
        let rows = take_u32(&mut p)? as usize;
        let dim = take_u32(&mut p)? as usize;
        let n = rows.checked_mul(dim).ok_or_else(|| Error::Format("container too large".into()))?;
        let raw = take(&mut p, n * 4)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut sections = Vec::new();
        while !p.is_empty() {
            let tag: [u8; 4] = take(&mut p, 4)?.try_into().expect("four bytes");
            let len = take_u32(&mut p)? as usize;
            sections.push((tag, take(&mut p, len)?.to_vec()));
        }
        Ok(Self { rows, dim, values, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).at(path)?)
    }
}

/// `key=value` lines, in insertion order.
pub fn encode_meta(pairs: &[(&str, String)]) -> Vec<u8> {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect::<String>().into_bytes()
}

pub fn decode_meta(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn take<'a>(p: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if p.len() < n {
        return Err(Error::Format("truncated container".into()));
    }
    let (head, tail) = p.split_at(n);
    *p = tail;
    Ok(head)
}

fn take_u32(p: &mut &[u8]) -> Result<u32> {
    let b = take(p, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}
