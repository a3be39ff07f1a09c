//! Length-prefixed token record files.
//!
//! ```text
//! magic   4 bytes "WGDS"
//! version u32
//! count   u64
//! per record: label u32 (u32::MAX = none), len u32, len × u16 token ids
//! ```
//! All integers little-endian. A JSON manifest next to the file records
//! how to regenerate it.

use std::path::Path;

use crate::error::{data_err, Result};

pub const MAGIC: &[u8; 4] = b"WGDS";
pub const VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub tokens: Vec<usize>,
    pub label: Option<usize>,
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (i, r) in records.iter().enumerate() {
        let label = match r.label {
            None => NO_LABEL,
            Some(l) if l < NO_LABEL as usize => l as u32,
            Some(l) => return data_err(format!("record {i}: label {l} too large")),
        };
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&(r.tokens.len() as u32).to_le_bytes());
        for &t in &r.tokens {
            let t = u16::try_from(t).or_else(|_| data_err(format!("record {i}: token {t} exceeds u16")))?;
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return data_err("truncated record file");
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r, 4)?.try_into().expect("4 bytes")))
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = bytes;
    if take(&mut r, 4)? != MAGIC {
        return data_err("not a record file");
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return data_err(format!("unsupported record file version {version}"));
    }
    let count = u64::from_le_bytes(take(&mut r, 8)?.try_into().expect("8 bytes")) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let label = read_u32(&mut r)?;
        let len = read_u32(&mut r)? as usize;
        let tokens = take(&mut r, len * 2)?.chunks_exact(2).map(|c| usize::from(u16::from_le_bytes([c[0], c[1]]))).collect();
        records.push(Record { tokens, label: (label != NO_LABEL).then_some(label as usize) });
    }
    if !r.is_empty() {
        return data_err("trailing bytes in record file");
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    std::fs::write(path, encode_records(records)?)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    decode_records(&std::fs::read(path)?)
}
