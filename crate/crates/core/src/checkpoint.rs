//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 version, u64 entry count, then per entry:
//! u64 name length, UTF-8 name, u64 rank, dims as u64 little-endian, and
//! the f32 little-endian payload. Entries are written in sorted name order
//! so identical stores serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"QDTENSOR";
const VERSION: u32 = 1;

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let file = File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic in {}: not a checkpoint file",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)? as usize;

    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let rank = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        r.read_exact(&mut payload)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.insert(name, Tensor::new(data, &shape)?);
    }
    Ok(out)
}

/// Load into a store, checking every entry against the expected shapes of a
/// schema (name -> shape). Entries absent from the schema are rejected, as
/// are schema names missing from the file.
pub fn load_validated(path: &Path, schema: &BTreeMap<String, Vec<usize>>) -> Result<ParamStore> {
    let raw = load(path)?;
    for name in raw.keys() {
        if !schema.contains_key(name) {
            return Err(Error::Checkpoint(format!("unexpected entry {name}")));
        }
    }
    let mut store = ParamStore::new();
    for (name, shape) in schema {
        let t = raw
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} does not match expected {:?}",
                t.shape(),
                shape
            )));
        }
        store.insert(name.clone(), t.clone());
    }
    Ok(store)
}

/// SHA-256 of a file's raw bytes, hex-encoded. Used to stamp reports with
/// the checkpoint they came from.
pub fn file_digest(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex_string(&h.finalize()))
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
