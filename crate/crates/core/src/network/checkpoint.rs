//! Checkpoint container.
//!
//! Layout: magic `LFCK`, u32 version, u32 entry count, then per entry
//! u32 name length, UTF-8 name, u32 rank, u32 dims[rank]; then one LFTR
//! tensor per entry in header order. Little-endian throughout. Buffers
//! (normalization running statistics) are stored alongside parameters.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lftr;
use crate::nn::ParamStore;
use crate::tensor::Element;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint<T: Element>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_u32(&mut out, store.len());
    for e in store.entries() {
        put_u32(&mut out, e.name.len());
        out.extend_from_slice(e.name.as_bytes());
        put_u32(&mut out, e.value.rank());
        for &d in e.value.shape() {
            put_u32(&mut out, d);
        }
    }
    for e in store.entries() {
        lftr::encode(&e.value, &mut out);
    }
    out
}

pub fn write_checkpoint<T: Element>(path: impl AsRef<Path>, store: &ParamStore<T>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(store))?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("checkpoint header ends early".into()))?;
    Ok(u32::from_le_bytes(b) as usize)
}

/// Loads every entry of the checkpoint into `store`, which must declare
/// exactly the same names and shapes (typically a fresh `init_params`).
pub fn decode_checkpoint<T: Element>(mut r: impl Read, store: &mut ParamStore<T>) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("checkpoint is empty".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}, expected \"LFCK\"")));
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = get_u32(&mut r)?;
    if count != store.len() {
        return Err(Error::Format(format!("checkpoint has {count} entries, model declares {}", store.len())));
    }
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let n = get_u32(&mut r)?;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name).map_err(|_| Error::Format("checkpoint header ends early".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
        let rank = get_u32(&mut r)?;
        let dims = (0..rank).map(|_| get_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        header.push((name, dims));
    }
    for (name, dims) in header {
        let t = lftr::read_any(&mut r)?;
        if t.shape() != dims.as_slice() {
            return Err(Error::Format(format!("`{name}`: header shape {dims:?} but tensor shape {:?}", t.shape())));
        }
        let value = match t {
            lftr::AnyTensor::F32(t) => t.cast::<T>(),
            lftr::AnyTensor::F64(t) => t.cast::<T>(),
        };
        if store.get(&name).is_none() {
            return Err(Error::Format(format!("checkpoint entry `{name}` is not declared by the model")));
        }
        store.set(&name, value)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(())
}

pub fn read_checkpoint<T: Element>(path: impl AsRef<Path>, store: &mut ParamStore<T>) -> Result<()> {
    let f = std::fs::File::open(path)?;
    decode_checkpoint(std::io::BufReader::new(f), store)
}
