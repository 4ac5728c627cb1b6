//! LFTR raw tensor files.
//!
//! Layout: magic `LFTR`, u32 version (1), u8 dtype code (0 = f32, 1 = f64),
//! u32 rank, u32 dims[rank], then the row-major payload. All integers and
//! values are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{check_shape, numel, DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"LFTR";
pub const VERSION: u32 = 1;

/// A decoded tensor of either dtype.
#[derive(Clone, Debug)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn into_f32(self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t,
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Element>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("LFTR stream ends early".into())
    } else {
        Error::Io(e)
    }
}

fn read_payload<T: Element>(r: &mut impl Read, shape: Vec<usize>) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    let mut bytes = vec![0u8; numel(&shape) * size];
    r.read_exact(&mut bytes).map_err(truncated)?;
    let data = bytes.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(&shape, data)
}

/// Reads one tensor from the stream, leaving any trailing bytes unread.
pub fn read_any(r: &mut impl Read) -> Result<AnyTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"LFTR\"")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported LFTR version {version}")));
    }
    let mut code = [0u8; 1];
    r.read_exact(&mut code).map_err(truncated)?;
    let dtype = DType::from_code(code[0]).ok_or_else(|| Error::Format(format!("unknown dtype code {}", code[0])))?;
    let rank = read_u32(r)? as usize;
    if rank > crate::tensor::MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {}", crate::tensor::MAX_RANK)));
    }
    let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    check_shape("lftr", &shape).map_err(|e| Error::Format(e.to_string()))?;
    Ok(match dtype {
        DType::F32 => AnyTensor::F32(read_payload(r, shape)?),
        DType::F64 => AnyTensor::F64(read_payload(r, shape)?),
    })
}

pub fn write_file<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    encode(t, &mut buf);
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let bytes = std::fs::read(path)?;
    let mut cur = bytes.as_slice();
    let t = read_any(&mut cur)?;
    if !cur.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", cur.len())));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2], vec![1.0f32, -2.0]).unwrap();
        let mut b = Vec::new();
        encode(&t, &mut b);
        assert_eq!(&b[..4], b"LFTR");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(b[8], 0);
        assert_eq!(&b[9..13], &[1, 0, 0, 0]);
        assert_eq!(&b[13..17], &[2, 0, 0, 0]);
        assert_eq!(&b[17..21], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 25);
    }

    #[test]
    fn round_trip_both_dtypes() {
        let a = Tensor::from_fn(&[2, 3, 1, 2], |i| i as f32 * 0.1 - 0.3);
        let mut b = Vec::new();
        encode(&a, &mut b);
        match read_any(&mut b.as_slice()).unwrap() {
            AnyTensor::F32(t) => assert!(t.bit_eq(&a)),
            _ => panic!("wrong dtype"),
        }
        let c = Tensor::from_fn(&[3], |i| (i as f64).exp());
        let mut b = Vec::new();
        encode(&c, &mut b);
        match read_any(&mut b.as_slice()).unwrap() {
            AnyTensor::F64(t) => assert!(t.bit_eq(&c)),
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f32>::ones(&[4]);
        let mut b = Vec::new();
        encode(&t, &mut b);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(read_any(&mut bad.as_slice()).is_err());
        let short = &b[..b.len() - 1];
        assert!(read_any(&mut &short[..]).is_err());
        let mut bad = b.clone();
        bad[8] = 7;
        assert!(read_any(&mut bad.as_slice()).is_err());
    }
}
