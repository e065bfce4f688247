//! Flat binary checkpoint: magic, count, then `(name, rank, dims, payload)` records,
//! all integers little-endian `u64` and payloads little-endian `f64`.

use std::io::{Read, Write};

use crate::scalar::Scalar;

use super::{NdError, Result, Tensor};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"NDGRAD01";

// Guards against absurd allocations when reading corrupt files.
const MAX_NAME: u64 = 1 << 16;
const MAX_RANK: u64 = 16;

pub fn write_archive<T: Scalar, W: Write>(mut w: W, tensors: &[(String, &Tensor<T>)]) -> Result<()> {
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_archive<T: Scalar, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(NdError::BadArchive(format!("bad magic {magic:?}")));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u64(&mut r)?;
        if len > MAX_NAME {
            return Err(NdError::BadArchive(format!("name length {len} too large")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NdError::BadArchive(e.to_string()))?;
        let rank = read_u64(&mut r)?;
        if rank > MAX_RANK {
            return Err(NdError::BadArchive(format!("rank {rank} too large for `{name}`")));
        }
        let dims = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(T::lit(f64::from_le_bytes(b)));
        }
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}
