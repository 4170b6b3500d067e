//! Sidecar binary arrays: `b"O3DB"`, `u32` rank, `rank × u64` dims, then
//! little-endian `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use super::ScanIoError;

const MAGIC: &[u8; 4] = b"O3DB";

pub fn write_blob(path: &Path, dims: &[usize], values: impl IntoIterator<Item = f32>) -> Result<(), ScanIoError> {
    let expected: usize = dims.iter().product();
    let mut buf = Vec::with_capacity(8 + dims.len() * 8 + expected * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let mut n = 0usize;
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
        n += 1;
    }
    if n != expected {
        return Err(ScanIoError::schema(path, format!("blob holds {n} values, dims say {expected}")));
    }
    let mut f = std::fs::File::create(path).map_err(|e| ScanIoError::io(path, e))?;
    f.write_all(&buf).map_err(|e| ScanIoError::io(path, e))
}

/// Reads a blob, returning its dims and values.
pub fn read_blob(path: &Path) -> Result<(Vec<usize>, Vec<f32>), ScanIoError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ScanIoError::io(path, e))?;
    let bad = |msg: &str| ScanIoError::schema(path, format!("blob: {msg}"));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing header"));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header = 8 + rank * 8;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[8 + i * 8..16 + i * 8].try_into().expect("8 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count * 4 {
        return Err(bad("payload size does not match dims"));
    }
    let values = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dims, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_blob(&p, &[2, 3], [1.0, 2.0, 3.0, 4.0, 5.0, -6.5]).unwrap();
        let (dims, v) = read_blob(&p).unwrap();
        assert_eq!(dims, vec![2, 3]);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 5.0, -6.5]);
        assert!(write_blob(&p, &[2, 2], [1.0]).is_err());
        std::fs::write(&p, b"O3DB\x01\x00\x00\x00").unwrap();
        assert!(read_blob(&p).is_err());
    }
}
