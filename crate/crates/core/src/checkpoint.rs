//! Little-endian binary serialization helpers and the versioned model
//! checkpoint container (magic + version + CRC-protected payload).
//!
//! Checkpoints must round-trip bit-exactly: all reals are stored as raw
//! f64 bits.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use std::fs;
use std::path::Path;

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.put_f64(v);
        }
    }

    pub fn put_tensor(&mut self, t: &Tensor) {
        self.put_u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.put_u64(d as u64);
        }
        self.put_f64_slice(t.data());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn get_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.get_f64()?);
        }
        Ok(out)
    }

    pub fn get_tensor(&mut self) -> Result<Tensor> {
        let rank = self.get_u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.get_u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let data = self.get_f64_vec(n)?;
        Tensor::new(shape, data)
    }

    pub fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Write `magic | version | payload | crc32(payload)`.
pub fn write_checkpoint(path: &Path, magic: &[u8; 4], version: u32, payload: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    fs::write(path, out)?;
    Ok(())
}

/// Read and verify a checkpoint written by [`write_checkpoint`]; returns the
/// payload.
pub fn read_checkpoint(path: &Path, magic: &[u8; 4], version: u32) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.len() < 12 {
        return Err(Error::Format("file too short for header".into()));
    }
    if &raw[0..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &raw[0..4],
            magic
        )));
    }
    let got_version = u32::from_le_bytes(raw[4..8].try_into().unwrap());
    if got_version != version {
        return Err(Error::Format(format!(
            "version {got_version}, expected {version}"
        )));
    }
    let payload = &raw[8..raw.len() - 4];
    let want_crc = u32::from_le_bytes(raw[raw.len() - 4..].try_into().unwrap());
    if crc32fast::hash(payload) != want_crc {
        return Err(Error::Format("checksum mismatch".into()));
    }
    Ok(payload.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn checkpoint_round_trips_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut w = ByteWriter::new();
        w.put_tensor(
            &Tensor::new(
                vec![2, 3],
                vec![1.5, -0.25, 3e-300, f64::MIN_POSITIVE, 0.0, -0.0],
            )
            .unwrap(),
        );
        w.put_u64(42);
        let payload = w.into_bytes();
        write_checkpoint(&path, b"TEST", 3, &payload).unwrap();

        let back = read_checkpoint(&path, b"TEST", 3).unwrap();
        assert_eq!(back, payload);
        let mut r = ByteReader::new(&back);
        let t = r.get_tensor().unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data()[4].to_bits(), 0.0f64.to_bits());
        assert_eq!(t.data()[5].to_bits(), (-0.0f64).to_bits());
        assert_eq!(r.get_u64().unwrap(), 42);
        assert!(r.done());
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, b"TEST", 1, &[1, 2, 3, 4]).unwrap();

        let mut raw = fs::read(&path).unwrap();
        raw[9] ^= 0xff;
        fs::write(&path, &raw).unwrap();
        assert!(matches!(
            read_checkpoint(&path, b"TEST", 1),
            Err(Error::Format(_))
        ));

        assert!(read_checkpoint(&path, b"XXXX", 1).is_err());
        assert!(read_checkpoint(&path, b"TEST", 2).is_err());
    }
}
