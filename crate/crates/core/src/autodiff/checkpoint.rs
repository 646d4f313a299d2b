//! Flat named-tensor archive.
//!
//! Layout (little-endian):
//! `"MTNSARCH"`, version `u32`, entry count `u32`, then per entry:
//! name length `u32`, name bytes (UTF-8), rank `u32`, extents `u64 x rank`,
//! payload `f64 x prod(extents)`.

use super::tensor::Tensor;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"MTNSARCH";
pub const ARCHIVE_VERSION: u32 = 1;

pub fn encode_tensors<'a, I>(entries: I) -> Vec<u8>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let entries: Vec<_> = entries.into_iter().collect();
    let mut w = Writer::new();
    w.bytes(ARCHIVE_MAGIC);
    w.u32(ARCHIVE_VERSION);
    w.u32(entries.len() as u32);
    for (name, t) in entries {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.u32(t.rank() as u32);
        for &e in t.shape() {
            w.u64(e as u64);
        }
        w.f64s(t.data());
    }
    w.into_inner()
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes, "tensor archive");
    let out = read_tensors(&mut r)?;
    r.finish()?;
    Ok(out)
}

pub(crate) fn read_tensors(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor)>> {
    r.expect_magic(ARCHIVE_MAGIC)?;
    r.expect_version(ARCHIVE_VERSION)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Malformed {
                what: "tensor archive",
                detail: format!("tensor name: {e}"),
            })?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or(Error::Truncated("tensor archive"))?;
        let data = r.f64s(numel)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Malformed {
            what: "tensor archive",
            detail: format!("tensor {name}: {e}"),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_and_bits() {
        let a = Tensor::matrix(2, 2, vec![1.0, -0.5, 1e-300, 3.25]).unwrap();
        let b = Tensor::scalar(std::f64::consts::PI);
        let bytes = encode_tensors([("a", &a), ("bee", &b)]);
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].0, "bee");
        assert_eq!(back[1].1.data()[0].to_bits(), b.data()[0].to_bits());
    }

    #[test]
    fn truncation_and_bad_header_are_errors() {
        let a = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_tensors([("a", &a)]);
        assert!(matches!(
            decode_tensors(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensors(&bad), Err(Error::BadMagic(_))));
        let mut v2 = bytes.clone();
        v2[8] = 9;
        assert!(matches!(decode_tensors(&v2), Err(Error::VersionMismatch { .. })));
    }
}
