//! The `DMWB` tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! "DMWB"  u32 version=1  u32 tensor_count
//! per tensor: u16 name_len, name (UTF-8), u8 dtype, u8 ndim, ndim × u32 dims, payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! dtype 0 is f32. dtype 1 is raw bytes, used for embedded JSON documents.

use super::tensor::Tensor;
use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"DMWB";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_BYTES: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F32(Tensor),
    Bytes(Vec<u8>),
}

/// Named entries in file order.
pub type Entries = Vec<(String, Entry)>;

pub fn encode(entries: &[(String, Entry)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, entry) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        match entry {
            Entry::F32(t) => {
                out.push(DTYPE_F32);
                out.push(t.dims().len() as u8);
                for &d in t.dims() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Entry::Bytes(b) => {
                out.push(DTYPE_BYTES);
                out.push(1);
                out.extend_from_slice(&(b.len() as u32).to_le_bytes());
                out.extend_from_slice(b);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Entries, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4).map_err(|_| FormatError::BadMagic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let dtype = cur.u8()?;
        let ndim = cur.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::Malformed(format!("dims of `{name}` overflow")))?;
        let entry = match dtype {
            DTYPE_F32 => {
                let raw = cur.take(n.checked_mul(4).ok_or_else(|| {
                    FormatError::Malformed(format!("payload of `{name}` overflows"))
                })?)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Entry::F32(
                    Tensor::new(dims, data)
                        .map_err(|e| FormatError::Malformed(format!("`{name}`: {e}")))?,
                )
            }
            DTYPE_BYTES if ndim == 1 => Entry::Bytes(cur.take(n)?.to_vec()),
            other => {
                return Err(FormatError::Malformed(format!(
                    "`{name}` has unsupported dtype {other} / ndim {ndim}"
                )))
            }
        };
        entries.push((name, entry));
    }
    let body_end = cur.pos;
    let stored = cur.u32()?;
    if cur.pos != bytes.len() {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes after checksum",
            bytes.len() - cur.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Entries {
        vec![
            ("doc".into(), Entry::Bytes(b"{\"a\":1}".to_vec())),
            (
                "w".into(),
                Entry::F32(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-8, 7.0]).unwrap()),
            ),
        ]
    }

    #[test]
    fn round_trip() {
        let bytes = encode(&sample());
        assert_eq!(decode(&bytes).unwrap(), sample());
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn distinct_failures() {
        let bytes = encode(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad), Err(FormatError::BadMagic));
        assert!(matches!(decode(&bytes[..bytes.len() - 10]), Err(FormatError::Truncated { .. })));
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 8] ^= 0x40;
        assert!(matches!(decode(&flipped), Err(FormatError::ChecksumMismatch { .. })));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert_eq!(decode(&v2), Err(FormatError::UnsupportedVersion(2)));
        assert_eq!(decode(b"DM"), Err(FormatError::BadMagic));
    }
}
