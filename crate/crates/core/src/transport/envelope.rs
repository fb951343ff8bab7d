//! Binary summary envelope.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "SHIR" | u16 version | u16 id length | id (UTF-8) | u8 family | u64 n | u32 p
//!        | f64 lambda_m | p × f64 g | p(p+1)/2 × f64 upper(H), row-major | u32 CRC-32
//! ```
//!
//! The checksum covers every preceding byte and is verified before any field
//! is read.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::Result;
use crate::glm::LossFamily;
use crate::local::{LocalSummary, SCHEMA_VERSION};

pub const MAGIC: [u8; 4] = *b"SHIR";
pub const VERSION: u16 = SCHEMA_VERSION;

/// Bytes of an envelope with an empty id and `p = 0`.
pub const MIN_LEN: usize = 4 + 2 + 2 + 1 + 8 + 4 + 8 + 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("truncated envelope: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("cannot encode summary: {0}")]
    Encoding(String),
}

type EResult<T> = std::result::Result<T, EnvelopeError>;

fn family_tag(f: LossFamily) -> u8 {
    match f {
        LossFamily::SquaredError => 0,
        LossFamily::Logistic => 1,
    }
}

/// Total size in bytes of an envelope with the given id length and dimension.
pub fn encoded_len(id_len: usize, p: usize) -> usize {
    MIN_LEN + id_len + 8 * p + 8 * (p * (p + 1) / 2)
}

pub fn encode(s: &LocalSummary) -> EResult<Vec<u8>> {
    let bad = |m: String| Err(EnvelopeError::Encoding(m));
    if s.schema_version != VERSION {
        return bad(format!("schema version {} is not {VERSION}", s.schema_version));
    }
    let id_len = match u16::try_from(s.site_id.len()) {
        Ok(v) => v,
        Err(_) => return bad(format!("site id of {} bytes", s.site_id.len())),
    };
    let p32 = match u32::try_from(s.p) {
        Ok(v) => v,
        Err(_) => return bad(format!("dimension {}", s.p)),
    };
    let tri = (s.p as u64) * (s.p as u64 + 1) / 2;
    if tri > u64::from(u32::MAX) {
        return bad(format!("upper triangle of {tri} entries overflows the size field"));
    }
    if s.h.shape() != (s.p, s.p) || s.g.len() != s.p {
        return bad(format!(
            "H is {:?} and g has {} entries for p = {}",
            s.h.shape(),
            s.g.len(),
            s.p
        ));
    }
    for j in 0..s.p {
        for k in (j + 1)..s.p {
            if s.h[(j, k)].to_bits() != s.h[(k, j)].to_bits() {
                return bad("H is not symmetric".into());
            }
        }
    }

    let mut out = Vec::with_capacity(encoded_len(s.site_id.len(), s.p));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(s.site_id.as_bytes());
    out.push(family_tag(s.family));
    out.extend_from_slice(&s.n.to_le_bytes());
    out.extend_from_slice(&p32.to_le_bytes());
    out.extend_from_slice(&s.lambda_m.to_le_bytes());
    for v in s.g.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for j in 0..s.p {
        for k in j..s.p {
            out.extend_from_slice(&s.h[(j, k)].to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> EResult<&'a [u8]> {
        let end = self.pos + k;
        if end > self.buf.len() {
            return Err(EnvelopeError::Truncated {
                needed: end + 4,
                available: self.buf.len() + 4,
            });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const K: usize>(&mut self) -> EResult<[u8; K]> {
        Ok(self.take(K)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> EResult<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> EResult<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> EResult<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> EResult<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn decode(bytes: &[u8]) -> EResult<LocalSummary> {
    if bytes.len() < MIN_LEN {
        return Err(EnvelopeError::Truncated {
            needed: MIN_LEN,
            available: bytes.len(),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(EnvelopeError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 0 };
    let magic: [u8; 4] = r.array()?;
    if magic != MAGIC {
        return Err(EnvelopeError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(EnvelopeError::UnsupportedVersion(version));
    }
    let id_len = r.u16()? as usize;
    let site_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|e| EnvelopeError::Malformed(format!("site id is not UTF-8: {e}")))?
        .to_string();
    let family = match r.array::<1>()?[0] {
        0 => LossFamily::SquaredError,
        1 => LossFamily::Logistic,
        t => return Err(EnvelopeError::Malformed(format!("unknown family tag {t}"))),
    };
    let n = r.u64()?;
    let p = r.u32()? as usize;
    let lambda_m = r.f64()?;
    let needed = encoded_len(id_len, p);
    if bytes.len() < needed {
        return Err(EnvelopeError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(EnvelopeError::TrailingBytes(bytes.len() - needed));
    }
    let mut g = DVector::zeros(p);
    for j in 0..p {
        g[j] = r.f64()?;
    }
    let mut h = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let v = r.f64()?;
            h[(j, k)] = v;
            h[(k, j)] = v;
        }
    }
    let s = LocalSummary {
        site_id,
        n,
        p,
        h,
        g,
        family,
        lambda_m,
        schema_version: version,
    };
    s.validate()
        .map_err(|e| EnvelopeError::Malformed(e.to_string()))?;
    Ok(s)
}

/// Human-readable `key=value` description written next to each envelope.
pub fn sidecar_text(s: &LocalSummary, envelope: &[u8]) -> String {
    let crc = envelope
        .len()
        .checked_sub(4)
        .map(|i| u32::from_le_bytes(envelope[i..].try_into().expect("four bytes")))
        .unwrap_or(0);
    format!(
        "site_id={}\nschema_version={}\nfamily={}\nn={}\np={}\nlambda_m={:e}\nbytes={}\ncrc32={:08x}\n",
        s.site_id,
        s.schema_version,
        s.family.name(),
        s.n,
        s.p,
        s.lambda_m,
        envelope.len(),
        crc
    )
}

pub fn sidecar_path(envelope_path: &Path) -> PathBuf {
    let mut name = envelope_path.as_os_str().to_owned();
    name.push(".txt");
    PathBuf::from(name)
}

/// Writes the envelope and its sidecar.
pub fn write_envelope_file(path: &Path, s: &LocalSummary) -> Result<Vec<u8>> {
    let bytes = encode(s)?;
    fs::write(path, &bytes)?;
    fs::write(sidecar_path(path), sidecar_text(s, &bytes))?;
    Ok(bytes)
}

pub fn read_envelope_file(path: &Path) -> Result<LocalSummary> {
    Ok(decode(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ShirError;
    use proptest::prelude::*;

    fn sample(p: usize, id: &str) -> LocalSummary {
        let g = DVector::from_fn(p, |j, _| j as f64 * 0.5 - 1.0);
        let h = DMatrix::from_fn(p, p, |j, k| 1.0 / (1.0 + j as f64 + k as f64));
        LocalSummary {
            site_id: id.into(),
            n: 123,
            p,
            h,
            g,
            family: LossFamily::Logistic,
            lambda_m: 0.0625,
            schema_version: VERSION,
        }
    }

    #[test]
    fn size_of_small_zero_envelope() {
        let mut s = sample(2, "abc");
        s.h.fill(0.0);
        s.g.fill(0.0);
        let bytes = encode(&s).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 2 + 3 + 1 + 8 + 4 + 8 + 16 + 24 + 4);
        assert_eq!(bytes.len(), encoded_len(3, 2));
        assert_eq!(&bytes[..4], b"SHIR");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample(5, "site-ü");
        let back = decode(&encode(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back).unwrap(), encode(&s).unwrap());
    }

    #[test]
    fn each_failure_has_its_own_kind() {
        let bytes = encode(&sample(3, "x")).unwrap();
        let reseal = |mut b: Vec<u8>| {
            let n = b.len() - 4;
            let crc = crc32fast::hash(&b[..n]);
            b[n..].copy_from_slice(&crc.to_le_bytes());
            b
        };
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(matches!(decode(&reseal(m)), Err(EnvelopeError::BadMagic(_))));
        let mut m = bytes.clone();
        m[4] = 9;
        assert_eq!(decode(&reseal(m)), Err(EnvelopeError::UnsupportedVersion(9)));
        let mut m = bytes.clone();
        m[10] ^= 1;
        assert!(matches!(decode(&m), Err(EnvelopeError::ChecksumMismatch { .. })));
        assert!(matches!(decode(&bytes[..10]), Err(EnvelopeError::Truncated { .. })));
        // A consistent checksum over a body that claims a larger dimension.
        let mut m = bytes[..bytes.len() - 12].to_vec();
        m.extend_from_slice(&[0; 4]);
        assert!(matches!(decode(&reseal(m)), Err(EnvelopeError::Truncated { .. })));
        let mut m = bytes[..bytes.len() - 4].to_vec();
        m.extend_from_slice(&[0; 12]);
        assert!(matches!(decode(&reseal(m)), Err(EnvelopeError::TrailingBytes(8))));
    }

    #[test]
    fn encode_rejects_asymmetric_hessian_and_bad_version() {
        let mut s = sample(3, "x");
        s.h[(0, 1)] += 1.0;
        assert!(matches!(encode(&s), Err(EnvelopeError::Encoding(_))));
        let mut s = sample(3, "x");
        s.schema_version = 7;
        assert!(encode(&s).is_err());
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.shir");
        let s = sample(4, "a");
        let bytes = write_envelope_file(&path, &s).unwrap();
        assert_eq!(read_envelope_file(&path).unwrap(), s);
        let side = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(side.contains("site_id=a\n"));
        assert!(side.contains(&format!("bytes={}\n", bytes.len())));
        fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(
            read_envelope_file(&path),
            Err(ShirError::Envelope(EnvelopeError::Truncated { .. }))
        ));
    }

    proptest! {
        #[test]
        fn random_round_trips(p in 1usize..6, seed in any::<u64>(), id in "[a-z0-9_-]{0,12}") {
            let mut s = sample(p, &id);
            let f = |k: u64| f64::from_bits((seed.rotate_left(k as u32) >> 2) | 0x3ff0_0000_0000_0000) - 1.5;
            for j in 0..p {
                s.g[j] = f(j as u64);
                for k in j..p {
                    let v = f((j * 7 + k) as u64 + 11);
                    s.h[(j, k)] = v;
                    s.h[(k, j)] = v;
                }
            }
            prop_assert_eq!(decode(&encode(&s).unwrap()).unwrap(), s);
        }
    }
}
