//! Binary token cache.
//!
//! Layout (little-endian): `"BSAT"`, u32 version, u32 L, u32 n, u32 p,
//! f64 g, u64 fingerprint, u64 record count, then per record a u64 window
//! start followed by n f64 coefficients and n f64 centers.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::TokenizerConfig;

pub const MAGIC: &[u8; 4] = b"BSAT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheHeader {
    pub lookback: u32,
    pub budget: u32,
    pub degree: u32,
    pub clip_factor: f64,
    pub fingerprint: u64,
}

impl CacheHeader {
    pub fn for_series(series: &[f64], config: &TokenizerConfig, stride: usize) -> Self {
        Self {
            lookback: config.lookback as u32,
            budget: config.budget as u32,
            degree: config.degree as u32,
            clip_factor: config.clip_factor,
            fingerprint: fingerprint(series, config, stride),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub start: u64,
    pub coeffs: Vec<f64>,
    pub centers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCache {
    pub header: CacheHeader,
    pub records: Vec<CacheRecord>,
}

impl TokenCache {
    /// Checks that this cache was produced for `expected` and the given window starts.
    pub fn validate(&self, expected: &CacheHeader, starts: &[usize]) -> Result<()> {
        let h = &self.header;
        if h.lookback != expected.lookback
            || h.budget != expected.budget
            || h.degree != expected.degree
            || h.clip_factor.to_bits() != expected.clip_factor.to_bits()
        {
            return Err(Error::CacheMismatch(format!(
                "header (L={}, n={}, p={}, g={}) does not match request (L={}, n={}, p={}, g={})",
                h.lookback,
                h.budget,
                h.degree,
                h.clip_factor,
                expected.lookback,
                expected.budget,
                expected.degree,
                expected.clip_factor
            )));
        }
        if h.fingerprint != expected.fingerprint {
            return Err(Error::CacheMismatch("series fingerprint differs".into()));
        }
        if self.records.len() != starts.len()
            || self.records.iter().zip(starts).any(|(r, &s)| r.start != s as u64)
        {
            return Err(Error::CacheMismatch("window layout differs".into()));
        }
        Ok(())
    }
}

/// FNV-1a 64 over the raw series bytes and every tokenizer setting.
pub fn fingerprint(series: &[f64], config: &TokenizerConfig, stride: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for v in series {
        feed(&v.to_le_bytes());
    }
    feed(&(config.lookback as u32).to_le_bytes());
    feed(&(config.budget as u32).to_le_bytes());
    feed(&(config.degree as u32).to_le_bytes());
    feed(&config.clip_factor.to_le_bytes());
    feed(&config.coeff_cap.to_le_bytes());
    feed(&config.ridge_threshold.to_le_bytes());
    feed(&config.ridge_scale.to_le_bytes());
    feed(&(stride as u64).to_le_bytes());
    h
}

pub fn encode(cache: &TokenCache) -> Vec<u8> {
    let n = cache.header.budget as usize;
    let mut out = Vec::with_capacity(40 + cache.records.len() * (8 + 16 * n));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&cache.header.lookback.to_le_bytes());
    out.extend_from_slice(&cache.header.budget.to_le_bytes());
    out.extend_from_slice(&cache.header.degree.to_le_bytes());
    out.extend_from_slice(&cache.header.clip_factor.to_le_bytes());
    out.extend_from_slice(&cache.header.fingerprint.to_le_bytes());
    out.extend_from_slice(&(cache.records.len() as u64).to_le_bytes());
    for r in &cache.records {
        out.extend_from_slice(&r.start.to_le_bytes());
        for v in r.coeffs.iter().chain(&r.centers) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(Error::CacheMismatch("truncated cache file".into()));
        }
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(a)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<TokenCache> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(Error::CacheMismatch("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CacheMismatch(format!("unsupported version {version}")));
    }
    let header = CacheHeader {
        lookback: r.u32()?,
        budget: r.u32()?,
        degree: r.u32()?,
        clip_factor: r.f64()?,
        fingerprint: r.u64()?,
    };
    let count = r.u64()? as usize;
    let n = header.budget as usize;
    let remaining = bytes.len() - r.pos;
    if remaining != count * (8 + 16 * n) {
        return Err(Error::CacheMismatch(format!(
            "expected {count} records, payload has {remaining} bytes"
        )));
    }
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let start = r.u64()?;
        let coeffs = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let centers = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        records.push(CacheRecord {
            start,
            coeffs,
            centers,
        });
    }
    Ok(TokenCache { header, records })
}

pub fn read_cache(path: &Path) -> Result<TokenCache> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_cache_atomic(path: &Path, cache: &TokenCache) -> Result<()> {
    write_atomic(path, &encode(cache))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            n in 1usize..6,
            count in 0usize..4,
            vals in prop::collection::vec(any::<f64>(), 48),
            g in any::<f64>(),
        ) {
            let records = (0..count)
                .map(|k| CacheRecord {
                    start: (k * 7) as u64,
                    coeffs: (0..n).map(|i| vals[(k * n + i) % 48]).collect(),
                    centers: (0..n).map(|i| vals[(k * n + i + 11) % 48]).collect(),
                })
                .collect();
            let cache = TokenCache {
                header: CacheHeader { lookback: 9, budget: n as u32, degree: 2, clip_factor: g, fingerprint: 42 },
                records,
            };
            let bytes = encode(&cache);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let cache = TokenCache {
            header: CacheHeader {
                lookback: 720,
                budget: 2,
                degree: 3,
                clip_factor: 0.5,
                fingerprint: 7,
            },
            records: vec![CacheRecord {
                start: 5,
                coeffs: vec![1.0, 2.0],
                centers: vec![3.0, 4.0],
            }],
        };
        let b = encode(&cache);
        assert_eq!(&b[0..4], b"BSAT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 720);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), 0.5);
        assert_eq!(u64::from_le_bytes(b[36..44].try_into().unwrap()), 1);
        assert_eq!(b.len(), 44 + 8 + 32);
        assert!(decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
