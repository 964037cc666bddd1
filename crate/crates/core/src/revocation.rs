//! Compressed revocation filters.
//!
//! A vendor knows every certificate serial it has ever had issued, so it can
//! publish a Bloom filter cascade that is exact over that universe: level 0
//! encodes the revoked set, level 1 the non-revoked serials that falsely hit
//! level 0, level 2 the revoked serials that hit level 1, and so on until a
//! level produces no false positives.
//!
//! Serials are opaque strings (the rest of the system uses decimal renderings
//! of X.509 serial numbers). Serials outside the build universe may query
//! either way; relying parties must reject unknown issuers before consulting a
//! filter.

use std::collections::BTreeSet;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// Magic prefix of the serialized format; the final byte is the format version.
pub const FILTER_MAGIC: &[u8; 8] = b"ATLSCRL1";

const MAX_LEVELS: usize = 255;
const MIN_LEVEL_BITS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FilterError {
    #[error("{count} revoked serial(s) not in the issued universe, e.g. {example:?}")]
    RevokedNotIssued { count: usize, example: String },
    #[error("corrupt filter: {0}")]
    CorruptFilter(String),
    #[error("unsupported filter format version {found:?}")]
    VersionMismatch { found: u8 },
    #[error("cascade did not converge within {MAX_LEVELS} levels")]
    NoConvergence,
}

/// One Bloom filter level of the cascade.
#[derive(Clone, PartialEq, Eq)]
pub struct FilterLevel {
    bit_len: u32,
    num_hashes: u8,
    seed: u64,
    bits: Vec<u8>,
}

impl fmt::Debug for FilterLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterLevel")
            .field("bit_len", &self.bit_len)
            .field("num_hashes", &self.num_hashes)
            .field("seed", &format_args!("{:#018x}", self.seed))
            .finish()
    }
}

impl FilterLevel {
    fn sized_for(count: usize, fp_rate: f64, seed: u64) -> Self {
        let ln2 = std::f64::consts::LN_2;
        let (bit_len, num_hashes) = if count == 0 {
            (MIN_LEVEL_BITS, 1)
        } else {
            let m = (-(count as f64) * fp_rate.ln() / (ln2 * ln2)).ceil();
            let m = (m as u32).max(MIN_LEVEL_BITS);
            let k = ((m as f64 / count as f64) * ln2).round().clamp(1.0, 32.0) as u8;
            (m, k)
        };
        Self { bit_len, num_hashes, seed, bits: vec![0u8; bit_len.div_ceil(8) as usize] }
    }

    fn positions<'a>(&'a self, serial: &str) -> impl Iterator<Item = usize> + 'a {
        let digest = Sha256::new().chain_update(self.seed.to_be_bytes()).chain_update(serial.as_bytes()).finalize();
        let h1 = u64::from_be_bytes(digest[0..8].try_into().unwrap());
        let h2 = u64::from_be_bytes(digest[8..16].try_into().unwrap()) | 1;
        let m = self.bit_len as u64;
        (0..self.num_hashes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as usize)
    }

    fn insert(&mut self, serial: &str) {
        let positions: Vec<usize> = self.positions(serial).collect();
        for p in positions {
            self.bits[p / 8] |= 1 << (p % 8);
        }
    }

    fn contains(&self, serial: &str) -> bool {
        self.positions(serial).all(|p| self.bits[p / 8] & (1 << (p % 8)) != 0)
    }

    pub fn bit_len(&self) -> u32 {
        self.bit_len
    }

    pub fn num_hashes(&self) -> u8 {
        self.num_hashes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// A vendor-published revocation filter cascade.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevocationFilter {
    vendor_id: String,
    epoch: u64,
    universe_digest: [u8; 32],
    levels: Vec<FilterLevel>,
}

fn level_seed(epoch: u64, level: usize) -> u64 {
    let digest = Sha256::new()
        .chain_update(b"atlas-crl-level")
        .chain_update(epoch.to_be_bytes())
        .chain_update((level as u64).to_be_bytes())
        .finalize();
    u64::from_be_bytes(digest[0..8].try_into().unwrap())
}

/// SHA-256 over the sorted universe, each serial followed by a newline.
pub fn universe_digest<'a>(universe: impl IntoIterator<Item = &'a str>) -> [u8; 32] {
    let sorted: BTreeSet<&str> = universe.into_iter().collect();
    let mut h = Sha256::new();
    for s in sorted {
        h.update(s.as_bytes());
        h.update(b"\n");
    }
    h.finalize().into()
}

/// Builds a cascade that answers exactly over `issued_universe`.
///
/// The first level targets a false-positive rate of `0.5 * |revoked| / |universe|`,
/// later levels 0.5. Level seeds derive from `epoch`, so the same inputs always
/// produce the same bytes.
pub fn build_filter<S: AsRef<str>>(
    revoked: &[S],
    issued_universe: &[S],
    vendor_id: &str,
    epoch: u64,
) -> Result<RevocationFilter, FilterError> {
    let universe: BTreeSet<&str> = issued_universe.iter().map(AsRef::as_ref).collect();
    let revoked: BTreeSet<&str> = revoked.iter().map(AsRef::as_ref).collect();
    let missing: Vec<&&str> = revoked.difference(&universe).collect();
    if let Some(first) = missing.first() {
        return Err(FilterError::RevokedNotIssued { count: missing.len(), example: first.to_string() });
    }

    let mut include: Vec<&str> = revoked.iter().copied().collect();
    let mut exclude: Vec<&str> = universe.difference(&revoked).copied().collect();
    let mut levels = Vec::new();
    loop {
        if levels.len() == MAX_LEVELS {
            return Err(FilterError::NoConvergence);
        }
        let fp_rate = if levels.is_empty() {
            (0.5 * include.len() as f64 / universe.len().max(1) as f64).clamp(1e-9, 0.5)
        } else {
            0.5
        };
        let mut level = FilterLevel::sized_for(include.len(), fp_rate, level_seed(epoch, levels.len()));
        for s in &include {
            level.insert(s);
        }
        let false_hits: Vec<&str> = exclude.iter().copied().filter(|s| level.contains(s)).collect();
        levels.push(level);
        if false_hits.is_empty() {
            break;
        }
        exclude = std::mem::replace(&mut include, false_hits);
    }

    Ok(RevocationFilter {
        vendor_id: vendor_id.to_owned(),
        epoch,
        universe_digest: universe_digest(universe.iter().copied()),
        levels,
    })
}

impl RevocationFilter {
    /// True when `serial` is revoked. Exact for serials in the build universe.
    pub fn query(&self, serial: &str) -> bool {
        for (i, level) in self.levels.iter().enumerate() {
            if !level.contains(serial) {
                return i % 2 == 1;
            }
        }
        self.levels.len() % 2 == 1
    }

    pub fn vendor_id(&self) -> &str {
        &self.vendor_id
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn universe_digest(&self) -> &[u8; 32] {
        &self.universe_digest
    }

    pub fn levels(&self) -> &[FilterLevel] {
        &self.levels
    }

    /// Binary distribution format, big-endian throughout:
    ///
    /// ```text
    /// "ATLSCRL1" | u16 vendor_len | vendor | u64 epoch | [32] universe digest
    /// | u16 levels | { u32 bit_len | u8 k | u64 seed | bits } ... | [32] SHA-256 of all prior bytes
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.levels.iter().map(|l| 13 + l.bits.len()).sum::<usize>());
        out.extend_from_slice(FILTER_MAGIC);
        out.extend_from_slice(&(self.vendor_id.len() as u16).to_be_bytes());
        out.extend_from_slice(self.vendor_id.as_bytes());
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.universe_digest);
        out.extend_from_slice(&(self.levels.len() as u16).to_be_bytes());
        for level in &self.levels {
            out.extend_from_slice(&level.bit_len.to_be_bytes());
            out.push(level.num_hashes);
            out.extend_from_slice(&level.seed.to_be_bytes());
            out.extend_from_slice(&level.bits);
        }
        let trailer = Sha256::digest(&out);
        out.extend_from_slice(&trailer);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FilterError> {
        let corrupt = |m: &str| FilterError::CorruptFilter(m.to_owned());
        if bytes.len() < FILTER_MAGIC.len() + 32 {
            return Err(corrupt("truncated"));
        }
        if bytes[..7] != FILTER_MAGIC[..7] {
            return Err(corrupt("bad magic"));
        }
        if bytes[7] != FILTER_MAGIC[7] {
            return Err(FilterError::VersionMismatch { found: bytes[7] });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader { buf: &body[FILTER_MAGIC.len()..] };
        let vendor_len = r.u16()? as usize;
        let vendor_id = String::from_utf8(r.take(vendor_len)?.to_vec()).map_err(|_| corrupt("vendor id not UTF-8"))?;
        let epoch = r.u64()?;
        let universe_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        let count = r.u16()? as usize;
        if count == 0 {
            return Err(corrupt("no levels"));
        }
        let mut levels = Vec::with_capacity(count);
        for _ in 0..count {
            let bit_len = r.u32()?;
            let num_hashes = r.take(1)?[0];
            let seed = r.u64()?;
            if bit_len == 0 || num_hashes == 0 {
                return Err(corrupt("empty level"));
            }
            let bits = r.take(bit_len.div_ceil(8) as usize)?.to_vec();
            levels.push(FilterLevel { bit_len, num_hashes, seed, bits });
        }
        if !r.buf.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { vendor_id, epoch, universe_digest, levels })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FilterError> {
        if self.buf.len() < n {
            return Err(FilterError::CorruptFilter("truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u16(&mut self) -> Result<u16, FilterError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FilterError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FilterError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Hands out strictly increasing epochs for successive publishes.
#[derive(Debug, Clone, Default)]
pub struct FilterPublisher {
    last_epoch: Option<u64>,
}

impl FilterPublisher {
    /// Resumes after a previously published epoch.
    pub fn resume_after(epoch: u64) -> Self {
        Self { last_epoch: Some(epoch) }
    }

    pub fn last_epoch(&self) -> Option<u64> {
        self.last_epoch
    }

    pub fn publish<S: AsRef<str>>(
        &mut self,
        revoked: &[S],
        issued_universe: &[S],
        vendor_id: &str,
    ) -> Result<RevocationFilter, FilterError> {
        let epoch = self.last_epoch.map_or(1, |e| e + 1);
        let filter = build_filter(revoked, issued_universe, vendor_id, epoch)?;
        self.last_epoch = Some(epoch);
        Ok(filter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn serials(range: std::ops::Range<u32>) -> Vec<String> {
        range.map(|i| format!("{}", 1_000_000_007u64 * i as u64 + 17)).collect()
    }

    #[test]
    fn empty_revocation_set() {
        let universe = serials(0..100);
        let f = build_filter::<String>(&[], &universe, "vendor.com", 1).unwrap();
        assert_eq!(f.levels().len(), 1);
        assert!(universe.iter().all(|s| !f.query(s)));
    }

    #[test]
    fn everything_revoked() {
        let universe = serials(0..100);
        let f = build_filter(&universe, &universe, "vendor.com", 1).unwrap();
        assert!(universe.iter().all(|s| f.query(s)));
    }

    #[test]
    fn empty_universe() {
        let f = build_filter::<String>(&[], &[], "vendor.com", 1).unwrap();
        assert!(!f.query("1"));
    }

    #[test]
    fn revoked_must_be_issued() {
        let universe = serials(0..10);
        let err = build_filter(&["42".to_string()], &universe, "v", 1).unwrap_err();
        assert!(matches!(err, FilterError::RevokedNotIssued { count: 1, .. }));
    }

    #[test]
    fn exact_over_small_universe() {
        let universe = serials(0..2000);
        let revoked: Vec<String> = universe.iter().step_by(37).cloned().collect();
        let f = build_filter(&revoked, &universe, "vendor.com", 9).unwrap();
        for s in &universe {
            assert_eq!(f.query(s), revoked.contains(s), "{s}");
        }
        assert!(f.levels().len() > 1);
    }

    #[test]
    fn serialized_round_trip_and_tamper() {
        let universe = serials(0..500);
        let revoked: Vec<String> = universe.iter().step_by(11).cloned().collect();
        let f = build_filter(&revoked, &universe, "vendor.com", 3).unwrap();
        let bytes = f.to_bytes();
        let back = RevocationFilter::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);

        let mut flipped = bytes.clone();
        flipped[40] ^= 0x01;
        assert!(matches!(RevocationFilter::from_bytes(&flipped), Err(FilterError::CorruptFilter(_))));

        let mut other_version = bytes.clone();
        other_version[7] = b'2';
        assert_eq!(RevocationFilter::from_bytes(&other_version), Err(FilterError::VersionMismatch { found: b'2' }));

        assert!(matches!(RevocationFilter::from_bytes(b"garbage"), Err(FilterError::CorruptFilter(_))));
    }

    #[test]
    fn deterministic_build() {
        let universe = serials(0..300);
        let revoked: Vec<String> = universe.iter().step_by(5).cloned().collect();
        let a = build_filter(&revoked, &universe, "v.com", 4).unwrap().to_bytes();
        let b = build_filter(&revoked, &universe, "v.com", 4).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn publisher_epochs_increase() {
        let universe = serials(0..10);
        let mut p = FilterPublisher::default();
        let e1 = p.publish::<String>(&[], &universe, "v").unwrap().epoch();
        let e2 = p.publish::<String>(&[], &universe, "v").unwrap().epoch();
        assert!(e2 > e1);
        let mut resumed = FilterPublisher::resume_after(e2);
        assert_eq!(resumed.publish::<String>(&[], &universe, "v").unwrap().epoch(), e2 + 1);
    }
}
