use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::net::Ipv4Addr;
use std::path::Path;

use atlas_core::DeviceUrn;
use serde::{Deserialize, Serialize};

use super::DnsError;

pub const DEFAULT_TTL: u32 = 60;
pub const ACME_LABEL: &str = "_acme-challenge";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RType {
    A,
    Cname,
    Txt,
}

impl RType {
    pub fn code(self) -> u16 {
        match self {
            RType::A => 1,
            RType::Cname => 5,
            RType::Txt => 16,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            1 => Some(RType::A),
            5 => Some(RType::Cname),
            16 => Some(RType::Txt),
            _ => None,
        }
    }
}

impl fmt::Display for RType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RType::A => "A",
            RType::Cname => "CNAME",
            RType::Txt => "TXT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RData {
    A(Ipv4Addr),
    Cname(String),
    Txt(String),
}

impl RData {
    pub fn rtype(&self) -> RType {
        match self {
            RData::A(_) => RType::A,
            RData::Cname(_) => RType::Cname,
            RData::Txt(_) => RType::Txt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneRecord {
    pub name: String,
    pub ttl: u32,
    pub data: RData,
}

impl ZoneRecord {
    pub fn rtype(&self) -> RType {
        self.data.rtype()
    }
}

/// Result of looking a question up in the zone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Answer(Vec<ZoneRecord>),
    /// The name exists but holds nothing of the requested type.
    NoData,
    NxDomain,
    /// The name lies outside the apex.
    NotAuthoritative,
}

/// Lowercases and strips one trailing dot.
pub fn canonical_name(name: &str) -> String {
    name.strip_suffix('.').unwrap_or(name).to_ascii_lowercase()
}

/// Hostname rules relaxed to allow underscores, which ACME challenge names need.
fn is_valid_owner(name: &str) -> bool {
    name.len() <= 253
        && !name.is_empty()
        && name.split('.').all(|l| {
            !l.is_empty()
                && l.len() <= 63
                && l.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
                && !l.starts_with('-')
                && !l.ends_with('-')
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zone {
    apex: String,
    records: BTreeMap<String, Vec<ZoneRecord>>,
    serial: u32,
}

impl Zone {
    pub fn new(apex: &str) -> Result<Self, DnsError> {
        let apex = canonical_name(apex);
        if !atlas_core::identity::is_valid_hostname(&apex) {
            return Err(DnsError::InvalidRecord(format!("bad apex {apex:?}")));
        }
        Ok(Self { apex, records: BTreeMap::new(), serial: 1 })
    }

    pub fn apex(&self) -> &str {
        &self.apex
    }

    pub fn serial(&self) -> u32 {
        self.serial
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ZoneRecord> {
        self.records.values().flatten()
    }

    pub fn contains(&self, name: &str) -> bool {
        let name = canonical_name(name);
        name == self.apex || name.ends_with(&format!(".{}", self.apex))
    }

    fn in_zone(&self, name: &str) -> Result<String, DnsError> {
        let name = canonical_name(name);
        if !self.contains(&name) {
            return Err(DnsError::OutOfZone(name));
        }
        if !is_valid_owner(&name) {
            return Err(DnsError::InvalidRecord(format!("bad owner name {name:?}")));
        }
        Ok(name)
    }

    fn bump(&mut self) {
        self.serial = self.serial.wrapping_add(1).max(1);
    }

    /// Inserts a record, enforcing CNAME exclusivity. A CNAME replaces any earlier CNAME.
    pub fn add_record(&mut self, name: &str, data: RData, ttl: u32) -> Result<ZoneRecord, DnsError> {
        let name = self.in_zone(name)?;
        let data = match data {
            RData::Cname(target) => {
                let target = canonical_name(&target);
                if !atlas_core::identity::is_valid_hostname(&target) {
                    return Err(DnsError::InvalidRecord(format!("bad CNAME target {target:?}")));
                }
                RData::Cname(target)
            }
            RData::Txt(ref t) if t.len() > 255 => {
                return Err(DnsError::InvalidRecord("TXT string longer than 255 octets".into()));
            }
            other => other,
        };
        let record = ZoneRecord { name: name.clone(), ttl, data };
        let existing = self.records.entry(name.clone()).or_default();
        let has_cname = existing.iter().any(|r| r.rtype() == RType::Cname);
        let is_cname = record.rtype() == RType::Cname;
        if existing.contains(&record) {
            return Ok(record);
        }
        if (is_cname && existing.iter().any(|r| r.rtype() != RType::Cname)) || (!is_cname && has_cname) {
            return Err(DnsError::CnameConflict(name));
        }
        if is_cname {
            existing.clear();
        }
        existing.push(record.clone());
        self.bump();
        Ok(record)
    }

    pub fn add_a(&mut self, name: &str, addr: Ipv4Addr) -> Result<ZoneRecord, DnsError> {
        self.add_record(name, RData::A(addr), DEFAULT_TTL)
    }

    /// Points the device's URN at `cloud_target`.
    pub fn bind_device(&mut self, urn: &DeviceUrn, cloud_target: &str) -> Result<ZoneRecord, DnsError> {
        self.add_record(&urn.to_string(), RData::Cname(cloud_target.to_owned()), DEFAULT_TTL)
    }

    /// Installs the DNS-01 TXT for `fqdn`, replacing any previous value.
    pub fn set_acme_txt(&mut self, fqdn: &str, value: &str) -> Result<ZoneRecord, DnsError> {
        let name = self.in_zone(&format!("{ACME_LABEL}.{}", canonical_name(fqdn)))?;
        if value.len() > 255 {
            return Err(DnsError::InvalidRecord("TXT string longer than 255 octets".into()));
        }
        let record = ZoneRecord { name: name.clone(), ttl: DEFAULT_TTL, data: RData::Txt(value.to_owned()) };
        if self.records.get(&name).is_some_and(|rs| rs == std::slice::from_ref(&record)) {
            return Ok(record);
        }
        self.records.remove(&name);
        self.add_record(&name, record.data.clone(), DEFAULT_TTL)
    }

    pub fn clear_acme_txt(&mut self, fqdn: &str) -> Result<(), DnsError> {
        let name = self.in_zone(&format!("{ACME_LABEL}.{}", canonical_name(fqdn)))?;
        if self.records.remove(&name).is_some() {
            self.bump();
        }
        Ok(())
    }

    /// Removes every record at `name`.
    pub fn remove_name(&mut self, name: &str) -> Result<(), DnsError> {
        let name = self.in_zone(name)?;
        if self.records.remove(&name).is_some() {
            self.bump();
        }
        Ok(())
    }

    /// Authoritative lookup. A CNAME at the name answers every type.
    pub fn lookup(&self, name: &str, rtype: Option<RType>) -> Lookup {
        let name = canonical_name(name);
        if !self.contains(&name) {
            return Lookup::NotAuthoritative;
        }
        match self.records.get(&name) {
            Some(rs) => {
                let hits: Vec<_> = rs
                    .iter()
                    .filter(|r| r.rtype() == RType::Cname || rtype.is_none() || rtype == Some(r.rtype()))
                    .cloned()
                    .collect();
                if hits.is_empty() {
                    Lookup::NoData
                } else {
                    Lookup::Answer(hits)
                }
            }
            None => {
                let suffix = format!(".{name}");
                if name == self.apex || self.records.keys().any(|k| k.ends_with(&suffix)) {
                    Lookup::NoData
                } else {
                    Lookup::NxDomain
                }
            }
        }
    }

    /// RFC 1035 master-file text, one line per record.
    pub fn to_master_file(&self) -> String {
        let mut out = format!("; serial {}\n$ORIGIN {}.\n$TTL {DEFAULT_TTL}\n", self.serial, self.apex);
        for r in self.records() {
            let value = match &r.data {
                RData::A(ip) => ip.to_string(),
                RData::Cname(t) => format!("{t}."),
                RData::Txt(t) => format!("\"{}\"", t.replace('\\', "\\\\").replace('"', "\\\"")),
            };
            out.push_str(&format!("{}. {} IN {} {}\n", r.name, r.ttl, r.rtype(), value));
        }
        out
    }

    pub fn export(&self, path: &Path) -> Result<(), DnsError> {
        fs::write(path, self.to_master_file())
            .map_err(|e| DnsError::IoFailure(format!("{}: {e}", path.display())))
    }
}
