//! RFC 1035 message codec: just enough for single-question A/CNAME/TXT traffic.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use super::zone::{canonical_name, Lookup, RData, RType, Zone, ZoneRecord};
use super::DnsError;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_SERVFAIL: u8 = 2;
pub const RCODE_NXDOMAIN: u8 = 3;
pub const RCODE_NOTIMP: u8 = 4;
pub const RCODE_REFUSED: u8 = 5;

pub const QTYPE_ANY: u16 = 255;
const CLASS_IN: u16 = 1;
const CLASS_ANY: u16 = 255;
const MAX_UDP: usize = 512;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub name: String,
    pub rtype: u16,
    pub ttl: u32,
    /// `None` for types this codec does not decode.
    pub data: Option<RData>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsResponse {
    pub id: u16,
    pub authoritative: bool,
    pub truncated: bool,
    pub rcode: u8,
    pub question: Option<Question>,
    pub answers: Vec<Answer>,
}

impl DnsResponse {
    /// TXT strings in the answer section, in order.
    pub fn txt_values(&self) -> Vec<String> {
        self.answers
            .iter()
            .filter_map(|a| match &a.data {
                Some(RData::Txt(t)) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Option<u8> {
        let b = *self.buf.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_be_bytes([self.u8()?, self.u8()?, self.u8()?, self.u8()?]))
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    /// Reads a possibly compressed name.
    fn name(&mut self) -> Option<String> {
        let mut labels: Vec<String> = Vec::new();
        let mut pos = self.pos;
        let mut resume = None;
        let mut jumps = 0;
        let mut total = 0usize;
        loop {
            let len = *self.buf.get(pos)? as usize;
            match len & 0xC0 {
                0x00 if len == 0 => {
                    pos += 1;
                    break;
                }
                0x00 => {
                    let label = self.buf.get(pos + 1..pos + 1 + len)?;
                    total += len + 1;
                    if total > 255 {
                        return None;
                    }
                    labels.push(String::from_utf8(label.to_vec()).ok()?);
                    pos += 1 + len;
                }
                0xC0 => {
                    let target = ((len & 0x3F) << 8) | *self.buf.get(pos + 1)? as usize;
                    jumps += 1;
                    if jumps > 32 || target >= pos {
                        return None;
                    }
                    resume.get_or_insert(pos + 2);
                    pos = target;
                }
                _ => return None,
            }
        }
        self.pos = resume.unwrap_or(pos);
        Some(labels.join("."))
    }
}

/// Name encoder with suffix compression.
struct Writer {
    out: Vec<u8>,
    offsets: HashMap<String, u16>,
}

impl Writer {
    fn new() -> Self {
        Self { out: Vec::with_capacity(MAX_UDP), offsets: HashMap::new() }
    }

    fn u16(&mut self, v: u16) {
        self.out.extend_from_slice(&v.to_be_bytes());
    }

    fn name(&mut self, name: &str) {
        let name = canonical_name(name);
        let labels: Vec<&str> = if name.is_empty() { vec![] } else { name.split('.').collect() };
        for i in 0..labels.len() {
            let suffix = labels[i..].join(".");
            if let Some(&off) = self.offsets.get(&suffix) {
                self.u16(0xC000 | off);
                return;
            }
            if self.out.len() < 0x3FFF {
                self.offsets.insert(suffix, self.out.len() as u16);
            }
            self.out.push(labels[i].len() as u8);
            self.out.extend_from_slice(labels[i].as_bytes());
        }
        self.out.push(0);
    }

    fn record(&mut self, r: &ZoneRecord) {
        self.name(&r.name);
        self.u16(r.rtype().code());
        self.u16(CLASS_IN);
        self.out.extend_from_slice(&r.ttl.to_be_bytes());
        let len_at = self.out.len();
        self.u16(0);
        match &r.data {
            RData::A(ip) => self.out.extend_from_slice(&ip.octets()),
            RData::Cname(t) => self.name(t),
            RData::Txt(t) => {
                self.out.push(t.len() as u8);
                self.out.extend_from_slice(t.as_bytes());
            }
        }
        let rdlen = (self.out.len() - len_at - 2) as u16;
        self.out[len_at..len_at + 2].copy_from_slice(&rdlen.to_be_bytes());
    }
}

fn header(w: &mut Writer, id: u16, rd: bool, tc: bool, rcode: u8, qd: u16, an: u16) {
    w.u16(id);
    w.out.push(0x80 | 0x04 | if tc { 0x02 } else { 0 } | rd as u8);
    w.out.push(rcode & 0x0F);
    w.u16(qd);
    w.u16(an);
    w.u16(0);
    w.u16(0);
}

fn encode_response(id: u16, rd: bool, q: Option<&Question>, rcode: u8, answers: &[ZoneRecord]) -> Vec<u8> {
    let build = |answers: &[ZoneRecord], tc: bool| {
        let mut w = Writer::new();
        header(&mut w, id, rd, tc, rcode, q.is_some() as u16, answers.len() as u16);
        if let Some(q) = q {
            w.name(&q.name);
            w.u16(q.qtype);
            w.u16(q.qclass);
        }
        for r in answers {
            w.record(r);
        }
        w.out
    };
    let full = build(answers, false);
    if full.len() <= MAX_UDP {
        full
    } else {
        build(&[], true)
    }
}

/// Answers one wire-format query against `zone`. `None` means drop silently.
pub fn respond(zone: &Zone, packet: &[u8]) -> Option<Vec<u8>> {
    if packet.len() < 2 {
        return None;
    }
    let id = u16::from_be_bytes([packet[0], packet[1]]);
    if packet.len() < HEADER_LEN {
        return Some(encode_response(id, false, None, RCODE_FORMERR, &[]));
    }
    let flags = packet[2];
    let rd = flags & 0x01 != 0;
    if flags & 0x80 != 0 {
        return None;
    }
    if (flags >> 3) & 0x0F != 0 {
        return Some(encode_response(id, rd, None, RCODE_NOTIMP, &[]));
    }
    let mut r = Reader { buf: packet, pos: 4 };
    let qdcount = r.u16()?;
    if qdcount != 1 {
        return Some(encode_response(id, rd, None, RCODE_FORMERR, &[]));
    }
    r.pos = HEADER_LEN;
    let question = (|| {
        let name = r.name()?;
        Some(Question { name, qtype: r.u16()?, qclass: r.u16()? })
    })();
    let Some(q) = question else {
        return Some(encode_response(id, rd, None, RCODE_FORMERR, &[]));
    };
    if q.qclass != CLASS_IN && q.qclass != CLASS_ANY {
        return Some(encode_response(id, rd, Some(&q), RCODE_REFUSED, &[]));
    }
    // A type this zone never holds can still be answered by a CNAME.
    let filter = match q.qtype {
        QTYPE_ANY => None,
        t => Some(RType::from_code(t).unwrap_or(RType::Cname)),
    };
    let lookup = zone.lookup(&q.name, filter);
    Some(match lookup {
        Lookup::Answer(rs) => encode_response(id, rd, Some(&q), RCODE_NOERROR, &rs),
        Lookup::NoData => encode_response(id, rd, Some(&q), RCODE_NOERROR, &[]),
        Lookup::NxDomain => encode_response(id, rd, Some(&q), RCODE_NXDOMAIN, &[]),
        Lookup::NotAuthoritative => encode_response(id, rd, Some(&q), RCODE_REFUSED, &[]),
    })
}

/// A non-recursive single-question query.
pub fn build_query(id: u16, name: &str, qtype: u16) -> Vec<u8> {
    let mut w = Writer::new();
    w.u16(id);
    w.out.extend_from_slice(&[0, 0]);
    w.u16(1);
    w.u16(0);
    w.u16(0);
    w.u16(0);
    w.name(name);
    w.u16(qtype);
    w.u16(CLASS_IN);
    w.out
}

pub fn parse_response(buf: &[u8]) -> Result<DnsResponse, DnsError> {
    let bad = |m: &str| DnsError::Malformed(m.to_owned());
    let mut r = Reader { buf, pos: 0 };
    let id = r.u16().ok_or_else(|| bad("short header"))?;
    let f1 = r.u8().ok_or_else(|| bad("short header"))?;
    let f2 = r.u8().ok_or_else(|| bad("short header"))?;
    if f1 & 0x80 == 0 {
        return Err(bad("not a response"));
    }
    let qd = r.u16().ok_or_else(|| bad("short header"))?;
    let an = r.u16().ok_or_else(|| bad("short header"))?;
    r.pos = HEADER_LEN;
    if buf.len() < HEADER_LEN {
        return Err(bad("short header"));
    }
    let mut question = None;
    for _ in 0..qd {
        let name = r.name().ok_or_else(|| bad("question name"))?;
        let qtype = r.u16().ok_or_else(|| bad("question"))?;
        let qclass = r.u16().ok_or_else(|| bad("question"))?;
        question.get_or_insert(Question { name, qtype, qclass });
    }
    let mut answers = Vec::with_capacity(an as usize);
    for _ in 0..an {
        let name = r.name().ok_or_else(|| bad("answer name"))?;
        let rtype = r.u16().ok_or_else(|| bad("answer"))?;
        let _class = r.u16().ok_or_else(|| bad("answer"))?;
        let ttl = r.u32().ok_or_else(|| bad("answer"))?;
        let rdlen = r.u16().ok_or_else(|| bad("answer"))? as usize;
        let start = r.pos;
        let data = match RType::from_code(rtype) {
            Some(RType::A) if rdlen == 4 => {
                let o = r.take(4).ok_or_else(|| bad("A rdata"))?;
                Some(RData::A(Ipv4Addr::new(o[0], o[1], o[2], o[3])))
            }
            Some(RType::Cname) => Some(RData::Cname(r.name().ok_or_else(|| bad("CNAME rdata"))?)),
            Some(RType::Txt) => {
                let raw = r.take(rdlen).ok_or_else(|| bad("TXT rdata"))?;
                let mut text = Vec::new();
                let mut i = 0;
                while i < raw.len() {
                    let n = raw[i] as usize;
                    text.extend_from_slice(raw.get(i + 1..i + 1 + n).ok_or_else(|| bad("TXT string"))?);
                    i += 1 + n;
                }
                Some(RData::Txt(String::from_utf8_lossy(&text).into_owned()))
            }
            _ => None,
        };
        r.pos = start.checked_add(rdlen).filter(|&e| e <= buf.len()).ok_or_else(|| bad("rdata length"))?;
        answers.push(Answer { name, rtype, ttl, data });
    }
    Ok(DnsResponse {
        id,
        authoritative: f1 & 0x04 != 0,
        truncated: f1 & 0x02 != 0,
        rcode: f2 & 0x0F,
        question,
        answers,
    })
}
