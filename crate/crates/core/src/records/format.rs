//! On-disk record format.
//!
//! A record file starts with the 5-byte magic `VPKR1`, followed by records.
//! Each record is one length-prefixed field whose content is the canonical
//! encoding of a type tag and the record's fields in declaration order.

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, PublicKey, Serial};
use crate::encoding::{canonical_encode, EncodingError, FieldReader, Fields};

pub const MAGIC: &[u8; 5] = b"VPKR1";

const TAG_REGISTRATION: &str = "LTC";
const TAG_TICKET: &str = "TKT";
const TAG_BATCH: &str = "PSB";

/// A registered vehicle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub sn_ltc: Serial,
    pub public_key: PublicKey,
    #[serde(with = "crate::b64")]
    pub ltc: Vec<u8>,
    pub issued_at: u64,
}

/// An issued ticket and the randomness needed to recompute its `IK_tkt`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketRecord {
    pub sn_tkt: Serial,
    /// Serial of the credential the ticket was issued against: the LTC for
    /// native tickets, the foreign ticket otherwise.
    pub sn_ltc: Serial,
    pub ik_tkt: Digest,
    #[serde(with = "crate::b64::array")]
    pub rnd_ik_tkt: [u8; 32],
    pub t_s: u64,
    pub t_e: u64,
    pub exp_tkt: u64,
    pub issued_at: u64,
    pub foreign: bool,
    /// Issued while the guard was unreachable under a fail-open policy.
    pub fail_open: bool,
}

/// One issued pseudonym batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymBatchRecord {
    pub sn_tkt: Serial,
    #[serde(with = "crate::b64::array")]
    pub rnd_v: [u8; 32],
    pub serials: Vec<Digest>,
    /// The signed ticket exactly as presented.
    #[serde(with = "crate::b64")]
    pub ticket: Vec<u8>,
    pub issued_at: u64,
    pub fail_open: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Record {
    Registration(RegistrationRecord),
    Ticket(TicketRecord),
    Batch(PseudonymBatchRecord),
}

impl Record {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Record::Registration(r) => Fields::new()
                .str(TAG_REGISTRATION)
                .bytes(r.sn_ltc)
                .bytes(r.public_key.as_bytes())
                .bytes(&r.ltc)
                .u64(r.issued_at)
                .finish_small(),
            Record::Ticket(r) => Fields::new()
                .str(TAG_TICKET)
                .bytes(r.sn_tkt)
                .bytes(r.sn_ltc)
                .bytes(r.ik_tkt)
                .bytes(r.rnd_ik_tkt)
                .u64(r.t_s)
                .u64(r.t_e)
                .u64(r.exp_tkt)
                .u64(r.issued_at)
                .bool(r.foreign)
                .bool(r.fail_open)
                .finish_small(),
            Record::Batch(r) => {
                let serials = canonical_encode(r.serials.iter()).expect("serial list fits");
                Fields::new()
                    .str(TAG_BATCH)
                    .bytes(r.sn_tkt)
                    .bytes(r.rnd_v)
                    .bytes(serials)
                    .bytes(&r.ticket)
                    .u64(r.issued_at)
                    .bool(r.fail_open)
                    .finish_small()
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EncodingError> {
        let mut r = FieldReader::new(bytes);
        let tag = r.string()?;
        let rec = match tag.as_str() {
            TAG_REGISTRATION => Record::Registration(RegistrationRecord {
                sn_ltc: Serial(r.fixed()?),
                public_key: PublicKey(r.vec()?),
                ltc: r.vec()?,
                issued_at: r.u64()?,
            }),
            TAG_TICKET => Record::Ticket(TicketRecord {
                sn_tkt: Serial(r.fixed()?),
                sn_ltc: Serial(r.fixed()?),
                ik_tkt: Digest(r.fixed()?),
                rnd_ik_tkt: r.fixed()?,
                t_s: r.u64()?,
                t_e: r.u64()?,
                exp_tkt: r.u64()?,
                issued_at: r.u64()?,
                foreign: r.bool()?,
                fail_open: r.bool()?,
            }),
            TAG_BATCH => {
                let sn_tkt = Serial(r.fixed()?);
                let rnd_v = r.fixed()?;
                let list = r.next_field()?;
                let mut lr = FieldReader::new(list);
                let mut serials = Vec::new();
                while !lr.is_empty() {
                    serials.push(Digest(lr.fixed()?));
                }
                Record::Batch(PseudonymBatchRecord {
                    sn_tkt,
                    rnd_v,
                    serials,
                    ticket: r.vec()?,
                    issued_at: r.u64()?,
                    fail_open: r.bool()?,
                })
            }
            _ => {
                return Err(EncodingError::Malformed {
                    index: 0,
                    reason: "unknown record tag",
                })
            }
        };
        r.finish()?;
        Ok(rec)
    }

    /// Record as written to the file: a single length-prefixed field.
    pub fn frame(&self) -> Vec<u8> {
        canonical_encode([self.encode()]).expect("record fits a u32 length")
    }

    /// Unique key used to reject duplicate writes.
    pub fn unique_key(&self) -> (u8, [u8; 16]) {
        match self {
            Record::Registration(r) => (0, r.sn_ltc.0),
            Record::Ticket(r) => (1, r.sn_tkt.0),
            Record::Batch(r) => (2, r.sn_tkt.0),
        }
    }
}

/// Splits a record file body (after the magic) into records. Returns the
/// records read and the byte offset just past the last complete record.
pub fn read_records(body: &[u8]) -> (Vec<Record>, usize, Option<EncodingError>) {
    let mut out = Vec::new();
    let mut r = FieldReader::new(body);
    let mut consumed = 0;
    while !r.is_empty() {
        let field = match r.next_field() {
            Ok(f) => f,
            Err(e) => return (out, consumed, Some(e)),
        };
        match Record::decode(field) {
            Ok(rec) => out.push(rec),
            Err(e) => return (out, consumed, Some(e)),
        }
        consumed += 4 + field.len();
    }
    (out, consumed, None)
}
