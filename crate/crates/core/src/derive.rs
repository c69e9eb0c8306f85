//! Every protocol hash in one place.
//!
//! Target hashes, identifiable keys and chained pseudonym serials are all
//! hashes over canonically encoded field lists. Services call these
//! functions instead of hashing ad hoc byte strings.

use crate::crypto::{hash_chain, hash_fields, Digest, PublicKey};
use crate::encoding::Fields;

/// `H(Id_CA || Rnd)`: hides which CA a ticket is meant for.
pub fn target_hash(ca_id: &str, rnd: &[u8; 32]) -> Digest {
    hash_fields(Fields::new().str(ca_id).bytes(rnd))
}

/// `IK_tkt = H(LTC_v || t_s || t_e || Rnd_IK_tkt)`.
///
/// `credential` is the canonical encoding of the requester's LTC, or of the
/// foreign ticket when a foreign LTCA issues a native ticket.
pub fn ticket_ik(credential: &[u8], t_s: u64, t_e: u64, rnd_ik: &[u8; 32]) -> Digest {
    hash_fields(
        Fields::new()
            .bytes(credential)
            .u64(t_s)
            .u64(t_e)
            .bytes(rnd_ik),
    )
}

/// `IK_P = H(IK_tkt || K || t_s || t_e || H^i(Rnd_v))`.
pub fn pseudonym_ik(
    ik_tkt: &Digest,
    key: &PublicKey,
    t_s: u64,
    t_e: u64,
    rnd_ik_p: &Digest,
) -> Digest {
    hash_fields(
        Fields::new()
            .bytes(ik_tkt)
            .bytes(key.as_bytes())
            .u64(t_s)
            .u64(t_e)
            .bytes(rnd_ik_p),
    )
}

/// `SN^i = H(prev || H^i(Rnd_v))`, where `prev` is `IK_P^1` for the first
/// pseudonym and `SN^{i-1}` afterwards.
pub fn chained_serial(prev: &Digest, rnd_ik_p: &Digest) -> Digest {
    hash_fields(Fields::new().bytes(prev).bytes(rnd_ik_p))
}

/// Time slot of one pseudonym in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub t_s: u64,
    pub t_e: u64,
}

/// Smallest multiple of `tau` that is `>= t`.
pub fn align_up(t: u64, tau: u64) -> u64 {
    t.div_ceil(tau) * tau
}

/// `n` abutting slots of length `tau`, the first starting at
/// `align_up(t_s, tau)`.
pub fn assign_slots(t_s: u64, tau: u64, n: usize) -> Vec<Slot> {
    let start = align_up(t_s, tau);
    (0..n as u64)
        .map(|i| Slot {
            t_s: start + i * tau,
            t_e: start + (i + 1) * tau,
        })
        .collect()
}

/// Identifiable key and serial of one pseudonym in a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainLink {
    pub ik_p: Digest,
    pub serial: Digest,
    pub rnd_ik_p: Digest,
}

/// Computes `IK_P^i` and `SN^i` for a whole batch.
pub fn derive_chain(
    ik_tkt: &Digest,
    keys: &[PublicKey],
    slots: &[Slot],
    rnd_v: &[u8; 32],
) -> Vec<ChainLink> {
    assert_eq!(keys.len(), slots.len(), "one slot per key");
    let mut out: Vec<ChainLink> = Vec::with_capacity(keys.len());
    for ((key, slot), h_i) in keys.iter().zip(slots).zip(hash_chain(rnd_v)) {
        let ik_p = pseudonym_ik(ik_tkt, key, slot.t_s, slot.t_e, &h_i);
        let prev = out.last().map_or(ik_p, |l| l.serial);
        out.push(ChainLink {
            ik_p,
            serial: chained_serial(&prev, &h_i),
            rnd_ik_p: h_i,
        });
    }
    out
}

/// Recomputes every later serial of a batch from its first serial and
/// `Rnd_v`; one revocation entry is enough to cover the batch.
pub fn serials_from_first(first: &Digest, rnd_v: &[u8; 32], n: usize) -> Vec<Digest> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(*first);
    for h_i in hash_chain(rnd_v).skip(1).take(n - 1) {
        let next = chained_serial(out.last().unwrap(), &h_i);
        out.push(next);
    }
    out
}
