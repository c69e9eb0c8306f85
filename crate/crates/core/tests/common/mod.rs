//! Reference computations written from the protocol definitions, sharing no
//! code with the library beyond plain data types.

#![allow(dead_code)]

use sha2::{Digest as _, Sha256};

pub fn encode(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        out.extend_from_slice(&(f.len() as u32).to_be_bytes());
        out.extend_from_slice(f);
    }
    out
}

pub fn h(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// `H^i(seed)`, `i >= 1`.
pub fn h_iter(seed: &[u8], i: usize) -> [u8; 32] {
    assert!(i >= 1);
    let mut d = h(seed);
    for _ in 1..i {
        d = h(&d);
    }
    d
}

pub fn target_hash(ca_id: &str, rnd: &[u8; 32]) -> [u8; 32] {
    h(&encode(&[ca_id.as_bytes(), rnd]))
}

pub fn ticket_ik(credential: &[u8], t_s: u64, t_e: u64, rnd_ik: &[u8; 32]) -> [u8; 32] {
    h(&encode(&[
        credential,
        &t_s.to_be_bytes(),
        &t_e.to_be_bytes(),
        rnd_ik,
    ]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefLink {
    pub t_s: u64,
    pub t_e: u64,
    pub ik_p: [u8; 32],
    pub serial: [u8; 32],
}

/// Slots, identifiable keys and chained serials of a batch.
pub fn reference_batch(
    ik_tkt: &[u8; 32],
    keys: &[Vec<u8>],
    ticket_t_s: u64,
    tau: u64,
    rnd_v: &[u8; 32],
) -> Vec<RefLink> {
    let start = ticket_t_s.div_ceil(tau) * tau;
    let mut out: Vec<RefLink> = Vec::new();
    for (idx, key) in keys.iter().enumerate() {
        let i = idx + 1;
        let t_s = start + idx as u64 * tau;
        let t_e = t_s + tau;
        let r = h_iter(rnd_v, i);
        let ik_p = h(&encode(&[
            ik_tkt,
            key,
            &t_s.to_be_bytes(),
            &t_e.to_be_bytes(),
            &r,
        ]));
        let prev = if i == 1 { ik_p } else { out[idx - 1].serial };
        let serial = h(&encode(&[&prev, &r]));
        out.push(RefLink {
            t_s,
            t_e,
            ik_p,
            serial,
        });
    }
    out
}

/// Every way `needle` can show up inside JSON, text or binary bodies: raw,
/// lower and upper hex, and base64 (both alphabets, unpadded) at each of
/// the three byte alignments.
pub fn encodings_of(needle: &[u8]) -> Vec<Vec<u8>> {
    use base64::engine::general_purpose::{STANDARD_NO_PAD, URL_SAFE_NO_PAD};
    use base64::Engine;
    let mut out = vec![
        needle.to_vec(),
        hex::encode(needle).into_bytes(),
        hex::encode_upper(needle).into_bytes(),
    ];
    for k in 0..3.min(needle.len()) {
        let tail = &needle[k..];
        let aligned = &tail[..tail.len() / 3 * 3];
        if aligned.len() >= 6 {
            out.push(URL_SAFE_NO_PAD.encode(aligned).into_bytes());
            out.push(STANDARD_NO_PAD.encode(aligned).into_bytes());
        }
    }
    out
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn contains_any(haystack: &[u8], needles: &[Vec<u8>]) -> Option<usize> {
    needles.iter().position(|n| contains(haystack, n))
}
