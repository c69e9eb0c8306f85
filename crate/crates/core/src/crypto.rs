//! Hashing, ECDSA P-256 signatures and randomness.
//!
//! This module is the only place that touches SHA-256 or the signature
//! primitives directly. Protocol code hashes structured inputs through
//! [`hash_fields`], which always goes through the canonical encoding.

use std::fmt;

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::encoding::Fields;

/// Identifier of the signature algorithm carried in certificates.
pub const SIG_ALG_ECDSA_P256_SHA256: &str = "ecdsa-p256-sha256";

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest(#[serde(with = "crate::b64::array")] pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the canonical encoding of `fields`.
pub fn hash_fields(fields: Fields) -> Digest {
    hash(&fields.finish_small())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("iterated hash requires at least one application")]
pub struct ZeroIterations;

/// `H^i(seed)`: SHA-256 applied `i` times.
pub fn iterated_hash(seed: &[u8], i: u32) -> Result<Digest, ZeroIterations> {
    if i == 0 {
        return Err(ZeroIterations);
    }
    let mut d = hash(seed);
    for _ in 1..i {
        d = hash(&d.0);
    }
    Ok(d)
}

/// Iterator over `H^1(seed), H^2(seed), ...`.
pub fn hash_chain(seed: &[u8]) -> impl Iterator<Item = Digest> + '_ {
    let mut cur: Option<Digest> = None;
    std::iter::from_fn(move || {
        let next = match cur {
            None => hash(seed),
            Some(d) => hash(&d.0),
        };
        cur = Some(next);
        Some(next)
    })
}

/// 32 bytes from the operating system CSPRNG.
pub fn gen_rnd() -> [u8; 32] {
    let mut out = [0u8; 32];
    OsRng.fill_bytes(&mut out);
    out
}

/// 16-byte random identifier used for LTC and ticket serial numbers.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Serial(#[serde(with = "crate::b64::array")] pub [u8; 16]);

impl Serial {
    pub fn random() -> Self {
        let mut out = [0u8; 16];
        OsRng.fill_bytes(&mut out);
        Serial(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let v = hex::decode(s).ok()?;
        Some(Serial(v.try_into().ok()?))
    }
}

impl AsRef<[u8]> for Serial {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Serial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Serial({})", self.to_hex())
    }
}

/// SEC1-compressed P-256 verification key. Kept as raw bytes so that
/// malformed keys can travel through the protocol and simply fail
/// verification.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "crate::b64")] pub Vec<u8>);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn is_well_formed(&self) -> bool {
        VerifyingKey::from_sec1_bytes(&self.0).is_ok()
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(key) = VerifyingKey::from_sec1_bytes(&self.0) else {
            return false;
        };
        let Ok(sig) = EcdsaSignature::from_slice(&sig.0) else {
            return false;
        };
        key.verify(msg, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "PublicKey({})",
            hex::encode(&self.0[..self.0.len().min(8)])
        )
    }
}

/// Fixed-width `r || s` ECDSA signature.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(#[serde(with = "crate::b64")] pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} bytes)", self.0.len())
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate() -> Self {
        Self::from_signing(SigningKey::random(&mut OsRng))
    }

    /// Deterministic key for tests and seeded harness runs.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::from_seed(seed);
        Self::from_signing(SigningKey::random(&mut rng))
    }

    pub fn from_secret_bytes(bytes: &[u8]) -> Option<Self> {
        SigningKey::from_slice(bytes).ok().map(Self::from_signing)
    }

    fn from_signing(signing: SigningKey) -> Self {
        let public = PublicKey(
            signing
                .verifying_key()
                .to_encoded_point(true)
                .as_bytes()
                .to_vec(),
        );
        Self { signing, public }
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn secret_bytes(&self) -> Vec<u8> {
        self.signing.to_bytes().to_vec()
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        let sig: EcdsaSignature = self.signing.sign(msg);
        Signature(sig.to_bytes().to_vec())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

pub fn keygen() -> KeyPair {
    KeyPair::generate()
}

pub fn sign(key: &KeyPair, msg: &[u8]) -> Signature {
    key.sign(msg)
}

pub fn verify(public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    public.verify(msg, sig)
}

/// Serde adapter storing a key pair as its secret scalar.
pub mod keypair_serde {
    use super::KeyPair;
    use serde::{de, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &KeyPair, s: S) -> Result<S::Ok, S::Error> {
        crate::b64::serialize(k.secret_bytes(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<KeyPair, D::Error> {
        let bytes = crate::b64::deserialize(d)?;
        KeyPair::from_secret_bytes(&bytes).ok_or_else(|| de::Error::custom("invalid P-256 secret"))
    }
}
