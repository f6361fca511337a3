//! Capability tokens, their canonical wire encoding, and the client-side
//! blind/unblind operations.
//!
//! A token payload is a fixed 132-byte record: a 64-byte scope (site domain
//! or relay fingerprint, zero padded), a 16-byte client nonce, the 32-byte
//! shared epoch value, and the 20-byte fingerprint of the issuing authority.
//! A spendable capability appends a one-byte kind discriminator and the
//! fixed-width big-endian signature, so equal capabilities are byte-equal and
//! duplicate suppression can hash raw bytes.

use alloc::vec::Vec;
use core::fmt;

use num_bigint_dig::BigUint;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::blind::{self, BlindError, RsaPublicKey, SignatureDomain};

pub const SCOPE_LEN: usize = 64;
pub const NONCE_LEN: usize = 16;
pub const EPOCH_LEN: usize = 32;
pub const FINGERPRINT_LEN: usize = 20;
pub const PAYLOAD_LEN: usize = SCOPE_LEN + NONCE_LEN + EPOCH_LEN + FINGERPRINT_LEN;

/// Long-term identifier of an access authority; stable across key rotations.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fingerprint(pub [u8; FINGERPRINT_LEN]);

impl Fingerprint {
    /// Deterministically derives a fingerprint from a label. Handy for tests
    /// and desk-scale deployments; real deployments would assign these.
    pub fn derive(label: &[u8]) -> Self {
        let digest = Sha256::digest(label);
        let mut out = [0u8; FINGERPRINT_LEN];
        out.copy_from_slice(&digest[..FINGERPRINT_LEN]);
        Fingerprint(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenError> {
        if bytes.len() != FINGERPRINT_LEN {
            return Err(TokenError::BadLength {
                expected: FINGERPRINT_LEN,
                got: bytes.len(),
            });
        }
        let mut out = [0u8; FINGERPRINT_LEN];
        out.copy_from_slice(bytes);
        Ok(Fingerprint(out))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for byte in self.0 {
            write!(f, "{byte:02x}")?;
        }
        Ok(())
    }
}

// Serialized as lowercase hex, the form fingerprints take in consensus files.
impl serde::Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = alloc::string::String::deserialize(deserializer)?;
        if text.len() != 2 * FINGERPRINT_LEN {
            return Err(serde::de::Error::custom("fingerprint must be 40 hex chars"));
        }
        let mut bytes = [0u8; FINGERPRINT_LEN];
        for (i, chunk) in text.as_bytes().chunks(2).enumerate() {
            let hex = core::str::from_utf8(chunk).map_err(serde::de::Error::custom)?;
            bytes[i] = u8::from_str_radix(hex, 16).map_err(serde::de::Error::custom)?;
        }
        Ok(Fingerprint(bytes))
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

/// What a token is spendable on. Carried out-of-band from the scope bytes;
/// scope content is never used to infer the kind.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum TokenKind {
    Site,
    Relay,
    Trans,
}

impl TokenKind {
    pub fn as_byte(self) -> u8 {
        match self {
            TokenKind::Site => 0,
            TokenKind::Relay => 1,
            TokenKind::Trans => 2,
        }
    }

    pub fn from_byte(byte: u8) -> Result<Self, TokenError> {
        match byte {
            0 => Ok(TokenKind::Site),
            1 => Ok(TokenKind::Relay),
            2 => Ok(TokenKind::Trans),
            other => Err(TokenError::UnknownKind(other)),
        }
    }

    pub fn signature_domain(self) -> SignatureDomain {
        match self {
            TokenKind::Site => SignatureDomain::SiteToken,
            TokenKind::Relay => SignatureDomain::RelayToken,
            TokenKind::Trans => SignatureDomain::TransToken,
        }
    }
}

/// 64-byte scope field: a site domain, a relay fingerprint, or the fixed
/// trans-capability constant, zero padded.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scope([u8; SCOPE_LEN]);

impl Scope {
    pub fn from_domain(domain: &str) -> Result<Self, TokenError> {
        let bytes = domain.as_bytes();
        if bytes.is_empty() {
            return Err(TokenError::EmptyScope);
        }
        if bytes.len() > SCOPE_LEN {
            return Err(TokenError::ScopeTooLong { len: bytes.len() });
        }
        let mut out = [0u8; SCOPE_LEN];
        out[..bytes.len()].copy_from_slice(bytes);
        Ok(Scope(out))
    }

    pub fn from_relay(fingerprint: Fingerprint) -> Self {
        let mut out = [0u8; SCOPE_LEN];
        out[..FINGERPRINT_LEN].copy_from_slice(&fingerprint.0);
        Scope(out)
    }

    /// The system-wide trans-capability scope constant.
    pub fn trans() -> Self {
        let mut out = [0u8; SCOPE_LEN];
        out[..5].copy_from_slice(b"TRANS");
        Scope(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenError> {
        if bytes.len() != SCOPE_LEN {
            return Err(TokenError::BadLength {
                expected: SCOPE_LEN,
                got: bytes.len(),
            });
        }
        let mut out = [0u8; SCOPE_LEN];
        out.copy_from_slice(bytes);
        Ok(Scope(out))
    }

    pub fn as_bytes(&self) -> &[u8; SCOPE_LEN] {
        &self.0
    }
}

impl fmt::Debug for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let printable = self.0.iter().take_while(|b| b.is_ascii_graphic()).count();
        match core::str::from_utf8(&self.0[..printable]) {
            Ok(s) if !s.is_empty() => write!(f, "Scope({s:?})"),
            _ => write!(f, "Scope(0x{:02x}..)", self.0[0]),
        }
    }
}

/// The shared epoch timestamp all valid tokens carry; rotating it nullifies
/// every prior-epoch token at once.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EpochValue(pub [u8; EPOCH_LEN]);

impl fmt::Debug for EpochValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "EpochValue({:02x}{:02x}{:02x}{:02x}..)",
            self.0[0], self.0[1], self.0[2], self.0[3]
        )
    }
}

/// Deterministic stand-in for the network's daily random value: one 256-bit
/// value per epoch, derived from a shared seed and the epoch index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochBeacon {
    seed: [u8; 32],
    genesis_s: f64,
    length_s: f64,
}

impl EpochBeacon {
    pub fn new(seed: [u8; 32], genesis_s: f64, length_s: f64) -> Self {
        EpochBeacon {
            seed,
            genesis_s,
            length_s,
        }
    }

    pub fn length_s(&self) -> f64 {
        self.length_s
    }

    pub fn index_at(&self, now: f64) -> u64 {
        if now <= self.genesis_s {
            return 0;
        }
        ((now - self.genesis_s) / self.length_s) as u64
    }

    pub fn value(&self, index: u64) -> EpochValue {
        let mut h = Sha256::new();
        h.update(b"capguard.v1/epoch");
        h.update(self.seed);
        h.update(index.to_be_bytes());
        EpochValue(h.finalize().into())
    }

    pub fn value_at(&self, now: f64) -> EpochValue {
        self.value(self.index_at(now))
    }
}

/// The information a client commits to before blinding: scope, nonce, epoch
/// value, and the fingerprint of the authority it will ask to sign.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TokenPayload {
    pub scope: Scope,
    pub nonce: [u8; NONCE_LEN],
    pub epoch: EpochValue,
    pub authority: Fingerprint,
}

impl TokenPayload {
    pub fn new<R: Rng + ?Sized>(
        scope: Scope,
        epoch: EpochValue,
        authority: Fingerprint,
        rng: &mut R,
    ) -> Self {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        TokenPayload {
            scope,
            nonce,
            epoch,
            authority,
        }
    }

    pub fn encode(&self) -> [u8; PAYLOAD_LEN] {
        let mut out = [0u8; PAYLOAD_LEN];
        out[..SCOPE_LEN].copy_from_slice(&self.scope.0);
        out[SCOPE_LEN..SCOPE_LEN + NONCE_LEN].copy_from_slice(&self.nonce);
        out[SCOPE_LEN + NONCE_LEN..SCOPE_LEN + NONCE_LEN + EPOCH_LEN].copy_from_slice(&self.epoch.0);
        out[SCOPE_LEN + NONCE_LEN + EPOCH_LEN..].copy_from_slice(&self.authority.0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TokenError> {
        if bytes.len() != PAYLOAD_LEN {
            return Err(TokenError::BadLength {
                expected: PAYLOAD_LEN,
                got: bytes.len(),
            });
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[SCOPE_LEN..SCOPE_LEN + NONCE_LEN]);
        let mut epoch = [0u8; EPOCH_LEN];
        epoch.copy_from_slice(&bytes[SCOPE_LEN + NONCE_LEN..SCOPE_LEN + NONCE_LEN + EPOCH_LEN]);
        Ok(TokenPayload {
            scope: Scope::from_bytes(&bytes[..SCOPE_LEN])?,
            nonce,
            epoch: EpochValue(epoch),
            authority: Fingerprint::from_bytes(&bytes[SCOPE_LEN + NONCE_LEN + EPOCH_LEN..])?,
        })
    }
}

/// Client-held secret state between blinding and unblinding.
pub struct BlindingContext {
    factor: BigUint,
    pub payload: TokenPayload,
    pub kind: TokenKind,
}

/// Blind signature handed back by an authority, still tied to the blinded
/// message it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct PreCapability {
    pub blinded: BigUint,
    pub blind_signature: BigUint,
    pub kind: TokenKind,
    pub authority: Fingerprint,
}

/// Spendable, unblinded token.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Capability {
    pub payload: TokenPayload,
    pub kind: TokenKind,
    pub signature: BigUint,
    signature_len: usize,
}

impl Capability {
    pub fn from_parts(
        payload: TokenPayload,
        kind: TokenKind,
        signature: BigUint,
        signature_len: usize,
    ) -> Self {
        Capability {
            payload,
            kind,
            signature,
            signature_len,
        }
    }

    /// Canonical encoding: payload, kind byte, fixed-width big-endian
    /// signature. Total size `PAYLOAD_LEN + 1 + signature_len`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PAYLOAD_LEN + 1 + self.signature_len);
        out.extend_from_slice(&self.payload.encode());
        out.push(self.kind.as_byte());
        let sig = self.signature.to_bytes_be();
        debug_assert!(sig.len() <= self.signature_len);
        out.resize(PAYLOAD_LEN + 1 + self.signature_len - sig.len(), 0);
        out.extend_from_slice(&sig);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenError> {
        if bytes.len() <= PAYLOAD_LEN + 1 {
            return Err(TokenError::BadLength {
                expected: PAYLOAD_LEN + 2,
                got: bytes.len(),
            });
        }
        let payload = TokenPayload::decode(&bytes[..PAYLOAD_LEN])?;
        let kind = TokenKind::from_byte(bytes[PAYLOAD_LEN])?;
        let sig_bytes = &bytes[PAYLOAD_LEN + 1..];
        Ok(Capability {
            payload,
            kind,
            signature: BigUint::from_bytes_be(sig_bytes),
            signature_len: sig_bytes.len(),
        })
    }

    /// Digest of the canonical bytes, used for duplicate suppression and
    /// spent-token sets.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Challenge-bypass token: a random nonce signed by the issuing authority.
#[derive(Clone, Debug)]
pub struct Pseudonym {
    pub nonce: [u8; NONCE_LEN],
    pub signature: BigUint,
    pub issued_at: f64,
    pub expires_at: f64,
}

impl Pseudonym {
    pub fn is_expired(&self, now: f64) -> bool {
        now >= self.expires_at
    }

    /// Server-side index key; reveals nothing beyond the nonce it is built from.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"capguard.v1/pseudonym-id");
        h.update(self.nonce);
        h.finalize().into()
    }
}

/// Verifies a pseudonym signature under the authority's site-kind key.
pub fn verify_pseudonym(pseudonym: &Pseudonym, key: &RsaPublicKey) -> bool {
    blind::verify(
        key,
        SignatureDomain::Pseudonym,
        &pseudonym.nonce,
        &pseudonym.signature,
    )
}

/// Blinds a payload for issuance. Fresh randomness per call; the returned
/// context never leaves the client.
pub fn blind_payload<R: Rng + ?Sized>(
    rng: &mut R,
    payload: TokenPayload,
    key: &RsaPublicKey,
    kind: TokenKind,
) -> Result<(BigUint, BlindingContext), BlindError> {
    let encoded = payload.encode();
    let (blinded, factor) = blind::blind(rng, key, kind.signature_domain(), &encoded)?;
    Ok((
        blinded,
        BlindingContext {
            factor,
            payload,
            kind,
        },
    ))
}

/// Unblinds a pre-capability into a spendable capability, verifying the
/// resulting signature before returning it.
pub fn unblind_capability(
    blind_signature: &BigUint,
    context: &BlindingContext,
    key: &RsaPublicKey,
) -> Result<Capability, TokenError> {
    let signature = blind::unblind(key, blind_signature, &context.factor)
        .map_err(TokenError::Blind)?;
    let cap = Capability {
        payload: context.payload,
        kind: context.kind,
        signature,
        signature_len: key.signature_len(),
    };
    if !blind::verify(
        key,
        context.kind.signature_domain(),
        &cap.payload.encode(),
        &cap.signature,
    ) {
        return Err(TokenError::SignatureInvalid);
    }
    Ok(cap)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TokenError {
    ScopeTooLong { len: usize },
    EmptyScope,
    BadLength { expected: usize, got: usize },
    UnknownKind(u8),
    SignatureInvalid,
    Blind(BlindError),
}

impl fmt::Display for TokenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenError::ScopeTooLong { len } => {
                write!(f, "scope of {len} bytes exceeds the {SCOPE_LEN}-byte field")
            }
            TokenError::EmptyScope => write!(f, "scope must not be empty"),
            TokenError::BadLength { expected, got } => {
                write!(f, "expected {expected} bytes, got {got}")
            }
            TokenError::UnknownKind(b) => write!(f, "unknown token kind byte {b:#04x}"),
            TokenError::SignatureInvalid => write!(f, "signature does not verify"),
            TokenError::Blind(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TokenError {}
