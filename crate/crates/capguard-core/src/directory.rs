//! Authority key material and the directory verifiers consult.
//!
//! Each authority holds exactly two active RSA key pairs at any instant: one
//! for site-access tokens and one for circuit-creation tokens. Trans tokens
//! ride on the site key with their own hash domain. The directory maps the
//! long-term authority fingerprint to its currently active public keys, its
//! accepted seed type, and a blacklist bit.

use alloc::collections::{BTreeMap, BTreeSet};
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blind::{self, BlindError, RsaKeyPair, RsaPublicKey};
use crate::token::{Capability, Fingerprint, TokenKind};

/// The one seed type a given authority accepts.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedType {
    Captcha,
    Puzzle,
    Ttp,
}

impl fmt::Display for SeedType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedType::Captcha => write!(f, "captcha"),
            SeedType::Puzzle => write!(f, "puzzle"),
            SeedType::Ttp => write!(f, "ttp"),
        }
    }
}

/// Secret-side key bundle of one authority.
#[derive(Clone, Debug)]
pub struct AaKeyPair {
    fingerprint: Fingerprint,
    site: RsaKeyPair,
    relay: RsaKeyPair,
    valid_from: f64,
    valid_until: f64,
}

impl AaKeyPair {
    pub fn generate<R: Rng + ?Sized>(
        fingerprint: Fingerprint,
        bits: usize,
        valid_from: f64,
        valid_until: f64,
        rng: &mut R,
    ) -> Result<Self, BlindError> {
        Ok(AaKeyPair {
            fingerprint,
            site: RsaKeyPair::generate(bits, rng)?,
            relay: RsaKeyPair::generate(bits, rng)?,
            valid_from,
            valid_until,
        })
    }

    pub fn from_parts(
        fingerprint: Fingerprint,
        site: RsaKeyPair,
        relay: RsaKeyPair,
        valid_from: f64,
        valid_until: f64,
    ) -> Self {
        AaKeyPair {
            fingerprint,
            site,
            relay,
            valid_from,
            valid_until,
        }
    }

    /// Replaces both key pairs, keeping the fingerprint. The old keys stop
    /// being valid the moment the new ones exist.
    pub fn rotate<R: Rng + ?Sized>(
        &mut self,
        bits: usize,
        valid_from: f64,
        valid_until: f64,
        rng: &mut R,
    ) -> Result<(), BlindError> {
        self.site = RsaKeyPair::generate(bits, rng)?;
        self.relay = RsaKeyPair::generate(bits, rng)?;
        self.valid_from = valid_from;
        self.valid_until = valid_until;
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn site_keys(&self) -> &RsaKeyPair {
        &self.site
    }

    pub fn relay_keys(&self) -> &RsaKeyPair {
        &self.relay
    }

    pub fn valid_from(&self) -> f64 {
        self.valid_from
    }

    pub fn valid_until(&self) -> f64 {
        self.valid_until
    }

    /// Key pair that signs tokens of `kind`. Trans tokens share the site key;
    /// their hash domain keeps them unexchangeable with site tokens.
    pub fn signing_keys(&self, kind: TokenKind) -> &RsaKeyPair {
        match kind {
            TokenKind::Site | TokenKind::Trans => &self.site,
            TokenKind::Relay => &self.relay,
        }
    }

    pub fn directory_entry(&self, seed_type: SeedType) -> AaDirectoryEntry {
        AaDirectoryEntry {
            fingerprint: self.fingerprint,
            seed_type,
            site_key: self.site.public().clone(),
            relay_key: self.relay.public().clone(),
            valid_from: self.valid_from,
            valid_until: self.valid_until,
        }
    }
}

/// Published view of one authority.
#[derive(Clone, Debug)]
pub struct AaDirectoryEntry {
    pub fingerprint: Fingerprint,
    pub seed_type: SeedType,
    pub site_key: RsaPublicKey,
    pub relay_key: RsaPublicKey,
    pub valid_from: f64,
    pub valid_until: f64,
}

impl AaDirectoryEntry {
    pub fn verifying_key(&self, kind: TokenKind) -> &RsaPublicKey {
        match kind {
            TokenKind::Site | TokenKind::Trans => &self.site_key,
            TokenKind::Relay => &self.relay_key,
        }
    }
}

/// Fingerprint-indexed set of active authorities plus a blacklist.
#[derive(Clone, Debug, Default)]
pub struct AaDirectory {
    entries: BTreeMap<Fingerprint, AaDirectoryEntry>,
    blacklist: BTreeSet<Fingerprint>,
}

impl AaDirectory {
    pub fn new() -> Self {
        AaDirectory::default()
    }

    pub fn publish(&mut self, entry: AaDirectoryEntry) {
        self.entries.insert(entry.fingerprint, entry);
    }

    pub fn blacklist(&mut self, fingerprint: Fingerprint) {
        self.blacklist.insert(fingerprint);
    }

    pub fn is_blacklisted(&self, fingerprint: Fingerprint) -> bool {
        self.blacklist.contains(&fingerprint)
    }

    pub fn entry(&self, fingerprint: Fingerprint) -> Option<&AaDirectoryEntry> {
        self.entries.get(&fingerprint)
    }

    pub fn entries(&self) -> impl Iterator<Item = &AaDirectoryEntry> {
        self.entries.values()
    }

    pub fn seed_type_of(&self, fingerprint: Fingerprint) -> Option<SeedType> {
        self.entries.get(&fingerprint).map(|e| e.seed_type)
    }

    /// Full signature check for a capability: the issuing authority must be
    /// known, not blacklisted, its keys currently active, and the signature
    /// must verify under the key matching the token kind.
    pub fn verify_capability(&self, cap: &Capability, now: f64) -> Result<(), AuthorityCheck> {
        let fingerprint = cap.payload.authority;
        let entry = self
            .entries
            .get(&fingerprint)
            .ok_or(AuthorityCheck::UnknownAuthority)?;
        if self.blacklist.contains(&fingerprint) {
            return Err(AuthorityCheck::Blacklisted);
        }
        if now < entry.valid_from || now >= entry.valid_until {
            return Err(AuthorityCheck::KeyInactive);
        }
        let key = entry.verifying_key(cap.kind);
        if !blind::verify(
            key,
            cap.kind.signature_domain(),
            &cap.payload.encode(),
            &cap.signature,
        ) {
            return Err(AuthorityCheck::BadSignature);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AuthorityCheck {
    /// Fingerprint absent from the directory; callers may blacklist on sight.
    UnknownAuthority,
    Blacklisted,
    KeyInactive,
    BadSignature,
}

impl fmt::Display for AuthorityCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuthorityCheck::UnknownAuthority => write!(f, "unknown authority fingerprint"),
            AuthorityCheck::Blacklisted => write!(f, "authority is blacklisted"),
            AuthorityCheck::KeyInactive => write!(f, "authority key outside its validity window"),
            AuthorityCheck::BadSignature => write!(f, "signature does not verify"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for AuthorityCheck {}
