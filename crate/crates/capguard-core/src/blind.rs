//! Raw RSA blind signatures with full-domain-hash padding.
//!
//! The scheme is the textbook one: the requester hashes its message into the
//! signer's group, multiplies by `factor^e`, the signer exponentiates with its
//! private exponent, and the requester divides the blinding factor back out.
//! Padding is a SHA-512 full-domain hash expanded in counter mode, with a
//! per-use domain tag so that signatures made for one token kind can never be
//! replayed as another kind, even when two kinds share an RSA key pair.

use alloc::vec::Vec;
use core::fmt;

use num_bigint_dig::{BigUint, ModInverse, RandBigInt, RandPrime};
use rand::Rng;
use sha2::{Digest, Sha512};

/// Smallest modulus accepted anywhere in the pipeline. 1024-bit keys are the
/// benchmark configuration; production defaults to 2048.
pub const MIN_MODULUS_BITS: usize = 1024;

const PUBLIC_EXPONENT: u64 = 65_537;

/// Separates the hash domains of the different signature uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SignatureDomain {
    SiteToken,
    RelayToken,
    TransToken,
    Pseudonym,
    SeedPiece,
}

impl SignatureDomain {
    fn tag(self) -> &'static [u8] {
        match self {
            SignatureDomain::SiteToken => b"capguard.v1/site-token",
            SignatureDomain::RelayToken => b"capguard.v1/relay-token",
            SignatureDomain::TransToken => b"capguard.v1/trans-token",
            SignatureDomain::Pseudonym => b"capguard.v1/pseudonym",
            SignatureDomain::SeedPiece => b"capguard.v1/seed-piece",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RsaPublicKey {
    n: BigUint,
    e: BigUint,
}

impl RsaPublicKey {
    pub fn from_parts(n: BigUint, e: BigUint) -> Result<Self, BlindError> {
        if n.bits() < MIN_MODULUS_BITS {
            return Err(BlindError::WeakKey { bits: n.bits() });
        }
        Ok(RsaPublicKey { n, e })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn exponent(&self) -> &BigUint {
        &self.e
    }

    /// Width in bytes of a fixed-width big-endian signature under this key.
    pub fn signature_len(&self) -> usize {
        (self.n.bits() + 7) / 8
    }
}

#[derive(Clone)]
pub struct RsaKeyPair {
    public: RsaPublicKey,
    d: BigUint,
}

impl RsaKeyPair {
    /// Generates a fresh key pair with two random primes of `bits / 2` each.
    pub fn generate<R: Rng + ?Sized>(bits: usize, rng: &mut R) -> Result<Self, BlindError> {
        if bits < MIN_MODULUS_BITS {
            return Err(BlindError::WeakKey { bits });
        }
        let e = BigUint::from(PUBLIC_EXPONENT);
        loop {
            let p = rng.gen_prime(bits / 2);
            let q = rng.gen_prime(bits / 2);
            if p == q {
                continue;
            }
            let n = &p * &q;
            if n.bits() != bits {
                continue;
            }
            let phi = (&p - 1u32) * (&q - 1u32);
            let d = match (&e).mod_inverse(&phi).and_then(|d| d.to_biguint()) {
                Some(d) => d,
                None => continue,
            };
            return Ok(RsaKeyPair {
                public: RsaPublicKey { n, e },
                d,
            });
        }
    }

    pub fn from_parts(n: BigUint, e: BigUint, d: BigUint) -> Result<Self, BlindError> {
        Ok(RsaKeyPair {
            public: RsaPublicKey::from_parts(n, e)?,
            d,
        })
    }

    pub fn public(&self) -> &RsaPublicKey {
        &self.public
    }

    pub fn private_exponent(&self) -> &BigUint {
        &self.d
    }
}

impl fmt::Debug for RsaKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Never print the private exponent.
        f.debug_struct("RsaKeyPair")
            .field("modulus_bits", &self.public.n.bits())
            .finish()
    }
}

/// SHA-512 full-domain hash of `message` into `[0, modulus)`.
///
/// The counter-mode expansion yields `modulus_len + 8` bytes before the
/// modular reduction, keeping the reduction bias below 2^-64.
pub fn full_domain_hash(domain: SignatureDomain, message: &[u8], modulus: &BigUint) -> BigUint {
    let target = (modulus.bits() + 7) / 8 + 8;
    let mut stream = Vec::with_capacity(target + 64);
    let mut counter: u32 = 0;
    while stream.len() < target {
        let mut h = Sha512::new();
        h.update(domain.tag());
        h.update(counter.to_be_bytes());
        h.update(message);
        stream.extend_from_slice(&h.finalize());
        counter += 1;
    }
    stream.truncate(target);
    BigUint::from_bytes_be(&stream) % modulus
}

/// Blinds `message` for `key`, returning the blinded group element and the
/// secret blinding factor. A fresh factor is drawn on every call.
pub fn blind<R: Rng + ?Sized>(
    rng: &mut R,
    key: &RsaPublicKey,
    domain: SignatureDomain,
    message: &[u8],
) -> Result<(BigUint, BigUint), BlindError> {
    if key.n.bits() < MIN_MODULUS_BITS {
        return Err(BlindError::WeakKey { bits: key.n.bits() });
    }
    let m = full_domain_hash(domain, message, &key.n);
    let factor = loop {
        let candidate = rng.gen_biguint_below(&key.n);
        if candidate > BigUint::from(1u32) && (&candidate).mod_inverse(&key.n).is_some() {
            break candidate;
        }
    };
    let blinded = m * factor.modpow(&key.e, &key.n) % &key.n;
    Ok((blinded, factor))
}

/// Raw signature over an already-blinded group element.
pub fn blind_sign(key: &RsaKeyPair, blinded: &BigUint) -> Result<BigUint, BlindError> {
    if blinded >= &key.public.n || blinded < &BigUint::from(1u32) {
        return Err(BlindError::MessageOutOfRange);
    }
    Ok(blinded.modpow(&key.d, &key.public.n))
}

/// Divides the blinding factor back out of a blind signature.
pub fn unblind(
    key: &RsaPublicKey,
    blind_signature: &BigUint,
    factor: &BigUint,
) -> Result<BigUint, BlindError> {
    let inverse = factor
        .mod_inverse(&key.n)
        .and_then(|i| i.to_biguint())
        .ok_or(BlindError::NonInvertibleFactor)?;
    Ok(blind_signature * inverse % &key.n)
}

/// Checks `signature^e == FDH(message) (mod n)`.
pub fn verify(
    key: &RsaPublicKey,
    domain: SignatureDomain,
    message: &[u8],
    signature: &BigUint,
) -> bool {
    signature < &key.n && signature.modpow(&key.e, &key.n) == full_domain_hash(domain, message, &key.n)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BlindError {
    /// Modulus below [`MIN_MODULUS_BITS`].
    WeakKey { bits: usize },
    /// Value to sign outside `[1, n-1]`.
    MessageOutOfRange,
    /// Blinding factor shares a divisor with the modulus.
    NonInvertibleFactor,
}

impl fmt::Display for BlindError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlindError::WeakKey { bits } => {
                write!(f, "modulus of {bits} bits is below the {MIN_MODULUS_BITS}-bit minimum")
            }
            BlindError::MessageOutOfRange => write!(f, "message outside [1, n-1]"),
            BlindError::NonInvertibleFactor => write!(f, "blinding factor is not invertible"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for BlindError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;

    fn test_key() -> &'static RsaKeyPair {
        crate::testutil::aa_keys().site_keys()
    }

    #[test]
    fn sign_then_verify_round_trip() {
        let key = test_key();
        let mut rng = rng(10);
        for i in 0..8u32 {
            let msg = i.to_be_bytes();
            let (blinded, factor) =
                blind(&mut rng, key.public(), SignatureDomain::SiteToken, &msg).unwrap();
            let blind_sig = blind_sign(key, &blinded).unwrap();
            let sig = unblind(key.public(), &blind_sig, &factor).unwrap();
            assert!(verify(key.public(), SignatureDomain::SiteToken, &msg, &sig));
            assert!(!verify(key.public(), SignatureDomain::RelayToken, &msg, &sig));
        }
    }

    /// Independent oracle: the unblinded signature must equal the direct
    /// signature `FDH(m)^d mod n` computed without any blinding at all.
    #[test]
    fn unblinding_matches_direct_exponentiation() {
        let key = test_key();
        let mut rng = rng(11);
        let msg = b"direct-route-check";
        let (blinded, factor) =
            blind(&mut rng, key.public(), SignatureDomain::SiteToken, msg).unwrap();
        let sig = unblind(key.public(), &blind_sign(key, &blinded).unwrap(), &factor).unwrap();

        let m = full_domain_hash(SignatureDomain::SiteToken, msg, key.public().modulus());
        let direct = m.modpow(key.private_exponent(), key.public().modulus());
        assert_eq!(sig, direct);
    }

    #[test]
    fn signing_one_yields_one() {
        let key = test_key();
        let one = BigUint::from(1u32);
        assert_eq!(blind_sign(key, &one).unwrap(), one);
    }

    #[test]
    fn rejects_message_outside_group() {
        let key = test_key();
        assert_eq!(
            blind_sign(key, key.public().modulus()),
            Err(BlindError::MessageOutOfRange)
        );
        assert_eq!(
            blind_sign(key, &BigUint::from(0u32)),
            Err(BlindError::MessageOutOfRange)
        );
    }

    #[test]
    fn fresh_randomness_gives_distinct_blindings() {
        let key = test_key();
        let mut rng = rng(12);
        let msg = b"same payload";
        let (b1, _) = blind(&mut rng, key.public(), SignatureDomain::SiteToken, msg).unwrap();
        let (b2, _) = blind(&mut rng, key.public(), SignatureDomain::SiteToken, msg).unwrap();
        assert_ne!(b1, b2);
    }

    #[test]
    fn weak_key_rejected() {
        let mut rng = rng(13);
        assert!(matches!(
            RsaKeyPair::generate(512, &mut rng),
            Err(BlindError::WeakKey { bits: 512 })
        ));
    }

    #[test]
    fn corrupted_signature_fails_verification() {
        let key = test_key();
        let mut rng = rng(14);
        let msg = b"integrity";
        let (blinded, factor) =
            blind(&mut rng, key.public(), SignatureDomain::SiteToken, msg).unwrap();
        let sig = unblind(key.public(), &blind_sign(key, &blinded).unwrap(), &factor).unwrap();
        let corrupted = sig ^ BigUint::from(1u32);
        assert!(!verify(key.public(), SignatureDomain::SiteToken, msg, &corrupted));
    }
}
