//! Core building blocks for capability-gated access to anonymity networks.
//!
//! This crate carries the algorithmic half of the system: blind-signature
//! capability tokens and their issuance pipeline, per-seed rate limiting at
//! the access authorities, the distributed puzzle-seed subsystem, site and
//! relay policy derivation, gatekeeper-side validation and spending, and a
//! deterministic discrete-event simulator for abuse scenarios.
//!
//! Everything here is pure given its inputs: clocks are passed in as epoch
//! seconds, randomness comes from caller-supplied RNGs, and no IO happens.
//! The companion `capguard` crate wires these pieces to HTTP, TCP, files,
//! and a CLI.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod authority;
pub mod blind;
pub mod bloom;
pub mod bucket;
pub mod directory;
pub mod gatekeeper;
pub mod policy;
pub mod puzzle;
pub mod sim;
pub mod token;
pub mod wallet;

pub use num_bigint_dig::BigUint;

#[cfg(test)]
pub(crate) mod testutil {
    use std::sync::OnceLock;

    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use crate::directory::AaKeyPair;
    use crate::token::Fingerprint;

    pub const TEST_KEY_BITS: usize = 1024;

    pub fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Shared 1024-bit authority key pair; generated once per test binary.
    pub fn aa_keys() -> &'static AaKeyPair {
        static KEYS: OnceLock<AaKeyPair> = OnceLock::new();
        KEYS.get_or_init(|| {
            AaKeyPair::generate(
                Fingerprint::derive(b"test-authority-1"),
                TEST_KEY_BITS,
                0.0,
                86_400.0,
                &mut rng(1),
            )
            .unwrap()
        })
    }

    /// A second, independent authority.
    pub fn aa_keys_2() -> &'static AaKeyPair {
        static KEYS: OnceLock<AaKeyPair> = OnceLock::new();
        KEYS.get_or_init(|| {
            AaKeyPair::generate(
                Fingerprint::derive(b"test-authority-2"),
                TEST_KEY_BITS,
                0.0,
                86_400.0,
                &mut rng(2),
            )
            .unwrap()
        })
    }
}
