//! Distributed puzzle seeds and the CPU-bounded solving protocol.
//!
//! A fresh puzzle seed is assembled once per release period from signed
//! nonces contributed by a quorum of directory authorities. Solutions are
//! hash preimage trials over the seed digest, a client nonce, a candidate
//! solution, and the fingerprint of the authority the stub will be redeemed
//! at. Stubs are only redeemable inside the acceptance window of the period
//! they were computed in, which bounds the fraction of CPU time any client
//! can usefully spend on puzzles by `accept_period / release_period`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use num_bigint_dig::BigUint;
use rand::Rng;
use sha2::{Digest, Sha256, Sha512};

use crate::blind::{self, BlindError, RsaKeyPair, RsaPublicKey, SignatureDomain};
use crate::token::{Fingerprint, FINGERPRINT_LEN, NONCE_LEN};

/// SHA-512 output length; the hash value space is `[0, 2^512 - 1]`.
pub const PUZZLE_HASH_LEN: usize = 64;
pub const SOLUTION_LEN: usize = 16;
pub const STUB_LEN: usize = PUZZLE_HASH_LEN + NONCE_LEN + SOLUTION_LEN + FINGERPRINT_LEN;

/// Seed release and solution acceptance periods, in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PuzzleSchedule {
    release_period_s: f64,
    accept_period_s: f64,
}

pub const DEFAULT_RELEASE_PERIOD_S: f64 = 300.0;
pub const DEFAULT_ACCEPT_PERIOD_S: f64 = 60.0;

impl PuzzleSchedule {
    pub fn new(release_period_s: f64, accept_period_s: f64) -> Result<Self, PuzzleConfigError> {
        if !(accept_period_s > 0.0 && accept_period_s < release_period_s) {
            return Err(PuzzleConfigError::BadPeriods {
                release_period_s,
                accept_period_s,
            });
        }
        Ok(PuzzleSchedule {
            release_period_s,
            accept_period_s,
        })
    }

    pub fn release_period_s(&self) -> f64 {
        self.release_period_s
    }

    pub fn accept_period_s(&self) -> f64 {
        self.accept_period_s
    }

    pub fn cooldown_s(&self) -> f64 {
        self.release_period_s - self.accept_period_s
    }

    pub fn period_index(&self, now: f64) -> u64 {
        if now <= 0.0 {
            return 0;
        }
        (now / self.release_period_s) as u64
    }

    pub fn period_start(&self, index: u64) -> f64 {
        index as f64 * self.release_period_s
    }

    /// Whether `now` falls inside the acceptance window of its own period.
    pub fn in_acceptance(&self, now: f64) -> bool {
        let start = self.period_start(self.period_index(now));
        now - start < self.accept_period_s
    }
}

impl Default for PuzzleSchedule {
    fn default() -> Self {
        PuzzleSchedule::new(DEFAULT_RELEASE_PERIOD_S, DEFAULT_ACCEPT_PERIOD_S).unwrap()
    }
}

/// One directory authority's signing identity.
#[derive(Clone, Debug)]
pub struct DaKeyPair {
    pub id: u8,
    keys: RsaKeyPair,
}

impl DaKeyPair {
    pub fn generate<R: Rng + ?Sized>(id: u8, bits: usize, rng: &mut R) -> Result<Self, BlindError> {
        Ok(DaKeyPair {
            id,
            keys: RsaKeyPair::generate(bits, rng)?,
        })
    }

    pub fn from_parts(id: u8, keys: RsaKeyPair) -> Self {
        DaKeyPair { id, keys }
    }

    pub fn keys(&self) -> &RsaKeyPair {
        &self.keys
    }

    pub fn public(&self) -> &RsaPublicKey {
        self.keys.public()
    }

    /// Contributes one signed piece for the period starting at
    /// `period_start_s`.
    pub fn contribute<R: Rng + ?Sized>(
        &self,
        period_start_s: u64,
        rng: &mut R,
    ) -> Result<SeedPiece, BlindError> {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let message = SeedPiece::message(self.id, &nonce, period_start_s);
        let digest = blind::full_domain_hash(
            SignatureDomain::SeedPiece,
            &message,
            self.keys.public().modulus(),
        );
        let signature = blind::blind_sign(&self.keys, &digest)?;
        Ok(SeedPiece {
            da_id: self.id,
            nonce,
            period_start_s,
            signature,
        })
    }
}

/// Signed nonce contributed by one directory authority.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedPiece {
    pub da_id: u8,
    pub nonce: [u8; NONCE_LEN],
    pub period_start_s: u64,
    pub signature: BigUint,
}

impl SeedPiece {
    fn message(da_id: u8, nonce: &[u8; NONCE_LEN], period_start_s: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + NONCE_LEN + 8);
        out.push(da_id);
        out.extend_from_slice(nonce);
        out.extend_from_slice(&period_start_s.to_be_bytes());
        out
    }

    pub fn verify(&self, key: &RsaPublicKey) -> bool {
        blind::verify(
            key,
            SignatureDomain::SeedPiece,
            &Self::message(self.da_id, &self.nonce, self.period_start_s),
            &self.signature,
        )
    }
}

/// Assembled per-period puzzle seed: at least `quorum` authentic pieces from
/// distinct authorities, hashed into a single digest.
#[derive(Clone, Debug, PartialEq)]
pub struct PuzzleSeed {
    pieces: Vec<SeedPiece>,
    digest: [u8; PUZZLE_HASH_LEN],
    period_index: u64,
}

impl PuzzleSeed {
    pub fn digest(&self) -> &[u8; PUZZLE_HASH_LEN] {
        &self.digest
    }

    pub fn pieces(&self) -> &[SeedPiece] {
        &self.pieces
    }

    pub fn period_index(&self) -> u64 {
        self.period_index
    }
}

fn seed_digest(pieces: &[SeedPiece]) -> [u8; PUZZLE_HASH_LEN] {
    let mut h = Sha512::new();
    h.update(b"capguard.v1/puzzle-seed");
    for piece in pieces {
        h.update([piece.da_id]);
        h.update(piece.nonce);
        h.update(piece.period_start_s.to_be_bytes());
        let sig = piece.signature.to_bytes_be();
        h.update((sig.len() as u16).to_be_bytes());
        h.update(&sig);
    }
    h.finalize().into()
}

/// Builds a seed from candidate pieces: pieces with a stale timestamp or a
/// bad signature are dropped from the set, the survivors are deduplicated by
/// authority, sorted, and hashed. Fails if fewer than `quorum` distinct
/// authorities remain.
pub fn assemble_seed(
    candidates: &[SeedPiece],
    quorum: usize,
    period_index: u64,
    schedule: &PuzzleSchedule,
    da_keys: &BTreeMap<u8, RsaPublicKey>,
) -> Result<PuzzleSeed, SeedReleaseError> {
    let expected_start = schedule.period_start(period_index) as u64;
    let mut by_id: BTreeMap<u8, SeedPiece> = BTreeMap::new();
    for piece in candidates {
        if piece.period_start_s != expected_start {
            continue;
        }
        let authentic = da_keys.get(&piece.da_id).map(|k| piece.verify(k));
        if authentic != Some(true) {
            continue;
        }
        by_id.entry(piece.da_id).or_insert_with(|| piece.clone());
    }
    if by_id.len() < quorum {
        return Err(SeedReleaseError::QuorumNotMet {
            accepted: by_id.len(),
            quorum,
        });
    }
    let pieces: Vec<SeedPiece> = by_id.into_values().collect();
    let digest = seed_digest(&pieces);
    Ok(PuzzleSeed {
        pieces,
        digest,
        period_index,
    })
}

/// Runs a full in-process release round: every authority contributes a fresh
/// piece for `period_index` and the result is assembled under `quorum`.
pub fn release_seed<R: Rng + ?Sized>(
    das: &[DaKeyPair],
    quorum: usize,
    period_index: u64,
    schedule: &PuzzleSchedule,
    rng: &mut R,
) -> Result<PuzzleSeed, SeedReleaseError> {
    let start = schedule.period_start(period_index) as u64;
    let mut pieces = Vec::with_capacity(das.len());
    let mut keys = BTreeMap::new();
    for da in das {
        pieces.push(da.contribute(start, rng).map_err(SeedReleaseError::Signing)?);
        keys.insert(da.id, da.public().clone());
    }
    assemble_seed(&pieces, quorum, period_index, schedule, &keys)
}

/// A solved puzzle, redeemable at exactly one authority.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PuzzleStub {
    pub seed_digest: [u8; PUZZLE_HASH_LEN],
    pub nonce: [u8; NONCE_LEN],
    pub solution: [u8; SOLUTION_LEN],
    pub authority: Fingerprint,
}

impl PuzzleStub {
    pub fn to_bytes(&self) -> [u8; STUB_LEN] {
        let mut out = [0u8; STUB_LEN];
        out[..PUZZLE_HASH_LEN].copy_from_slice(&self.seed_digest);
        out[PUZZLE_HASH_LEN..PUZZLE_HASH_LEN + NONCE_LEN].copy_from_slice(&self.nonce);
        out[PUZZLE_HASH_LEN + NONCE_LEN..PUZZLE_HASH_LEN + NONCE_LEN + SOLUTION_LEN]
            .copy_from_slice(&self.solution);
        out[PUZZLE_HASH_LEN + NONCE_LEN + SOLUTION_LEN..].copy_from_slice(&self.authority.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PuzzleConfigError> {
        if bytes.len() != STUB_LEN {
            return Err(PuzzleConfigError::BadStubLength { got: bytes.len() });
        }
        let mut seed_digest = [0u8; PUZZLE_HASH_LEN];
        seed_digest.copy_from_slice(&bytes[..PUZZLE_HASH_LEN]);
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[PUZZLE_HASH_LEN..PUZZLE_HASH_LEN + NONCE_LEN]);
        let mut solution = [0u8; SOLUTION_LEN];
        solution.copy_from_slice(
            &bytes[PUZZLE_HASH_LEN + NONCE_LEN..PUZZLE_HASH_LEN + NONCE_LEN + SOLUTION_LEN],
        );
        let mut fp = [0u8; FINGERPRINT_LEN];
        fp.copy_from_slice(&bytes[PUZZLE_HASH_LEN + NONCE_LEN + SOLUTION_LEN..]);
        Ok(PuzzleStub {
            seed_digest,
            nonce,
            solution,
            authority: Fingerprint(fp),
        })
    }

    /// The puzzle value: SHA-512 over seed digest, nonce, solution, and
    /// authority fingerprint, in that order.
    pub fn puzzle_value(&self) -> [u8; PUZZLE_HASH_LEN] {
        Sha512::digest(self.to_bytes()).into()
    }

    /// Key for the spent-stub cache.
    pub fn spend_digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Whether `value / (2^512 - 1) < threshold_probability`.
///
/// Compared on the top 128 bits of the value against
/// `floor(threshold * 2^128)`; exact for dyadic thresholds and at both
/// endpoints, and within 2^-53 relative error otherwise.
pub fn hash_below(value: &[u8; PUZZLE_HASH_LEN], threshold_probability: f64) -> bool {
    if threshold_probability >= 1.0 {
        return true;
    }
    if threshold_probability <= 0.0 {
        return false;
    }
    let top = u128::from_be_bytes(value[..16].try_into().unwrap());
    let scaled = threshold_probability * 340_282_366_920_938_463_463_374_607_431_768_211_456.0;
    top < scaled as u128
}

/// Trial-solves until a stub passes the threshold or `max_attempts` runs out.
/// Returns the stub and the number of hash attempts it took.
pub fn solve<R: Rng + ?Sized>(
    seed: &PuzzleSeed,
    authority: Fingerprint,
    threshold_probability: f64,
    max_attempts: u64,
    rng: &mut R,
) -> Option<(PuzzleStub, u64)> {
    let mut stub = PuzzleStub {
        seed_digest: *seed.digest(),
        nonce: [0u8; NONCE_LEN],
        solution: [0u8; SOLUTION_LEN],
        authority,
    };
    for attempt in 1..=max_attempts {
        rng.fill_bytes(&mut stub.nonce);
        rng.fill_bytes(&mut stub.solution);
        if hash_below(&stub.puzzle_value(), threshold_probability) {
            return Some((stub, attempt));
        }
    }
    None
}

/// Outcome of one acceptance window of solving.
#[derive(Clone, Debug, Default)]
pub struct WindowOutcome {
    pub stubs: Vec<PuzzleStub>,
    pub attempts: u64,
}

/// Solves for as long as the supplied clock stays inside the acceptance
/// window of the seed's period, polling the clock once per hash attempt.
/// With `stop_after_first` the solver returns on its first valid stub.
pub fn solve_in_window<R, C>(
    seed: &PuzzleSeed,
    authority: Fingerprint,
    threshold_probability: f64,
    schedule: &PuzzleSchedule,
    clock: &mut C,
    stop_after_first: bool,
    rng: &mut R,
) -> WindowOutcome
where
    R: Rng + ?Sized,
    C: FnMut() -> f64,
{
    let mut outcome = WindowOutcome::default();
    let mut stub = PuzzleStub {
        seed_digest: *seed.digest(),
        nonce: [0u8; NONCE_LEN],
        solution: [0u8; SOLUTION_LEN],
        authority,
    };
    loop {
        let now = clock();
        if schedule.period_index(now) != seed.period_index() || !schedule.in_acceptance(now) {
            return outcome;
        }
        rng.fill_bytes(&mut stub.nonce);
        rng.fill_bytes(&mut stub.solution);
        outcome.attempts += 1;
        if hash_below(&stub.puzzle_value(), threshold_probability) {
            outcome.stubs.push(stub);
            if stop_after_first {
                return outcome;
            }
        }
    }
}

/// Cache of spent stubs for the current period; prior periods are erasable
/// because their stubs are no longer redeemable.
#[derive(Clone, Debug)]
pub struct SpentStubSet {
    period_index: u64,
    spent: BTreeSet<[u8; 32]>,
}

impl SpentStubSet {
    pub fn new(period_index: u64) -> Self {
        SpentStubSet {
            period_index,
            spent: BTreeSet::new(),
        }
    }

    /// Drops all cached stubs when the period advances.
    pub fn rotate(&mut self, period_index: u64) {
        if period_index != self.period_index {
            self.period_index = period_index;
            self.spent.clear();
        }
    }

    pub fn len(&self) -> usize {
        self.spent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spent.is_empty()
    }

    pub fn insert_if_absent(&mut self, digest: [u8; 32]) -> bool {
        self.spent.insert(digest)
    }

    pub fn contains(&self, digest: &[u8; 32]) -> bool {
        self.spent.contains(digest)
    }
}

/// The five verification rules, each with its own rejection code.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StubCheck {
    /// (i) returned outside the current acceptance window
    OutsideAcceptance,
    /// (ii) computed on a seed other than the current period's
    StaleSeed,
    /// (iii) encloses a different authority's fingerprint
    ForeignAuthority,
    /// (iv) hash value does not meet the threshold
    WeakSolution,
    /// (v) already spent in this period
    AlreadySpent,
}

impl fmt::Display for StubCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StubCheck::OutsideAcceptance => write!(f, "outside the acceptance window"),
            StubCheck::StaleSeed => write!(f, "built on a stale puzzle seed"),
            StubCheck::ForeignAuthority => write!(f, "targets a different authority"),
            StubCheck::WeakSolution => write!(f, "solution does not meet the threshold"),
            StubCheck::AlreadySpent => write!(f, "stub already spent"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for StubCheck {}

/// Authority-side stub verification: rules (i)-(v) in order, inserting into
/// the spent set on acceptance. The spent set is rotated to the current
/// period first, which erases entries that can no longer be spent.
pub fn verify_stub(
    stub: &PuzzleStub,
    now: f64,
    schedule: &PuzzleSchedule,
    current_seed: &PuzzleSeed,
    own_fingerprint: Fingerprint,
    threshold_probability: f64,
    spent: &mut SpentStubSet,
) -> Result<(), StubCheck> {
    spent.rotate(schedule.period_index(now));
    if schedule.period_index(now) != current_seed.period_index() || !schedule.in_acceptance(now) {
        return Err(StubCheck::OutsideAcceptance);
    }
    if stub.seed_digest != *current_seed.digest() {
        return Err(StubCheck::StaleSeed);
    }
    if stub.authority != own_fingerprint {
        return Err(StubCheck::ForeignAuthority);
    }
    if !hash_below(&stub.puzzle_value(), threshold_probability) {
        return Err(StubCheck::WeakSolution);
    }
    if !spent.insert_if_absent(stub.spend_digest()) {
        return Err(StubCheck::AlreadySpent);
    }
    Ok(())
}

/// Picks the smallest per-attempt success probability that lets a slow
/// device solve at least one puzzle per window with probability > 0.99:
/// `1 - 0.01^(1/N0)` with `N0 = floor((accept - latency) / hash_time)`.
pub fn calibrate_threshold(
    slow_hash_time_s: f64,
    worst_latency_s: f64,
    schedule: &PuzzleSchedule,
) -> Result<f64, PuzzleConfigError> {
    if slow_hash_time_s <= 0.0 {
        return Err(PuzzleConfigError::NonPositiveHashTime);
    }
    let usable = schedule.accept_period_s() - worst_latency_s;
    let attempts = if usable > 0.0 {
        libm::floor(usable / slow_hash_time_s) as u64
    } else {
        0
    };
    if attempts == 0 {
        return Err(PuzzleConfigError::InfeasibleSchedule);
    }
    Ok(1.0 - libm::pow(0.01, 1.0 / attempts as f64))
}

/// Binomial model of per-window puzzle yield: success probability per
/// attempt and the floored attempt budget `(accept - latency) / hash_time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YieldModel {
    pub success_probability: f64,
    pub trials: u64,
}

impl YieldModel {
    pub fn mean(&self) -> f64 {
        self.success_probability * self.trials as f64
    }

    pub fn variance(&self) -> f64 {
        self.trials as f64 * self.success_probability * (1.0 - self.success_probability)
    }
}

pub fn yield_distribution(
    threshold_probability: f64,
    schedule: &PuzzleSchedule,
    latency_s: f64,
    hash_time_s: f64,
) -> Result<YieldModel, PuzzleConfigError> {
    if hash_time_s <= 0.0 {
        return Err(PuzzleConfigError::NonPositiveHashTime);
    }
    let usable = schedule.accept_period_s() - latency_s;
    let trials = if usable > 0.0 {
        libm::floor(usable / hash_time_s) as u64
    } else {
        0
    };
    Ok(YieldModel {
        success_probability: threshold_probability,
        trials,
    })
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum PuzzleConfigError {
    BadPeriods {
        release_period_s: f64,
        accept_period_s: f64,
    },
    BadStubLength {
        got: usize,
    },
    NonPositiveHashTime,
    /// No attempt fits the window for the slowest supported device.
    InfeasibleSchedule,
}

impl fmt::Display for PuzzleConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PuzzleConfigError::BadPeriods {
                release_period_s,
                accept_period_s,
            } => write!(
                f,
                "need 0 < accept ({accept_period_s}s) < release ({release_period_s}s)"
            ),
            PuzzleConfigError::BadStubLength { got } => {
                write!(f, "puzzle stub must be {STUB_LEN} bytes, got {got}")
            }
            PuzzleConfigError::NonPositiveHashTime => write!(f, "hash time must be positive"),
            PuzzleConfigError::InfeasibleSchedule => {
                write!(f, "schedule leaves no room for a single attempt")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PuzzleConfigError {}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SeedReleaseError {
    QuorumNotMet { accepted: usize, quorum: usize },
    Signing(BlindError),
}

impl fmt::Display for SeedReleaseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedReleaseError::QuorumNotMet { accepted, quorum } => {
                write!(f, "only {accepted} authentic pieces, quorum is {quorum}")
            }
            SeedReleaseError::Signing(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SeedReleaseError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use std::sync::OnceLock;

    const QUORUM: usize = 5;

    fn das() -> &'static Vec<DaKeyPair> {
        static DAS: OnceLock<Vec<DaKeyPair>> = OnceLock::new();
        DAS.get_or_init(|| {
            let mut rng = rng(40);
            (0..9)
                .map(|id| DaKeyPair::generate(id, 1024, &mut rng).unwrap())
                .collect()
        })
    }

    fn da_keys() -> BTreeMap<u8, RsaPublicKey> {
        das().iter().map(|d| (d.id, d.public().clone())).collect()
    }

    fn schedule() -> PuzzleSchedule {
        PuzzleSchedule::default()
    }

    fn fingerprint() -> Fingerprint {
        Fingerprint::derive(b"puzzle-authority")
    }

    fn seed_for_period(period: u64, seed: u64) -> PuzzleSeed {
        release_seed(das(), QUORUM, period, &schedule(), &mut rng(seed)).unwrap()
    }

    #[test]
    fn majority_quorum_releases_a_seed() {
        let seed = release_seed(&das()[..5], QUORUM, 0, &schedule(), &mut rng(41)).unwrap();
        assert_eq!(seed.pieces().len(), 5);
    }

    #[test]
    fn below_quorum_fails() {
        assert_eq!(
            release_seed(&das()[..4], QUORUM, 0, &schedule(), &mut rng(42)),
            Err(SeedReleaseError::QuorumNotMet {
                accepted: 4,
                quorum: QUORUM
            })
        );
    }

    #[test]
    fn stale_piece_is_dropped_from_the_set() {
        let mut rng = rng(43);
        let sched = schedule();
        let mut pieces: Vec<SeedPiece> = das()[..5]
            .iter()
            .map(|d| d.contribute(sched.period_start(1) as u64, &mut rng).unwrap())
            .collect();
        // One contributor still signs the previous period's start time.
        pieces[0] = das()[0]
            .contribute(sched.period_start(0) as u64, &mut rng)
            .unwrap();
        assert_eq!(
            assemble_seed(&pieces, QUORUM, 1, &sched, &da_keys()),
            Err(SeedReleaseError::QuorumNotMet {
                accepted: 4,
                quorum: QUORUM
            })
        );
    }

    #[test]
    fn forged_piece_is_dropped() {
        let mut rng = rng(44);
        let sched = schedule();
        let start = sched.period_start(0) as u64;
        let mut pieces: Vec<SeedPiece> = das()[..6]
            .iter()
            .map(|d| d.contribute(start, &mut rng).unwrap())
            .collect();
        pieces[2].nonce[0] ^= 1;
        let seed = assemble_seed(&pieces, QUORUM, 0, &sched, &da_keys()).unwrap();
        assert_eq!(seed.pieces().len(), 5);
    }

    #[test]
    fn seed_digest_depends_on_every_piece() {
        let a = seed_for_period(0, 45);
        let b = seed_for_period(0, 46);
        let c = seed_for_period(1, 45);
        assert_ne!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());

        let mut tampered = a.pieces().to_vec();
        tampered[3].nonce[7] ^= 0x80;
        assert_ne!(&seed_digest(&tampered), a.digest());
    }

    #[test]
    fn threshold_one_succeeds_immediately() {
        let seed = seed_for_period(0, 47);
        let (_, attempts) = solve(&seed, fingerprint(), 1.0, 10, &mut rng(48)).unwrap();
        assert_eq!(attempts, 1);
    }

    #[test]
    fn threshold_zero_always_times_out() {
        let seed = seed_for_period(0, 49);
        assert!(solve(&seed, fingerprint(), 0.0, 1000, &mut rng(50)).is_none());
    }

    /// Attempt counts are geometric with mean 1/p; check the sample mean at
    /// p = 2^-12 against the closed form within 3 sigma.
    #[test]
    fn attempt_count_matches_geometric_oracle() {
        let seed = seed_for_period(0, 51);
        let p = 2f64.powi(-12);
        let runs = 300;
        let mut rng = rng(52);
        let total: u64 = (0..runs)
            .map(|_| solve(&seed, fingerprint(), p, u64::MAX, &mut rng).unwrap().1)
            .sum();
        let mean = total as f64 / runs as f64;
        let expected = 1.0 / p;
        let sigma = expected / (runs as f64).sqrt(); // geometric sd ~ 1/p
        assert!(
            (mean - expected).abs() < 3.0 * sigma,
            "mean {mean}, expected {expected} +- {sigma}"
        );
    }

    #[test]
    fn verification_rules_each_have_a_falsifying_vector() {
        let sched = schedule();
        let seed = seed_for_period(1, 53);
        let me = fingerprint();
        let p = 1.0;
        let mut rng = rng(54);
        let in_window = sched.period_start(1) + 1.0;

        let (stub, _) = solve(&seed, me, p, 10, &mut rng).unwrap();

        // (i) cool-down: same period, after the acceptance window.
        let mut spent = SpentStubSet::new(1);
        let cooldown = sched.period_start(1) + sched.accept_period_s() + 1.0;
        assert_eq!(
            verify_stub(&stub, cooldown, &sched, &seed, me, p, &mut spent),
            Err(StubCheck::OutsideAcceptance)
        );

        // (ii) stub built on the previous period's seed.
        let old_seed = seed_for_period(0, 55);
        let (old_stub, _) = solve(&old_seed, me, p, 10, &mut rng).unwrap();
        let mut spent = SpentStubSet::new(1);
        assert_eq!(
            verify_stub(&old_stub, in_window, &sched, &seed, me, p, &mut spent),
            Err(StubCheck::StaleSeed)
        );

        // (iii) stub targeting a different authority.
        let (foreign, _) = solve(&seed, Fingerprint::derive(b"other"), p, 10, &mut rng).unwrap();
        let mut spent = SpentStubSet::new(1);
        assert_eq!(
            verify_stub(&foreign, in_window, &sched, &seed, me, p, &mut spent),
            Err(StubCheck::ForeignAuthority)
        );

        // (iv) hash threshold violated.
        let (weak, _) = solve(&seed, me, 1.0, 10, &mut rng).unwrap();
        let mut spent = SpentStubSet::new(1);
        assert_eq!(
            verify_stub(&weak, in_window, &sched, &seed, me, 0.0, &mut spent),
            Err(StubCheck::WeakSolution)
        );

        // (v) replay.
        let mut spent = SpentStubSet::new(1);
        assert_eq!(
            verify_stub(&stub, in_window, &sched, &seed, me, p, &mut spent),
            Ok(())
        );
        assert_eq!(
            verify_stub(&stub, in_window, &sched, &seed, me, p, &mut spent),
            Err(StubCheck::AlreadySpent)
        );
    }

    #[test]
    fn spent_set_erases_on_period_rotation() {
        let mut spent = SpentStubSet::new(0);
        spent.insert_if_absent([1u8; 32]);
        assert_eq!(spent.len(), 1);
        spent.rotate(0);
        assert_eq!(spent.len(), 1);
        spent.rotate(1);
        assert!(spent.is_empty());
    }

    #[test]
    fn calibration_closed_forms() {
        let sched = schedule();
        // One attempt per window: that attempt must succeed w.p. > 0.99.
        let p1 = calibrate_threshold(sched.accept_period_s() - 1.0, 0.5, &sched).unwrap();
        assert!((p1 - 0.99).abs() < 1e-12);

        // N0 = 1000.
        let p1000 = calibrate_threshold(0.05, 10.0, &sched).unwrap();
        assert_eq!((sched.accept_period_s() - 10.0) / 0.05, 1000.0);
        let expected = 1.0 - 0.01f64.powf(1.0 / 1000.0);
        assert!((p1000 - expected).abs() < 1e-12);
        assert!((p1000 - 4.595e-3).abs() < 5e-6);

        // Infeasible: latency swallows the whole window.
        assert_eq!(
            calibrate_threshold(100.0, 59.9, &sched),
            Err(PuzzleConfigError::InfeasibleSchedule)
        );
    }

    #[test]
    fn yield_model_trials_floor() {
        let sched = PuzzleSchedule::new(20.0, 10.0).unwrap();
        let m = yield_distribution(0.5, &sched, 0.0, 1.0).unwrap();
        assert_eq!(m.trials, 10);
        assert_eq!(m.mean(), 5.0);
        let m = yield_distribution(0.5, &sched, 0.5, 1.0).unwrap();
        assert_eq!(m.trials, 9);
    }

    /// Monte-Carlo yield over many windows against the binomial model.
    #[test]
    fn window_yield_matches_binomial_model() {
        let sched = PuzzleSchedule::new(30.0, 12.0).unwrap();
        let p = 0.05;
        let hash_time = 0.25;
        let model = yield_distribution(p, &sched, 0.0, hash_time).unwrap();
        assert_eq!(model.trials, 48);

        let periods = 500;
        let mut rng = rng(56);
        let mut total = 0usize;
        for k in 0..periods {
            let seed = release_seed(das(), QUORUM, k, &sched, &mut rng).unwrap();
            let start = sched.period_start(k);
            let mut polls = 0u64;
            let mut clock = || {
                let now = start + polls as f64 * hash_time;
                polls += 1;
                now
            };
            let outcome = solve_in_window(
                &seed,
                fingerprint(),
                p,
                &sched,
                &mut clock,
                false,
                &mut rng,
            );
            assert_eq!(outcome.attempts, model.trials);
            total += outcome.stubs.len();
        }
        let mean = total as f64 / periods as f64;
        let sigma = (model.variance() / periods as f64).sqrt();
        assert!(
            (mean - model.mean()).abs() < 3.0 * sigma,
            "mean {mean}, model {} +- {sigma}",
            model.mean()
        );
    }

    /// The solver can spend at most accept/release of its time hashing.
    #[test]
    fn cpu_fraction_bounded_by_schedule() {
        let sched = PuzzleSchedule::new(10.0, 2.0).unwrap();
        let hash_time = 0.01;
        let mut rng = rng(57);
        let mut busy = 0.0f64;
        let periods = 20;
        for k in 0..periods {
            let seed = release_seed(das(), QUORUM, k, &sched, &mut rng).unwrap();
            let mut t = sched.period_start(k);
            let mut clock = || {
                let now = t;
                t += hash_time;
                now
            };
            let outcome =
                solve_in_window(&seed, fingerprint(), 0.01, &sched, &mut clock, false, &mut rng);
            busy += outcome.attempts as f64 * hash_time;
        }
        let fraction = busy / (periods as f64 * sched.release_period_s());
        let bound = sched.accept_period_s() / sched.release_period_s();
        assert!(
            fraction <= bound + 0.02,
            "fraction {fraction} exceeds {bound} + 2%"
        );
        assert!(fraction > bound * 0.5, "solver barely ran: {fraction}");
    }

    #[test]
    fn stub_bytes_round_trip() {
        let seed = seed_for_period(0, 58);
        let (stub, _) = solve(&seed, fingerprint(), 1.0, 10, &mut rng(59)).unwrap();
        assert_eq!(PuzzleStub::from_bytes(&stub.to_bytes()).unwrap(), stub);
        assert!(PuzzleStub::from_bytes(&[0u8; 10]).is_err());
    }

    #[test]
    fn dyadic_threshold_is_exact() {
        // With threshold 2^-16 the comparison reduces to "top 16 bits zero".
        let mut value = [0u8; PUZZLE_HASH_LEN];
        value[2] = 0xff;
        assert!(hash_below(&value, 2f64.powi(-16)));
        let mut value = [0u8; PUZZLE_HASH_LEN];
        value[1] = 0x01;
        assert!(!hash_below(&value, 2f64.powi(-16)));
    }
}
