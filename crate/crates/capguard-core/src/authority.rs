//! Authority-side issuance: seed validation, the two per-seed rate limiters,
//! pseudonym renewal, pre-capability signing, trans-token redemption, and
//! capacity planning.
//!
//! The state machine here is deliberately IO-free. The service layer wraps it
//! in a lock, feeds it wall-clock time, and persists the facts it needs to
//! restore after a restart (seed records, pseudonym bindings, spent trans
//! tokens, and open credits).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_bigint_dig::BigUint;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::blind::{self, BlindError, SignatureDomain};
use crate::bucket::TokenBucket;
use crate::directory::{AaKeyPair, SeedType};
use crate::puzzle::{self, PuzzleSchedule, PuzzleSeed, PuzzleStub, SpentStubSet, StubCheck};
use crate::token::{
    Capability, EpochValue, Fingerprint, PreCapability, Pseudonym, Scope, TokenKind, NONCE_LEN,
};

/// Identifier of a validated capability seed: a digest of the material that
/// was presented. The raw material is never stored.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeedId(pub [u8; 32]);

impl fmt::Display for SeedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for SeedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SeedId({self})")
    }
}

/// Published rate limiters: site-kind and relay-kind pre-capability budgets
/// per seed, in tokens per `interval_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateLimits {
    pub site_per_interval: f64,
    pub relay_per_interval: f64,
    pub interval_s: f64,
    /// Limits are enforced over a longer burst window; bucket capacity is
    /// `rate x burst_window_s`.
    pub burst_window_s: f64,
}

impl RateLimits {
    pub fn site_bucket(&self, now: f64) -> TokenBucket {
        TokenBucket::for_rate(self.site_per_interval, self.interval_s, self.burst_window_s, now)
    }

    pub fn relay_bucket(&self, now: f64) -> TokenBucket {
        TokenBucket::for_rate(self.relay_per_interval, self.interval_s, self.burst_window_s, now)
    }
}

impl Default for RateLimits {
    /// PrivCount-derived defaults: 24 site tokens and 12 relay tokens per
    /// 10-minute interval, enforced over a one-hour burst window.
    fn default() -> Self {
        RateLimits {
            site_per_interval: 24.0,
            relay_per_interval: 12.0,
            interval_s: 600.0,
            burst_window_s: 3600.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AuthorityConfig {
    pub seed_type: SeedType,
    pub rates: RateLimits,
    pub pseudonym_validity_s: f64,
    /// Relay issuances granted per redeemed trans token (3 = one circuit).
    pub trans_credits: u32,
    /// Shared secret for the mock challenge validator (captcha / ttp).
    pub challenge_secret: String,
    /// Per-attempt success threshold expected of puzzle stubs.
    pub puzzle_threshold: f64,
}

impl AuthorityConfig {
    pub fn new(seed_type: SeedType) -> Self {
        AuthorityConfig {
            seed_type,
            rates: RateLimits::default(),
            pseudonym_validity_s: 86_400.0,
            trans_credits: 3,
            challenge_secret: String::from("desk-secret"),
            puzzle_threshold: 1e-3,
        }
    }
}

/// Per-seed limiter state.
#[derive(Clone, Debug)]
pub struct SeedRecord {
    pub seed_id: SeedId,
    pub seed_type: SeedType,
    pub site_bucket: TokenBucket,
    pub relay_bucket: TokenBucket,
}

/// Spent trans-token digests for the current epoch; rotating the epoch makes
/// old tokens unverifiable, so the set resets with it.
#[derive(Clone, Debug)]
pub struct SpentTransSet {
    epoch: EpochValue,
    spent: BTreeSet<[u8; 32]>,
}

impl SpentTransSet {
    pub fn new(epoch: EpochValue) -> Self {
        SpentTransSet {
            epoch,
            spent: BTreeSet::new(),
        }
    }

    pub fn rotate(&mut self, epoch: EpochValue) {
        if epoch != self.epoch {
            self.epoch = epoch;
            self.spent.clear();
        }
    }

    pub fn insert_if_absent(&mut self, digest: [u8; 32]) -> bool {
        self.spent.insert(digest)
    }

    pub fn contains(&self, digest: &[u8; 32]) -> bool {
        self.spent.contains(digest)
    }

    pub fn len(&self) -> usize {
        self.spent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spent.is_empty()
    }
}

/// Seed material presented to `validate_seed`.
#[derive(Clone, Debug)]
pub enum SeedMaterial {
    Captcha { token: String },
    Puzzle { stub: PuzzleStub },
    Ttp { assertion: String },
}

impl SeedMaterial {
    pub fn seed_type(&self) -> SeedType {
        match self {
            SeedMaterial::Captcha { .. } => SeedType::Captcha,
            SeedMaterial::Puzzle { .. } => SeedType::Puzzle,
            SeedMaterial::Ttp { .. } => SeedType::Ttp,
        }
    }

    fn seed_id(&self) -> SeedId {
        let mut h = Sha256::new();
        match self {
            SeedMaterial::Captcha { token } => {
                h.update(b"capguard.v1/seed-captcha");
                h.update(token.as_bytes());
            }
            SeedMaterial::Puzzle { stub } => {
                h.update(b"capguard.v1/seed-puzzle");
                h.update(stub.to_bytes());
            }
            SeedMaterial::Ttp { assertion } => {
                h.update(b"capguard.v1/seed-ttp");
                h.update(assertion.as_bytes());
            }
        }
        SeedId(h.finalize().into())
    }
}

/// Mints a mock challenge token: `<id>:<hex mac>` where the mac binds the
/// id to the shared secret. Stands in for a CAPTCHA provider response.
pub fn mint_challenge_token(secret: &str, id: &str) -> String {
    use core::fmt::Write;
    let mut h = Sha256::new();
    h.update(b"capguard.v1/mock-challenge");
    h.update(secret.as_bytes());
    h.update(id.as_bytes());
    let mac = h.finalize();
    let mut out = String::with_capacity(id.len() + 1 + 64);
    out.push_str(id);
    out.push(':');
    for b in mac {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn challenge_token_valid(secret: &str, token: &str) -> bool {
    match token.rsplit_once(':') {
        Some((id, _)) => mint_challenge_token(secret, id) == token,
        None => false,
    }
}

/// What a client presents to authorize a pre-capability request.
#[derive(Clone, Debug)]
pub enum IssueAuth {
    /// A seed validated earlier in the same exchange.
    Seed(SeedId),
    /// A cached pseudonym from a previous challenge.
    Pseudonym(Pseudonym),
    /// Credit from a redeemed trans token; relay kind only, no pseudonym.
    TransCredit([u8; 32]),
}

/// Credit handed out when a trans token is redeemed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransCredit {
    pub id: [u8; 32],
    pub credits: u32,
}

#[derive(Clone, Copy, Debug)]
struct PseudonymBinding {
    seed_id: SeedId,
    expires_at: f64,
}

#[derive(Clone, Debug)]
struct PuzzleEnv {
    schedule: PuzzleSchedule,
    seed: PuzzleSeed,
    spent: SpentStubSet,
}

/// The authority state machine.
pub struct AuthorityState {
    config: AuthorityConfig,
    keys: AaKeyPair,
    epoch: EpochValue,
    seeds: BTreeMap<SeedId, SeedRecord>,
    pseudonyms: BTreeMap<[u8; 32], PseudonymBinding>,
    spent_trans: SpentTransSet,
    credits: BTreeMap<[u8; 32], u32>,
    puzzle_env: Option<PuzzleEnv>,
    /// Everything request-derived the authority retains: seed ids and blinded
    /// messages. Scanned by tests to prove no payload plaintext lands here.
    transcript: Vec<Vec<u8>>,
}

impl AuthorityState {
    pub fn new(config: AuthorityConfig, keys: AaKeyPair, epoch: EpochValue) -> Self {
        AuthorityState {
            config,
            keys,
            epoch,
            seeds: BTreeMap::new(),
            pseudonyms: BTreeMap::new(),
            spent_trans: SpentTransSet::new(epoch),
            credits: BTreeMap::new(),
            puzzle_env: None,
            transcript: Vec::new(),
        }
    }

    pub fn config(&self) -> &AuthorityConfig {
        &self.config
    }

    pub fn keys(&self) -> &AaKeyPair {
        &self.keys
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.keys.fingerprint()
    }

    pub fn epoch(&self) -> EpochValue {
        self.epoch
    }

    /// Rotates the shared epoch value; prior-epoch trans tokens become
    /// unverifiable, so their spent set is dropped with it.
    pub fn set_epoch(&mut self, epoch: EpochValue) {
        self.epoch = epoch;
        self.spent_trans.rotate(epoch);
    }

    /// Installs the current puzzle seed; only meaningful for puzzle-type
    /// authorities.
    pub fn install_puzzle_seed(&mut self, schedule: PuzzleSchedule, seed: PuzzleSeed) {
        let period = seed.period_index();
        match &mut self.puzzle_env {
            Some(env) => {
                env.schedule = schedule;
                env.seed = seed;
                env.spent.rotate(period);
            }
            None => {
                self.puzzle_env = Some(PuzzleEnv {
                    schedule,
                    seed,
                    spent: SpentStubSet::new(period),
                });
            }
        }
    }

    pub fn current_puzzle_period(&self) -> Option<u64> {
        self.puzzle_env.as_ref().map(|e| e.seed.period_index())
    }

    pub fn transcript(&self) -> &[Vec<u8>] {
        &self.transcript
    }

    pub fn seed_record(&self, id: &SeedId) -> Option<&SeedRecord> {
        self.seeds.get(id)
    }

    /// Validates presented seed material and creates (or refreshes) the
    /// record that its rate limiters hang off. Fresh records start with full
    /// buckets.
    pub fn validate_seed(&mut self, material: &SeedMaterial, now: f64) -> Result<SeedId, SeedError> {
        if material.seed_type() != self.config.seed_type {
            return Err(SeedError::WrongSeedType {
                accepted: self.config.seed_type,
            });
        }
        match material {
            SeedMaterial::Captcha { token } => {
                if !challenge_token_valid(&self.config.challenge_secret, token) {
                    return Err(SeedError::InvalidChallenge);
                }
            }
            SeedMaterial::Ttp { assertion } => {
                if !challenge_token_valid(&self.config.challenge_secret, assertion) {
                    return Err(SeedError::InvalidChallenge);
                }
            }
            SeedMaterial::Puzzle { stub } => {
                let env = self.puzzle_env.as_mut().ok_or(SeedError::NoPuzzleSeed)?;
                puzzle::verify_stub(
                    stub,
                    now,
                    &env.schedule,
                    &env.seed,
                    self.keys.fingerprint(),
                    self.config.puzzle_threshold,
                    &mut env.spent,
                )
                .map_err(SeedError::PuzzleRejected)?;
            }
        }
        let id = material.seed_id();
        self.transcript.push(id.0.to_vec());
        let config = &self.config;
        self.seeds.entry(id).or_insert_with(|| SeedRecord {
            seed_id: id,
            seed_type: config.seed_type,
            site_bucket: config.rates.site_bucket(now),
            relay_bucket: config.rates.relay_bucket(now),
        });
        Ok(id)
    }

    /// Issues a pseudonym bound (server-side only) to a validated seed, so
    /// later requests debit the same buckets without a fresh challenge.
    pub fn issue_pseudonym<R: Rng + ?Sized>(
        &mut self,
        seed_id: SeedId,
        now: f64,
        rng: &mut R,
    ) -> Result<Pseudonym, SeedError> {
        if !self.seeds.contains_key(&seed_id) {
            return Err(SeedError::UnknownSeed);
        }
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let digest = blind::full_domain_hash(
            SignatureDomain::Pseudonym,
            &nonce,
            self.keys.site_keys().public().modulus(),
        );
        let signature =
            blind::blind_sign(self.keys.site_keys(), &digest).map_err(SeedError::Signing)?;
        let pseudonym = Pseudonym {
            nonce,
            signature,
            issued_at: now,
            expires_at: now + self.config.pseudonym_validity_s,
        };
        self.pseudonyms.insert(
            pseudonym.digest(),
            PseudonymBinding {
                seed_id,
                expires_at: pseudonym.expires_at,
            },
        );
        Ok(pseudonym)
    }

    /// Signs a blinded message after debiting the right bucket: site and
    /// trans kinds share the site bucket, relay kind debits the relay bucket,
    /// and a trans credit replaces the bucket for relay issuance.
    pub fn issue_precapability(
        &mut self,
        auth: &IssueAuth,
        blinded: &BigUint,
        kind: TokenKind,
        now: f64,
    ) -> Result<PreCapability, IssueError> {
        self.transcript.push(blinded.to_bytes_be());
        match auth {
            IssueAuth::TransCredit(id) => {
                if kind != TokenKind::Relay {
                    return Err(IssueError::CreditKindMismatch);
                }
                let remaining = self.credits.get_mut(id).ok_or(IssueError::UnknownCredit)?;
                if *remaining == 0 {
                    return Err(IssueError::CreditExhausted);
                }
                *remaining -= 1;
            }
            _ => {
                let seed_id = self.resolve_seed(auth, now)?;
                let record = self
                    .seeds
                    .get_mut(&seed_id)
                    .ok_or(IssueError::UnknownSeed)?;
                let bucket = match kind {
                    TokenKind::Site | TokenKind::Trans => &mut record.site_bucket,
                    TokenKind::Relay => &mut record.relay_bucket,
                };
                if !bucket.try_take(now) {
                    return Err(IssueError::RateLimited {
                        retry_after_s: bucket.retry_after(now),
                    });
                }
            }
        }
        let signature = blind::blind_sign(self.keys.signing_keys(kind), blinded)
            .map_err(IssueError::Signing)?;
        Ok(PreCapability {
            blinded: blinded.clone(),
            blind_signature: signature,
            kind,
            authority: self.keys.fingerprint(),
        })
    }

    fn resolve_seed(&mut self, auth: &IssueAuth, now: f64) -> Result<SeedId, IssueError> {
        match auth {
            IssueAuth::Seed(id) => Ok(*id),
            IssueAuth::Pseudonym(p) => {
                if !crate::token::verify_pseudonym(p, self.keys.site_keys().public()) {
                    return Err(IssueError::PseudonymInvalid);
                }
                let binding = self
                    .pseudonyms
                    .get(&p.digest())
                    .ok_or(IssueError::UnknownPseudonym)?;
                if now >= binding.expires_at || p.is_expired(now) {
                    return Err(IssueError::PseudonymExpired);
                }
                Ok(binding.seed_id)
            }
            IssueAuth::TransCredit(_) => unreachable!("credit path handled by caller"),
        }
    }

    /// Redeems a trans token for relay-issuance credit. The token must carry
    /// this authority's signature over the trans scope constant, the current
    /// epoch, and must not have been spent.
    pub fn redeem_trans(&mut self, cap: &Capability, _now: f64) -> Result<TransCredit, TransError> {
        if cap.kind != TokenKind::Trans || cap.payload.authority != self.keys.fingerprint() {
            return Err(TransError::Unauthentic);
        }
        if !blind::verify(
            self.keys.site_keys().public(),
            TokenKind::Trans.signature_domain(),
            &cap.payload.encode(),
            &cap.signature,
        ) {
            return Err(TransError::Unauthentic);
        }
        if cap.payload.scope != Scope::trans() {
            return Err(TransError::ScopeMismatch);
        }
        if cap.payload.epoch != self.epoch {
            return Err(TransError::Expired);
        }
        let digest = cap.digest();
        self.transcript.push(digest.to_vec());
        if !self.spent_trans.insert_if_absent(digest) {
            return Err(TransError::Spent);
        }
        let credit = TransCredit {
            id: digest,
            credits: self.config.trans_credits,
        };
        self.credits.insert(credit.id, credit.credits);
        Ok(credit)
    }

    pub fn remaining_credit(&self, id: &[u8; 32]) -> Option<u32> {
        self.credits.get(id).copied()
    }

    // Restore hooks for persistence replay. These bypass validation: the
    // facts were validated when first recorded.

    pub fn restore_seed(&mut self, record: SeedRecord) {
        self.seeds.insert(record.seed_id, record);
    }

    pub fn restore_pseudonym(&mut self, digest: [u8; 32], seed_id: SeedId, expires_at: f64) {
        self.pseudonyms
            .insert(digest, PseudonymBinding { seed_id, expires_at });
    }

    pub fn restore_spent_trans(&mut self, digest: [u8; 32]) {
        self.spent_trans.insert_if_absent(digest);
    }

    pub fn restore_credit(&mut self, id: [u8; 32], remaining: u32) {
        self.credits.insert(id, remaining);
    }

    pub fn seed_records(&self) -> impl Iterator<Item = &SeedRecord> {
        self.seeds.values()
    }
}

/// Request volume and core count needed to sign for a client population:
/// each client costs `streams + 3 x circuits` signatures per interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapacityPlan {
    pub requests_per_s: f64,
    pub cores: u64,
}

pub fn plan_capacity(
    clients: u64,
    streams_per_interval: f64,
    circuits_per_interval: f64,
    interval_s: f64,
    per_op_cost_s: f64,
) -> Result<CapacityPlan, PlanError> {
    if streams_per_interval < 0.0
        || circuits_per_interval < 0.0
        || interval_s <= 0.0
        || per_op_cost_s <= 0.0
    {
        return Err(PlanError::NonPositiveParameter);
    }
    let requests_per_s =
        clients as f64 * (streams_per_interval + 3.0 * circuits_per_interval) / interval_s;
    Ok(CapacityPlan {
        requests_per_s,
        cores: cores_for_rate(requests_per_s, per_op_cost_s),
    })
}

/// Cores needed to sustain `requests_per_s` at `per_op_cost_s` per signature.
pub fn cores_for_rate(requests_per_s: f64, per_op_cost_s: f64) -> u64 {
    libm::ceil(requests_per_s * per_op_cost_s) as u64
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PlanError {
    NonPositiveParameter,
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "capacity planning parameters must be positive")
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PlanError {}

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum SeedError {
    WrongSeedType { accepted: SeedType },
    InvalidChallenge,
    NoPuzzleSeed,
    PuzzleRejected(StubCheck),
    UnknownSeed,
    Signing(BlindError),
}

impl fmt::Display for SeedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeedError::WrongSeedType { accepted } => {
                write!(f, "this authority accepts only {accepted} seeds")
            }
            SeedError::InvalidChallenge => write!(f, "challenge solution is invalid"),
            SeedError::NoPuzzleSeed => write!(f, "no puzzle seed installed"),
            SeedError::PuzzleRejected(check) => write!(f, "puzzle stub rejected: {check}"),
            SeedError::UnknownSeed => write!(f, "unknown seed"),
            SeedError::Signing(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SeedError {}

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum IssueError {
    RateLimited { retry_after_s: f64 },
    UnknownSeed,
    PseudonymInvalid,
    UnknownPseudonym,
    PseudonymExpired,
    UnknownCredit,
    CreditExhausted,
    CreditKindMismatch,
    Signing(BlindError),
}

impl fmt::Display for IssueError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssueError::RateLimited { retry_after_s } => {
                write!(f, "rate limited; retry after {retry_after_s:.1}s")
            }
            IssueError::UnknownSeed => write!(f, "unknown seed"),
            IssueError::PseudonymInvalid => write!(f, "pseudonym signature invalid"),
            IssueError::UnknownPseudonym => write!(f, "pseudonym not issued here"),
            IssueError::PseudonymExpired => write!(f, "pseudonym expired; solve a new challenge"),
            IssueError::UnknownCredit => write!(f, "unknown trans credit"),
            IssueError::CreditExhausted => write!(f, "trans credit exhausted"),
            IssueError::CreditKindMismatch => write!(f, "trans credits cover relay issuance only"),
            IssueError::Signing(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for IssueError {}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TransError {
    Unauthentic,
    Expired,
    Spent,
    ScopeMismatch,
}

impl fmt::Display for TransError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransError::Unauthentic => write!(f, "trans token is not authentic"),
            TransError::Expired => write!(f, "trans token carries a stale epoch"),
            TransError::Spent => write!(f, "trans token already spent"),
            TransError::ScopeMismatch => write!(f, "trans token scope mismatch"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TransError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{aa_keys, aa_keys_2, rng};
    use crate::token::{blind_payload, unblind_capability, EpochBeacon, TokenPayload};

    fn beacon() -> EpochBeacon {
        EpochBeacon::new([9u8; 32], 0.0, 86_400.0)
    }

    fn state() -> AuthorityState {
        let mut config = AuthorityConfig::new(SeedType::Captcha);
        config.rates = RateLimits {
            site_per_interval: 24.0,
            relay_per_interval: 12.0,
            interval_s: 600.0,
            burst_window_s: 600.0,
        };
        AuthorityState::new(config, aa_keys().clone(), beacon().value(0))
    }

    fn valid_token(state: &AuthorityState) -> String {
        mint_challenge_token(&state.config().challenge_secret, "client-7")
    }

    fn seeded(state: &mut AuthorityState, now: f64) -> SeedId {
        let token = valid_token(state);
        state
            .validate_seed(&SeedMaterial::Captcha { token }, now)
            .unwrap()
    }

    fn blinded_for(kind: TokenKind, rng: &mut impl Rng) -> BigUint {
        let scope = match kind {
            TokenKind::Site => Scope::from_domain("example.org").unwrap(),
            TokenKind::Relay => Scope::from_relay(Fingerprint::derive(b"relay-1")),
            TokenKind::Trans => Scope::trans(),
        };
        let payload = TokenPayload::new(scope, beacon().value(0), aa_keys().fingerprint(), rng);
        let (blinded, _) =
            blind_payload(rng, payload, aa_keys().signing_keys(kind).public(), kind).unwrap();
        blinded
    }

    #[test]
    fn valid_challenge_creates_record_with_full_buckets() {
        let mut s = state();
        let id = seeded(&mut s, 0.0);
        let record = s.seed_record(&id).unwrap();
        assert_eq!(record.site_bucket.tokens(), 24.0);
        assert_eq!(record.relay_bucket.tokens(), 12.0);
    }

    #[test]
    fn bad_challenge_rejected() {
        let mut s = state();
        let err = s
            .validate_seed(
                &SeedMaterial::Captcha {
                    token: String::from("client-7:deadbeef"),
                },
                0.0,
            )
            .unwrap_err();
        assert_eq!(err, SeedError::InvalidChallenge);
    }

    #[test]
    fn wrong_seed_type_rejected() {
        let mut s = state();
        let err = s
            .validate_seed(
                &SeedMaterial::Ttp {
                    assertion: valid_token(&s),
                },
                0.0,
            )
            .unwrap_err();
        assert_eq!(
            err,
            SeedError::WrongSeedType {
                accepted: SeedType::Captcha
            }
        );
    }

    #[test]
    fn bucket_exhaustion_rate_limits_with_retry_after() {
        let mut s = state();
        let id = seeded(&mut s, 0.0);
        let mut rng = rng(60);
        for _ in 0..24 {
            let blinded = blinded_for(TokenKind::Site, &mut rng);
            s.issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Site, 1.0)
                .unwrap();
        }
        let blinded = blinded_for(TokenKind::Site, &mut rng);
        match s.issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Site, 1.0) {
            Err(IssueError::RateLimited { retry_after_s }) => {
                assert!((retry_after_s - 25.0).abs() < 1e-9)
            }
            other => panic!("expected rate limit, got {other:?}"),
        }
        // After one refill period the request is admitted.
        assert!(s
            .issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Site, 1.0 + 25.0)
            .is_ok());
    }

    #[test]
    fn relay_issuance_does_not_debit_site_bucket() {
        let mut s = state();
        let id = seeded(&mut s, 0.0);
        let mut rng = rng(61);
        let blinded = blinded_for(TokenKind::Relay, &mut rng);
        s.issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Relay, 1.0)
            .unwrap();
        let record = s.seed_record(&id).unwrap();
        assert_eq!(record.site_bucket.tokens(), 24.0);
        assert_eq!(record.relay_bucket.tokens(), 11.0);
    }

    #[test]
    fn trans_issuance_debits_site_bucket() {
        let mut s = state();
        let id = seeded(&mut s, 0.0);
        let mut rng = rng(62);
        let blinded = blinded_for(TokenKind::Trans, &mut rng);
        s.issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Trans, 1.0)
            .unwrap();
        let record = s.seed_record(&id).unwrap();
        assert_eq!(record.site_bucket.tokens(), 23.0);
        assert_eq!(record.relay_bucket.tokens(), 12.0);
    }

    #[test]
    fn pseudonym_round_trip_debits_original_seed() {
        let mut s = state();
        let id = seeded(&mut s, 0.0);
        let mut rng = rng(63);
        let pseudonym = s.issue_pseudonym(id, 0.0, &mut rng).unwrap();

        let blinded = blinded_for(TokenKind::Site, &mut rng);
        s.issue_precapability(
            &IssueAuth::Pseudonym(pseudonym.clone()),
            &blinded,
            TokenKind::Site,
            10.0,
        )
        .unwrap();
        assert_eq!(s.seed_record(&id).unwrap().site_bucket.tokens(), 23.0);

        // Expired pseudonym forces a fresh challenge.
        let late = pseudonym.expires_at + 1.0;
        assert_eq!(
            s.issue_precapability(&IssueAuth::Pseudonym(pseudonym), &blinded, TokenKind::Site, late),
            Err(IssueError::PseudonymExpired)
        );
    }

    #[test]
    fn foreign_pseudonym_rejected() {
        let mut s = state();
        let mut rng = rng(64);
        let mut other = AuthorityState::new(
            AuthorityConfig::new(SeedType::Captcha),
            aa_keys_2().clone(),
            beacon().value(0),
        );
        let token = mint_challenge_token(&other.config().challenge_secret, "c");
        let other_id = other
            .validate_seed(&SeedMaterial::Captcha { token }, 0.0)
            .unwrap();
        let foreign = other.issue_pseudonym(other_id, 0.0, &mut rng).unwrap();

        let blinded = blinded_for(TokenKind::Site, &mut rng);
        assert_eq!(
            s.issue_precapability(&IssueAuth::Pseudonym(foreign), &blinded, TokenKind::Site, 1.0),
            Err(IssueError::PseudonymInvalid)
        );
    }

    fn issue_trans_capability(s: &mut AuthorityState, rng: &mut impl Rng) -> Capability {
        let id = seeded(s, 0.0);
        let payload = TokenPayload::new(
            Scope::trans(),
            beacon().value(0),
            aa_keys().fingerprint(),
            rng,
        );
        let key = aa_keys().signing_keys(TokenKind::Trans);
        let (blinded, ctx) = blind_payload(rng, payload, key.public(), TokenKind::Trans).unwrap();
        let pre = s
            .issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Trans, 0.0)
            .unwrap();
        unblind_capability(&pre.blind_signature, &ctx, key.public()).unwrap()
    }

    #[test]
    fn trans_redemption_grants_credit_once() {
        let mut s = state();
        let mut rng = rng(65);
        let cap = issue_trans_capability(&mut s, &mut rng);

        let credit = s.redeem_trans(&cap, 1.0).unwrap();
        assert_eq!(credit.credits, 3);
        assert_eq!(s.redeem_trans(&cap, 2.0), Err(TransError::Spent));

        // Credit covers exactly three relay issuances, without a pseudonym.
        for _ in 0..3 {
            let blinded = blinded_for(TokenKind::Relay, &mut rng);
            s.issue_precapability(
                &IssueAuth::TransCredit(credit.id),
                &blinded,
                TokenKind::Relay,
                3.0,
            )
            .unwrap();
        }
        let blinded = blinded_for(TokenKind::Relay, &mut rng);
        assert_eq!(
            s.issue_precapability(&IssueAuth::TransCredit(credit.id), &blinded, TokenKind::Relay, 3.0),
            Err(IssueError::CreditExhausted)
        );
        assert_eq!(
            s.issue_precapability(&IssueAuth::TransCredit(credit.id), &blinded, TokenKind::Site, 3.0),
            Err(IssueError::CreditKindMismatch)
        );
    }

    #[test]
    fn trans_scope_and_epoch_rules() {
        let mut s = state();
        let mut rng = rng(66);

        // Scope other than the trans constant.
        let id = seeded(&mut s, 0.0);
        let payload = TokenPayload::new(
            Scope::from_domain("example.org").unwrap(),
            beacon().value(0),
            aa_keys().fingerprint(),
            &mut rng,
        );
        let key = aa_keys().signing_keys(TokenKind::Trans);
        let (blinded, ctx) =
            blind_payload(&mut rng, payload, key.public(), TokenKind::Trans).unwrap();
        let pre = s
            .issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Trans, 0.0)
            .unwrap();
        let wrong_scope = unblind_capability(&pre.blind_signature, &ctx, key.public()).unwrap();
        assert_eq!(s.redeem_trans(&wrong_scope, 1.0), Err(TransError::ScopeMismatch));

        // Stale epoch.
        let stale = issue_trans_capability(&mut s, &mut rng);
        s.set_epoch(beacon().value(1));
        assert_eq!(s.redeem_trans(&stale, 1.0), Err(TransError::Expired));

        // Kind mismatch is unauthentic.
        let mut forged = issue_trans_capability(&mut s, &mut rng);
        forged.kind = TokenKind::Site;
        assert_eq!(s.redeem_trans(&forged, 1.0), Err(TransError::Unauthentic));
    }

    #[test]
    fn epoch_rotation_resets_spent_trans() {
        let mut s = state();
        let mut rng = rng(67);
        let cap = issue_trans_capability(&mut s, &mut rng);
        s.redeem_trans(&cap, 1.0).unwrap();
        assert_eq!(s.spent_trans.len(), 1);
        s.set_epoch(beacon().value(1));
        assert!(s.spent_trans.is_empty());
    }

    #[test]
    fn capacity_plan_matches_published_figures() {
        // PrivCount inputs: 710k clients, 24 streams, 4 circuits (3 tokens
        // each), 10-minute interval, 0.23 ms per signature.
        let plan = plan_capacity(710_000, 24.0, 4.0, 600.0, 0.00023).unwrap();
        assert!((plan.requests_per_s - 42_600.0).abs() < 1e-6);
        assert!(plan.requests_per_s >= 42_000.0 && plan.requests_per_s <= 44_000.0);
        assert_eq!(cores_for_rate(44_000.0, 0.00023), 11);
        assert_eq!(plan_capacity(0, 24.0, 4.0, 600.0, 0.00023).unwrap().cores, 0);

        // Five million bots re-requesting at the limit on both channels.
        let bots = plan_capacity(5_000_000, 24.0, 8.0, 600.0, 0.00023).unwrap();
        assert!(
            (bots.cores as f64 - 100.0).abs() <= 15.0,
            "cores = {}",
            bots.cores
        );
    }

    #[test]
    fn transcript_contains_only_digests_and_blinded_material() {
        let mut s = state();
        let mut rng = rng(68);
        let id = seeded(&mut s, 0.0);
        let payload = TokenPayload::new(
            Scope::from_domain("example.org").unwrap(),
            beacon().value(0),
            aa_keys().fingerprint(),
            &mut rng,
        );
        let key = aa_keys().signing_keys(TokenKind::Site);
        let (blinded, _) =
            blind_payload(&mut rng, payload, key.public(), TokenKind::Site).unwrap();
        s.issue_precapability(&IssueAuth::Seed(id), &blinded, TokenKind::Site, 0.0)
            .unwrap();

        // No 16-byte window of the payload plaintext may appear anywhere in
        // what the authority retained.
        let plaintext = payload.encode();
        for entry in s.transcript() {
            for window in plaintext.windows(16) {
                assert!(!entry.windows(16).any(|e| e == window));
            }
        }
    }
}
