//! Recipient-side enforcement: the four validation rules, duplicate
//! suppression with probabilistic nullification, aggregate admission
//! strategies (rate limiting and weighted fair queuing), and relay-side
//! priority classing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::bloom::BloomFilter;
use crate::directory::{AaDirectory, AuthorityCheck};
use crate::token::{Capability, EpochValue, Fingerprint, Scope, TokenKind};

/// What scopes this gatekeeper accepts.
#[derive(Clone, Debug)]
pub enum ScopeRule {
    /// A single site domain.
    Domain(String),
    /// CDN mode: any domain owned by one of the provider's customers.
    CdnCustomers(BTreeSet<String>),
    /// Relay mode: this relay's fingerprint.
    Relay(Fingerprint),
}

impl ScopeRule {
    fn kind(&self) -> TokenKind {
        match self {
            ScopeRule::Domain(_) | ScopeRule::CdnCustomers(_) => TokenKind::Site,
            ScopeRule::Relay(_) => TokenKind::Relay,
        }
    }

    fn matches(&self, scope: &Scope) -> bool {
        match self {
            ScopeRule::Domain(domain) => {
                Scope::from_domain(domain).map(|s| s == *scope).unwrap_or(false)
            }
            ScopeRule::CdnCustomers(customers) => customers
                .iter()
                .any(|d| Scope::from_domain(d).map(|s| s == *scope).unwrap_or(false)),
            ScopeRule::Relay(fp) => Scope::from_relay(*fp) == *scope,
        }
    }
}

/// Rejection codes, one per validation rule.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ValidationError {
    /// (i) signature, unknown authority, blacklist, key window
    Authority(AuthorityCheck),
    /// (ii) scope does not match this recipient
    ScopeMismatch,
    /// (iii) epoch value is not the current one
    StaleEpoch,
    /// (iv) nullified by this recipient's policy
    Nullified,
    /// token kind does not fit this recipient
    KindMismatch,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationError::Authority(check) => write!(f, "rule i: {check}"),
            ValidationError::ScopeMismatch => write!(f, "rule ii: scope mismatch"),
            ValidationError::StaleEpoch => write!(f, "rule iii: stale epoch"),
            ValidationError::Nullified => write!(f, "rule iv: capability nullified"),
            ValidationError::KindMismatch => write!(f, "token kind not accepted here"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ValidationError {}

impl ValidationError {
    /// Machine-readable reason code for HTTP responses.
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::Authority(_) => "rule_i",
            ValidationError::ScopeMismatch => "rule_ii",
            ValidationError::StaleEpoch => "rule_iii",
            ValidationError::Nullified => "rule_iv",
            ValidationError::KindMismatch => "kind",
        }
    }
}

/// Outcome of an accepted spend.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SpendGrant {
    /// Whether this acceptance nullified the capability; the response tells
    /// the client so it can discard the token.
    pub nullified: bool,
}

/// Site- or relay-side capability acceptor with per-seed weights.
pub struct Gatekeeper {
    scope: ScopeRule,
    epoch: EpochValue,
    directory: AaDirectory,
    /// Requests allowed per capability, by issuing authority.
    weights: BTreeMap<Fingerprint, f64>,
    suppressor: BloomFilter,
    /// Records first-sight rejections for weights below one, so retries of a
    /// rejected capability stay rejected.
    refused: BloomFilter,
    expected_insertions: usize,
    fp_rate: f64,
}

impl Gatekeeper {
    pub fn new(
        scope: ScopeRule,
        epoch: EpochValue,
        directory: AaDirectory,
        expected_insertions: usize,
        fp_rate: f64,
    ) -> Self {
        Gatekeeper {
            scope,
            epoch,
            directory,
            weights: BTreeMap::new(),
            suppressor: BloomFilter::new(expected_insertions, fp_rate),
            refused: BloomFilter::new(expected_insertions, fp_rate),
            expected_insertions,
            fp_rate,
        }
    }

    /// Assigns the per-authority weight (requests per capability).
    pub fn set_weight(&mut self, authority: Fingerprint, weight: f64) {
        self.weights.insert(authority, weight);
    }

    /// Maps a derived site policy onto the authorities in the directory by
    /// seed type.
    pub fn apply_site_policy(&mut self, policy: &crate::policy::SitePolicy) {
        let pairs: Vec<(Fingerprint, f64)> = self
            .directory
            .entries()
            .filter_map(|entry| {
                policy
                    .seeds
                    .iter()
                    .position(|s| s.seed_type == entry.seed_type)
                    .map(|i| (entry.fingerprint, policy.weights[i]))
            })
            .collect();
        for (fp, w) in pairs {
            self.set_weight(fp, w);
        }
    }

    pub fn directory(&self) -> &AaDirectory {
        &self.directory
    }

    pub fn epoch(&self) -> EpochValue {
        self.epoch
    }

    /// New epoch: all prior-epoch tokens die by rule (iii), so both filters
    /// can be rebuilt empty.
    pub fn rotate_epoch(&mut self, epoch: EpochValue) {
        self.epoch = epoch;
        self.suppressor = BloomFilter::new(self.expected_insertions, self.fp_rate);
        self.refused = BloomFilter::new(self.expected_insertions, self.fp_rate);
    }

    /// Rules (i)-(iv) without consuming the capability: signature and
    /// authority standing, scope, epoch freshness, and current nullification
    /// status.
    pub fn validate(&self, cap: &Capability, now: f64) -> Result<(), ValidationError> {
        if cap.kind != self.scope.kind() {
            return Err(ValidationError::KindMismatch);
        }
        self.directory
            .verify_capability(cap, now)
            .map_err(ValidationError::Authority)?;
        if !self.scope.matches(&cap.payload.scope) {
            return Err(ValidationError::ScopeMismatch);
        }
        if cap.payload.epoch != self.epoch {
            return Err(ValidationError::StaleEpoch);
        }
        let digest = cap.digest();
        if self.suppressor.contains(&digest) || self.refused.contains(&digest) {
            return Err(ValidationError::Nullified);
        }
        Ok(())
    }

    /// Validates and spends one service request against the capability,
    /// applying the weight policy of its issuing authority:
    ///
    /// * w = 1: every use is final; duplicates are suppressed.
    /// * w > 1: accepted uses nullify with probability 1/w, so a capability
    ///   is good for w requests in expectation.
    /// * w < 1: accepted on first sight with probability w for exactly one
    ///   request; refusals are recorded so retries keep failing.
    pub fn spend<R: Rng + ?Sized>(
        &mut self,
        cap: &Capability,
        now: f64,
        rng: &mut R,
    ) -> Result<SpendGrant, ValidationError> {
        self.validate(cap, now)?;
        let weight = self
            .weights
            .get(&cap.payload.authority)
            .copied()
            .unwrap_or(1.0);
        let digest = cap.digest();
        if weight == 1.0 {
            self.suppressor.insert(&digest);
            Ok(SpendGrant { nullified: true })
        } else if weight > 1.0 {
            if rng.gen_bool(1.0 / weight) {
                self.suppressor.insert(&digest);
                Ok(SpendGrant { nullified: true })
            } else {
                Ok(SpendGrant { nullified: false })
            }
        } else {
            // First sight decides: accept (one request, then suppressed) or
            // refuse permanently.
            if rng.gen_bool(weight.max(0.0)) {
                self.suppressor.insert(&digest);
                Ok(SpendGrant { nullified: true })
            } else {
                self.refused.insert(&digest);
                Err(ValidationError::Nullified)
            }
        }
    }
}

/// Aggregate admission strategy for valid capability-bearing requests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnforcementMode {
    /// Serve everything that validates.
    Basic,
    /// One shared queue drained at `max_rate`.
    RateLimit,
    /// One queue per seed class, equal shares, work conserving.
    Wfq,
}

#[derive(Clone, Copy, Debug)]
pub struct EnforcementStrategy {
    pub mode: EnforcementMode,
    /// Aggregate service ceiling, requests per second.
    pub max_rate: f64,
    /// Per-queue backlog bound; arrivals beyond it are dropped.
    pub queue_bound: usize,
}

/// One request offered to the admission scheduler. `queue` is the seed-class
/// index of the issuing authority; `tag` is opaque caller data used to slice
/// the telemetry (e.g. adversary vs background).
#[derive(Clone, Copy, Debug)]
pub struct AdmitRequest {
    pub arrival_s: f64,
    pub queue: usize,
    pub tag: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdmitDecision {
    Served { at_s: f64 },
    Dropped,
}

#[derive(Clone, Debug, Default)]
pub struct AdmitReport {
    pub decisions: Vec<AdmitDecision>,
    pub served: u64,
    pub dropped: u64,
    pub served_by_queue: Vec<u64>,
    pub served_by_tag: BTreeMap<u32, u64>,
}

/// Runs the scheduler over an arrival-ordered request trace.
///
/// Under WFQ the ceiling is split evenly among the seed-class queues that
/// carry any traffic at all; a class nobody uses donates its share (that is
/// the work-conserving case of an idle queue). A queue that does carry
/// traffic keeps its guaranteed share even while momentarily empty, which is
/// what stops one seed class from overwhelming the other. Rate limiting
/// funnels every class through one queue at the full ceiling; basic mode
/// serves everything on arrival.
pub fn admit(requests: &[AdmitRequest], strategy: &EnforcementStrategy) -> AdmitReport {
    let queue_count = requests.iter().map(|r| r.queue + 1).max().unwrap_or(1);
    let mut report = AdmitReport {
        decisions: Vec::with_capacity(requests.len()),
        served_by_queue: alloc::vec![0; queue_count],
        ..AdmitReport::default()
    };
    debug_assert!(requests.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));

    if matches!(strategy.mode, EnforcementMode::Basic) {
        for request in requests {
            report.decisions.push(AdmitDecision::Served {
                at_s: request.arrival_s,
            });
            report.served += 1;
            report.served_by_queue[request.queue] += 1;
            *report.served_by_tag.entry(request.tag).or_insert(0) += 1;
        }
        return report;
    }

    let single_queue = matches!(strategy.mode, EnforcementMode::RateLimit);
    let effective_queue = |q: usize| if single_queue { 0 } else { q };

    let mut has_traffic = alloc::vec![false; queue_count];
    for request in requests {
        has_traffic[effective_queue(request.queue)] = true;
    }
    let participating = has_traffic.iter().filter(|t| **t).count().max(1);
    let service_time = participating as f64 / strategy.max_rate;

    // Each participating queue is an independent FIFO server at its share of
    // the ceiling; `free_at` is when that server finishes its backlog.
    let mut free_at = alloc::vec![f64::NEG_INFINITY; queue_count];
    let mut decisions = alloc::vec![AdmitDecision::Dropped; requests.len()];

    for (index, request) in requests.iter().enumerate() {
        let q = effective_queue(request.queue);
        let backlog = ((free_at[q] - request.arrival_s) / service_time).max(0.0);
        if backlog + 1.0 > strategy.queue_bound as f64 {
            continue;
        }
        let start = free_at[q].max(request.arrival_s);
        decisions[index] = AdmitDecision::Served { at_s: start };
        free_at[q] = start + service_time;
    }

    for (index, decision) in decisions.iter().enumerate() {
        match decision {
            AdmitDecision::Served { .. } => {
                report.served += 1;
                report.served_by_queue[requests[index].queue] += 1;
                *report.served_by_tag.entry(requests[index].tag).or_insert(0) += 1;
            }
            AdmitDecision::Dropped => report.dropped += 1,
        }
    }
    report.decisions = decisions;
    report
}

/// Relay-side priority class for a circuit-creation request.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Priority {
    High,
    Low,
}

/// Disposition of a relay extend request.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RelayDisposition {
    Accept(Priority),
    Reject(ValidationError),
}

pub const RELAY_FRAME_VERSION: u8 = 1;

/// Wire frame a relay receives: version byte, two-byte capability length,
/// capability bytes, then the opaque onionskin payload.
#[derive(Clone, Debug, PartialEq)]
pub struct RelayFrame {
    pub capability: Option<Vec<u8>>,
    pub payload: Vec<u8>,
}

impl RelayFrame {
    pub fn encode(&self) -> Vec<u8> {
        let cap = self.capability.as_deref().unwrap_or(&[]);
        let mut out = Vec::with_capacity(3 + cap.len() + self.payload.len());
        out.push(RELAY_FRAME_VERSION);
        out.extend_from_slice(&(cap.len() as u16).to_be_bytes());
        out.extend_from_slice(cap);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < 3 {
            return Err(FrameError::Truncated);
        }
        if bytes[0] != RELAY_FRAME_VERSION {
            return Err(FrameError::BadVersion(bytes[0]));
        }
        let cap_len = u16::from_be_bytes([bytes[1], bytes[2]]) as usize;
        if bytes.len() < 3 + cap_len {
            return Err(FrameError::Truncated);
        }
        let capability = if cap_len == 0 {
            None
        } else {
            Some(bytes[3..3 + cap_len].to_vec())
        };
        Ok(RelayFrame {
            capability,
            payload: bytes[3 + cap_len..].to_vec(),
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FrameError {
    Truncated,
    BadVersion(u8),
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::Truncated => write!(f, "frame truncated"),
            FrameError::BadVersion(v) => write!(f, "unsupported frame version {v}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FrameError {}

/// Relay gatekeeper: classifies extend requests before any expensive payload
/// processing. Valid capability: high priority. Missing or invalid (other
/// than a scope replay): low priority, served only when the high queue
/// idles, keeping legacy clients working when uncongested. A capability
/// scoped to a different relay is rejected outright.
pub struct RelayGatekeeper {
    inner: Gatekeeper,
}

impl RelayGatekeeper {
    pub fn new(
        fingerprint: Fingerprint,
        epoch: EpochValue,
        directory: AaDirectory,
        expected_insertions: usize,
        fp_rate: f64,
    ) -> Self {
        RelayGatekeeper {
            inner: Gatekeeper::new(
                ScopeRule::Relay(fingerprint),
                epoch,
                directory,
                expected_insertions,
                fp_rate,
            ),
        }
    }

    pub fn rotate_epoch(&mut self, epoch: EpochValue) {
        self.inner.rotate_epoch(epoch);
    }

    /// Classifies a decoded frame. Capability verification happens before
    /// the payload is touched; the payload itself is opaque here.
    pub fn classify(&mut self, frame: &RelayFrame, now: f64) -> RelayDisposition {
        let Some(cap_bytes) = frame.capability.as_deref() else {
            return RelayDisposition::Accept(Priority::Low);
        };
        let Ok(cap) = Capability::from_bytes(cap_bytes) else {
            return RelayDisposition::Accept(Priority::Low);
        };
        match self.inner.validate(&cap, now) {
            Ok(()) => {
                // Relay capabilities are single use.
                self.inner.suppressor.insert(&cap.digest());
                RelayDisposition::Accept(Priority::High)
            }
            Err(ValidationError::ScopeMismatch) => {
                RelayDisposition::Reject(ValidationError::ScopeMismatch)
            }
            Err(_) => RelayDisposition::Accept(Priority::Low),
        }
    }
}

/// Two-class strict priority queue: low is served only when high is empty.
#[derive(Clone, Debug, Default)]
pub struct PriorityQueue<T> {
    high: alloc::collections::VecDeque<T>,
    low: alloc::collections::VecDeque<T>,
}

impl<T> PriorityQueue<T> {
    pub fn new() -> Self {
        PriorityQueue {
            high: alloc::collections::VecDeque::new(),
            low: alloc::collections::VecDeque::new(),
        }
    }

    pub fn push(&mut self, priority: Priority, item: T) {
        match priority {
            Priority::High => self.high.push_back(item),
            Priority::Low => self.low.push_back(item),
        }
    }

    pub fn pop(&mut self) -> Option<(Priority, T)> {
        if let Some(item) = self.high.pop_front() {
            return Some((Priority::High, item));
        }
        self.low.pop_front().map(|item| (Priority::Low, item))
    }

    pub fn len(&self) -> usize {
        self.high.len() + self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.high.is_empty() && self.low.is_empty()
    }
}
