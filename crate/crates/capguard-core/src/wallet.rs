//! Client-side token wallet: pseudonym caching, capability storage keyed by
//! scope and kind, spending strategies, and a mirror of the published rate
//! limiters so a well-behaved client never trips the server-side ones.

use alloc::collections::BTreeMap;
use alloc::collections::VecDeque;
use core::fmt;

use crate::authority::RateLimits;
use crate::bucket::TokenBucket;
use crate::token::{Capability, EpochValue, Fingerprint, Pseudonym, Scope, TokenKind};

/// How capabilities are spread over connections.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SpendingStrategy {
    /// A fresh capability for every connection; a capability is never sent
    /// on two different connections.
    UniquePerConnection,
    /// One capability serves a whole connection (keep-alive reuse) but still
    /// never crosses connections.
    ReuseWithinConnection,
    /// One capability is reused across connections until nullified; models
    /// session-cookie-style linkability the client has already accepted.
    CrossConnection,
}

/// Key a capability is filed under.
type PocketKey = (Scope, TokenKind);

#[derive(Clone, Debug, Default)]
struct Limiter {
    site: Option<TokenBucket>,
    relay: Option<TokenBucket>,
}

/// The wallet. Single-writer by design; wrap it in a lock for sharing.
pub struct ClientWallet {
    strategy: SpendingStrategy,
    pseudonyms: BTreeMap<Fingerprint, Pseudonym>,
    pockets: BTreeMap<PocketKey, VecDeque<Capability>>,
    /// Capability currently bound to (scope, kind, connection).
    active: BTreeMap<(Scope, TokenKind, u64), Capability>,
    /// Cross-connection current capability per pocket.
    current: BTreeMap<PocketKey, Capability>,
    limiters: BTreeMap<Fingerprint, Limiter>,
}

impl ClientWallet {
    pub fn new(strategy: SpendingStrategy) -> Self {
        ClientWallet {
            strategy,
            pseudonyms: BTreeMap::new(),
            pockets: BTreeMap::new(),
            active: BTreeMap::new(),
            current: BTreeMap::new(),
            limiters: BTreeMap::new(),
        }
    }

    pub fn strategy(&self) -> SpendingStrategy {
        self.strategy
    }

    pub fn set_strategy(&mut self, strategy: SpendingStrategy) {
        self.strategy = strategy;
    }

    pub fn store_pseudonym(&mut self, authority: Fingerprint, pseudonym: Pseudonym) {
        self.pseudonyms.insert(authority, pseudonym);
    }

    /// Live pseudonym for an authority; expired ones are dropped on access.
    pub fn pseudonym_for(&mut self, authority: Fingerprint, now: f64) -> Option<&Pseudonym> {
        if let Some(p) = self.pseudonyms.get(&authority) {
            if p.is_expired(now) {
                self.pseudonyms.remove(&authority);
                return None;
            }
        }
        self.pseudonyms.get(&authority)
    }

    pub fn deposit(&mut self, capability: Capability) {
        self.pockets
            .entry((capability.payload.scope, capability.kind))
            .or_default()
            .push_back(capability);
    }

    pub fn count(&self, scope: &Scope, kind: TokenKind) -> usize {
        self.pockets
            .get(&(*scope, kind))
            .map(|p| p.len())
            .unwrap_or(0)
    }

    /// Hands out the capability to present on `connection` for the given
    /// scope, per the active strategy. The wallet only ever returns
    /// capabilities whose scope matches the request, so a token cannot leak
    /// to the wrong recipient.
    pub fn capability_for(
        &mut self,
        scope: &Scope,
        kind: TokenKind,
        connection: u64,
    ) -> Option<Capability> {
        let key = (*scope, kind);
        match self.strategy {
            SpendingStrategy::UniquePerConnection => {
                let cap = self.pockets.get_mut(&key)?.pop_front()?;
                self.active.insert((*scope, kind, connection), cap.clone());
                Some(cap)
            }
            SpendingStrategy::ReuseWithinConnection => {
                if let Some(cap) = self.active.get(&(*scope, kind, connection)) {
                    return Some(cap.clone());
                }
                let cap = self.pockets.get_mut(&key)?.pop_front()?;
                self.active.insert((*scope, kind, connection), cap.clone());
                Some(cap)
            }
            SpendingStrategy::CrossConnection => {
                if let Some(cap) = self.current.get(&key) {
                    return Some(cap.clone());
                }
                let cap = self.pockets.get_mut(&key)?.pop_front()?;
                self.current.insert(key, cap.clone());
                Some(cap)
            }
        }
    }

    /// The recipient reported the capability nullified: forget it so the
    /// next request draws a fresh one.
    pub fn mark_nullified(&mut self, scope: &Scope, kind: TokenKind, connection: u64) {
        self.active.remove(&(*scope, kind, connection));
        self.current.remove(&(*scope, kind));
    }

    /// Drops expired pseudonyms and every capability not carrying the
    /// current epoch value.
    pub fn prune(&mut self, now: f64, current_epoch: EpochValue) {
        self.pseudonyms.retain(|_, p| !p.is_expired(now));
        for pocket in self.pockets.values_mut() {
            pocket.retain(|c| c.payload.epoch == current_epoch);
        }
        self.pockets.retain(|_, p| !p.is_empty());
        self.active.retain(|_, c| c.payload.epoch == current_epoch);
        self.current.retain(|_, c| c.payload.epoch == current_epoch);
    }

    /// Mirrors an authority's published limits client-side.
    pub fn set_limits(&mut self, authority: Fingerprint, limits: RateLimits, now: f64) {
        self.limiters.insert(
            authority,
            Limiter {
                site: Some(limits.site_bucket(now)),
                relay: Some(limits.relay_bucket(now)),
            },
        );
    }

    /// How many of `count` requests the local limiter permits right now.
    /// Site and trans kinds share the site budget, mirroring the authority.
    pub fn permitted_requests(
        &mut self,
        authority: Fingerprint,
        kind: TokenKind,
        count: usize,
        now: f64,
    ) -> usize {
        let Some(limiter) = self.limiters.get_mut(&authority) else {
            return count;
        };
        let bucket = match kind {
            TokenKind::Site | TokenKind::Trans => limiter.site.as_mut(),
            TokenKind::Relay => limiter.relay.as_mut(),
        };
        let Some(bucket) = bucket else { return count };
        let mut permitted = 0;
        while permitted < count && bucket.try_take(now) {
            permitted += 1;
        }
        permitted
    }
}

impl fmt::Debug for ClientWallet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientWallet")
            .field("strategy", &self.strategy)
            .field("pseudonyms", &self.pseudonyms.len())
            .field("pockets", &self.pockets.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blind::blind_sign;
    use crate::testutil::{aa_keys, rng};
    use crate::token::{blind_payload, unblind_capability, EpochBeacon, TokenPayload};
    use rand::Rng;
    use std::collections::{HashMap, HashSet};
    use std::vec::Vec;

    fn beacon() -> EpochBeacon {
        EpochBeacon::new([5u8; 32], 0.0, 86_400.0)
    }

    fn cap(domain: &str, epoch_index: u64, rng: &mut impl Rng) -> Capability {
        let keys = aa_keys();
        let payload = TokenPayload::new(
            Scope::from_domain(domain).unwrap(),
            beacon().value(epoch_index),
            keys.fingerprint(),
            rng,
        );
        let signing = keys.signing_keys(TokenKind::Site);
        let (blinded, ctx) = blind_payload(rng, payload, signing.public(), TokenKind::Site).unwrap();
        let sig = blind_sign(signing, &blinded).unwrap();
        unblind_capability(&sig, &ctx, signing.public()).unwrap()
    }

    /// Under the strictest strategy no capability byte string is ever handed
    /// to two different connections.
    #[test]
    fn unique_per_connection_never_crosses_connections() {
        let mut rng = rng(80);
        let mut wallet = ClientWallet::new(SpendingStrategy::UniquePerConnection);
        let scope = Scope::from_domain("example.org").unwrap();
        for _ in 0..50 {
            wallet.deposit(cap("example.org", 0, &mut rng));
        }
        let mut seen: HashMap<Vec<u8>, u64> = HashMap::new();
        let mut connections_hit: HashSet<(Vec<u8>, u64)> = HashSet::new();
        for connection in 0..50u64 {
            let c = wallet.capability_for(&scope, TokenKind::Site, connection).unwrap();
            connections_hit.insert((c.to_bytes(), connection));
            if let Some(prior) = seen.insert(c.to_bytes(), connection) {
                panic!("capability reused across connections {prior} and {connection}");
            }
        }
        assert_eq!(connections_hit.len(), 50);
    }

    #[test]
    fn reuse_within_connection_only() {
        let mut rng = rng(81);
        let mut wallet = ClientWallet::new(SpendingStrategy::ReuseWithinConnection);
        let scope = Scope::from_domain("example.org").unwrap();
        wallet.deposit(cap("example.org", 0, &mut rng));
        wallet.deposit(cap("example.org", 0, &mut rng));

        let first = wallet.capability_for(&scope, TokenKind::Site, 1).unwrap();
        let again = wallet.capability_for(&scope, TokenKind::Site, 1).unwrap();
        assert_eq!(first.to_bytes(), again.to_bytes());

        let other_conn = wallet.capability_for(&scope, TokenKind::Site, 2).unwrap();
        assert_ne!(first.to_bytes(), other_conn.to_bytes());

        // After nullification the same connection draws a fresh token; the
        // pool is empty now though.
        wallet.mark_nullified(&scope, TokenKind::Site, 1);
        assert!(wallet.capability_for(&scope, TokenKind::Site, 1).is_none());
    }

    #[test]
    fn cross_connection_reuses_until_nullified() {
        let mut rng = rng(82);
        let mut wallet = ClientWallet::new(SpendingStrategy::CrossConnection);
        let scope = Scope::from_domain("example.org").unwrap();
        wallet.deposit(cap("example.org", 0, &mut rng));
        wallet.deposit(cap("example.org", 0, &mut rng));

        let a = wallet.capability_for(&scope, TokenKind::Site, 1).unwrap();
        let b = wallet.capability_for(&scope, TokenKind::Site, 2).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        wallet.mark_nullified(&scope, TokenKind::Site, 2);
        let c = wallet.capability_for(&scope, TokenKind::Site, 3).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    /// The wallet never returns a token for a non-matching scope.
    #[test]
    fn scope_isolation() {
        let mut rng = rng(83);
        let mut wallet = ClientWallet::new(SpendingStrategy::UniquePerConnection);
        wallet.deposit(cap("example.org", 0, &mut rng));
        let other = Scope::from_domain("other.net").unwrap();
        assert!(wallet.capability_for(&other, TokenKind::Site, 1).is_none());
        let scope = Scope::from_domain("example.org").unwrap();
        assert!(wallet.capability_for(&scope, TokenKind::Relay, 1).is_none());
        assert!(wallet.capability_for(&scope, TokenKind::Site, 1).is_some());
    }

    #[test]
    fn prune_drops_expired_and_stale() {
        let mut rng = rng(84);
        let mut wallet = ClientWallet::new(SpendingStrategy::UniquePerConnection);
        wallet.deposit(cap("example.org", 0, &mut rng));
        wallet.deposit(cap("example.org", 1, &mut rng));
        let scope = Scope::from_domain("example.org").unwrap();
        assert_eq!(wallet.count(&scope, TokenKind::Site), 2);
        wallet.prune(0.0, beacon().value(1));
        assert_eq!(wallet.count(&scope, TokenKind::Site), 1);

        wallet.store_pseudonym(
            aa_keys().fingerprint(),
            Pseudonym {
                nonce: [1; 16],
                signature: crate::BigUint::from(1u8),
                issued_at: 0.0,
                expires_at: 10.0,
            },
        );
        assert!(wallet.pseudonym_for(aa_keys().fingerprint(), 5.0).is_some());
        assert!(wallet.pseudonym_for(aa_keys().fingerprint(), 11.0).is_none());
    }

    /// The client-side limiter mirrors the published rates: over ten
    /// windows, permitted requests track rate x windows plus the burst.
    #[test]
    fn self_limiter_tracks_published_rate() {
        let mut wallet = ClientWallet::new(SpendingStrategy::UniquePerConnection);
        let authority = aa_keys().fingerprint();
        let limits = RateLimits {
            site_per_interval: 24.0,
            relay_per_interval: 12.0,
            interval_s: 600.0,
            burst_window_s: 600.0,
        };
        wallet.set_limits(authority, limits, 0.0);

        let mut granted = 0usize;
        for window in 0..10u64 {
            let now = window as f64 * 600.0;
            granted += wallet.permitted_requests(authority, TokenKind::Site, 1000, now);
        }
        // Initial burst of 24 plus 24 per refilled window.
        assert_eq!(granted, 24 + 9 * 24);

        // Relay budget is independent.
        let relay = wallet.permitted_requests(authority, TokenKind::Relay, 1000, 5400.0);
        assert_eq!(relay, 12);

        // Unknown authority: no local limit data, nothing to enforce.
        let unknown = Fingerprint::derive(b"unknown");
        assert_eq!(wallet.permitted_requests(unknown, TokenKind::Site, 5, 0.0), 5);
    }
}
