//! The scenario event loop.
//!
//! Demand is an aggregate Poisson process split between legitimate clients
//! and bots. Each creation attempt occupies service capacity at its three
//! relays in hop order; a relay whose pending queue is full drops the
//! attempt, which fails the whole circuit (work already committed at earlier
//! hops stays committed - that waste is the vicious cycle that makes floods
//! expensive for everyone). Bots retry failed attempts indefinitely,
//! legitimate clients a configured number of times, both with exponential
//! jitter to avoid lockstep. An active circuit policy gates every attempt
//! through the client's global token budget before it touches any relay.
//!
//! Time is millisecond-resolution; the loop is single threaded and fully
//! deterministic for a given scenario and seed.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::path::PathTables;
use super::{Scenario, SimError};

const RETRY_HISTOGRAM_BUCKETS: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub legit: u64,
    pub bot: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.legit + self.bot
    }

    fn bump(&mut self, class: Class) {
        match class {
            Class::Legit => self.legit += 1,
            Class::Bot => self.bot += 1,
        }
    }
}

/// Everything a scenario run reports. Byte-identical across runs of the
/// same (scenario, seed) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub duration_s: f64,
    /// Attempts that reached relay processing.
    pub attempts: ClassCounts,
    pub successes: ClassCounts,
    pub failures: ClassCounts,
    /// Admitted but still in service at the horizon.
    pub in_flight: ClassCounts,
    /// Attempts deferred by the circuit-budget policy.
    pub policy_deferrals: ClassCounts,
    /// Demand suppressed because the client already had a pending retry.
    pub suppressed_demand: ClassCounts,
    pub failure_rate: f64,
    pub failure_rate_legit: f64,
    pub failure_rate_bot: f64,
    /// Fraction of the horizon each relay spent busy.
    pub relay_utilization: Vec<f64>,
    /// Time-averaged pending-queue length per relay.
    pub mean_queue_len: Vec<f64>,
    /// successes by attempt count (1, 2, ..., capped).
    pub retries_to_success: Vec<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Class {
    Legit,
    Bot,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum EventKind {
    Demand,
    Attempt { class: Class, client: u32, try_no: u32 },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Event {
    time_ms: u64,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (self.time_ms, self.seq).cmp(&(other.time_ms, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-relay service state. The queue is represented by the backlog horizon:
/// pending work at time t is `(backlog_until - t) * capacity` jobs.
struct RelayState {
    capacity_per_ms: f64,
    service_ms: f64,
    queue_bound: f64,
    backlog_until_ms: f64,
    busy_ms: f64,
    /// Sum of in-horizon sojourn times; divided by the horizon this is the
    /// exact time-averaged number of jobs in the system.
    sojourn_integral_ms: f64,
}

impl RelayState {
    fn pending_jobs(&self, now_ms: f64) -> f64 {
        ((self.backlog_until_ms - now_ms) * self.capacity_per_ms).max(0.0)
    }

    /// Tries to enqueue one job at `now`; returns its completion time.
    fn admit(&mut self, now_ms: f64, horizon_ms: f64) -> Option<f64> {
        if self.pending_jobs(now_ms) + 1.0 > self.queue_bound {
            return None;
        }
        let start = self.backlog_until_ms.max(now_ms);
        self.backlog_until_ms = start + self.service_ms;
        self.busy_ms += self.service_ms;
        self.sojourn_integral_ms += self.backlog_until_ms.min(horizon_ms) - now_ms;
        Some(self.backlog_until_ms)
    }
}

/// Lazy token bucket for the per-client circuit budget.
#[derive(Clone, Copy)]
struct Budget {
    tokens: f32,
    last_ms: f32, // stored in seconds-scale units of 2^-10 s; see below
}

// Budgets are hot and per client; keep them to 8 bytes. Times are stored in
// units of 1024 ms which is plenty for refill arithmetic at these rates.
const BUDGET_TIME_UNIT_MS: f64 = 1024.0;

struct BudgetTable {
    entries: Vec<Budget>,
    rate_per_unit: f64,
    burst: f64,
}

impl BudgetTable {
    fn new(clients: usize, policy: &super::CircuitPolicy) -> Self {
        let rate_per_ms = policy.max_circuits_per_interval / (policy.interval_s * 1000.0);
        BudgetTable {
            entries: vec![
                Budget {
                    tokens: policy.burst as f32,
                    last_ms: 0.0,
                };
                clients
            ],
            rate_per_unit: rate_per_ms * BUDGET_TIME_UNIT_MS,
            burst: policy.burst,
        }
    }

    /// Takes one token if available, else returns the wait until one is.
    fn try_take(&mut self, client: usize, now_ms: u64) -> Result<(), u64> {
        let entry = &mut self.entries[client];
        let now_units = now_ms as f64 / BUDGET_TIME_UNIT_MS;
        let elapsed = (now_units - entry.last_ms as f64).max(0.0);
        let tokens = (entry.tokens as f64 + elapsed * self.rate_per_unit).min(self.burst);
        entry.last_ms = now_units as f32;
        if tokens >= 1.0 {
            entry.tokens = (tokens - 1.0) as f32;
            Ok(())
        } else {
            entry.tokens = tokens as f32;
            let wait_units = (1.0 - tokens) / self.rate_per_unit;
            Err((wait_units * BUDGET_TIME_UNIT_MS) as u64 + 1)
        }
    }
}

/// Runs one scenario to completion.
pub fn run_scenario(scenario: &Scenario, seed: u64) -> Result<SimReport, SimError> {
    let minimum = 10.0 * scenario.abuse.interval_s;
    if scenario.duration_s < minimum {
        return Err(SimError::DurationTooShort { minimum_s: minimum });
    }
    let tables = PathTables::build(&scenario.consensus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let horizon_ms = (scenario.duration_s * 1000.0) as u64;
    let mut relays: Vec<RelayState> = scenario
        .consensus
        .relays
        .iter()
        .map(|r| RelayState {
            capacity_per_ms: r.capacity_per_s / 1000.0,
            service_ms: 1000.0 / r.capacity_per_s,
            queue_bound: r.queue_bound as f64,
            backlog_until_ms: 0.0,
            busy_ms: 0.0,
            sojourn_integral_ms: 0.0,
        })
        .collect();

    let legit_clients = scenario.abuse.legit_clients.max(1) as usize;
    let bot_clients = scenario.abuse.bot_clients as usize;
    let mut budgets = scenario
        .policy
        .as_ref()
        .map(|p| BudgetTable::new(legit_clients + bot_clients, p));
    // One outstanding retry per client keeps the event set bounded.
    let mut retry_pending = vec![false; legit_clients + bot_clients];

    let arrival_rate = scenario.abuse.arrival_rate_per_s();
    let bot_share = scenario.abuse.bot_share();
    let jitter_mean_ms = scenario.retry_jitter_mean_s * 1000.0;

    let mut report = SimReport {
        seed,
        duration_s: scenario.duration_s,
        attempts: ClassCounts::default(),
        successes: ClassCounts::default(),
        failures: ClassCounts::default(),
        in_flight: ClassCounts::default(),
        policy_deferrals: ClassCounts::default(),
        suppressed_demand: ClassCounts::default(),
        failure_rate: 0.0,
        failure_rate_legit: 0.0,
        failure_rate_bot: 0.0,
        relay_utilization: Vec::new(),
        mean_queue_len: Vec::new(),
        retries_to_success: vec![0; RETRY_HISTOGRAM_BUCKETS],
    };

    let mut queue: BinaryHeap<Reverse<Event>> = BinaryHeap::new();
    let mut seq = 0u64;
    let push = |queue: &mut BinaryHeap<Reverse<Event>>, seq: &mut u64, time_ms, kind| {
        *seq += 1;
        queue.push(Reverse(Event {
            time_ms,
            seq: *seq,
            kind,
        }));
    };

    // The demand process keeps exact floating-point time; events are rounded
    // to the millisecond grid.
    let mut demand_clock_ms = 0.0f64;
    if arrival_rate > 0.0 {
        demand_clock_ms += exponential_ms(&mut rng, arrival_rate);
        push(
            &mut queue,
            &mut seq,
            demand_clock_ms as u64,
            EventKind::Demand,
        );
    }

    while let Some(Reverse(event)) = queue.pop() {
        if event.time_ms >= horizon_ms {
            // Anything scheduled past the horizon was admitted work or a
            // pending retry; neither counts as a completed attempt.
            continue;
        }
        match event.kind {
            EventKind::Demand => {
                let is_bot = bot_clients > 0 && rng.gen_bool(bot_share);
                let (class, client) = if is_bot {
                    (Class::Bot, legit_clients + rng.gen_range(0..bot_clients))
                } else {
                    (Class::Legit, rng.gen_range(0..legit_clients))
                };
                demand_clock_ms += exponential_ms(&mut rng, arrival_rate);
                if (demand_clock_ms as u64) < horizon_ms {
                    push(
                        &mut queue,
                        &mut seq,
                        demand_clock_ms as u64,
                        EventKind::Demand,
                    );
                }
                if retry_pending[client] {
                    report.suppressed_demand.bump(class);
                    continue;
                }
                handle_attempt(
                    event.time_ms,
                    class,
                    client,
                    1,
                    scenario,
                    &tables,
                    &mut relays,
                    &mut budgets,
                    &mut retry_pending,
                    &mut report,
                    horizon_ms,
                    jitter_mean_ms,
                    &mut queue,
                    &mut seq,
                    &mut rng,
                );
            }
            EventKind::Attempt {
                class,
                client,
                try_no,
            } => {
                retry_pending[client as usize] = false;
                handle_attempt(
                    event.time_ms,
                    class,
                    client as usize,
                    try_no,
                    scenario,
                    &tables,
                    &mut relays,
                    &mut budgets,
                    &mut retry_pending,
                    &mut report,
                    horizon_ms,
                    jitter_mean_ms,
                    &mut queue,
                    &mut seq,
                    &mut rng,
                );
            }
        }
    }

    for relay in &relays {
        report
            .relay_utilization
            .push((relay.busy_ms / horizon_ms as f64).min(1.0));
        report
            .mean_queue_len
            .push(relay.sojourn_integral_ms / horizon_ms as f64);
    }

    report.failure_rate = rate(report.failures.total(), report.successes.total());
    report.failure_rate_legit = rate(report.failures.legit, report.successes.legit);
    report.failure_rate_bot = rate(report.failures.bot, report.successes.bot);
    Ok(report)
}

fn rate(failures: u64, successes: u64) -> f64 {
    let completed = failures + successes;
    if completed == 0 {
        0.0
    } else {
        failures as f64 / completed as f64
    }
}

fn exponential_ms<R: Rng + ?Sized>(rng: &mut R, rate_per_s: f64) -> f64 {
    let u: f64 = rng.gen::<f64>().max(1e-15);
    -libm::log(u) / rate_per_s * 1000.0
}

#[allow(clippy::too_many_arguments)]
fn handle_attempt<R: Rng + ?Sized>(
    now_ms: u64,
    class: Class,
    client: usize,
    try_no: u32,
    scenario: &Scenario,
    tables: &PathTables,
    relays: &mut [RelayState],
    budgets: &mut Option<BudgetTable>,
    retry_pending: &mut [bool],
    report: &mut SimReport,
    horizon_ms: u64,
    jitter_mean_ms: f64,
    queue: &mut BinaryHeap<Reverse<Event>>,
    seq: &mut u64,
    rng: &mut R,
) {
    // Global budget gate: deferred attempts never reach a relay.
    if let Some(budgets) = budgets {
        if let Err(wait_ms) = budgets.try_take(client, now_ms) {
            report.policy_deferrals.bump(class);
            let jitter = exponential_ms(rng, 1000.0 / jitter_mean_ms.max(1.0)) as u64;
            let at = now_ms + wait_ms + jitter;
            if at < horizon_ms {
                retry_pending[client] = true;
                *seq += 1;
                queue.push(Reverse(Event {
                    time_ms: at,
                    seq: *seq,
                    kind: EventKind::Attempt {
                        class,
                        client: client as u32,
                        try_no,
                    },
                }));
            }
            return;
        }
    }

    report.attempts.bump(class);
    let path = match tables.select(rng) {
        Ok(path) => path,
        Err(_) => {
            report.failures.bump(class);
            return;
        }
    };

    // Hops process in order; a drop at any hop fails the circuit but the
    // work already accepted upstream stays in those queues.
    let mut finish_ms = 0.0f64;
    let mut dropped = false;
    for &relay_index in &path {
        match relays[relay_index].admit(now_ms as f64, horizon_ms as f64) {
            Some(done) => finish_ms = finish_ms.max(done),
            None => {
                dropped = true;
                break;
            }
        }
    }

    if !dropped {
        if finish_ms < horizon_ms as f64 {
            report.successes.bump(class);
            let bucket = (try_no as usize - 1).min(RETRY_HISTOGRAM_BUCKETS - 1);
            report.retries_to_success[bucket] += 1;
        } else {
            report.in_flight.bump(class);
        }
        return;
    }

    report.failures.bump(class);
    let gives_up = class == Class::Legit && try_no >= scenario.legit_max_attempts;
    if gives_up {
        return;
    }
    let jitter = exponential_ms(rng, 1000.0 / jitter_mean_ms.max(1.0)) as u64;
    let at = now_ms + 1 + jitter;
    if at < horizon_ms {
        retry_pending[client] = true;
        *seq += 1;
        queue.push(Reverse(Event {
            time_ms: at,
            seq: *seq,
            kind: EventKind::Attempt {
                class,
                client: client as u32,
                try_no: try_no + 1,
            },
        }));
    }
}
